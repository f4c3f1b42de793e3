#pragma once

// Define-by-run reverse-mode differentiation over dense 2-D tensors.
//
// A Graph is a tape: every op appends one node holding its output value and a
// backward closure. Nodes are only ever appended, so insertion order is a
// topological order and backward() walks it in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semcom/tensor.hpp"

namespace semcom {

/// Handle to a node of a Graph.
struct Var {
  std::uint32_t id = 0;
};

enum class Mode { train, eval };

/// Inputs handed to a node's backward closure. `in_grad[i]` is null when
/// input i does not need a gradient; closures accumulate (+=) into the rest.
struct BackwardArgs {
  const Tensor& out;
  const Tensor& upstream;
  std::span<const Tensor* const> in;
  std::span<Tensor* const> in_grad;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Graph {
 public:
  /// Leaf holding its own copy of `value`. Gets a gradient slot iff
  /// value.requires_grad is set.
  Var constant(Tensor value);

  /// Leaf bound to an external tensor (a model parameter). The tensor must
  /// outlive the graph and must not change until backward() returns. When it
  /// has requires_grad, backward() overwrites its grad with the accumulated
  /// gradient.
  Var parameter(Tensor& external);

  /// Appends an op node. Throws NumericError if `value` holds NaN/Inf.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() w.r.t. this node (empty if none).
  const Tensor& grad(Var v) const;
  bool needs_grad(Var v) const;
  const std::string& op_name(Var v) const { return node(v).op; }
  std::span<const Var> inputs(Var v) const { return node(v).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss. Gradients are zeroed first, then
  /// accumulated, so a node feeding several consumers receives their sum.
  void backward(Var loss);

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    Tensor* external = nullptr;
    bool needs_grad = false;
    Tensor grad;
  };

  const Node& node(Var v) const;
  std::vector<Node> nodes_;
};

// ---- ops ------------------------------------------------------------------

Var matmul(Graph& g, Var a, Var w);
/// Row-broadcast addition of a 1xO bias.
Var add_bias(Graph& g, Var a, Var b);
/// Elementwise max(0, x); the gradient gate is 0 at exactly x = 0.
Var relu(Graph& g, Var a);
Var sigmoid(Graph& g, Var a);
Var softmax_rows(Graph& g, Var a);
Var concat_cols(Graph& g, std::span<const Var> parts);
Var add(Graph& g, Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double factor);
/// Sum of all entries as a 1x1 tensor.
Var sum(Graph& g, Var a);

struct BatchNormConfig {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

/// Per-column batch normalization. In train mode it normalizes with the batch
/// mean and biased variance and folds them into the running statistics; in
/// eval mode it uses the running statistics unchanged.
Var batchnorm(Graph& g, Var a, Var gamma, Var beta, Mode mode, Tensor& running_mean,
              Tensor& running_var, const BatchNormConfig& cfg = {});

// ---- optimizer ------------------------------------------------------------

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update. Every parameter must carry a gradient;
/// gradients are cleared afterwards. Moments are sized on the first call and
/// the parameter list must keep the same order and shapes after that.
void adam_step(std::span<Tensor* const> params, AdamState& state);

// ---- verification ---------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  /// Entries whose one-sided differences disagree, i.e. the perturbation
  /// straddled a ReLU kink; they are excluded from max_rel_error.
  std::size_t kinks_skipped = 0;
  bool non_finite = false;
  bool passed = false;
};

/// Compares analytic gradients against central finite differences.
/// `build` must bind every tensor in `inputs` with Graph::parameter and return
/// a 1x1 loss. Inputs are perturbed in place and restored.
/// Relative error per entry is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const std::function<Var(Graph&)>& build,
                           std::span<Tensor* const> inputs, double tolerance,
                           double step = 1e-5, double abs_floor = 1e-6);

}  // namespace semcom

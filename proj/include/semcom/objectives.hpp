#pragma once

// Training losses and evaluation metrics.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "semcom/autodiff.hpp"
#include "semcom/network.hpp"

namespace semcom {

/// Task weights, in order: PE cross-entropy, final cross-entropy, HSI MSE,
/// LiDAR MSE. Each must lie in [0, 1].
struct LossWeights {
  std::array<double, 4> alpha{0.6, 1.0, 1.0, 1.0};
  void validate() const;
};

enum LossTerm : std::size_t { kLossPre = 0, kLossFin = 1, kLossHsi = 2, kLossLidar = 3 };

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over rows of -sum_j t_ij log(clamp(p_ij, 1e-12, 1)). `one_hot` must
/// have exactly one 1 per row and zeros elsewhere.
Var cross_entropy(Graph& g, Var probabilities, const Tensor& one_hot);

/// Mean over all entries of (target - prediction)^2.
Var mse_loss(Graph& g, Var target, Var prediction);

struct JointLossInputs {
  std::optional<Var> c_pre;
  Var c_fin;
  const Tensor* c_true = nullptr;
  std::optional<Var> d_hsi;
  std::optional<Var> d_hsi_hat;
  std::optional<Var> d_lidar;
  std::optional<Var> d_lidar_hat;
};

struct JointLoss {
  Var total;
  std::array<std::optional<Var>, 4> terms;
};

/// Weighted sum of the present terms. Absent terms contribute nothing.
Var combine_losses(Graph& g, const std::array<std::optional<Var>, 4>& terms,
                   const LossWeights& weights);

/// Builds each term the variant calls for and combines them. Throws
/// ConfigError when the supplied outputs do not match the variant.
JointLoss joint_loss(Graph& g, const JointLossInputs& in, const LossWeights& weights,
                     Variant variant);

/// sum ||d - d_hat||^2 / sum ||d||^2 over the whole matrix.
double nmse(const Tensor& reference, const Tensor& estimate);

/// Index of the row maximum, lowest index on ties.
std::size_t argmax_row(std::span<const double> row);

/// Fraction of rows whose predicted argmax matches the one-hot truth.
double accuracy(const Tensor& predictions, const Tensor& one_hot);

/// Throws ContractError unless every row of `t` is exactly one-hot.
void require_one_hot(const Tensor& t, const char* what);

struct MetricsRecord {
  std::string variant;
  double snr_db = 0.0;
  std::size_t symbols = 0;
  std::size_t epoch = 0;
  double accuracy = 0.0;
  std::optional<double> nmse_hsi;
  std::optional<double> nmse_lidar;
  std::array<std::optional<double>, 4> loss;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct ConstraintCheck {
  bool hsi_ok = true;
  bool lidar_ok = true;
  bool ok() const { return hsi_ok && lidar_ok; }
};

/// NMSE <= beta per modality and record; absent modalities pass.
std::vector<ConstraintCheck> check_constraint(const std::vector<MetricsRecord>& records,
                                              double beta);

inline constexpr const char* kMetricsHeader =
    "variant,snr_db,K,epoch,accuracy,nmse_hsi,nmse_lidar,loss_pre,loss_fin,loss_hsi,loss_lidar";

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records);
std::string metrics_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(std::istream& in);

}  // namespace semcom

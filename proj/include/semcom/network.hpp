#pragma once

// Encoder / perception-enhancement / fusion / decoder / classifier stack and
// the model zoo it is assembled into.
//
// Building blocks:
//   RB = FC + BatchNorm + ReLU      SB = FC + BatchNorm + Sigmoid
//   encoder  = RB x len(encoder_widths), ending at K
//   fusion   = RB x len(fusion_widths), ending at K
//   decoder  = SB x len(decoder_widths) + FC + sigmoid
//   classifier (PE and final) = FC + row softmax
//
// Parameter names are "<submodule>.<layer>.<field>", e.g. "enc_hsi.0.w",
// "fusion.1.running_var", "pe.0.b".

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semcom/autodiff.hpp"

namespace semcom {

enum class Variant { pe_mmsc, endnet, deep_endnet, hsi_pe, lidar_pe, hsi, lidar };
enum class Modality { hsi, lidar };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

bool uses_hsi(Variant v);
bool uses_lidar(Variant v);
bool has_pe(Variant v);
bool has_fusion(Variant v);
/// The modality feeding the PE classifier and heading the fusion input.
Modality primary_modality(Variant v);

enum class LayerKind { RB, SB, FC };

struct LayerSpec {
  LayerKind kind = LayerKind::FC;
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
};

struct ModelSpec {
  Variant variant = Variant::pe_mmsc;
  std::size_t d_hsi = 144;
  std::size_t d_lidar = 21;
  std::size_t classes = 15;
  std::size_t symbols = 64;  // K
  std::vector<std::size_t> encoder_widths{64, 48, 48, 64};
  std::vector<std::size_t> fusion_widths{96, 64};
  std::vector<std::size_t> decoder_widths{48, 96};

  /// Default widths for a variant at K symbols (DeepEndNet gets 4 fusion RBs).
  static ModelSpec defaults(Variant variant, std::size_t symbols = 64);
  /// Rewrites the K-terminated width chains for a new symbol count.
  ModelSpec with_symbols(std::size_t symbols) const;
  void validate() const;

  std::size_t input_dim(Modality m) const { return m == Modality::hsi ? d_hsi : d_lidar; }
  std::size_t fusion_input_dim() const;

  /// Layer chain of a submodule ("enc_hsi", "enc_lidar", "pe", "fusion",
  /// "dec_hsi", "dec_lidar", "cls"); empty if the variant lacks it.
  std::vector<LayerSpec> layers(const std::string& submodule) const;
  std::vector<std::string> submodules() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Named parameter tensors. Trainable tensors (FC weight/bias, BN gamma/beta)
/// carry requires_grad; BN running statistics do not.
struct ModelParams {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  /// Trainable tensors in name order.
  std::vector<Tensor*> trainable();
  std::size_t parameter_count() const;
};

struct ParamSlot {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  bool trainable;
};

/// The full parameter layout of a spec, in name order.
std::vector<ParamSlot> param_layout(const ModelSpec& spec);

/// FC weights ~ U(-sqrt(6/(in+out)), +sqrt(6/(in+out))), biases 0, BN gamma 1
/// beta 0, running mean 0 / var 1.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

struct Model {
  ModelSpec spec;
  ModelParams params;

  static Model create(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    return {spec, init_params(spec, seed)};
  }
};

// ---- submodules -------------------------------------------------------------

Var encode(Graph& g, Model& model, Var data, Modality modality, Mode mode);
Var pe_classify(Graph& g, Model& model, Var semantics);
/// Concatenates [primary, auxiliary?, c_pre?] and runs the fusion RBs.
Var fuse(Graph& g, Model& model, Var primary, std::optional<Var> auxiliary,
         std::optional<Var> c_pre, Mode mode);
Var decode(Graph& g, Model& model, Var received, Modality modality, Mode mode);
Var final_classify(Graph& g, Model& model, Var received);

using ChannelFn = std::function<Var(Graph&, Var)>;

struct ForwardResult {
  std::optional<Var> s_hsi;
  std::optional<Var> s_lidar;
  std::optional<Var> c_pre;
  Var s_raw;  // fusion (or encoder) output before power normalization
  Var s;      // transmitted block, unit mean power per row
  Var s_hat;  // received block
  Var c_fin;
  std::optional<Var> d_hsi_hat;
  std::optional<Var> d_lidar_hat;
};

/// Encoders -> PE -> fusion -> power normalization -> channel -> decoders and
/// final classifier. Submodules the variant lacks are skipped; inputs for
/// unused modalities may be empty tensors.
ForwardResult forward_full(Graph& g, Model& model, const Tensor& hsi, const Tensor& lidar,
                           const ChannelFn& channel, Mode mode);

// ---- FLOPs ------------------------------------------------------------------

/// Transmitter-side FLOPs per submodule.
/// FC(in -> out) costs 2*in*out; BN and activations cost nothing.
struct FlopsReport {
  std::uint64_t hsi = 0;
  std::uint64_t lidar = 0;
  std::uint64_t pe = 0;
  std::uint64_t fusion = 0;
  std::uint64_t total = 0;
};

std::uint64_t fc_flops(std::size_t in_dim, std::size_t out_dim);
FlopsReport count_flops(const ModelSpec& spec);

// ---- checkpoint -------------------------------------------------------------

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);

}  // namespace semcom

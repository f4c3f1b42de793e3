#include "semcom/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "semcom/channel.hpp"
#include "semcom/errors.hpp"
#include "semcom/rng.hpp"

namespace semcom {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string encoder_name(Modality m) { return m == Modality::hsi ? "enc_hsi" : "enc_lidar"; }
std::string decoder_name(Modality m) { return m == Modality::hsi ? "dec_hsi" : "dec_lidar"; }

std::string key(const std::string& sub, std::size_t layer, const char* field) {
  return sub + "." + std::to_string(layer) + "." + field;
}

void require_width(const char* op, const Tensor& t, std::size_t width) {
  if (t.cols != width) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(width) +
                         " input columns, got " + t.shape_string());
  }
}

Var dense(Graph& g, ModelParams& p, const std::string& sub, std::size_t layer, Var x) {
  const Var w = g.parameter(p.at(key(sub, layer, "w")));
  const Var b = g.parameter(p.at(key(sub, layer, "b")));
  return add_bias(g, matmul(g, x, w), b);
}

Var normalized_dense(Graph& g, ModelParams& p, const std::string& sub, std::size_t layer, Var x,
                     Mode mode) {
  const Var z = dense(g, p, sub, layer, x);
  const Var gamma = g.parameter(p.at(key(sub, layer, "gamma")));
  const Var beta = g.parameter(p.at(key(sub, layer, "beta")));
  return batchnorm(g, z, gamma, beta, mode, p.at(key(sub, layer, "running_mean")),
                   p.at(key(sub, layer, "running_var")));
}

Var run_chain(Graph& g, Model& model, const std::string& sub, Var x, Mode mode) {
  const auto chain = model.spec.layers(sub);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    switch (chain[i].kind) {
      case LayerKind::RB: x = relu(g, normalized_dense(g, model.params, sub, i, x, mode)); break;
      case LayerKind::SB: x = sigmoid(g, normalized_dense(g, model.params, sub, i, x, mode)); break;
      case LayerKind::FC: x = dense(g, model.params, sub, i, x); break;
    }
  }
  return x;
}

std::vector<LayerSpec> rb_chain(std::size_t in, const std::vector<std::size_t>& widths) {
  std::vector<LayerSpec> out;
  for (std::size_t w : widths) {
    out.push_back({LayerKind::RB, in, w});
    in = w;
  }
  return out;
}

}  // namespace

// ---- variants -----------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::pe_mmsc: return "PE-MMSC";
    case Variant::endnet: return "EndNet";
    case Variant::deep_endnet: return "DeepEndNet";
    case Variant::hsi_pe: return "HSI+PE";
    case Variant::lidar_pe: return "LiDAR+PE";
    case Variant::hsi: return "HSI";
    case Variant::lidar: return "LiDAR";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  const std::string wanted = lower(name);
  for (Variant v : all_variants()) {
    if (lower(to_string(v)) == wanted) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> variants{Variant::pe_mmsc, Variant::endnet,
                                             Variant::deep_endnet, Variant::hsi_pe,
                                             Variant::lidar_pe, Variant::hsi, Variant::lidar};
  return variants;
}

bool uses_hsi(Variant v) { return v != Variant::lidar_pe && v != Variant::lidar; }
bool uses_lidar(Variant v) { return v != Variant::hsi_pe && v != Variant::hsi; }
bool has_pe(Variant v) {
  return v == Variant::pe_mmsc || v == Variant::hsi_pe || v == Variant::lidar_pe;
}
bool has_fusion(Variant v) { return v != Variant::hsi && v != Variant::lidar; }
Modality primary_modality(Variant v) {
  return (v == Variant::lidar_pe || v == Variant::lidar) ? Modality::lidar : Modality::hsi;
}

// ---- ModelSpec ----------------------------------------------------------------

ModelSpec ModelSpec::defaults(Variant variant, std::size_t symbols) {
  ModelSpec spec;
  spec.variant = variant;
  if (variant == Variant::deep_endnet) spec.fusion_widths = {96, 96, 96, 64};
  return spec.with_symbols(symbols);
}

ModelSpec ModelSpec::with_symbols(std::size_t k) const {
  ModelSpec out = *this;
  out.symbols = k;
  if (!out.encoder_widths.empty()) out.encoder_widths.back() = k;
  if (!out.fusion_widths.empty()) out.fusion_widths.back() = k;
  return out;
}

std::size_t ModelSpec::fusion_input_dim() const {
  std::size_t width = symbols;
  if (uses_hsi(variant) && uses_lidar(variant)) width += symbols;
  if (has_pe(variant)) width += classes;
  return width;
}

void ModelSpec::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
  };
  positive(d_hsi, "d_hsi");
  positive(d_lidar, "d_lidar");
  positive(classes, "classes");
  positive(symbols, "K");
  if (encoder_widths.size() != 4) throw ConfigError("encoder needs exactly 4 widths");
  if (decoder_widths.size() != 2) throw ConfigError("decoder needs exactly 2 hidden widths");
  if (fusion_widths.empty()) throw ConfigError("fusion needs at least one width");
  for (const auto* chain : {&encoder_widths, &fusion_widths, &decoder_widths}) {
    for (std::size_t w : *chain) positive(w, "layer width");
  }
  if (encoder_widths.back() != symbols) {
    throw ConfigError("encoder chain must end at K=" + std::to_string(symbols));
  }
  if (fusion_widths.back() != symbols) {
    throw ConfigError("fusion chain must end at K=" + std::to_string(symbols));
  }
}

std::vector<LayerSpec> ModelSpec::layers(const std::string& sub) const {
  if (sub == "enc_hsi" || sub == "enc_lidar") {
    const bool hsi = sub == "enc_hsi";
    if (hsi ? !uses_hsi(variant) : !uses_lidar(variant)) return {};
    return rb_chain(hsi ? d_hsi : d_lidar, encoder_widths);
  }
  if (sub == "pe") {
    if (!has_pe(variant)) return {};
    return {{LayerKind::FC, symbols, classes}};
  }
  if (sub == "fusion") {
    if (!has_fusion(variant)) return {};
    return rb_chain(fusion_input_dim(), fusion_widths);
  }
  if (sub == "dec_hsi" || sub == "dec_lidar") {
    const bool hsi = sub == "dec_hsi";
    if (hsi ? !uses_hsi(variant) : !uses_lidar(variant)) return {};
    return {{LayerKind::SB, symbols, decoder_widths[0]},
            {LayerKind::SB, decoder_widths[0], decoder_widths[1]},
            {LayerKind::FC, decoder_widths[1], hsi ? d_hsi : d_lidar}};
  }
  if (sub == "cls") return {{LayerKind::FC, symbols, classes}};
  throw ConfigError("unknown submodule '" + sub + "'");
}

std::vector<std::string> ModelSpec::submodules() const {
  std::vector<std::string> out;
  for (const char* sub : {"enc_hsi", "enc_lidar", "pe", "fusion", "dec_hsi", "dec_lidar", "cls"}) {
    if (!layers(sub).empty()) out.emplace_back(sub);
  }
  return out;
}

// ---- parameters ---------------------------------------------------------------

Tensor& ModelParams::at(const std::string& name) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

std::vector<Tensor*> ModelParams::trainable() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : tensors) {
    if (t.requires_grad) out.push_back(&t);
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) {
    if (t.requires_grad) n += t.size();
  }
  return n;
}

std::vector<ParamSlot> param_layout(const ModelSpec& spec) {
  std::vector<ParamSlot> slots;
  for (const auto& sub : spec.submodules()) {
    const auto chain = spec.layers(sub);
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const LayerSpec& l = chain[i];
      slots.push_back({key(sub, i, "w"), l.in_dim, l.out_dim, true});
      slots.push_back({key(sub, i, "b"), 1, l.out_dim, true});
      if (l.kind != LayerKind::FC) {
        slots.push_back({key(sub, i, "gamma"), 1, l.out_dim, true});
        slots.push_back({key(sub, i, "beta"), 1, l.out_dim, true});
        slots.push_back({key(sub, i, "running_mean"), 1, l.out_dim, false});
        slots.push_back({key(sub, i, "running_var"), 1, l.out_dim, false});
      }
    }
  }
  std::sort(slots.begin(), slots.end(),
            [](const ParamSlot& a, const ParamSlot& b) { return a.name < b.name; });
  return slots;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  CounterRng rng(seed, 0x1417);
  ModelParams params;
  for (const ParamSlot& slot : param_layout(spec)) {
    Tensor t(slot.rows, slot.cols);
    t.requires_grad = slot.trainable;
    const std::string field = slot.name.substr(slot.name.rfind('.') + 1);
    if (field == "w") {
      const double limit = std::sqrt(6.0 / static_cast<double>(slot.rows + slot.cols));
      for (double& v : t.data) v = rng.uniform(-limit, limit);
    } else if (field == "gamma" || field == "running_var") {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    }
    params.tensors.emplace(slot.name, std::move(t));
  }
  return params;
}

// ---- submodules -----------------------------------------------------------------

Var encode(Graph& g, Model& model, Var data, Modality modality, Mode mode) {
  const bool present = modality == Modality::hsi ? uses_hsi(model.spec.variant)
                                                 : uses_lidar(model.spec.variant);
  if (!present) {
    throw ConfigError(to_string(model.spec.variant) + " has no " +
                      (modality == Modality::hsi ? "HSI" : "LiDAR") + " encoder");
  }
  require_width("encode", g.value(data), model.spec.input_dim(modality));
  return run_chain(g, model, encoder_name(modality), data, mode);
}

Var pe_classify(Graph& g, Model& model, Var semantics) {
  if (!has_pe(model.spec.variant)) {
    throw ConfigError(to_string(model.spec.variant) + " has no PE classifier");
  }
  require_width("pe_classify", g.value(semantics), model.spec.symbols);
  return softmax_rows(g, dense(g, model.params, "pe", 0, semantics));
}

Var fuse(Graph& g, Model& model, Var primary, std::optional<Var> auxiliary,
         std::optional<Var> c_pre, Mode mode) {
  const Variant v = model.spec.variant;
  if (!has_fusion(v)) throw ConfigError(to_string(v) + " has no fusion encoder");
  const bool multimodal = uses_hsi(v) && uses_lidar(v);
  if (auxiliary.has_value() != multimodal) {
    throw ConfigError(to_string(v) + (multimodal ? " fusion needs both modalities"
                                                 : " fusion takes a single modality"));
  }
  if (c_pre.has_value() != has_pe(v)) {
    throw ConfigError(to_string(v) + (has_pe(v) ? " fusion needs C_pre" : " fusion takes no C_pre"));
  }
  std::vector<Var> parts{primary};
  if (auxiliary) parts.push_back(*auxiliary);
  if (c_pre) parts.push_back(*c_pre);
  const Var joined = concat_cols(g, parts);
  require_width("fuse", g.value(joined), model.spec.fusion_input_dim());
  return run_chain(g, model, "fusion", joined, mode);
}

Var decode(Graph& g, Model& model, Var received, Modality modality, Mode mode) {
  require_width("decode", g.value(received), model.spec.symbols);
  const std::string sub = decoder_name(modality);
  if (model.spec.layers(sub).empty()) {
    throw ConfigError(to_string(model.spec.variant) + " has no " + sub + " decoder");
  }
  return sigmoid(g, run_chain(g, model, sub, received, mode));
}

Var final_classify(Graph& g, Model& model, Var received) {
  require_width("final_classify", g.value(received), model.spec.symbols);
  return softmax_rows(g, dense(g, model.params, "cls", 0, received));
}

ForwardResult forward_full(Graph& g, Model& model, const Tensor& hsi, const Tensor& lidar,
                           const ChannelFn& channel, Mode mode) {
  const Variant v = model.spec.variant;
  ForwardResult r;
  if (uses_hsi(v)) r.s_hsi = encode(g, model, g.constant(hsi), Modality::hsi, mode);
  if (uses_lidar(v)) r.s_lidar = encode(g, model, g.constant(lidar), Modality::lidar, mode);

  const Var primary = primary_modality(v) == Modality::hsi ? *r.s_hsi : *r.s_lidar;
  if (has_pe(v)) r.c_pre = pe_classify(g, model, primary);

  if (has_fusion(v)) {
    const std::optional<Var> aux =
        (uses_hsi(v) && uses_lidar(v)) ? r.s_lidar : std::optional<Var>{};
    r.s_raw = fuse(g, model, primary, aux, r.c_pre, mode);
  } else {
    r.s_raw = primary;
  }

  r.s = power_normalize(g, r.s_raw);
  r.s_hat = channel ? channel(g, r.s) : r.s;
  r.c_fin = final_classify(g, model, r.s_hat);
  if (uses_hsi(v)) r.d_hsi_hat = decode(g, model, r.s_hat, Modality::hsi, mode);
  if (uses_lidar(v)) r.d_lidar_hat = decode(g, model, r.s_hat, Modality::lidar, mode);
  return r;
}

// ---- FLOPs ------------------------------------------------------------------------

std::uint64_t fc_flops(std::size_t in_dim, std::size_t out_dim) {
  return 2ULL * in_dim * out_dim;
}

FlopsReport count_flops(const ModelSpec& spec) {
  auto chain_flops = [&](const char* sub) {
    std::uint64_t total = 0;
    for (const LayerSpec& l : spec.layers(sub)) total += fc_flops(l.in_dim, l.out_dim);
    return total;
  };
  FlopsReport r;
  r.hsi = chain_flops("enc_hsi");
  r.lidar = chain_flops("enc_lidar");
  r.pe = chain_flops("pe");
  r.fusion = chain_flops("fusion");
  r.total = r.hsi + r.lidar + r.pe + r.fusion;
  return r;
}

}  // namespace semcom

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "semcom/channel.hpp"
#include "semcom/errors.hpp"
#include "semcom/network.hpp"
#include "semcom/objectives.hpp"

using namespace semcom;
using semcom::test::one_hot;
using semcom::test::random_tensor;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ModelSpec small_spec(Variant v) {
  ModelSpec s = ModelSpec::defaults(v, 4);
  s.d_hsi = 6;
  s.d_lidar = 4;
  s.classes = 3;
  s.encoder_widths = {5, 4, 4, 4};
  s.fusion_widths = v == Variant::deep_endnet ? std::vector<std::size_t>{5, 5, 5, 4}
                                              : std::vector<std::size_t>{5, 4};
  s.decoder_widths = {4, 5};
  return s;
}

bool all_zero(const std::vector<double>& v) {
  for (double x : v) {
    if (x != 0.0) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("encoder output shape") {
  Model m = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 1);
  Graph g;
  const Var s = encode(g, m, g.constant(random_tensor(2, 144, 1, 0, 1)), Modality::hsi, Mode::train);
  CHECK(g.value(s).rows == 2);
  CHECK(g.value(s).cols == 64);
  CHECK_THROWS_AS(encode(g, m, g.constant(Tensor(2, 143)), Modality::hsi, Mode::train),
                  DimensionError);
}

TEST_CASE("encoder with zero weights outputs zeros") {
  Model m = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 2);
  for (auto& [name, t] : m.params.tensors) {
    if (ends_with(name, ".w")) std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  Graph g;
  const Var s = encode(g, m, g.constant(random_tensor(4, 144, 2, 0, 1)), Modality::hsi, Mode::train);
  CHECK(g.value(s) == Tensor(4, 64));
}

TEST_CASE("encoder is deterministic for a seed") {
  const Tensor x = random_tensor(3, 21, 3, 0, 1);
  Model a = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 7);
  Model b = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 7);
  Graph g1, g2;
  CHECK(g1.value(encode(g1, a, g1.constant(x), Modality::lidar, Mode::train)) ==
        g2.value(encode(g2, b, g2.constant(x), Modality::lidar, Mode::train)));
}

TEST_CASE("PE and final classifiers") {
  Model m = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 3);
  for (const char* sub : {"pe", "cls"}) {
    std::fill(m.params.at(std::string(sub) + ".0.w").data.begin(),
              m.params.at(std::string(sub) + ".0.w").data.end(), 0.0);
  }
  Graph g;
  const Var s = g.constant(random_tensor(2, 64, 3));
  for (const Var p : {pe_classify(g, m, s), final_classify(g, m, s)}) {
    const Tensor& v = g.value(p);
    CHECK(v.rows == 2);
    CHECK(v.cols == 15);
    for (double x : v.data) CHECK(x == doctest::Approx(1.0 / 15.0));
  }
  Model r = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 4);
  const Tensor& p = g.value(pe_classify(g, r, g.constant(random_tensor(5, 64, 4, -3, 3))));
  for (std::size_t i = 0; i < p.rows; ++i) {
    double sum = 0.0;
    for (double x : p.row(i)) sum += x;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(pe_classify(g, r, g.constant(Tensor(2, 63))), DimensionError);
  Model e = Model::create(ModelSpec::defaults(Variant::endnet), 4);
  CHECK_THROWS_AS(pe_classify(g, e, s), ConfigError);
}

TEST_CASE("fusion input widths per variant") {
  CHECK(ModelSpec::defaults(Variant::pe_mmsc).fusion_input_dim() == 143);
  CHECK(ModelSpec::defaults(Variant::endnet).fusion_input_dim() == 128);
  CHECK(ModelSpec::defaults(Variant::hsi_pe).fusion_input_dim() == 79);

  ModelSpec spec = ModelSpec::defaults(Variant::pe_mmsc);
  spec.fusion_widths = {64, 64};
  Model m = Model::create(spec, 5);
  Graph g;
  const Var a = g.constant(random_tensor(2, 64, 5));
  const Var b = g.constant(random_tensor(2, 64, 6));
  const Var c = g.constant(random_tensor(2, 15, 7, 0, 1));
  const Tensor& out = g.value(fuse(g, m, a, b, c, Mode::train));
  CHECK(out.rows == 2);
  CHECK(out.cols == 64);
  CHECK(m.params.at("fusion.0.w").rows == 143);
  CHECK(m.params.at("fusion.0.w").cols == 64);
  CHECK_THROWS_AS(fuse(g, m, a, b, std::nullopt, Mode::train), ConfigError);
  CHECK_THROWS_AS(fuse(g, m, a, std::nullopt, c, Mode::train), ConfigError);

  Model e = Model::create(ModelSpec::defaults(Variant::endnet), 5);
  CHECK(g.value(fuse(g, e, a, b, std::nullopt, Mode::train)).cols == 64);
  CHECK_THROWS_AS(fuse(g, e, a, b, c, Mode::train), ConfigError);
}

TEST_CASE("decoder outputs") {
  Model m = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 6);
  Graph g;
  const Var s = g.constant(random_tensor(3, 64, 8, -2, 2));
  const Tensor& d = g.value(decode(g, m, s, Modality::hsi, Mode::train));
  CHECK(d.rows == 3);
  CHECK(d.cols == 144);
  for (double v : d.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  auto& w = m.params.at("dec_lidar.2.w");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  const Tensor& half = g.value(decode(g, m, s, Modality::lidar, Mode::train));
  for (double v : half.data) CHECK(v == 0.5);
}

TEST_CASE("forward_full with identity channel transmits S unchanged") {
  Model m = Model::create(ModelSpec::defaults(Variant::pe_mmsc), 8);
  Graph g;
  const auto r = forward_full(g, m, random_tensor(4, 144, 9, 0, 1), random_tensor(4, 21, 10, 0, 1),
                              nullptr, Mode::train);
  CHECK(g.value(r.s_hat) == g.value(r.s));
  CHECK(r.c_pre.has_value());
  CHECK(r.d_hsi_hat.has_value());
  CHECK(r.d_lidar_hat.has_value());
}

TEST_CASE("forward_full skips absent submodules") {
  const Tensor hsi = random_tensor(3, 144, 11, 0, 1);
  const Tensor lidar = random_tensor(3, 21, 12, 0, 1);
  {
    Model m = Model::create(ModelSpec::defaults(Variant::endnet), 9);
    Graph g;
    const auto r = forward_full(g, m, hsi, lidar, nullptr, Mode::train);
    CHECK_FALSE(r.c_pre.has_value());
  }
  {
    Model m = Model::create(ModelSpec::defaults(Variant::lidar), 9);
    Graph g;
    const auto r = forward_full(g, m, Tensor(), lidar, nullptr, Mode::train);
    CHECK_FALSE(r.d_hsi_hat.has_value());
    CHECK(r.d_lidar_hat.has_value());
    CHECK_FALSE(r.c_pre.has_value());
    CHECK_FALSE(r.s_hsi.has_value());
  }
}

TEST_CASE("forward_full is an exact composition of the submodules") {
  const Tensor hsi = random_tensor(5, 144, 13, 0, 1);
  const Tensor lidar = random_tensor(5, 21, 14, 0, 1);
  for (Variant v : all_variants()) {
    CAPTURE(to_string(v));
    Model a = Model::create(ModelSpec::defaults(v), 10);
    Model b = a;
    Graph g1;
    const auto r = forward_full(g1, a, hsi, lidar, nullptr, Mode::train);

    Graph g2;
    std::optional<Var> sh, sl, cp;
    if (uses_hsi(v)) sh = encode(g2, b, g2.constant(hsi), Modality::hsi, Mode::train);
    if (uses_lidar(v)) sl = encode(g2, b, g2.constant(lidar), Modality::lidar, Mode::train);
    const Var primary = primary_modality(v) == Modality::hsi ? *sh : *sl;
    if (has_pe(v)) cp = pe_classify(g2, b, primary);
    Var s_raw = primary;
    if (has_fusion(v)) {
      s_raw = fuse(g2, b, primary, uses_hsi(v) && uses_lidar(v) ? sl : std::nullopt, cp,
                   Mode::train);
    }
    const Var s = power_normalize(g2, s_raw);
    const Var c_fin = final_classify(g2, b, s);
    CHECK(g1.value(r.c_fin) == g2.value(c_fin));
    CHECK(g1.value(r.s) == g2.value(s));
    if (uses_hsi(v)) {
      CHECK(g1.value(*r.d_hsi_hat) == g2.value(decode(g2, b, s, Modality::hsi, Mode::train)));
    }
    if (uses_lidar(v)) {
      CHECK(g1.value(*r.d_lidar_hat) == g2.value(decode(g2, b, s, Modality::lidar, Mode::train)));
    }
  }
}

TEST_CASE("PE pathway is a strict superset of EndNet fusion") {
  ModelSpec pe_spec = ModelSpec::defaults(Variant::pe_mmsc);
  Model pe = Model::create(pe_spec, 11);
  Model en = Model::create(ModelSpec::defaults(Variant::endnet), 12);
  for (auto& [name, t] : en.params.tensors) {
    if (name == "fusion.0.w") continue;
    t = pe.params.at(name);
  }
  Tensor& w = pe.params.at("fusion.0.w");
  Tensor& w_en = en.params.at("fusion.0.w");
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < w.cols; ++c) {
      if (r < 128) {
        w_en(r, c) = w(r, c);
      } else {
        w(r, c) = 0.0;
      }
    }
  }
  Graph g;
  const Var a = g.constant(random_tensor(6, 64, 15));
  const Var b = g.constant(random_tensor(6, 64, 16));
  const Var c = g.constant(random_tensor(6, 15, 17, 0, 1));
  const Tensor x = g.value(fuse(g, pe, a, b, c, Mode::train));
  const Tensor y = g.value(fuse(g, en, a, b, std::nullopt, Mode::train));
  REQUIRE(x.same_shape(y));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.data[i] == doctest::Approx(y.data[i]).epsilon(1e-12));
}

TEST_CASE("gradients reach every trainable parameter") {
  // An FC bias directly followed by batch normalization is cancelled by the
  // mean subtraction, so its gradient is identically zero.
  for (Variant v : all_variants()) {
    CAPTURE(to_string(v));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Model m = Model::create(ModelSpec::defaults(v), seed);
      const Tensor hsi = random_tensor(8, 144, seed + 100, 0, 1);
      const Tensor lidar = random_tensor(8, 21, seed + 200, 0, 1);
      const Tensor labels = one_hot(8, 15, seed);
      Graph g;
      const auto r = forward_full(g, m, hsi, lidar, nullptr, Mode::train);
      JointLossInputs in;
      in.c_pre = r.c_pre;
      in.c_fin = r.c_fin;
      in.c_true = &labels;
      if (r.d_hsi_hat) {
        in.d_hsi = g.constant(hsi);
        in.d_hsi_hat = r.d_hsi_hat;
      }
      if (r.d_lidar_hat) {
        in.d_lidar = g.constant(lidar);
        in.d_lidar_hat = r.d_lidar_hat;
      }
      g.backward(joint_loss(g, in, LossWeights{}, v).total);
      for (const ParamSlot& slot : param_layout(m.spec)) {
        if (!slot.trainable) continue;
        const Tensor& t = m.params.at(slot.name);
        REQUIRE(t.grad.has_value());
        const bool bias_before_bn =
            ends_with(slot.name, ".b") &&
            m.params.tensors.contains(slot.name.substr(0, slot.name.size() - 1) + "gamma");
        CAPTURE(slot.name);
        if (bias_before_bn) {
          for (double x : *t.grad) CHECK(std::abs(x) < 1e-12);
        } else {
          CHECK_FALSE(all_zero(*t.grad));
        }
      }
    }
  }
}

TEST_CASE("full graph gradients match finite differences with a frozen channel") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Model m = Model::create(small_spec(Variant::pe_mmsc), seed);
    const Tensor hsi = random_tensor(6, 6, seed + 1, 0, 1);
    const Tensor lidar = random_tensor(6, 4, seed + 2, 0, 1);
    const Tensor labels = one_hot(6, 3, seed + 3);
    const ChannelRealization frozen{Tensor(6, 4, 1.0), Tensor(6, 4, 0.0)};
    const auto inputs = m.params.trainable();
    const auto rep = grad_check(
        [&](Graph& g) {
          const auto r = forward_full(
              g, m, hsi, lidar, [&](Graph& gg, Var s) { return apply_realization(gg, s, frozen); },
              Mode::train);
          JointLossInputs in{r.c_pre, r.c_fin, &labels, g.constant(hsi), r.d_hsi_hat,
                             g.constant(lidar), r.d_lidar_hat};
          return joint_loss(g, in, LossWeights{}, Variant::pe_mmsc).total;
        },
        inputs, 1e-3);
    CAPTURE(rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("FLOPs examples") {
  CHECK(fc_flops(2, 3) == 12);
  const FlopsReport pe = count_flops(ModelSpec::defaults(Variant::pe_mmsc));
  CHECK(pe.pe == 1920);
  ModelSpec a = ModelSpec::defaults(Variant::pe_mmsc);
  ModelSpec b = ModelSpec::defaults(Variant::endnet);
  a.fusion_widths = b.fusion_widths = {64, 64};
  CHECK(count_flops(a).fusion - count_flops(b).fusion == 1920);
  for (std::size_t w : {32u, 96u, 128u}) {
    a.fusion_widths = b.fusion_widths = {w, 64};
    CHECK(count_flops(a).fusion - count_flops(b).fusion == 2 * 15 * w);
  }
  const FlopsReport e = count_flops(ModelSpec::defaults(Variant::endnet));
  const FlopsReport d = count_flops(ModelSpec::defaults(Variant::deep_endnet));
  CHECK(d.total > pe.total);
  CHECK(pe.total > e.total);
  CHECK(pe.total == pe.hsi + pe.lidar + pe.pe + pe.fusion);
  const FlopsReport lid = count_flops(ModelSpec::defaults(Variant::lidar));
  CHECK(lid.hsi == 0);
  CHECK(lid.fusion == 0);
  CHECK(lid.pe == 0);
}

TEST_CASE("FLOPs and layout are pure functions of the ModelSpec") {
  for (Variant v : all_variants()) {
    const ModelSpec s = ModelSpec::defaults(v, 32);
    const FlopsReport a = count_flops(s), b = count_flops(s);
    CHECK(a.total == b.total);
    const auto la = param_layout(s), lb = param_layout(s);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
      CHECK(la[i].name == lb[i].name);
      CHECK(la[i].rows == lb[i].rows);
    }
    const ModelParams p = init_params(s, 1);
    CHECK(p.tensors.size() == la.size());
    CHECK(p.parameter_count() == init_params(s, 2).parameter_count());
  }
}

TEST_CASE("ModelSpec validation") {
  ModelSpec s = ModelSpec::defaults(Variant::pe_mmsc);
  s.encoder_widths = {64, 48, 64};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ModelSpec::defaults(Variant::pe_mmsc);
  s.fusion_widths = {96, 32};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(ModelSpec::defaults(Variant::deep_endnet).fusion_widths.size() == 4);
  CHECK(ModelSpec::defaults(Variant::pe_mmsc, 16).with_symbols(32).encoder_widths.back() == 32);
  CHECK(parse_variant("pe-mmsc") == Variant::pe_mmsc);
  CHECK(parse_variant("LiDAR+PE") == Variant::lidar_pe);
  CHECK_THROWS_AS(parse_variant("ResNet"), ConfigError);
}

TEST_CASE("init follows the documented ranges") {
  const ModelParams p = init_params(ModelSpec::defaults(Variant::pe_mmsc), 3);
  const Tensor& w = p.at("enc_hsi.0.w");
  const double limit = std::sqrt(6.0 / (144.0 + 64.0));
  for (double v : w.data) CHECK(std::abs(v) <= limit);
  CHECK(p.at("enc_hsi.0.gamma") == Tensor(1, 64, 1.0));
  CHECK(p.at("enc_hsi.0.beta") == Tensor(1, 64, 0.0));
  CHECK(p.at("enc_hsi.0.running_var") == Tensor(1, 64, 1.0));
  CHECK_FALSE(p.at("enc_hsi.0.running_mean").requires_grad);
  CHECK(p.at("cls.0.b").requires_grad);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  for (Variant v : all_variants()) {
    Model m = Model::create(ModelSpec::defaults(v, 32), 13);
    // perturb running stats so they are not just the defaults
    Graph g;
    forward_full(g, m, random_tensor(4, 144, 1, 0, 1), random_tensor(4, 21, 2, 0, 1), nullptr,
                 Mode::train);
    const auto bytes = serialize_model(m);
    const Model back = deserialize_model(bytes);
    CHECK(back.spec == m.spec);
    CHECK(back.params.tensors.size() == m.params.tensors.size());
    for (const auto& [name, t] : m.params.tensors) CHECK(back.params.at(name) == t);
    CHECK(serialize_model(back) == bytes);
  }
  const auto path = (std::filesystem::temp_directory_path() / "semcom_ckpt_test.pmsc").string();
  const Model m = Model::create(ModelSpec::defaults(Variant::endnet), 4);
  save_checkpoint(path, m);
  CHECK(serialize_model(load_checkpoint(path)) == serialize_model(m));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are format errors") {
  const auto bytes = serialize_model(Model::create(ModelSpec::defaults(Variant::hsi), 1));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad_magic), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_model({bytes.begin(), bytes.begin() + static_cast<long>(cut)}),
                    FormatError);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_model(trailing), FormatError);
}

}  // TEST_SUITE

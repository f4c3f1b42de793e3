#include "semcom/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "binary_io.hpp"
#include "semcom/channel.hpp"
#include "semcom/errors.hpp"
#include "semcom/rng.hpp"

namespace semcom {

namespace {

constexpr std::uint64_t kTrainChannelStream = 0xC4A1;
constexpr std::uint64_t kTrainSnrStream = 0x5A12;
constexpr std::uint64_t kEvalSeedSalt = 0xE7A1'0000'0000ULL;
constexpr std::uint64_t kEvalTrialStream = 0x7E57'0000ULL;

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

void check_fits(const ModelSpec& spec, const Dataset& data) {
  const Variant v = spec.variant;
  if (uses_hsi(v) && data.hsi.cols != spec.d_hsi) {
    throw ConfigError("model expects " + std::to_string(spec.d_hsi) + " HSI features, data has " +
                      std::to_string(data.hsi.cols));
  }
  if (uses_lidar(v) && data.lidar.cols != spec.d_lidar) {
    throw ConfigError("model expects " + std::to_string(spec.d_lidar) +
                      " LiDAR features, data has " + std::to_string(data.lidar.cols));
  }
  if (data.classes() != spec.classes) {
    throw ConfigError("model expects " + std::to_string(spec.classes) + " classes, data has " +
                      std::to_string(data.classes()));
  }
}

ModelSpec spec_for(const RunConfig& cfg, const Dataset& data) {
  ModelSpec spec = cfg.model_spec(data.hsi.cols, data.lidar.cols, data.classes());
  spec.validate();
  if (!cfg.allow_small_k && spec.symbols < spec.classes) {
    throw ConfigError("K=" + std::to_string(spec.symbols) + " is below the class count " +
                      std::to_string(spec.classes) + " (set allow_small_k to override)");
  }
  return spec;
}

JointLoss build_loss(Graph& g, const ForwardResult& fwd, const Tensor& hsi, const Tensor& lidar,
                     const Tensor& labels, const LossWeights& w, Variant v) {
  JointLossInputs in;
  in.c_pre = fwd.c_pre;
  in.c_fin = fwd.c_fin;
  in.c_true = &labels;
  if (fwd.d_hsi_hat) {
    in.d_hsi = g.constant(hsi);
    in.d_hsi_hat = fwd.d_hsi_hat;
  }
  if (fwd.d_lidar_hat) {
    in.d_lidar = g.constant(lidar);
    in.d_lidar_hat = fwd.d_lidar_hat;
  }
  return joint_loss(g, in, w, v);
}

void write_loss_csv(const std::string& path, const std::vector<double>& loss) {
  std::string text = "epoch,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) {
    text += std::to_string(i + 1) + "," + format_double(loss[i]) + "\n";
  }
  detail::write_text_atomic(path, text);
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
  Dataset all;
  if (cfg.data_path.empty()) {
    SynthSpec synth = cfg.synth;
    synth.seed = cfg.seed;
    all = synth_generate(synth);
  } else {
    all = load_dataset(cfg.data_path);
  }
  all.validate(false);
  auto [train_raw, test_raw] = split(all, {cfg.train_fraction, cfg.seed, cfg.stratified});

  PreparedData out{std::move(train_raw), std::move(test_raw)};
  auto [hsi, hsi_stats] = normalize_minmax(out.train.hsi);
  auto [lidar, lidar_stats] = normalize_minmax(out.train.lidar);
  out.train.hsi = std::move(hsi);
  out.train.lidar = std::move(lidar);
  out.test.hsi = apply_minmax(out.test.hsi, hsi_stats);
  out.test.lidar = apply_minmax(out.test.lidar, lidar_stats);
  return out;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions o;
  o.snr_db = cfg.eval_snr_db;
  o.trials = cfg.eval_trials;
  o.seed = mix64(cfg.seed ^ kEvalSeedSalt);
  o.channel = cfg.channel;
  o.fading = cfg.fading;
  o.loss_weights = cfg.loss_weights;
  return o;
}

TrainResult train(const RunConfig& cfg, const PreparedData& data, const TrainOptions& opts) {
  cfg.validate();
  const ModelSpec spec = spec_for(cfg, data.train);
  check_fits(spec, data.test);

  TrainResult result{Model::create(spec, cfg.seed), {}, {}, {}};
  Model& model = result.model;
  if (opts.write_artifacts) {
    result.artifacts.checkpoint = join(cfg.output_dir, "checkpoint.pmsc");
    result.artifacts.metrics_csv = join(cfg.output_dir, "metrics.csv");
    result.artifacts.train_loss_csv = join(cfg.output_dir, "train_loss.csv");
    result.artifacts.resolved_config = join(cfg.output_dir, "config.json");
    detail::write_text_atomic(result.artifacts.resolved_config, to_json(cfg));
  }

  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  CounterRng channel_rng(cfg.seed, kTrainChannelStream);
  CounterRng snr_rng(cfg.seed, kTrainSnrStream);
  EvalOptions epoch_eval = eval_options(cfg);
  epoch_eval.trials = cfg.epoch_eval_trials;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = batch_iter(data.train, cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      ChannelConfig cc;
      cc.kind = cfg.channel;
      cc.granularity = cfg.fading;
      cc.seed = cfg.seed;
      cc.snr_db = cfg.train_snr.fixed_db
                      ? *cfg.train_snr.fixed_db
                      : snr_rng.uniform(cfg.train_snr.min_db, cfg.train_snr.max_db);
      try {
        Graph g;
        const ForwardResult fwd = forward_full(
            g, model, batch.hsi, batch.lidar,
            [&](Graph& gg, Var s) { return transmit(gg, s, cc, channel_rng); }, Mode::train);
        const JointLoss loss =
            build_loss(g, fwd, batch.hsi, batch.lidar, batch.labels, cfg.loss_weights, spec.variant);
        g.backward(loss.total);
        const auto params = model.params.trainable();
        adam_step(params, adam);
        for (const Tensor* p : params) {
          if (!p->all_finite()) throw NumericError("parameter update produced NaN/Inf");
        }
        loss_sum += g.value(loss.total).data[0];
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(batches.size()));

    epoch_eval.epoch = epoch;
    result.history.push_back(evaluate_at(model, data.test, epoch_eval));
    if (!opts.quiet) {
      const MetricsRecord& r = result.history.back();
      std::cerr << "epoch " << epoch << "/" << cfg.epochs << "  loss "
                << format_double(result.train_loss.back()) << "  acc@" << format_double(r.snr_db)
                << "dB " << format_double(r.accuracy) << "\n";
    }
    if (opts.write_artifacts) {
      detail::write_text_atomic(result.artifacts.metrics_csv, metrics_csv(result.history));
      if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
        save_checkpoint(result.artifacts.checkpoint, model);
      }
    }
  }

  if (opts.write_artifacts) {
    save_checkpoint(result.artifacts.checkpoint, model);
    write_loss_csv(result.artifacts.train_loss_csv, result.train_loss);
  }
  return result;
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  return train(cfg, prepare_data(cfg), opts);
}

MetricsRecord evaluate_at(const Model& trained, const Dataset& data, const EvalOptions& opts) {
  if (opts.trials < 1) throw ConfigError("evaluation needs at least one trial");
  if (std::isnan(opts.snr_db)) throw ConfigError("evaluation SNR is NaN");
  if (opts.k_override && *opts.k_override != trained.spec.symbols) {
    throw ConfigError("K override " + std::to_string(*opts.k_override) +
                      " does not match the checkpoint's K=" +
                      std::to_string(trained.spec.symbols));
  }
  check_fits(trained.spec, data);

  Model model = trained;
  const Variant v = model.spec.variant;
  ChannelConfig cc;
  cc.kind = std::isinf(opts.snr_db) && opts.snr_db > 0 ? ChannelKind::identity : opts.channel;
  cc.snr_db = opts.snr_db;
  cc.seed = opts.seed;
  cc.granularity = opts.fading;

  MetricsRecord rec;
  rec.variant = to_string(v);
  rec.snr_db = opts.snr_db;
  rec.symbols = model.spec.symbols;
  rec.epoch = opts.epoch;
  double acc = 0.0, nh = 0.0, nl = 0.0;
  std::array<double, 4> loss{};
  std::array<bool, 4> present{};
  for (std::size_t t = 0; t < opts.trials; ++t) {
    CounterRng rng(opts.seed, kEvalTrialStream + t);
    Graph g;
    const ForwardResult fwd = forward_full(
        g, model, data.hsi, data.lidar,
        [&](Graph& gg, Var s) { return transmit(gg, s, cc, rng); }, Mode::eval);
    acc += accuracy(g.value(fwd.c_fin), data.labels);
    if (fwd.d_hsi_hat) nh += nmse(data.hsi, g.value(*fwd.d_hsi_hat));
    if (fwd.d_lidar_hat) nl += nmse(data.lidar, g.value(*fwd.d_lidar_hat));
    const JointLoss jl = build_loss(g, fwd, data.hsi, data.lidar, data.labels, opts.loss_weights, v);
    for (std::size_t i = 0; i < 4; ++i) {
      if (jl.terms[i]) {
        present[i] = true;
        loss[i] += g.value(*jl.terms[i]).data[0];
      }
    }
  }
  const double n = static_cast<double>(opts.trials);
  rec.accuracy = acc / n;
  if (uses_hsi(v)) rec.nmse_hsi = nh / n;
  if (uses_lidar(v)) rec.nmse_lidar = nl / n;
  for (std::size_t i = 0; i < 4; ++i) {
    if (present[i]) rec.loss[i] = loss[i] / n;
  }
  return rec;
}

std::vector<MetricsRecord> sweep_snr(const Model& model, const Dataset& data,
                                     std::vector<double> snr_list, const EvalOptions& base) {
  if (snr_list.empty()) throw ConfigError("SNR list is empty");
  std::sort(snr_list.begin(), snr_list.end());
  std::vector<MetricsRecord> out;
  out.reserve(snr_list.size());
  for (double snr : snr_list) {
    EvalOptions o = base;
    o.snr_db = snr;
    out.push_back(evaluate_at(model, data, o));
  }
  return out;
}

std::vector<MetricsRecord> sweep_k(const RunConfig& base, const std::vector<std::size_t>& k_list,
                                   const std::vector<double>& snr_list, const TrainOptions& opts) {
  if (k_list.empty()) throw ConfigError("K list is empty");
  if (snr_list.empty()) throw ConfigError("SNR list is empty");
  base.validate();
  const PreparedData data = prepare_data(base);
  for (std::size_t k : k_list) {
    if (!base.allow_small_k && k < data.train.classes()) {
      throw ConfigError("K=" + std::to_string(k) + " is below the class count " +
                        std::to_string(data.train.classes()) + " (set allow_small_k to override)");
    }
  }
  std::vector<std::size_t> ks = k_list;
  std::sort(ks.begin(), ks.end());
  std::vector<MetricsRecord> out;
  for (std::size_t k : ks) {
    RunConfig cfg = base;
    cfg.symbols = k;
    cfg.output_dir = join(base.output_dir, "K" + std::to_string(k));
    const TrainResult run = train(cfg, data, opts);
    auto recs = sweep_snr(run.model, data.test, snr_list, eval_options(cfg));
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

std::vector<MetricsRecord> compare_variants(const RunConfig& base,
                                            const std::vector<Variant>& variants,
                                            const std::vector<double>& snr_list,
                                            const TrainOptions& opts) {
  if (variants.empty()) throw ConfigError("variant list is empty");
  if (snr_list.empty()) throw ConfigError("SNR list is empty");
  base.validate();
  const PreparedData data = prepare_data(base);
  std::vector<MetricsRecord> out;
  for (Variant v : variants) {
    RunConfig cfg = base;
    cfg.variant = v;
    cfg.output_dir = join(base.output_dir, to_string(v));
    const TrainResult run = train(cfg, data, opts);
    auto recs = sweep_snr(run.model, data.test, snr_list, eval_options(cfg));
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

std::vector<FlopsRow> flops_report(const std::vector<Variant>& variants, const ModelSpec& base,
                                   bool keep_widths) {
  std::vector<FlopsRow> rows;
  for (Variant v : variants) {
    ModelSpec spec = keep_widths ? base : ModelSpec::defaults(v, base.symbols);
    spec.variant = v;
    spec.d_hsi = base.d_hsi;
    spec.d_lidar = base.d_lidar;
    spec.classes = base.classes;
    rows.push_back({v, count_flops(spec)});
  }
  return rows;
}

std::string flops_table(const std::vector<FlopsRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "Method" << std::right << std::setw(10) << "HSI"
      << std::setw(10) << "LiDAR" << std::setw(10) << "PE" << std::setw(10) << "Fusion"
      << std::setw(10) << "Total" << "\n";
  const auto cell = [&](bool present, std::uint64_t v) {
    if (present) {
      out << std::setw(10) << v;
    } else {
      out << std::setw(10) << "-";
    }
  };
  for (const FlopsRow& r : rows) {
    out << std::left << std::setw(12) << to_string(r.variant) << std::right;
    cell(uses_hsi(r.variant), r.flops.hsi);
    cell(uses_lidar(r.variant), r.flops.lidar);
    cell(has_pe(r.variant), r.flops.pe);
    cell(has_fusion(r.variant), r.flops.fusion);
    out << std::setw(10) << r.flops.total << "\n";
  }
  return out.str();
}

std::string flops_csv(const std::vector<FlopsRow>& rows) {
  std::string out = "variant,hsi,lidar,pe,fusion,total\n";
  for (const FlopsRow& r : rows) {
    out += to_string(r.variant) + "," + std::to_string(r.flops.hsi) + "," +
           std::to_string(r.flops.lidar) + "," + std::to_string(r.flops.pe) + "," +
           std::to_string(r.flops.fusion) + "," + std::to_string(r.flops.total) + "\n";
  }
  return out;
}

}  // namespace semcom

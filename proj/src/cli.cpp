#include "semcom/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "binary_io.hpp"
#include "semcom/errors.hpp"
#include "semcom/harness.hpp"

namespace semcom {

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool quiet = false;
};

std::uint64_t parse_seed(const std::string& text, const char* source) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(std::string(source) + " is not an unsigned integer: '" + text + "'");
  }
  return v;
}

double parse_snr(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw ConfigError("bad SNR value '" + text + "'");
  return v;
}

std::vector<double> parse_snr_list(const std::vector<std::string>& items) {
  if (items.empty()) return kDefaultSnrGrid;
  std::vector<double> out;
  for (const auto& s : items) out.push_back(parse_snr(s));
  return out;
}

RunConfig resolve(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (const char* env = std::getenv("SEMCOM_SEED"); env != nullptr && *env != '\0') {
    cfg.seed = parse_seed(env, "SEMCOM_SEED");
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.output_dir.empty()) cfg.output_dir = g.output_dir;
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& file) {
  return (std::filesystem::path(cfg.output_dir) / file).string();
}

void emit(std::ostream& out, const Globals& g, const std::string& path,
          const std::vector<MetricsRecord>& recs) {
  const std::string csv = metrics_csv(recs);
  detail::write_text_atomic(path, csv);
  if (!g.quiet) out << csv;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perception-enhanced multimodal semantic communication lab", "semcom"};
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  std::string seed_text;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--seed", seed_text, "Run seed (overrides SEMCOM_SEED and the config)");
  app.add_option("--output-dir", g.output_dir, "Directory for run artifacts");
  app.add_flag("--quiet", g.quiet, "Suppress progress and table output");

  // Overrides shared by the training commands.
  std::string data_path, variant_name;
  std::optional<std::size_t> epochs, symbols;
  const auto add_run_overrides = [&](CLI::App* sub) {
    sub->add_option("--data", data_path, "Dataset file (default: synthetic data)");
    sub->add_option("--variant", variant_name, "Model variant");
    sub->add_option("--epochs", epochs, "Number of epochs");
    sub->add_option("--K", symbols, "Semantic symbols K");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "Train one model");
  add_run_overrides(train_cmd);

  std::string checkpoint;
  std::vector<std::string> snr_items;
  std::optional<std::size_t> trials, k_override;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint at one SNR");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default: <output-dir>/checkpoint.pmsc)");
  eval_cmd->add_option("--data", data_path, "Dataset file (default: synthetic data)");
  std::string eval_snr;
  eval_cmd->add_option("--snr", eval_snr, "SNR in dB ('inf' for a noiseless channel)");
  eval_cmd->add_option("--trials", trials, "Channel realizations to average");
  eval_cmd->add_option("--K", k_override, "Expected K of the checkpoint");

  CLI::App* sweep_snr_cmd = app.add_subcommand("sweep-snr", "Evaluate a checkpoint over an SNR grid");
  sweep_snr_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default: <output-dir>/checkpoint.pmsc)");
  sweep_snr_cmd->add_option("--data", data_path, "Dataset file (default: synthetic data)");
  sweep_snr_cmd->add_option("--snr", snr_items, "SNR grid in dB")->delimiter(',');
  sweep_snr_cmd->add_option("--trials", trials, "Channel realizations per point");

  std::vector<std::size_t> k_list;
  CLI::App* sweep_k_cmd = app.add_subcommand("sweep-k", "Train and sweep one model per K");
  add_run_overrides(sweep_k_cmd);
  sweep_k_cmd->add_option("--k-list", k_list, "Symbol counts")->delimiter(',')->required();
  sweep_k_cmd->add_option("--snr", snr_items, "SNR grid in dB")->delimiter(',');

  std::vector<std::string> variant_items;
  CLI::App* compare_cmd = app.add_subcommand("compare", "Train and sweep several variants");
  compare_cmd->add_option("--data", data_path, "Dataset file (default: synthetic data)");
  compare_cmd->add_option("--epochs", epochs, "Number of epochs");
  compare_cmd->add_option("--variants", variant_items, "Variants to compare")
      ->delimiter(',')
      ->required();
  compare_cmd->add_option("--snr", snr_items, "SNR grid in dB")->delimiter(',');

  std::string csv_path;
  std::size_t f_k = 64, f_hsi = 144, f_lidar = 21, f_classes = 15;
  CLI::App* flops_cmd = app.add_subcommand("flops", "Per-submodule transmitter FLOPs");
  flops_cmd->add_option("--variants", variant_items, "Variants (default: all)")->delimiter(',');
  flops_cmd->add_option("--K", f_k, "Semantic symbols K");
  flops_cmd->add_option("--d-hsi", f_hsi, "HSI features");
  flops_cmd->add_option("--d-lidar", f_lidar, "LiDAR features");
  flops_cmd->add_option("--classes", f_classes, "Classes");
  flops_cmd->add_option("--csv", csv_path, "Also write the table as CSV");

  SynthSpec synth;
  std::string out_file;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset file");
  synth_cmd->add_option("--classes", synth.classes, "Classes");
  synth_cmd->add_option("--per-class", synth.per_class, "Samples per class");
  synth_cmd->add_option("--d-hsi", synth.d_hsi, "HSI features");
  synth_cmd->add_option("--d-lidar", synth.d_lidar, "LiDAR features");
  synth_cmd->add_option("--separation", synth.separation, "Class anchor spacing");
  synth_cmd->add_option("--correlation", synth.correlation, "HSI/LiDAR correlation");
  synth_cmd->add_option("--out", out_file, "Output dataset file")->required();

  std::string hsi_csv, lidar_csv, labels_csv, names_file;
  CLI::App* convert_cmd = app.add_subcommand("convert", "Convert CSV files to a dataset file");
  convert_cmd->add_option("--hsi", hsi_csv, "HSI feature CSV")->required();
  convert_cmd->add_option("--lidar", lidar_csv, "LiDAR feature CSV")->required();
  convert_cmd->add_option("--labels", labels_csv, "Label CSV (indices or one-hot)")->required();
  convert_cmd->add_option("--names", names_file, "Class names, one per line");
  convert_cmd->add_option("--out", out_file, "Output dataset file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (!seed_text.empty()) g.seed = parse_seed(seed_text, "--seed");

    const auto run_cfg = [&]() {
      RunConfig cfg = resolve(g);
      if (!data_path.empty()) cfg.data_path = data_path;
      if (!variant_name.empty()) cfg.variant = parse_variant(variant_name);
      if (epochs) cfg.epochs = *epochs;
      if (symbols) cfg.symbols = *symbols;
      return cfg;
    };
    const TrainOptions topts{true, g.quiet};

    if (*train_cmd) {
      const RunConfig cfg = run_cfg();
      const TrainResult r = train(cfg, topts);
      if (!g.quiet) out << "checkpoint written to " << r.artifacts.checkpoint << "\n";
    } else if (*eval_cmd || *sweep_snr_cmd) {
      RunConfig cfg = run_cfg();
      const Model model =
          load_checkpoint(checkpoint.empty() ? out_path(cfg, "checkpoint.pmsc") : checkpoint);
      const PreparedData data = prepare_data(cfg);
      EvalOptions o = eval_options(cfg);
      if (trials) o.trials = *trials;
      if (*eval_cmd) {
        if (!eval_snr.empty()) o.snr_db = parse_snr(eval_snr);
        o.k_override = k_override;
        emit(out, g, out_path(cfg, "eval.csv"), {evaluate_at(model, data.test, o)});
      } else {
        emit(out, g, out_path(cfg, "sweep_snr.csv"),
             sweep_snr(model, data.test, parse_snr_list(snr_items), o));
      }
    } else if (*sweep_k_cmd) {
      const RunConfig cfg = run_cfg();
      emit(out, g, out_path(cfg, "sweep_k.csv"),
           sweep_k(cfg, k_list, parse_snr_list(snr_items), topts));
    } else if (*compare_cmd) {
      const RunConfig cfg = run_cfg();
      std::vector<Variant> variants;
      for (const auto& v : variant_items) variants.push_back(parse_variant(v));
      emit(out, g, out_path(cfg, "compare.csv"),
           compare_variants(cfg, variants, parse_snr_list(snr_items), topts));
    } else if (*flops_cmd) {
      ModelSpec base;
      if (!g.config_path.empty()) {
        const RunConfig cfg = resolve(g);
        base = cfg.model_spec(cfg.synth.d_hsi, cfg.synth.d_lidar, cfg.synth.classes);
      } else {
        base = ModelSpec::defaults(Variant::pe_mmsc, f_k);
        base.d_hsi = f_hsi;
        base.d_lidar = f_lidar;
        base.classes = f_classes;
      }
      std::vector<Variant> variants;
      for (const auto& v : variant_items) variants.push_back(parse_variant(v));
      if (variants.empty()) variants = all_variants();
      const auto rows = flops_report(variants, base);
      if (!g.quiet) out << flops_table(rows);
      if (!csv_path.empty()) detail::write_text_atomic(csv_path, flops_csv(rows));
    } else if (*synth_cmd) {
      synth.seed = resolve(g).seed;
      save_dataset(out_file, synth_generate(synth));
      if (!g.quiet) out << "wrote " << out_file << "\n";
    } else if (*convert_cmd) {
      save_dataset(out_file, convert_csv(hsi_csv, lidar_csv, labels_csv, names_file));
      if (!g.quiet) out << "wrote " << out_file << "\n";
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace semcom

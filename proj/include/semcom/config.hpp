#pragma once

// Flat JSON run configuration. Every key is optional; unknown keys are
// rejected so a typo cannot silently change an experiment.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semcom/channel.hpp"
#include "semcom/data.hpp"
#include "semcom/network.hpp"
#include "semcom/objectives.hpp"

namespace semcom {

/// Training SNR policy: a fixed value, or uniform in [min_db, max_db] per batch.
struct TrainingSnr {
  std::optional<double> fixed_db;
  double min_db = 0.0;
  double max_db = 15.0;
};

struct RunConfig {
  // model
  Variant variant = Variant::pe_mmsc;
  std::size_t symbols = 64;
  std::optional<std::vector<std::size_t>> encoder_widths;  // default [64, 48, 48, K]
  std::optional<std::vector<std::size_t>> fusion_widths;   // default [96, K] / DeepEndNet [96, 96, 96, K]
  std::optional<std::vector<std::size_t>> decoder_widths;  // default [48, 96]
  bool allow_small_k = false;

  // channel
  ChannelKind channel = ChannelKind::rayleigh_awgn;
  FadingGranularity fading = FadingGranularity::per_symbol;
  TrainingSnr train_snr;
  double eval_snr_db = 10.0;
  std::size_t eval_trials = 20;
  std::size_t epoch_eval_trials = 1;

  // optimization
  LossWeights loss_weights;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 600;
  std::size_t checkpoint_interval = 0;

  // data: a dataset file, or the synthetic generator when data_path is empty
  std::string data_path;
  SynthSpec synth;
  double train_fraction = 0.8;
  bool stratified = true;

  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  double beta = 0.5;

  /// Model spec for the given data dimensions.
  ModelSpec model_spec(std::size_t d_hsi, std::size_t d_lidar, std::size_t classes) const;
  /// Throws ConfigError (bad values) or DataError (missing data file).
  void validate() const;
};

RunConfig parse_config(const std::string& json_text);
/// Throws DataError naming the path if it cannot be read.
RunConfig load_config(const std::string& path);
/// Every field, in a fixed order. parse_config(to_json(c)) reproduces c.
std::string to_json(const RunConfig& cfg);

}  // namespace semcom

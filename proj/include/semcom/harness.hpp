#pragma once

// Training loop, evaluation sweeps and FLOPs reporting.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semcom/config.hpp"
#include "semcom/data.hpp"
#include "semcom/network.hpp"
#include "semcom/objectives.hpp"

namespace semcom {

/// Train/test split with min-max statistics taken from the training rows only.
struct PreparedData {
  Dataset train;
  Dataset test;
};

/// Loads `data_path` (or generates synthetic data seeded by cfg.seed), splits
/// it and normalizes both halves with the training statistics.
PreparedData prepare_data(const RunConfig& cfg);

struct RunArtifacts {
  std::string checkpoint;
  std::string metrics_csv;
  std::string train_loss_csv;
  std::string resolved_config;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRecord> history;  // one held-out record per epoch
  std::vector<double> train_loss;      // mean joint loss per epoch
  RunArtifacts artifacts;              // empty paths when nothing was written
};

struct TrainOptions {
  bool write_artifacts = true;
  bool quiet = true;
};

/// Runs the full training loop. On a non-finite loss throws NumericError
/// naming the epoch and batch; the last interval checkpoint stays in place.
TrainResult train(const RunConfig& cfg, const PreparedData& data, const TrainOptions& opts = {});
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

struct EvalOptions {
  double snr_db = 10.0;  // +inf selects the identity channel
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  ChannelKind channel = ChannelKind::rayleigh_awgn;
  FadingGranularity fading = FadingGranularity::per_symbol;
  std::optional<std::size_t> k_override;
  std::size_t epoch = 0;
  LossWeights loss_weights;
};

/// Averages accuracy, NMSE and loss terms over `trials` channel draws of the
/// whole dataset. Trial t always uses the same random stream, whatever the
/// SNR. Throws ConfigError when the model does not fit the dataset or
/// k_override disagrees with the trained K.
MetricsRecord evaluate_at(const Model& model, const Dataset& data, const EvalOptions& opts);

inline const std::vector<double> kDefaultSnrGrid{0, 3, 6, 9, 12, 15, 18};

/// One record per SNR, sorted ascending. Throws ConfigError on an empty list.
std::vector<MetricsRecord> sweep_snr(const Model& model, const Dataset& data,
                                     std::vector<double> snr_list, const EvalOptions& base);

/// Evaluation settings implied by a run config.
EvalOptions eval_options(const RunConfig& cfg);

/// Trains one model per K on the same data and seed, then sweeps SNR.
/// Records are ordered by (K, snr). Each run writes under output_dir/K<k>.
std::vector<MetricsRecord> sweep_k(const RunConfig& base, const std::vector<std::size_t>& k_list,
                                   const std::vector<double>& snr_list,
                                   const TrainOptions& opts = {});

/// Trains each variant with identical data, seed and epochs, then sweeps SNR.
/// Records are in variant order, then SNR. Each run writes under
/// output_dir/<variant>.
std::vector<MetricsRecord> compare_variants(const RunConfig& base,
                                            const std::vector<Variant>& variants,
                                            const std::vector<double>& snr_list,
                                            const TrainOptions& opts = {});

struct FlopsRow {
  Variant variant;
  FlopsReport flops;
};

/// count_flops for each variant at `base` dimensions with default widths per
/// variant (or the base widths when `keep_widths`).
std::vector<FlopsRow> flops_report(const std::vector<Variant>& variants, const ModelSpec& base,
                                   bool keep_widths = false);
std::string flops_table(const std::vector<FlopsRow>& rows);
std::string flops_csv(const std::vector<FlopsRow>& rows);

}  // namespace semcom

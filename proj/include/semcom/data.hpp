#pragma once

// Paired HSI/LiDAR datasets: file format, normalization, splitting,
// batching and a synthetic class-conditional generator.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semcom/tensor.hpp"

namespace semcom {

struct Dataset {
  Tensor hsi;     // N x d_hsi
  Tensor lidar;   // N x d_lidar
  Tensor labels;  // N x m, one-hot
  std::vector<std::string> names;  // empty or m entries

  std::size_t size() const { return labels.rows; }
  std::size_t classes() const { return labels.cols; }
  std::vector<std::size_t> class_indices() const;
  /// Row counts agree, labels are one-hot, values are finite and, when
  /// `unit_range`, inside [0, 1]. Throws DataError.
  void validate(bool unit_range) const;
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> rows);

// ---- file format --------------------------------------------------------------
// Little-endian: "SMDS", u16 version (1), u32 N, u32 d_hsi, u32 d_lidar, u32 m,
// N*d_hsi f32, N*d_lidar f32, N*m u8 one-hot, then either nothing or m class
// names, each a u16 byte length followed by UTF-8 bytes.

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const std::string& path, const Dataset& ds);
/// Raw values are preserved; call normalize_minmax separately.
Dataset load_dataset(const std::string& path);

// ---- normalization -------------------------------------------------------------

struct MinMax {
  std::vector<double> min;
  std::vector<double> max;
};

/// Per-column (x - min) / (max - min); constant columns map to 0.
std::pair<Tensor, MinMax> normalize_minmax(const Tensor& x);
/// Applies recorded statistics (e.g. from a training split) and clamps to [0, 1].
Tensor apply_minmax(const Tensor& x, const MinMax& stats);

// ---- splitting and batching ------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool stratified = true;
};

/// Seeded shuffle then partition (per class when stratified). Rows keep their
/// original relative order inside each partition.
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

/// Shuffled row order for one epoch, cut into batches of `batch_size`. A
/// trailing batch of one row is merged into the previous batch.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

struct Batch {
  Tensor hsi;
  Tensor lidar;
  Tensor labels;
};

std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                              std::uint64_t epoch);

// ---- synthetic data -----------------------------------------------------------------

struct SynthSpec {
  std::size_t classes = 15;
  std::size_t per_class = 200;
  std::size_t d_hsi = 144;
  std::size_t d_lidar = 21;
  /// Per-coordinate anchor spacing in units of the latent noise std.
  double separation = 1.0;
  /// Share of the LiDAR anchor and latent noise taken from the HSI side.
  double correlation = 0.5;
  std::uint64_t seed = 0;
};

/// Each class owns a Hadamard-row anchor in a latent space (pairwise anchor
/// distance = separation * sqrt(L/2)). HSI is a random linear view of
/// anchor + N(0, I); LiDAR views a partially shared anchor with correlated,
/// 1.5x stronger latent noise. Both get small per-feature noise, are min-max
/// normalized and rounded to float precision. Rows are ordered by class.
Dataset synth_generate(const SynthSpec& spec);

/// Latent dimension used for `classes` classes.
std::size_t synth_latent_dim(std::size_t classes);

// ---- CSV import -------------------------------------------------------------------------

/// Reads a numeric CSV matrix; a non-numeric first line is treated as a header.
Tensor read_csv_matrix(const std::string& path);

/// Builds a dataset from two feature CSVs and a label CSV. Labels are either
/// one class index per row or one-hot rows. `names_path` (optional) holds one
/// class name per line.
Dataset convert_csv(const std::string& hsi_path, const std::string& lidar_path,
                    const std::string& labels_path, const std::string& names_path = {});

}  // namespace semcom

#include "semcom/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "semcom/errors.hpp"
#include "semcom/objectives.hpp"
#include "semcom/rng.hpp"

namespace semcom {

namespace {

constexpr std::string_view kMagic = "SMDS";
constexpr std::uint16_t kVersion = 1;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Sylvester construction: H[i][j] = (-1)^popcount(i & j).
double hadamard(std::size_t i, std::size_t j) {
  return (std::popcount(i & j) % 2 == 0) ? 1.0 : -1.0;
}

void minmax_into(const Tensor& x, const MinMax& stats, Tensor& out, bool clamp) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double span = stats.max[c] - stats.min[c];
      double v = span > 0.0 ? (x(r, c) - stats.min[c]) / span : 0.0;
      if (clamp) v = std::clamp(v, 0.0, 1.0);
      out(r, c) = v;
    }
  }
}

void round_to_float(Tensor& t) {
  for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

// ---- Dataset ------------------------------------------------------------------

std::vector<std::size_t> Dataset::class_indices() const {
  std::vector<std::size_t> out(labels.rows);
  for (std::size_t r = 0; r < labels.rows; ++r) out[r] = argmax_row(labels.row(r));
  return out;
}

void Dataset::validate(bool unit_range) const {
  if (hsi.rows != labels.rows || lidar.rows != labels.rows) {
    throw DataError("dataset row counts differ: hsi " + hsi.shape_string() + ", lidar " +
                    lidar.shape_string() + ", labels " + labels.shape_string());
  }
  if (!names.empty() && names.size() != labels.cols) {
    throw DataError("dataset has " + std::to_string(names.size()) + " class names for " +
                    std::to_string(labels.cols) + " classes");
  }
  for (std::size_t r = 0; r < labels.rows; ++r) {
    int ones = 0;
    for (double v : labels.row(r)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) throw DataError("label row " + std::to_string(r) + " is not one-hot");
  }
  for (const Tensor* t : {&hsi, &lidar}) {
    for (std::size_t k = 0; k < t->size(); ++k) {
      const double v = t->data[k];
      if (!std::isfinite(v) || (unit_range && (v < 0.0 || v > 1.0))) {
        throw DataError("feature value out of range at row " + std::to_string(k / t->cols));
      }
    }
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> rows) {
  return {gather_rows(ds.hsi, rows), gather_rows(ds.lidar, rows), gather_rows(ds.labels, rows),
          ds.names};
}

// ---- file format --------------------------------------------------------------

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate(false);
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.hsi.cols));
  w.u32(static_cast<std::uint32_t>(ds.lidar.cols));
  w.u32(static_cast<std::uint32_t>(ds.classes()));
  for (double v : ds.hsi.data) w.f32(static_cast<float>(v));
  for (double v : ds.lidar.data) w.f32(static_cast<float>(v));
  for (double v : ds.labels.data) w.u8(v == 1.0 ? 1 : 0);
  for (const auto& name : ds.names) {
    if (name.size() > 0xFFFF) throw DataError("class name longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
  }
  return std::move(w.buffer());
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError("not a dataset file (bad magic)", 0);
  }
  const std::size_t version_at = r.offset();
  if (const auto v = r.u16(); v != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(v), version_at);
  }
  const std::size_t n_at = r.offset();
  const std::size_t n = r.u32();
  const std::size_t d_hsi = r.u32();
  const std::size_t d_lidar = r.u32();
  const std::size_t m = r.u32();
  if (n == 0) throw FormatError("dataset declares zero samples", n_at);
  if (d_hsi == 0 || d_lidar == 0 || m == 0) {
    throw FormatError("dataset declares a zero dimension", n_at + 4);
  }
  r.need(n * (4 * (d_hsi + d_lidar) + m), "sample block");

  Dataset ds{Tensor(n, d_hsi), Tensor(n, d_lidar), Tensor(n, m), {}};
  for (double& v : ds.hsi.data) v = r.f32();
  for (double& v : ds.lidar.data) v = r.f32();
  const std::size_t labels_at = r.offset();
  for (double& v : ds.labels.data) {
    const std::uint8_t b = r.u8();
    if (b > 1) {
      throw FormatError("label byte must be 0 or 1", r.offset() - 1);
    }
    v = b;
  }
  if (r.remaining() > 0) {
    for (std::size_t i = 0; i < m; ++i) ds.names.push_back(r.bytes(r.u16()));
    if (r.remaining() != 0) throw FormatError("trailing bytes after class names", r.offset());
  }
  for (std::size_t row = 0; row < n; ++row) {
    double total = 0.0;
    for (double v : ds.labels.row(row)) total += v;
    if (total != 1.0) {
      throw DataError("label row " + std::to_string(row) + " is not one-hot (byte offset " +
                      std::to_string(labels_at + row * m) + ")");
    }
  }
  ds.validate(false);
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  detail::write_file_atomic(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

// ---- normalization -------------------------------------------------------------

std::pair<Tensor, MinMax> normalize_minmax(const Tensor& x) {
  MinMax stats{std::vector<double>(x.cols, 0.0), std::vector<double>(x.cols, 0.0)};
  for (std::size_t c = 0; c < x.cols; ++c) {
    double lo = INFINITY;
    double hi = -INFINITY;
    for (std::size_t r = 0; r < x.rows; ++r) {
      lo = std::min(lo, x(r, c));
      hi = std::max(hi, x(r, c));
    }
    stats.min[c] = x.rows ? lo : 0.0;
    stats.max[c] = x.rows ? hi : 0.0;
  }
  Tensor out(x.rows, x.cols);
  minmax_into(x, stats, out, false);
  return {std::move(out), std::move(stats)};
}

Tensor apply_minmax(const Tensor& x, const MinMax& stats) {
  if (stats.min.size() != x.cols || stats.max.size() != x.cols) {
    throw DimensionError("min-max statistics do not match " + x.shape_string());
  }
  Tensor out(x.rows, x.cols);
  minmax_into(x, stats, out, true);
  return out;
}

// ---- splitting and batching --------------------------------------------------------

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t n = ds.size();
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  }
  if (spec.train_fraction * static_cast<double>(n) < 1.0 ||
      (1.0 - spec.train_fraction) * static_cast<double>(n) < 1.0) {
    throw ConfigError("split of " + std::to_string(n) + " samples leaves an empty partition");
  }
  CounterRng rng(spec.seed, 0x5917);
  std::vector<std::vector<std::size_t>> groups;
  if (spec.stratified) {
    const auto cls = ds.class_indices();
    groups.resize(ds.classes());
    for (std::size_t r = 0; r < n; ++r) groups[cls[r]].push_back(r);
  } else {
    groups.emplace_back(n);
    std::iota(groups[0].begin(), groups[0].end(), 0);
  }

  // Largest-remainder apportionment so the overall train count is
  // round(f * N), then every class with two or more rows keeps one on each side.
  const double f = spec.train_fraction;
  const auto total = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
  std::vector<std::size_t> quota(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const double exact = f * static_cast<double>(groups[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const std::size_t c = remainders[i].second;
    if (quota[c] < groups[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& rows = groups[c];
    if (rows.empty()) continue;
    shuffle(std::span<std::size_t>(rows), rng);
    std::size_t k = quota[c];
    if (rows.size() >= 2) k = std::clamp<std::size_t>(k, 1, rows.size() - 1);
    train.insert(train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
    test.insert(test.end(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end());
  }
  if (train.empty() || test.empty()) {
    throw ConfigError("split leaves an empty partition");
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {subset(ds, train), subset(ds, test)};
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed ^ epoch, 0xBA7C4);
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                              std::uint64_t epoch) {
  std::vector<Batch> out;
  for (const auto& rows : batch_indices(ds.size(), batch_size, seed, epoch)) {
    out.push_back({gather_rows(ds.hsi, rows), gather_rows(ds.lidar, rows),
                   gather_rows(ds.labels, rows)});
  }
  return out;
}

// ---- synthetic data -----------------------------------------------------------------

std::size_t synth_latent_dim(std::size_t classes) {
  return std::max<std::size_t>(16, next_pow2(classes + 1));
}

Dataset synth_generate(const SynthSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1 || spec.d_hsi < 1 || spec.d_lidar < 1) {
    throw ConfigError("synthetic dataset counts must be >= 1");
  }
  if (!(spec.correlation >= 0.0 && spec.correlation <= 1.0)) {
    throw ConfigError("synthetic correlation must lie in [0, 1]");
  }
  constexpr double kLidarNoiseScale = 1.5;
  constexpr double kFeatureNoise = 0.1;

  const std::size_t latent = synth_latent_dim(spec.classes);
  const std::size_t m = spec.classes;
  const double rho = spec.correlation;
  const double rho_c = std::sqrt(1.0 - rho * rho);
  const double half = 0.5 * spec.separation;

  CounterRng rng(spec.seed, 0x5E7);

  // Row 0 (all ones) is skipped so every anchor is balanced around zero.
  std::vector<std::size_t> lidar_rows(latent - 1);
  std::iota(lidar_rows.begin(), lidar_rows.end(), 1);
  shuffle(std::span<std::size_t>(lidar_rows), rng);

  auto random_view = [&](std::size_t dim) {
    Tensor view(dim, latent);
    const double s = 1.0 / std::sqrt(static_cast<double>(latent));
    for (double& v : view.data) v = s * rng.normal();
    return view;
  };
  const Tensor view_hsi = random_view(spec.d_hsi);
  const Tensor view_lidar = random_view(spec.d_lidar);

  const std::size_t n = m * spec.per_class;
  Dataset ds{Tensor(n, spec.d_hsi), Tensor(n, spec.d_lidar), Tensor(n, m), {}};
  std::vector<double> z_hsi(latent);
  std::vector<double> z_lidar(latent);
  for (std::size_t c = 0; c < m; ++c) {
    const std::size_t hsi_row = 1 + c;
    const std::size_t lidar_row = lidar_rows[c % lidar_rows.size()];
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t r = c * spec.per_class + i;
      for (std::size_t j = 0; j < latent; ++j) {
        const double shared = rng.normal();
        const double own = rng.normal();
        const double anchor_h = half * hadamard(hsi_row, j);
        const double anchor_l = rho * anchor_h + rho_c * half * hadamard(lidar_row, j);
        z_hsi[j] = anchor_h + shared;
        z_lidar[j] = anchor_l + kLidarNoiseScale * (rho * shared + rho_c * own);
      }
      auto project = [&](const Tensor& view, const std::vector<double>& z, std::span<double> out) {
        for (std::size_t f = 0; f < view.rows; ++f) {
          double v = 0.0;
          for (std::size_t j = 0; j < latent; ++j) v += view(f, j) * z[j];
          out[f] = v + kFeatureNoise * rng.normal();
        }
      };
      project(view_hsi, z_hsi, ds.hsi.row(r));
      project(view_lidar, z_lidar, ds.lidar.row(r));
      ds.labels(r, c) = 1.0;
    }
  }
  ds.hsi = normalize_minmax(ds.hsi).first;
  ds.lidar = normalize_minmax(ds.lidar).first;
  round_to_float(ds.hsi);
  round_to_float(ds.lidar);
  return ds;
}

// ---- CSV import -------------------------------------------------------------------------

namespace {

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(',', start);
    if (end == std::string::npos) end = line.size();
    std::string_view field(line.data() + start, end - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) return false;
    out.push_back(v);
    start = end + 1;
  }
  return true;
}

}  // namespace

Tensor read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<double> values;
  std::vector<double> row;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (!parse_row(line, row)) {
      if (line_no == 1) continue;  // header
      throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    if (rows == 0) cols = row.size();
    if (row.size() != cols) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(cols) + " columns");
    }
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw DataError(path + ": no data rows");
  return Tensor(rows, cols, std::move(values));
}

Dataset convert_csv(const std::string& hsi_path, const std::string& lidar_path,
                    const std::string& labels_path, const std::string& names_path) {
  Dataset ds;
  ds.hsi = read_csv_matrix(hsi_path);
  ds.lidar = read_csv_matrix(lidar_path);
  const Tensor raw = read_csv_matrix(labels_path);
  if (raw.cols == 1) {
    std::size_t m = 0;
    for (double v : raw.data) {
      if (v < 0 || v != std::floor(v)) throw DataError("class index must be a non-negative integer");
      m = std::max(m, static_cast<std::size_t>(v) + 1);
    }
    ds.labels = Tensor(raw.rows, m);
    for (std::size_t r = 0; r < raw.rows; ++r) ds.labels(r, static_cast<std::size_t>(raw.data[r])) = 1.0;
  } else {
    ds.labels = raw;
  }
  if (!names_path.empty()) {
    std::ifstream in(names_path);
    if (!in) throw DataError("cannot open '" + names_path + "'");
    std::string name;
    while (std::getline(in, name)) {
      if (!name.empty() && name.back() == '\r') name.pop_back();
      ds.names.push_back(name);
    }
  }
  ds.validate(false);
  return ds;
}

}  // namespace semcom

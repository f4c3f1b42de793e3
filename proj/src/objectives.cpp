#include "semcom/objectives.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "semcom/errors.hpp"

namespace semcom {

void LossWeights::validate() const {
  for (double a : alpha) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw ConfigError("loss weights must lie in [0, 1], got " + format_double(a));
    }
  }
}

void require_one_hot(const Tensor& t, const char* what) {
  for (std::size_t r = 0; r < t.rows; ++r) {
    int ones = 0;
    for (double v : t.row(r)) {
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) {
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " is not one-hot");
    }
  }
}

Var cross_entropy(Graph& g, Var probabilities, const Tensor& one_hot) {
  const Tensor& p = g.value(probabilities);
  if (!p.same_shape(one_hot)) {
    throw DimensionError("cross_entropy: predictions " + p.shape_string() + " vs labels " +
                         one_hot.shape_string());
  }
  require_one_hot(one_hot, "cross_entropy");
  const double n = static_cast<double>(p.rows);
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (one_hot.data[k] != 0.0) total -= std::log(std::clamp(p.data[k], kProbabilityFloor, 1.0));
  }
  return g.record("cross_entropy", Tensor(1, 1, total / n), {probabilities},
                  [labels = one_hot, n](const BackwardArgs& b) {
                    const auto& p = b.in[0]->data;
                    auto& gp = b.in_grad[0]->data;
                    const double up = b.upstream.data[0];
                    for (std::size_t k = 0; k < p.size(); ++k) {
                      // the clamp is flat outside [floor, 1]
                      if (labels.data[k] != 0.0 && p[k] > kProbabilityFloor && p[k] <= 1.0) {
                        gp[k] -= up * labels.data[k] / (n * p[k]);
                      }
                    }
                  });
}

Var mse_loss(Graph& g, Var target, Var prediction) {
  const Tensor& d = g.value(target);
  const Tensor& e = g.value(prediction);
  if (!d.same_shape(e)) {
    throw DimensionError("mse_loss: shapes " + d.shape_string() + " and " + e.shape_string());
  }
  const double count = static_cast<double>(d.size());
  double total = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double diff = d.data[k] - e.data[k];
    total += diff * diff;
  }
  return g.record("mse", Tensor(1, 1, total / count), {target, prediction},
                  [count](const BackwardArgs& b) {
                    const auto& d = b.in[0]->data;
                    const auto& e = b.in[1]->data;
                    const double up = 2.0 * b.upstream.data[0] / count;
                    for (std::size_t k = 0; k < d.size(); ++k) {
                      const double diff = d[k] - e[k];
                      if (b.in_grad[0]) b.in_grad[0]->data[k] += up * diff;
                      if (b.in_grad[1]) b.in_grad[1]->data[k] -= up * diff;
                    }
                  });
}

Var combine_losses(Graph& g, const std::array<std::optional<Var>, 4>& terms,
                   const LossWeights& weights) {
  weights.validate();
  std::vector<Var> present;
  std::vector<double> alpha;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i]) continue;
    const Tensor& v = g.value(*terms[i]);
    if (v.rows != 1 || v.cols != 1) throw ContractError("loss terms must be 1x1");
    present.push_back(*terms[i]);
    alpha.push_back(weights.alpha[i]);
  }
  if (present.empty()) throw ConfigError("joint loss has no terms");
  double total = 0.0;
  for (std::size_t i = 0; i < present.size(); ++i) total += alpha[i] * g.value(present[i]).data[0];
  return g.record("joint_loss", Tensor(1, 1, total), present,
                  [alpha = std::move(alpha)](const BackwardArgs& b) {
                    for (std::size_t i = 0; i < alpha.size(); ++i) {
                      if (b.in_grad[i]) b.in_grad[i]->data[0] += alpha[i] * b.upstream.data[0];
                    }
                  });
}

JointLoss joint_loss(Graph& g, const JointLossInputs& in, const LossWeights& weights,
                     Variant variant) {
  if (!in.c_true) throw ConfigError("joint loss needs ground-truth labels");
  if (in.c_pre.has_value() != has_pe(variant)) {
    throw ConfigError(to_string(variant) + (has_pe(variant) ? " needs C_pre" : " has no C_pre"));
  }
  const bool hsi = in.d_hsi && in.d_hsi_hat;
  const bool lidar = in.d_lidar && in.d_lidar_hat;
  if (hsi != uses_hsi(variant) || lidar != uses_lidar(variant)) {
    throw ConfigError("reconstruction terms do not match variant " + to_string(variant));
  }
  JointLoss out;
  if (in.c_pre) out.terms[kLossPre] = cross_entropy(g, *in.c_pre, *in.c_true);
  out.terms[kLossFin] = cross_entropy(g, in.c_fin, *in.c_true);
  if (hsi) out.terms[kLossHsi] = mse_loss(g, *in.d_hsi, *in.d_hsi_hat);
  if (lidar) out.terms[kLossLidar] = mse_loss(g, *in.d_lidar, *in.d_lidar_hat);
  out.total = combine_losses(g, out.terms, weights);
  return out;
}

double nmse(const Tensor& reference, const Tensor& estimate) {
  if (!reference.same_shape(estimate)) {
    throw DimensionError("nmse: shapes " + reference.shape_string() + " and " +
                         estimate.shape_string());
  }
  double err = 0.0;
  double energy = 0.0;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const double diff = reference.data[k] - estimate.data[k];
    err += diff * diff;
    energy += reference.data[k] * reference.data[k];
  }
  if (energy == 0.0) throw ContractError("nmse: reference is all zeros, metric undefined");
  return err / energy;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double accuracy(const Tensor& predictions, const Tensor& one_hot) {
  if (!predictions.same_shape(one_hot)) {
    throw DimensionError("accuracy: predictions " + predictions.shape_string() + " vs labels " +
                         one_hot.shape_string());
  }
  require_one_hot(one_hot, "accuracy");
  if (predictions.rows == 0) throw ContractError("accuracy: no rows");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < predictions.rows; ++r) {
    if (argmax_row(predictions.row(r)) == argmax_row(one_hot.row(r))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.rows);
}

std::vector<ConstraintCheck> check_constraint(const std::vector<MetricsRecord>& records,
                                              double beta) {
  std::vector<ConstraintCheck> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    ConstraintCheck c;
    c.hsi_ok = !r.nmse_hsi || *r.nmse_hsi <= beta;
    c.lidar_ok = !r.nmse_lidar || *r.nmse_lidar <= beta;
    out.push_back(c);
  }
  return out;
}

// ---- CSV ------------------------------------------------------------------------

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string optional_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

double parse_double(const std::string& s, std::size_t line) {
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("metrics CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, line);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records) {
  out << kMetricsHeader << '\n';
  for (const auto& r : records) {
    out << r.variant << ',' << format_double(r.snr_db) << ',' << r.symbols << ',' << r.epoch << ','
        << format_double(r.accuracy) << ',' << optional_field(r.nmse_hsi) << ','
        << optional_field(r.nmse_lidar);
    for (const auto& l : r.loss) out << ',' << optional_field(l);
    out << '\n';
  }
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream out;
  write_metrics_csv(out, records);
  return out.str();
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError("metrics CSV: missing or unexpected header");
  }
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != 11) {
      throw DataError("metrics CSV line " + std::to_string(line_no) + ": expected 11 fields");
    }
    MetricsRecord r;
    r.variant = f[0];
    r.snr_db = parse_double(f[1], line_no);
    r.symbols = static_cast<std::size_t>(parse_double(f[2], line_no));
    r.epoch = static_cast<std::size_t>(parse_double(f[3], line_no));
    r.accuracy = parse_double(f[4], line_no);
    r.nmse_hsi = parse_optional(f[5], line_no);
    r.nmse_lidar = parse_optional(f[6], line_no);
    for (std::size_t i = 0; i < 4; ++i) r.loss[i] = parse_optional(f[7 + i], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace semcom

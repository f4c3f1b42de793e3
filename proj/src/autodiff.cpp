#include "semcom/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "semcom/errors.hpp"

namespace semcom {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}
Eigen::Map<RowMat> view(Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape_string() + " and " + b.shape_string();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shapes(a, b));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Graph ----------------------------------------------------------------

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant holds non-finite values");
  Node n;
  n.op = "constant";
  n.needs_grad = value.requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::parameter(Tensor& external) {
  if (external.data.size() != external.rows * external.cols) {
    throw DimensionError("parameter data length does not match " + external.shape_string());
  }
  Node n;
  n.op = "parameter";
  n.external = &external;
  n.needs_grad = external.requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) needs = needs || node(in).needs_grad;
  if (!value.all_finite()) throw NumericError(op + " produced non-finite values");
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

const Tensor& Graph::grad(Var v) const { return node(v).grad; }

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

void Graph::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.rows != 1 || lv.cols != 1) {
    throw ContractError("backward needs a scalar 1x1 loss, got " + lv.shape_string());
  }
  for (Node& n : nodes_) {
    const Tensor& v = n.external ? *n.external : n.value;
    n.grad = n.needs_grad ? Tensor(v.rows, v.cols) : Tensor{};
    if (n.external && n.needs_grad) n.external->grad.emplace(v.size(), 0.0);
  }
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad.data[0] = 1.0;

  std::vector<const Tensor*> in;
  std::vector<Tensor*> in_grad;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward) continue;
    in.clear();
    in_grad.clear();
    for (Var v : n.inputs) {
      Node& src = nodes_[v.id];
      in.push_back(src.external ? src.external : &src.value);
      in_grad.push_back(src.needs_grad ? &src.grad : nullptr);
    }
    n.backward(BackwardArgs{n.value, n.grad, in, in_grad});
  }

  for (Node& n : nodes_) {
    if (!n.external || !n.needs_grad) continue;
    auto& acc = *n.external->grad;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad.data[k];
  }
}

// ---- elementary ops -------------------------------------------------------

Var matmul(Graph& g, Var a, Var w) {
  const Tensor& av = g.value(a);
  const Tensor& wv = g.value(w);
  if (av.cols != wv.rows) throw DimensionError("matmul: incompatible shapes " + shapes(av, wv));
  Tensor out(av.rows, wv.cols);
  view(out).noalias() = view(av) * view(wv);
  return g.record("matmul", std::move(out), {a, w}, [](const BackwardArgs& b) {
    if (b.in_grad[0]) view(*b.in_grad[0]).noalias() += view(b.upstream) * view(*b.in[1]).transpose();
    if (b.in_grad[1]) view(*b.in_grad[1]).noalias() += view(*b.in[0]).transpose() * view(b.upstream);
  });
}

Var add_bias(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (bv.rows != 1 || bv.cols != av.cols) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " does not fit " + av.shape_string());
  }
  Tensor out = av;
  out.requires_grad = false;
  out.grad.reset();
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < out.cols; ++c) row[c] += bv.data[c];
  }
  return g.record("add_bias", std::move(out), {a, b}, [](const BackwardArgs& args) {
    const Tensor& up = args.upstream;
    if (args.in_grad[0]) view(*args.in_grad[0]) += view(up);
    if (args.in_grad[1]) {
      auto& gb = args.in_grad[1]->data;
      for (std::size_t r = 0; r < up.rows; ++r) {
        for (std::size_t c = 0; c < up.cols; ++c) gb[c] += up(r, c);
      }
    }
  });
}

Var relu(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  Tensor out(av.rows, av.cols);
  for (std::size_t k = 0; k < av.size(); ++k) out.data[k] = av.data[k] > 0.0 ? av.data[k] : 0.0;
  return g.record("relu", std::move(out), {a}, [](const BackwardArgs& b) {
    auto& ga = b.in_grad[0]->data;
    const auto& x = b.in[0]->data;
    for (std::size_t k = 0; k < ga.size(); ++k) {
      if (x[k] > 0.0) ga[k] += b.upstream.data[k];
    }
  });
}

Var sigmoid(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  Tensor out(av.rows, av.cols);
  for (std::size_t k = 0; k < av.size(); ++k) out.data[k] = stable_sigmoid(av.data[k]);
  return g.record("sigmoid", std::move(out), {a}, [](const BackwardArgs& b) {
    auto& ga = b.in_grad[0]->data;
    for (std::size_t k = 0; k < ga.size(); ++k) {
      const double y = b.out.data[k];
      ga[k] += y * (1.0 - y) * b.upstream.data[k];
    }
  });
}

Var softmax_rows(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  Tensor out(av.rows, av.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    const auto x = av.row(r);
    auto y = out.row(r);
    const double peak = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      y[c] = std::exp(x[c] - peak);
      total += y[c];
    }
    for (double& v : y) v /= total;
  }
  return g.record("softmax_rows", std::move(out), {a}, [](const BackwardArgs& b) {
    Tensor& ga = *b.in_grad[0];
    for (std::size_t r = 0; r < b.out.rows; ++r) {
      const auto y = b.out.row(r);
      const auto up = b.upstream.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.size(); ++c) dot += up[c] * y[c];
      auto dst = ga.row(r);
      for (std::size_t c = 0; c < y.size(); ++c) dst[c] += y[c] * (up[c] - dot);
    }
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t n = g.value(parts[0]).rows;
  std::size_t width = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    if (t.rows != n) {
      throw DimensionError("concat_cols: row mismatch " + shapes(g.value(parts[0]), t));
    }
    width += t.cols;
  }
  Tensor out(n, width);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    for (std::size_t r = 0; r < n; ++r) {
      const auto src = t.row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += t.cols;
  }
  return g.record("concat_cols", std::move(out), {parts.begin(), parts.end()},
                  [](const BackwardArgs& b) {
                    std::size_t off = 0;
                    for (std::size_t i = 0; i < b.in.size(); ++i) {
                      const std::size_t w = b.in[i]->cols;
                      if (Tensor* gi = b.in_grad[i]) {
                        for (std::size_t r = 0; r < b.upstream.rows; ++r) {
                          const auto up = b.upstream.row(r);
                          auto dst = gi->row(r);
                          for (std::size_t c = 0; c < w; ++c) dst[c] += up[off + c];
                        }
                      }
                      off += w;
                    }
                  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape("add", av, bv);
  Tensor out(av.rows, av.cols);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = av.data[k] + bv.data[k];
  return g.record("add", std::move(out), {a, b}, [](const BackwardArgs& args) {
    for (Tensor* gi : args.in_grad) {
      if (gi) view(*gi) += view(args.upstream);
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape("mul", av, bv);
  Tensor out(av.rows, av.cols);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = av.data[k] * bv.data[k];
  return g.record("mul", std::move(out), {a, b}, [](const BackwardArgs& args) {
    const auto& up = args.upstream.data;
    for (int i = 0; i < 2; ++i) {
      Tensor* gi = args.in_grad[i];
      if (!gi) continue;
      const auto& other = args.in[1 - i]->data;
      for (std::size_t k = 0; k < up.size(); ++k) gi->data[k] += up[k] * other[k];
    }
  });
}

Var scale(Graph& g, Var a, double factor) {
  const Tensor& av = g.value(a);
  Tensor out(av.rows, av.cols);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = av.data[k] * factor;
  return g.record("scale", std::move(out), {a}, [factor](const BackwardArgs& b) {
    auto& ga = b.in_grad[0]->data;
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += factor * b.upstream.data[k];
  });
}

Var sum(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  double total = 0.0;
  for (double v : av.data) total += v;
  return g.record("sum", Tensor(1, 1, total), {a}, [](const BackwardArgs& b) {
    const double up = b.upstream.data[0];
    for (double& v : b.in_grad[0]->data) v += up;
  });
}

// ---- batch normalization --------------------------------------------------

Var batchnorm(Graph& g, Var a, Var gamma, Var beta, Mode mode, Tensor& running_mean,
              Tensor& running_var, const BatchNormConfig& cfg) {
  const Tensor& x = g.value(a);
  const Tensor& gm = g.value(gamma);
  const Tensor& bt = g.value(beta);
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  for (const Tensor* t : {&gm, &bt, static_cast<const Tensor*>(&running_mean),
                          static_cast<const Tensor*>(&running_var)}) {
    if (t->rows != 1 || t->cols != d) {
      throw DimensionError("batchnorm: per-column tensor " + t->shape_string() +
                           " does not fit input " + x.shape_string());
    }
  }
  if (mode == Mode::train && n < 2) {
    throw ContractError("batchnorm: degenerate batch of " + std::to_string(n) +
                        " row(s) in train mode (need at least 2)");
  }

  std::vector<double> mean(d, 0.0);
  std::vector<double> var(d, 0.0);
  if (mode == Mode::train) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) mean[c] += x(r, c);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dev = x(r, c) - mean[c];
        var[c] += dev * dev;
      }
    }
    for (double& v : var) v /= static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) {
      running_mean.data[c] = (1.0 - cfg.momentum) * running_mean.data[c] + cfg.momentum * mean[c];
      running_var.data[c] = (1.0 - cfg.momentum) * running_var.data[c] + cfg.momentum * var[c];
    }
  } else {
    mean = running_mean.data;
    var = running_var.data;
  }

  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + cfg.epsilon);

  Tensor normalized(n, d);
  Tensor out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (x(r, c) - mean[c]) * inv_std[c];
      normalized(r, c) = xhat;
      out(r, c) = gm.data[c] * xhat + bt.data[c];
    }
  }

  const bool batch_stats = mode == Mode::train;
  return g.record(
      "batchnorm", std::move(out), {a, gamma, beta},
      [xhat = std::move(normalized), inv_std = std::move(inv_std), batch_stats](
          const BackwardArgs& b) {
        const Tensor& up = b.upstream;
        const std::size_t rows = up.rows;
        const std::size_t cols = up.cols;
        const auto& gm = b.in[1]->data;
        if (Tensor* gg = b.in_grad[1]) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gg->data[c] += up(r, c) * xhat(r, c);
          }
        }
        if (Tensor* gb = b.in_grad[2]) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gb->data[c] += up(r, c);
          }
        }
        Tensor* gx = b.in_grad[0];
        if (!gx) return;
        if (!batch_stats) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) (*gx)(r, c) += up(r, c) * gm[c] * inv_std[c];
          }
          return;
        }
        // dx = inv_std / N * (N dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
        const double count = static_cast<double>(rows);
        std::vector<double> sum_d(cols, 0.0);
        std::vector<double> sum_dx(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxhat = up(r, c) * gm[c];
            sum_d[c] += dxhat;
            sum_dx[c] += dxhat * xhat(r, c);
          }
        }
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxhat = up(r, c) * gm[c];
            (*gx)(r, c) +=
                inv_std[c] / count * (count * dxhat - sum_d[c] - xhat(r, c) * sum_dx[c]);
          }
        }
      });
}

// ---- Adam -----------------------------------------------------------------

void adam_step(std::span<Tensor* const> params, AdamState& state) {
  for (const Tensor* p : params) {
    if (!p->grad || p->grad->size() != p->size()) {
      throw ContractError("adam_step: parameter " + p->shape_string() + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.size()) throw ContractError("adam_step: moment shape mismatch");
    const auto& grad = *p.grad;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * grad[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p.data[k] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    p.grad.reset();
  }
}

// ---- gradient check -------------------------------------------------------

GradCheckReport grad_check(const std::function<Var(Graph&)>& build,
                           std::span<Tensor* const> inputs, double tolerance, double step,
                           double abs_floor) {
  GradCheckReport report;
  std::vector<bool> saved_flags;
  for (Tensor* t : inputs) {
    saved_flags.push_back(t->requires_grad);
    t->requires_grad = true;
  }
  auto restore = [&] {
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i]->requires_grad = saved_flags[i];
  };

  auto evaluate = [&](double& out) {
    try {
      Graph g;
      const Var loss = build(g);
      out = g.value(loss).data.at(0);
      return std::isfinite(out);
    } catch (const NumericError&) {
      return false;
    }
  };

  std::vector<std::vector<double>> analytic;
  double f0 = 0.0;
  try {
    Graph g;
    const Var loss = build(g);
    f0 = g.value(loss).data.at(0);
    g.backward(loss);
  } catch (const NumericError&) {
    report.non_finite = true;
    restore();
    return report;
  }
  for (Tensor* t : inputs) {
    analytic.push_back(t->grad ? *t->grad : std::vector<double>(t->size(), 0.0));
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = *inputs[i];
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double original = t.data[k];
      double f_plus = 0.0;
      double f_minus = 0.0;
      t.data[k] = original + step;
      const bool ok_plus = evaluate(f_plus);
      t.data[k] = original - step;
      const bool ok_minus = evaluate(f_minus);
      t.data[k] = original;
      if (!ok_plus || !ok_minus) {
        report.non_finite = true;
        continue;
      }
      ++report.entries_checked;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[i][k];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      if (rel > tolerance) {
        const double forward = (f_plus - f0) / step;
        const double backward = (f0 - f_minus) / step;
        const double spread = std::abs(forward - backward);
        if (spread > 10.0 * tolerance * std::max({std::abs(forward), std::abs(backward), abs_floor})) {
          ++report.kinks_skipped;
          continue;
        }
      }
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  restore();
  for (Tensor* t : inputs) t->grad.reset();
  report.passed = !report.non_finite && report.max_rel_error < tolerance;
  return report;
}

}  // namespace semcom

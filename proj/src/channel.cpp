#include "semcom/channel.hpp"

#include <cmath>
#include <numbers>

#include "semcom/errors.hpp"

namespace semcom {

std::string to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::identity: return "identity";
    case ChannelKind::awgn: return "awgn";
    case ChannelKind::rayleigh_awgn: return "rayleigh_awgn";
  }
  return "?";
}

ChannelKind parse_channel_kind(const std::string& name) {
  if (name == "identity") return ChannelKind::identity;
  if (name == "awgn") return ChannelKind::awgn;
  if (name == "rayleigh_awgn" || name == "rayleigh") return ChannelKind::rayleigh_awgn;
  throw ConfigError("unknown channel kind '" + name + "'");
}

std::string to_string(FadingGranularity granularity) {
  return granularity == FadingGranularity::per_sample ? "per_sample" : "per_symbol";
}

FadingGranularity parse_granularity(const std::string& name) {
  if (name == "per_sample") return FadingGranularity::per_sample;
  if (name == "per_symbol") return FadingGranularity::per_symbol;
  throw ConfigError("unknown fading granularity '" + name + "'");
}

double noise_sigma(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::sqrt(std::pow(10.0, -snr_db / 10.0));
}

std::vector<double> rayleigh_draw(CounterRng& rng, std::size_t n) {
  std::vector<double> h(n);
  for (double& v : h) {
    const double g1 = rng.normal();
    const double g2 = rng.normal();
    v = std::sqrt(g1 * g1 + g2 * g2) / std::numbers::sqrt2;
  }
  return h;
}

Var power_normalize(Graph& g, Var s) {
  const Tensor& x = g.value(s);
  if (x.cols == 0) throw DimensionError("power_normalize: zero symbols per row");
  const double root_k = std::sqrt(static_cast<double>(x.cols));
  Tensor out(x.rows, x.cols);
  std::vector<double> norms(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double sq = 0.0;
    for (double v : x.row(r)) sq += v * v;
    norms[r] = std::sqrt(sq);
    const double factor = norms[r] > 0.0 ? root_k / norms[r] : 1.0;
    auto dst = out.row(r);
    const auto src = x.row(r);
    for (std::size_t c = 0; c < x.cols; ++c) dst[c] = src[c] * factor;
  }
  return g.record("power_normalize", std::move(out), {s},
                  [norms = std::move(norms), root_k](const BackwardArgs& b) {
                    // y = c x / |x|  =>  dx = c/|x| (g - u (u.g)),  u = x/|x|
                    const Tensor& x = *b.in[0];
                    Tensor& gx = *b.in_grad[0];
                    for (std::size_t r = 0; r < x.rows; ++r) {
                      const auto up = b.upstream.row(r);
                      auto dst = gx.row(r);
                      if (norms[r] == 0.0) {
                        for (std::size_t c = 0; c < x.cols; ++c) dst[c] += up[c];
                        continue;
                      }
                      const auto xr = x.row(r);
                      double dot = 0.0;
                      for (std::size_t c = 0; c < x.cols; ++c) dot += xr[c] * up[c];
                      const double n = norms[r];
                      for (std::size_t c = 0; c < x.cols; ++c) {
                        dst[c] += root_k / n * (up[c] - xr[c] * dot / (n * n));
                      }
                    }
                  });
}

ChannelRealization draw_realization(std::size_t rows, std::size_t cols, const ChannelConfig& cfg,
                                    CounterRng& rng) {
  ChannelRealization out{Tensor(rows, cols, 1.0), Tensor(rows, cols, 0.0)};
  if (cfg.kind == ChannelKind::identity) return out;
  if (cfg.kind == ChannelKind::rayleigh_awgn) {
    if (cfg.granularity == FadingGranularity::per_symbol) {
      out.gain.data = rayleigh_draw(rng, rows * cols);
    } else {
      const auto per_row = rayleigh_draw(rng, rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (double& v : out.gain.row(r)) v = per_row[r];
      }
    }
  }
  const double sigma = noise_sigma(cfg.snr_db);
  for (double& v : out.noise.data) v = sigma * rng.normal();
  return out;
}

Var apply_realization(Graph& g, Var s, const ChannelRealization& realization) {
  const Tensor& x = g.value(s);
  if (!x.same_shape(realization.gain) || !x.same_shape(realization.noise)) {
    throw DimensionError("channel realization does not match transmitted block " +
                         x.shape_string());
  }
  Tensor out(x.rows, x.cols);
  for (std::size_t k = 0; k < x.size(); ++k) {
    out.data[k] = realization.gain.data[k] * x.data[k] + realization.noise.data[k];
  }
  return g.record("channel", std::move(out), {s}, [gain = realization.gain](const BackwardArgs& b) {
    auto& gx = b.in_grad[0]->data;
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += gain.data[k] * b.upstream.data[k];
  });
}

Var transmit(Graph& g, Var s, const ChannelConfig& cfg, CounterRng& rng,
             ChannelRealization* recorded) {
  if (cfg.kind == ChannelKind::identity) {
    if (recorded) {
      const Tensor& x = g.value(s);
      *recorded = {Tensor(x.rows, x.cols, 1.0), Tensor(x.rows, x.cols, 0.0)};
    }
    return s;
  }
  if (!std::isfinite(cfg.snr_db)) throw ConfigError("channel SNR must be finite");
  const Tensor& x = g.value(s);
  ChannelRealization realization = draw_realization(x.rows, x.cols, cfg, rng);
  const Var out = apply_realization(g, s, realization);
  if (recorded) *recorded = std::move(realization);
  return out;
}

}  // namespace semcom

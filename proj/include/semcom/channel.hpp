#pragma once

// Wireless segment between transmitter and receiver: S_hat = h * S + n.

#include <cstdint>
#include <string>
#include <vector>

#include "semcom/autodiff.hpp"
#include "semcom/rng.hpp"

namespace semcom {

enum class ChannelKind { identity, awgn, rayleigh_awgn };
enum class FadingGranularity { per_sample, per_symbol };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::rayleigh_awgn;
  double snr_db = 10.0;
  std::uint64_t seed = 0;
  FadingGranularity granularity = FadingGranularity::per_symbol;
};

std::string to_string(ChannelKind kind);
ChannelKind parse_channel_kind(const std::string& name);
std::string to_string(FadingGranularity granularity);
FadingGranularity parse_granularity(const std::string& name);

/// Noise standard deviation for unit signal power: sigma^2 = 10^(-snr_db/10).
/// +inf dB gives 0.
double noise_sigma(double snr_db);

/// n Rayleigh gains with scale 1/sqrt(2), so E[h^2] = 1.
std::vector<double> rayleigh_draw(CounterRng& rng, std::size_t n);

/// Scales each row to mean per-symbol power 1 (row * sqrt(K) / ||row||).
/// All-zero rows pass through unchanged.
Var power_normalize(Graph& g, Var s);

/// One realized channel: multiplicative gain and additive noise, both shaped
/// like the transmitted block.
struct ChannelRealization {
  Tensor gain;
  Tensor noise;
};

/// Draws gains first (all of them), then noise as sigma times standard normals.
/// The underlying variates do not depend on snr_db, so sweeps that reuse a seed
/// see the same fading and noise shape at every SNR.
ChannelRealization draw_realization(std::size_t rows, std::size_t cols, const ChannelConfig& cfg,
                                    CounterRng& rng);

/// S_hat = gain * S + noise with the realization held constant in backward
/// (dS_hat/dS = diag(gain)).
Var apply_realization(Graph& g, Var s, const ChannelRealization& realization);

/// Full channel. The identity kind returns `s` itself. `recorded`, when
/// given, receives the realization that was applied.
Var transmit(Graph& g, Var s, const ChannelConfig& cfg, CounterRng& rng,
             ChannelRealization* recorded = nullptr);

}  // namespace semcom

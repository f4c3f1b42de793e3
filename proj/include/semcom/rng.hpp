#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>

namespace semcom {

/// SplitMix64 counter stream. Output i of stream (seed, stream_id) is
/// mix64(key + i * 0x9E3779B97F4A7C15) with key = mix64(seed ^ mix64(stream_id)),
/// so any draw is a pure function of (seed, stream_id, i). Normals come from
/// Box-Muller; the second variate of each pair is kept for the next call.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const noexcept { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_;
};

std::uint64_t mix64(std::uint64_t z);

/// Fisher-Yates shuffle driven by CounterRng (portable, unlike std::shuffle).
template <typename T>
void shuffle(std::span<T> items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace semcom

#pragma once

#include <cstdint>

#include "semcom/rng.hpp"
#include "semcom/tensor.hpp"

namespace semcom::test {

inline Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  CounterRng rng(seed, 77);
  Tensor t(r, c);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor one_hot(std::size_t rows, std::size_t classes, std::uint64_t seed) {
  CounterRng rng(seed, 78);
  Tensor t(rows, classes);
  for (std::size_t r = 0; r < rows; ++r) t(r, rng.below(classes)) = 1.0;
  return t;
}

inline Tensor grad_of(const Tensor& t) { return Tensor(t.rows, t.cols, *t.grad); }

}  // namespace semcom::test

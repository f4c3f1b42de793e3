#include "semcom/tensor.hpp"

#include <cmath>
#include <cstring>

#include "semcom/errors.hpp"

namespace semcom {

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t;
  t.rows = rows.size();
  t.cols = rows.size() == 0 ? 0 : rows.begin()->size();
  t.data.reserve(t.rows * t.cols);
  for (const auto& r : rows) {
    if (r.size() != t.cols) throw DimensionError("ragged row list");
    t.data.insert(t.data.end(), r.begin(), r.end());
  }
  return t;
}

bool Tensor::all_finite() const noexcept {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  if (a.data.empty()) return true;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  Tensor out(indices.size(), t.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows) throw DimensionError("row index out of range");
    const auto src = t.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace semcom

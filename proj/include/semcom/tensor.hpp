#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace semcom {

/// Dense row-major 2-D array of doubles. Rows are samples, columns are features.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t size() const noexcept { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool same_shape(const Tensor& other) const noexcept {
    return rows == other.rows && cols == other.cols;
  }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  // Value equality: shape and bit-identical data. Gradient state is ignored.
  friend bool operator==(const Tensor& a, const Tensor& b);
};

// Copy of the selected rows, in the given order.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

}  // namespace semcom

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

// Dense row-major matrix of doubles. The value type for samples, features,
// parameters and gradients.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Matrix& o) const noexcept { return rows == o.rows && cols == o.cols; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool all_finite() const noexcept;
  std::string shape_str() const;

  bool operator==(const Matrix&) const = default;
};

// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// out = a * b^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// out = a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);

// Rows of `src` at `indices`, in order.
Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices);

double frobenius_sq(const Matrix& m) noexcept;

}  // namespace xmodal

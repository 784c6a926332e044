#include "xmodal/matrix.hpp"

#include <cmath>

#include "xmodal/errors.hpp"

namespace xmodal {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("matrix data length " + std::to_string(data.size()) +
                     " does not match " + shape_str());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> init) {
  Matrix m;
  m.rows = init.size();
  m.cols = m.rows ? init.begin()->size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : init) {
    if (r.size() != m.cols) throw ShapeError("ragged row in matrix literal");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

bool Matrix::all_finite() const noexcept {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions differ (" + a.shape_str() + " * " +
                     b.shape_str() + ")");
  }
  Matrix out(a.rows, b.cols);
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* orow = out.data.data() + i * n;
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw ShapeError("matmul_bt: column counts differ (" + a.shape_str() + ", " +
                     b.shape_str() + ")");
  }
  Matrix out(a.rows, b.rows);
  const std::size_t k = a.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * k;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * k;
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += arow[t] * brow[t];
      out.data[i * b.rows + j] = s;
    }
  }
  return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw ShapeError("matmul_at: row counts differ (" + a.shape_str() + ", " +
                     b.shape_str() + ")");
  }
  Matrix out(a.cols, b.cols);
  const std::size_t n = b.cols;
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* arow = a.data.data() + r * a.cols;
    const double* brow = b.data.data() + r * n;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ari = arow[i];
      if (ari == 0.0) continue;
      double* orow = out.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += ari * brow[j];
    }
  }
  return out;
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), src.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= src.rows) throw ShapeError("gather_rows: index out of range");
    auto s = src.row(indices[i]);
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

double frobenius_sq(const Matrix& m) noexcept {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return s;
}

}  // namespace xmodal

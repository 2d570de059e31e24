#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spectral {

/// Row-major float matrix with value semantics. Used for bases, materialized
/// weights and anything else that lives outside the autodiff tape.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::int64_t rows, std::int64_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), fill) {
    if (rows < 0 || cols < 0) {
      throw std::invalid_argument("Matrix: negative dimension");
    }
  }
  Matrix(std::int64_t rows, std::int64_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != rows * cols) {
      throw std::invalid_argument("Matrix: buffer of " + std::to_string(data_.size()) +
                                  " floats does not fit " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
  }

  static Matrix identity(std::int64_t k) {
    Matrix m(k, k);
    for (std::int64_t i = 0; i < k; ++i) m(i, i) = 1.0f;
    return m;
  }

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t size() const { return rows_ * cols_; }

  float& operator()(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * cols_ + j)]; }
  float operator()(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> row(std::int64_t i) {
    return std::span<float>(data_).subspan(static_cast<std::size_t>(i * cols_), static_cast<std::size_t>(cols_));
  }
  std::span<const float> row(std::int64_t i) const {
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(i * cols_),
                                                 static_cast<std::size_t>(cols_));
  }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<float> data_;
};

/// C = A * B (dense, float accumulation through the BLAS kernel).
Matrix multiply(const Matrix& a, const Matrix& b);
/// C = A^T * B
Matrix multiply_tn(const Matrix& a, const Matrix& b);
/// C = A * B^T
Matrix multiply_nt(const Matrix& a, const Matrix& b);

float max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

}  // namespace spectral

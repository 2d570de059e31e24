#include "spectral/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "spectral/kernels.hpp"

namespace spectral {

namespace {

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::int64_t i = 0; i < rows_; ++i) {
    for (std::int64_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  }
  return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("multiply: inner dimensions differ (" + dims(a) + " * " + dims(b) + ")");
  }
  Matrix c(a.rows(), b.cols());
  kernels::gemm(false, false, a.rows(), b.cols(), a.cols(), 1.0f, a.data().data(), a.cols(), b.data().data(),
                b.cols(), 0.0f, c.data().data(), c.cols());
  return c;
}

Matrix multiply_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("multiply_tn: inner dimensions differ (" + dims(a) + "^T * " + dims(b) + ")");
  }
  Matrix c(a.cols(), b.cols());
  kernels::gemm(true, false, a.cols(), b.cols(), a.rows(), 1.0f, a.data().data(), a.cols(), b.data().data(),
                b.cols(), 0.0f, c.data().data(), c.cols());
  return c;
}

Matrix multiply_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("multiply_nt: inner dimensions differ (" + dims(a) + " * " + dims(b) + "^T)");
  }
  Matrix c(a.rows(), b.rows());
  kernels::gemm(false, true, a.rows(), b.rows(), a.cols(), 1.0f, a.data().data(), a.cols(), b.data().data(),
                b.cols(), 0.0f, c.data().data(), c.cols());
  return c;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " + dims(a) + " vs " + dims(b));
  }
  float worst = 0.0f;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

}  // namespace spectral

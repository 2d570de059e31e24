#include "spectral/transforms.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include "spectral/rng.hpp"

namespace spectral {

std::string_view to_string(BasisKind kind) { return kind == BasisKind::dct ? "dct" : "random"; }
std::string_view to_string(SelectionKind kind) { return kind == SelectionKind::zigzag ? "zigzag" : "random"; }

BasisKind parse_basis_kind(std::string_view name) {
  if (name == "dct") return BasisKind::dct;
  if (name == "random" || name == "rand") return BasisKind::random;
  throw std::invalid_argument("unknown basis kind '" + std::string(name) + "'");
}

SelectionKind parse_selection_kind(std::string_view name) {
  if (name == "zigzag") return SelectionKind::zigzag;
  if (name == "random") return SelectionKind::random;
  throw std::invalid_argument("unknown selection kind '" + std::string(name) + "'");
}

Matrix dct_matrix(std::int64_t k) {
  if (k < 1) throw std::invalid_argument("dct_matrix: size must be positive");
  Matrix d(k, k);
  const double a0 = std::sqrt(1.0 / static_cast<double>(k));
  const double a = std::sqrt(2.0 / static_cast<double>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    for (std::int64_t j = 0; j < k; ++j) {
      const double angle = std::numbers::pi * static_cast<double>((2 * j + 1) * i) / (2.0 * static_cast<double>(k));
      d(i, j) = static_cast<float>((i == 0 ? a0 : a) * std::cos(angle));
    }
  }
  return d;
}

Matrix random_orthogonal(std::int64_t k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("random_orthogonal: size must be positive");
  Rng rng(seed);
  Eigen::MatrixXd g(k, k);
  for (std::int64_t i = 0; i < k; ++i) {
    for (std::int64_t j = 0; j < k; ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd& r = qr.matrixQR();
  Matrix out(k, k);
  for (std::int64_t j = 0; j < k; ++j) {
    const double sign = r(j, j) < 0.0 ? -1.0 : 1.0;
    for (std::int64_t i = 0; i < k; ++i) out(i, j) = static_cast<float>(sign * q(i, j));
  }
  return out;
}

SeparableBasis SeparableBasis::dct(std::int64_t rows, std::int64_t cols) {
  return SeparableBasis(BasisKind::dct, dct_matrix(rows), dct_matrix(cols), 0, 0);
}

SeparableBasis SeparableBasis::random(std::int64_t rows, std::int64_t cols, std::uint64_t row_seed,
                                      std::uint64_t col_seed) {
  return SeparableBasis(BasisKind::random, random_orthogonal(rows, row_seed), random_orthogonal(cols, col_seed),
                        row_seed, col_seed);
}

std::vector<GridIndex> zigzag_scan(std::int64_t rows, std::int64_t cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("zigzag_scan: grid dimensions must be positive");
  std::vector<GridIndex> order;
  order.reserve(static_cast<std::size_t>(rows * cols));
  for (std::int64_t d = 0; d <= rows + cols - 2; ++d) {
    const std::int64_t lo = std::max<std::int64_t>(0, d - (cols - 1));
    const std::int64_t hi = std::min<std::int64_t>(d, rows - 1);
    if (d % 2 == 0) {
      for (std::int64_t i = hi; i >= lo; --i) {
        order.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(d - i)});
      }
    } else {
      for (std::int64_t i = lo; i <= hi; ++i) {
        order.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(d - i)});
      }
    }
  }
  return order;
}

SelectionSet::SelectionSet(SelectionKind kind, std::int64_t rows, std::int64_t cols,
                           std::vector<GridIndex> indices, std::uint64_t seed)
    : kind_(kind), rows_(rows), cols_(cols), indices_(std::move(indices)), seed_(seed) {
  flat_.reserve(indices_.size());
  std::unordered_set<std::int64_t> seen;
  for (const auto& ix : indices_) {
    if (ix.row < 0 || ix.row >= rows_ || ix.col < 0 || ix.col >= cols_) {
      throw std::out_of_range("SelectionSet: index (" + std::to_string(ix.row) + "," + std::to_string(ix.col) +
                              ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_) + " grid");
    }
    const std::int64_t f = ix.row * cols_ + ix.col;
    if (!seen.insert(f).second) {
      throw std::invalid_argument("SelectionSet: duplicate index (" + std::to_string(ix.row) + "," +
                                  std::to_string(ix.col) + ")");
    }
    flat_.push_back(f);
  }
}

namespace {

void check_k(std::int64_t rows, std::int64_t cols, std::int64_t k) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("SelectionSet: grid dimensions must be positive");
  if (k < 1 || k > rows * cols) {
    throw std::invalid_argument("SelectionSet: K = " + std::to_string(k) + " outside [1, " +
                                std::to_string(rows * cols) + "]");
  }
}

}  // namespace

SelectionSet SelectionSet::zigzag(std::int64_t rows, std::int64_t cols, std::int64_t k) {
  check_k(rows, cols, k);
  auto order = zigzag_scan(rows, cols);
  order.resize(static_cast<std::size_t>(k));
  return SelectionSet(SelectionKind::zigzag, rows, cols, std::move(order), 0);
}

SelectionSet SelectionSet::random(std::int64_t rows, std::int64_t cols, std::int64_t k, std::uint64_t seed) {
  check_k(rows, cols, k);
  // Partial Fisher-Yates: position i receives a uniform draw from the rest.
  const std::int64_t total = rows * cols;
  std::vector<std::int64_t> pool(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) pool[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  std::vector<GridIndex> picks;
  picks.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(total - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    const auto f = pool[static_cast<std::size_t>(i)];
    picks.push_back({static_cast<std::int32_t>(f / cols), static_cast<std::int32_t>(f % cols)});
  }
  return SelectionSet(SelectionKind::random, rows, cols, std::move(picks), seed);
}

SelectionSet SelectionSet::explicit_indices(std::int64_t rows, std::int64_t cols, std::vector<GridIndex> indices) {
  if (indices.empty()) throw std::invalid_argument("SelectionSet: empty selection");
  return SelectionSet(SelectionKind::random, rows, cols, std::move(indices), 0);
}

namespace {

void check_basis(const Matrix& x, const SeparableBasis& basis, const char* op) {
  if (x.rows() != basis.rows() || x.cols() != basis.cols()) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + " input does not match " +
                                std::to_string(basis.rows()) + "x" + std::to_string(basis.cols()) + " basis");
  }
}

void check_selection(const SelectionSet& s, const SeparableBasis& basis) {
  if (s.rows() != basis.rows() || s.cols() != basis.cols()) {
    throw std::invalid_argument("selection grid " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                                " does not match basis " + std::to_string(basis.rows()) + "x" +
                                std::to_string(basis.cols()));
  }
}

}  // namespace

Matrix dct2_forward(const Matrix& x, const SeparableBasis& basis) {
  check_basis(x, basis, "dct2_forward");
  return multiply_nt(multiply(basis.q_row(), x), basis.q_col());
}

Matrix idct2(const Matrix& coeffs, const SeparableBasis& basis) {
  check_basis(coeffs, basis, "idct2");
  return multiply(multiply_tn(basis.q_row(), coeffs), basis.q_col());
}

Matrix scatter(std::span<const float> c, const SelectionSet& selection) {
  if (static_cast<std::int64_t>(c.size()) != selection.size()) {
    throw std::invalid_argument("scatter: " + std::to_string(c.size()) + " coefficients for K = " +
                                std::to_string(selection.size()));
  }
  Matrix grid(selection.rows(), selection.cols());
  auto g = grid.data();
  const auto& flat = selection.flat();
  for (std::size_t i = 0; i < c.size(); ++i) g[static_cast<std::size_t>(flat[i])] = c[i];
  return grid;
}

Matrix idct2_sparse(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis) {
  check_selection(selection, basis);
  return idct2(scatter(c, selection), basis);
}

std::vector<float> gather(const Matrix& grid, const SelectionSet& selection) {
  if (grid.rows() != selection.rows() || grid.cols() != selection.cols()) {
    throw std::invalid_argument("gather: grid does not match selection dimensions");
  }
  std::vector<float> out;
  out.reserve(selection.flat().size());
  auto g = grid.data();
  for (auto f : selection.flat()) out.push_back(g[static_cast<std::size_t>(f)]);
  return out;
}

// --- FastDct -----------------------------------------------------------------

FastDct::FastDct(std::int64_t k) : k_(k) {
  if (k < 1) throw std::invalid_argument("FastDct: size must be positive");
  std::int64_t n = k;
  while (n % 2 == 0) {
    Level level{n, {}};
    level.half_secant.resize(static_cast<std::size_t>(n / 2));
    for (std::int64_t i = 0; i < n / 2; ++i) {
      level.half_secant[static_cast<std::size_t>(i)] = static_cast<float>(
          0.5 / std::cos(std::numbers::pi * static_cast<double>(2 * i + 1) / (2.0 * static_cast<double>(n))));
    }
    levels_.push_back(std::move(level));
    n /= 2;
  }
  base_ = n;
  base_cos_.resize(static_cast<std::size_t>(base_ * base_));
  for (std::int64_t i = 0; i < base_; ++i) {
    for (std::int64_t j = 0; j < base_; ++j) {
      base_cos_[static_cast<std::size_t>(i * base_ + j)] = static_cast<float>(
          std::cos(std::numbers::pi * static_cast<double>((2 * j + 1) * i) / (2.0 * static_cast<double>(base_))));
    }
  }
  alpha_.resize(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    alpha_[static_cast<std::size_t>(i)] = static_cast<float>(std::sqrt((i == 0 ? 1.0 : 2.0) / static_cast<double>(k)));
  }
}

// Unnormalized DCT-II, X[i] = sum_j x[j] cos(pi (2j+1) i / (2n)). Even n uses
// the half-length split: X[2i] from the folded sum, X[2i+1] = B[i] + B[i+1]
// from the secant-weighted folded difference.
void FastDct::forward_rec(float* x, float* tmp, std::size_t level) const {
  if (level == levels_.size()) {
    for (std::int64_t i = 0; i < base_; ++i) {
      float acc = 0.0f;
      for (std::int64_t j = 0; j < base_; ++j) acc += base_cos_[static_cast<std::size_t>(i * base_ + j)] * x[j];
      tmp[i] = acc;
    }
    std::copy_n(tmp, base_, x);
    return;
  }
  const auto& lv = levels_[level];
  const std::int64_t h = lv.n / 2;
  for (std::int64_t i = 0; i < h; ++i) {
    const float a = x[i], b = x[lv.n - 1 - i];
    tmp[i] = a + b;
    tmp[h + i] = (a - b) * lv.half_secant[static_cast<std::size_t>(i)];
  }
  forward_rec(tmp, x, level + 1);
  forward_rec(tmp + h, x + h, level + 1);
  for (std::int64_t i = 0; i < h; ++i) {
    x[2 * i] = tmp[i];
    x[2 * i + 1] = tmp[h + i] + (i + 1 < h ? tmp[h + i + 1] : 0.0f);
  }
}

// Transpose of forward_rec, i.e. the unnormalized DCT-III.
void FastDct::inverse_rec(float* y, float* tmp, std::size_t level) const {
  if (level == levels_.size()) {
    for (std::int64_t j = 0; j < base_; ++j) {
      float acc = 0.0f;
      for (std::int64_t i = 0; i < base_; ++i) acc += base_cos_[static_cast<std::size_t>(i * base_ + j)] * y[i];
      tmp[j] = acc;
    }
    std::copy_n(tmp, base_, y);
    return;
  }
  const auto& lv = levels_[level];
  const std::int64_t h = lv.n / 2;
  for (std::int64_t i = 0; i < h; ++i) {
    tmp[i] = y[2 * i];
    tmp[h + i] = y[2 * i + 1] + (i > 0 ? y[2 * i - 1] : 0.0f);
  }
  inverse_rec(tmp, y, level + 1);
  inverse_rec(tmp + h, y + h, level + 1);
  for (std::int64_t i = 0; i < h; ++i) {
    const float a = tmp[i];
    const float b = tmp[h + i] * lv.half_secant[static_cast<std::size_t>(i)];
    y[i] = a + b;
    y[lv.n - 1 - i] = a - b;
  }
}

void FastDct::forward(std::span<float> x, std::span<float> scratch) const {
  if (static_cast<std::int64_t>(x.size()) != k_ || static_cast<std::int64_t>(scratch.size()) < k_) {
    throw std::invalid_argument("FastDct::forward: buffer sizes do not match transform length " +
                                std::to_string(k_));
  }
  forward_rec(x.data(), scratch.data(), 0);
  for (std::int64_t i = 0; i < k_; ++i) x[static_cast<std::size_t>(i)] *= alpha_[static_cast<std::size_t>(i)];
}

void FastDct::inverse(std::span<float> x, std::span<float> scratch) const {
  if (static_cast<std::int64_t>(x.size()) != k_ || static_cast<std::int64_t>(scratch.size()) < k_) {
    throw std::invalid_argument("FastDct::inverse: buffer sizes do not match transform length " +
                                std::to_string(k_));
  }
  for (std::int64_t i = 0; i < k_; ++i) x[static_cast<std::size_t>(i)] *= alpha_[static_cast<std::size_t>(i)];
  inverse_rec(x.data(), scratch.data(), 0);
}

}  // namespace spectral

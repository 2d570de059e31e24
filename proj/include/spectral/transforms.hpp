#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spectral/matrix.hpp"

namespace spectral {

enum class BasisKind { dct, random };
enum class SelectionKind { zigzag, random };

std::string_view to_string(BasisKind kind);
std::string_view to_string(SelectionKind kind);
BasisKind parse_basis_kind(std::string_view name);
SelectionKind parse_selection_kind(std::string_view name);

/// Orthonormal type-II DCT matrix of size k:
/// d[i][j] = a_i cos(pi (2j+1) i / (2k)), a_0 = sqrt(1/k), a_i = sqrt(2/k).
Matrix dct_matrix(std::int64_t k);

/// Haar-distributed k x k orthogonal matrix: QR of a seeded Gaussian matrix
/// with the signs of R's diagonal folded into Q.
Matrix random_orthogonal(std::int64_t k, std::uint64_t seed);

/// Orthonormal basis of R^{m x n} expressible as Q_row (x) Q_col. A
/// coefficient grid C maps to the weight matrix Q_row^T C Q_col.
class SeparableBasis {
 public:
  static SeparableBasis dct(std::int64_t rows, std::int64_t cols);
  static SeparableBasis random(std::int64_t rows, std::int64_t cols, std::uint64_t row_seed,
                               std::uint64_t col_seed);

  BasisKind kind() const { return kind_; }
  std::int64_t rows() const { return q_row_.rows(); }
  std::int64_t cols() const { return q_col_.rows(); }
  std::uint64_t row_seed() const { return row_seed_; }
  std::uint64_t col_seed() const { return col_seed_; }
  const Matrix& q_row() const { return q_row_; }
  const Matrix& q_col() const { return q_col_; }

 private:
  SeparableBasis(BasisKind kind, Matrix q_row, Matrix q_col, std::uint64_t row_seed, std::uint64_t col_seed)
      : kind_(kind), q_row_(std::move(q_row)), q_col_(std::move(q_col)), row_seed_(row_seed), col_seed_(col_seed) {}

  BasisKind kind_;
  Matrix q_row_;
  Matrix q_col_;
  std::uint64_t row_seed_ = 0;
  std::uint64_t col_seed_ = 0;
};

struct GridIndex {
  std::int32_t row = 0;
  std::int32_t col = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

/// JPEG-style zigzag order over an m x n grid: anti-diagonals d = i + j in
/// increasing order, even d walked from high i to low i, odd d from low i to
/// high i, cells outside the rectangle skipped.
std::vector<GridIndex> zigzag_scan(std::int64_t rows, std::int64_t cols);

/// Ordered list of K coefficient positions.
class SelectionSet {
 public:
  /// First K entries of zigzag_scan(rows, cols).
  static SelectionSet zigzag(std::int64_t rows, std::int64_t cols, std::int64_t k);
  /// Uniform K-subset without replacement, in draw order.
  static SelectionSet random(std::int64_t rows, std::int64_t cols, std::int64_t k, std::uint64_t seed);
  /// Explicit positions; validated for range and uniqueness.
  static SelectionSet explicit_indices(std::int64_t rows, std::int64_t cols, std::vector<GridIndex> indices);

  SelectionKind kind() const { return kind_; }
  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t size() const { return static_cast<std::int64_t>(indices_.size()); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<GridIndex>& indices() const { return indices_; }
  /// Row-major flat offsets (i * cols + j), same order as indices().
  const std::vector<std::int64_t>& flat() const { return flat_; }

 private:
  SelectionSet(SelectionKind kind, std::int64_t rows, std::int64_t cols, std::vector<GridIndex> indices,
               std::uint64_t seed);

  SelectionKind kind_;
  std::int64_t rows_;
  std::int64_t cols_;
  std::vector<GridIndex> indices_;
  std::vector<std::int64_t> flat_;
  std::uint64_t seed_ = 0;
};

/// Q_row X Q_col^T. Dense separable path (per-axis matrix products).
Matrix dct2_forward(const Matrix& x, const SeparableBasis& basis);
/// Q_row^T C Q_col, the inverse of dct2_forward.
Matrix idct2(const Matrix& coeffs, const SeparableBasis& basis);
/// Scatters c into a zero grid at S, then applies idct2.
Matrix idct2_sparse(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis);
/// Reads the grid at S, in selection order.
std::vector<float> gather(const Matrix& grid, const SelectionSet& selection);
Matrix scatter(std::span<const float> c, const SelectionSet& selection);

// --- fast 1-D orthonormal DCT -------------------------------------------------

/// Precomputed plan for the recursive O(k log k) orthonormal DCT-II of length
/// k and its inverse. Even lengths split in half; odd lengths are the base case
/// and are evaluated directly.
class FastDct {
 public:
  explicit FastDct(std::int64_t k);

  std::int64_t size() const { return k_; }
  /// In-place orthonormal DCT-II. scratch must hold at least size() floats.
  void forward(std::span<float> x, std::span<float> scratch) const;
  /// In-place orthonormal DCT-III (inverse of forward).
  void inverse(std::span<float> x, std::span<float> scratch) const;

 private:
  struct Level {
    std::int64_t n;
    std::vector<float> half_secant;  // 1 / (2 cos(pi (2i+1) / (2n))), i < n/2
  };
  void forward_rec(float* x, float* tmp, std::size_t level) const;
  void inverse_rec(float* x, float* tmp, std::size_t level) const;

  std::int64_t k_;
  std::vector<Level> levels_;
  std::int64_t base_ = 1;
  std::vector<float> base_cos_;  // base x base table cos(pi (2j+1) i / (2 base))
  std::vector<float> alpha_;     // orthonormal row scaling
};

}  // namespace spectral

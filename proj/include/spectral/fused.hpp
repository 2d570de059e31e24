#pragma once

// Applying a spectral layer y = W x without forming W.
//
// With W = Q_row^T C Q_col and C zero off the selection S, each input row x
// goes through
//   u = Q_col x        (1-D transform of length n)
//   v = C u            (touches only the K selected coefficients)
//   y = Q_row^T v      (inverse 1-D transform of length m)
// so working memory per row is two vectors of length max(m, n) plus the
// coefficients, never an m x n buffer.
//
// Traffic accounting charges only the named off-chip buffers: coefficients,
// activations in, activations out, and, for the naive path, the materialized
// W. Selection indices and basis factors are layer constants and are not
// charged; `basis_bytes` reports the size of any dense factor a path reads.

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spectral/matrix.hpp"
#include "spectral/transforms.hpp"

namespace spectral {

struct TrafficCounter {
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t scratch_peak = 0;
  std::uint64_t basis_bytes = 0;  // informational, not part of the totals

  std::uint64_t total() const { return bytes_read + bytes_written; }
  void read(std::uint64_t floats) { bytes_read += 4 * floats; }
  void write(std::uint64_t floats) { bytes_written += 4 * floats; }
  void scratch(std::uint64_t floats) { scratch_peak = std::max(scratch_peak, 4 * floats); }
};

struct FusedResult {
  Matrix y;  // BT x m
  TrafficCounter traffic;
};

struct FusedOptions {
  /// For the DCT basis, use the O(k log k) transform instead of the dense
  /// factors. Ignored for random bases.
  bool fast_transform = true;
};

/// Reference path: W = idct2_sparse(c), then Y = X W^T.
FusedResult naive_apply(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis,
                        const Matrix& x);

/// Transform-domain path with all K coefficients resident.
FusedResult fused_apply(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis,
                        const Matrix& x, FusedOptions options = {});

/// Same result computed in row tiles whose scratch fits `tile_budget_bytes`.
/// When the budget holds two row buffers plus all K coefficients, tiles of
/// as many rows as fit keep c resident and c is read once. Otherwise c is
/// streamed in chunks and re-read once per tile. The smallest legal budget
/// is minimum_tile_budget(); smaller budgets throw std::invalid_argument.
FusedResult fused_apply_blocked(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis,
                                const Matrix& x, std::uint64_t tile_budget_bytes, FusedOptions options = {});

/// Scratch of fused_apply: 4 * (2 max(m, n) + K) bytes.
std::uint64_t fused_scratch_bytes(std::int64_t m, std::int64_t n, std::int64_t k);
/// 4 * (2 max(m, n) + 1) bytes: one row's buffers and one coefficient.
std::uint64_t minimum_tile_budget(std::int64_t m, std::int64_t n);

struct BenchShape {
  std::int64_t m = 0;
  std::int64_t n = 0;
  std::int64_t k = 0;
  std::int64_t bt = 0;
  BasisKind basis = BasisKind::dct;

  std::string label() const;
};

struct BenchRow {
  std::string shape;
  std::string path;  // naive | fused | blocked_32KiB
  std::uint64_t wall_ns = 0;  // median over reps
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t scratch_peak = 0;
};

/// Times each path on seeded random inputs; one row per (shape, path).
std::vector<BenchRow> bench_fused_vs_naive(const std::vector<BenchShape>& shapes, int reps, std::uint64_t seed = 0);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace spectral

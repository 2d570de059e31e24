#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral/matrix.hpp"
#include "spectral/model.hpp"

namespace spectral {

/// Singular values in descending order (double precision SVD).
std::vector<double> singular_values(const Matrix& w);

/// ||W||_F^2 / ||W||_2^2 from a full SVD. Throws std::invalid_argument on a
/// zero matrix.
double stable_rank(const Matrix& w);

/// Same quantity with ||W||_2 from power iteration on W^T W, stopped once the
/// extrapolated remaining change of the Rayleigh quotient is below `tol`
/// relatively, or after `max_iter` iterations.
double stable_rank_power(const Matrix& w, double tol = 1e-4, int max_iter = 500, std::uint64_t seed = 0);

/// Number of singular values above rel_tol * sigma_max.
int numerical_rank(const Matrix& w, double rel_tol = 1e-5);

struct LayerRank {
  std::string name;  // "block<i>.<class>"
  std::int64_t layer = 0;
  LayerClass cls = LayerClass::qkv;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  double stable_rank = 0.0;
  int numerical_rank = 0;
};

struct RankReport {
  Variant variant = Variant::standard;
  double ratio = 0.0;  // K ratio for spectral variants, 0 otherwise
  std::int64_t lora_rank = 0;
  /// Stable rank per layer class, averaged over the blocks.
  std::array<double, 4> class_stable_rank{};
  std::vector<LayerRank> layers;

  double stable_rank_of(LayerClass cls) const { return class_stable_rank[static_cast<std::size_t>(cls)]; }
  nlohmann::json to_json() const;
  static RankReport from_json(const nlohmann::json& j);
};

/// Materializes each block linear and measures it.
RankReport rank_report(const TransformerModel& model);
RankReport rank_report(const std::filesystem::path& checkpoint);

/// Per-class mean stable rank only (cheaper than a full report: no numerical
/// rank).
std::array<double, 4> class_stable_ranks(const TransformerModel& model);

/// Basis used to span the probed K-dimensional subspace of R^{m x n}.
enum class ProbeBasis {
  dense_haar,        // Haar-random orthogonal basis of R^{mn}, not separable
  separable_dct,     // the layer's DCT basis
  separable_random,  // the layer's random separable basis
};

/// Samples `trials` Gaussian coefficient vectors in the span of K randomly
/// selected atoms of the chosen basis and returns the largest numerical rank
/// among the reconstructed matrices.
///
/// For a separable basis W = Q_row^T C Q_col, so rank(W) = rank(C) and a grid
/// with K nonzeros has rank at most K; only a non-separable basis realizes
/// the generic behaviour for K < min(m, n).
int generic_subspace_rank_probe(std::int64_t m, std::int64_t n, std::int64_t k, int trials, std::uint64_t seed,
                                ProbeBasis basis = ProbeBasis::dense_haar);

/// Largest numerical rank of A B over `trials` Gaussian draws, A [m x r],
/// B [r x n].
int lora_rank_probe(std::int64_t m, std::int64_t n, std::int64_t r, int trials, std::uint64_t seed);

}  // namespace spectral

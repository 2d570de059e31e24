#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support/oracles.hpp"
#include "spectral/fused.hpp"
#include "spectral/rng.hpp"

using namespace spectral;

namespace {

double rel_max_diff(const Matrix& a, const Matrix& b) {
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
    den = std::max(den, std::abs(static_cast<double>(b.data()[i])));
  }
  return num / std::max(den, 1e-30);
}

struct Case {
  SeparableBasis basis;
  SelectionSet selection;
  std::vector<float> c;
  Matrix x;
};

Case make_case(std::int64_t m, std::int64_t n, std::int64_t k, std::int64_t bt, bool dct, bool zigzag,
               std::uint64_t seed) {
  auto basis = dct ? SeparableBasis::dct(m, n) : SeparableBasis::random(m, n, seed + 11, seed + 12);
  auto sel = zigzag ? SelectionSet::zigzag(m, n, k) : SelectionSet::random(m, n, k, seed + 13);
  return {std::move(basis), std::move(sel), oracle::gaussian(static_cast<std::size_t>(k), seed + 14),
          oracle::gaussian_matrix(bt, n, seed + 15)};
}

}  // namespace

TEST_CASE("fused matches naive across random configurations") {
  Rng rng(2024);
  const std::int64_t dims[] = {8, 12, 16, 31, 64, 96, 128};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::int64_t m, n, k, bt;
    if (trial == 0) {
      m = 128, n = 512, k = 128 * 512 / 10, bt = 64;
    } else {
      m = dims[rng.uniform_below(7)];
      n = dims[rng.uniform_below(7)];
      k = 1 + static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(m * n)));
      bt = 1 + static_cast<std::int64_t>(rng.uniform_below(40));
    }
    const bool dct = trial % 2 == 0, zig = trial % 3 == 0;
    CAPTURE(trial);
    const auto cs = make_case(m, n, k, bt, dct, zig, 100 + static_cast<std::uint64_t>(trial));
    const auto naive = naive_apply(cs.c, cs.selection, cs.basis, cs.x);
    const auto fused = fused_apply(cs.c, cs.selection, cs.basis, cs.x);
    REQUIRE(fused.y.rows() == bt);
    REQUIRE(fused.y.cols() == m);
    const double err = rel_max_diff(fused.y, naive.y);
    worst = std::max(worst, err);
    CHECK(err <= 1e-5);
  }
  MESSAGE("worst relative deviation " << worst);
}

TEST_CASE("fused agrees with a double-precision dense reference") {
  const std::int64_t m = 12, n = 20, k = 30, bt = 5;
  const auto cs = make_case(m, n, k, bt, true, false, 7);
  const auto dr = oracle::dct_matrix_f64(m), dc = oracle::dct_matrix_f64(n);
  std::vector<double> grid(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < k; ++i) {
    const auto g = cs.selection.indices()[static_cast<std::size_t>(i)];
    grid[static_cast<std::size_t>(g.row * n + g.col)] = cs.c[static_cast<std::size_t>(i)];
  }
  const auto w = oracle::matmul_f64(oracle::matmul_f64(oracle::transpose_f64(dr, m, m), grid, m, m, n), dc, m, n, n);
  const auto y_ref = oracle::matmul_f64(oracle::to_f64(cs.x), oracle::transpose_f64(w, m, n), bt, n, m);
  const auto y = fused_apply(cs.c, cs.selection, cs.basis, cs.x).y;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    num = std::max(num, std::abs(y.data()[i] - y_ref[i]));
    den = std::max(den, std::abs(y_ref[i]));
  }
  CHECK(num / den <= 1e-5);
}

TEST_CASE("single DC coefficient gives scaled row sums") {
  const std::int64_t m = 16, n = 24, bt = 6;
  const auto basis = SeparableBasis::dct(m, n);
  const auto sel = SelectionSet::zigzag(m, n, 1);
  const std::vector<float> c = {2.5f};
  const auto x = oracle::gaussian_matrix(bt, n, 3);
  const auto y = fused_apply(c, sel, basis, x).y;
  const double scale = 2.5 / std::sqrt(static_cast<double>(m * n));
  for (std::int64_t r = 0; r < bt; ++r) {
    double sum = 0.0;
    for (float v : x.row(r)) sum += v;
    for (std::int64_t i = 0; i < m; ++i) CHECK(y(r, i) == doctest::Approx(scale * sum).epsilon(1e-5));
  }
}

TEST_CASE("traffic counters follow the closed forms") {
  const std::int64_t m = 128, n = 512, k = 6554, bt = 64;
  const auto cs = make_case(m, n, k, bt, true, true, 9);
  const auto fused = fused_apply(cs.c, cs.selection, cs.basis, cs.x);
  const auto naive = naive_apply(cs.c, cs.selection, cs.basis, cs.x);
  CHECK(fused.traffic.total() == 190056u);
  CHECK(fused.traffic.total() == 4u * (k + bt * (m + n)));
  CHECK(naive.traffic.total() >= 4u * (m * n + bt * (m + n)));
  CHECK(naive.traffic.total() == 4u * (k + 2 * m * n + bt * (m + n)));
  CHECK(naive.traffic.scratch_peak == 4u * m * n);
  CHECK(fused.traffic.scratch_peak == fused_scratch_bytes(m, n, k));
  CHECK(fused.traffic.scratch_peak < naive.traffic.scratch_peak);
  CHECK(fused.traffic.basis_bytes == 0u);
  const auto dense_factors = fused_apply(cs.c, cs.selection, cs.basis, cs.x, {.fast_transform = false});
  CHECK(dense_factors.traffic.basis_bytes == 4u * (m * m + n * n));
  CHECK(dense_factors.traffic.total() == fused.traffic.total());
}

TEST_CASE("naive traffic grows with m while fused stays proportional to activations") {
  const std::int64_t n = 512, bt = 64;
  std::uint64_t prev_gap = 0;
  for (std::int64_t m : {128, 256, 512}) {
    const std::int64_t k = m * n / 10;
    const auto cs = make_case(m, n, k, bt, true, false, 21);
    const auto naive = naive_apply(cs.c, cs.selection, cs.basis, cs.x);
    const auto fused = fused_apply(cs.c, cs.selection, cs.basis, cs.x);
    CAPTURE(m);
    const std::uint64_t gap = naive.traffic.total() - fused.traffic.total();
    CHECK(gap == 4u * 2 * m * n);
    CHECK(gap > prev_gap);
    prev_gap = gap;
    CHECK(fused.traffic.scratch_peak == 4u * (2 * std::max(m, n) + k));
  }
}

TEST_CASE("blocked variant matches and respects the budget") {
  for (std::uint64_t budget : {32u * 1024u, 64u * 1024u}) {
    for (bool dct : {true, false}) {
      const auto cs = make_case(128, 512, 6554, 64, dct, !dct, 31);
      const auto fused = fused_apply(cs.c, cs.selection, cs.basis, cs.x);
      const auto blocked = fused_apply_blocked(cs.c, cs.selection, cs.basis, cs.x, budget);
      CAPTURE(budget);
      CHECK(blocked.traffic.scratch_peak <= budget);
      CHECK(rel_max_diff(blocked.y, fused.y) <= 1e-6);
    }
  }
  SUBCASE("resident coefficients are read once") {
    const auto cs = make_case(32, 48, 100, 20, true, true, 5);
    const auto blocked = fused_apply_blocked(cs.c, cs.selection, cs.basis, cs.x, 4 * (100 + 2 * 48 * 3));
    const auto fused = fused_apply(cs.c, cs.selection, cs.basis, cs.x);
    CHECK(blocked.traffic.total() == fused.traffic.total());
    CHECK(rel_max_diff(blocked.y, fused.y) <= 1e-6);
  }
  SUBCASE("minimum budget streams one coefficient at a time") {
    const auto cs = make_case(10, 14, 40, 3, false, false, 6);
    const auto min = minimum_tile_budget(10, 14);
    const auto blocked = fused_apply_blocked(cs.c, cs.selection, cs.basis, cs.x, min);
    CHECK(blocked.traffic.scratch_peak == min);
    CHECK(rel_max_diff(blocked.y, fused_apply(cs.c, cs.selection, cs.basis, cs.x).y) <= 1e-6);
    CHECK(blocked.traffic.bytes_read == 4u * (3 * 40 + 3 * 14));
    CHECK_THROWS_AS(fused_apply_blocked(cs.c, cs.selection, cs.basis, cs.x, min - 1), std::invalid_argument);
  }
}

TEST_CASE("fast transform path equals dense-factor path") {
  for (std::int64_t m : {8, 12, 31, 64}) {
    const auto cs = make_case(m, 2 * m + 1, m, 7, true, true, 41);
    const auto fast = fused_apply(cs.c, cs.selection, cs.basis, cs.x, {.fast_transform = true});
    const auto dense = fused_apply(cs.c, cs.selection, cs.basis, cs.x, {.fast_transform = false});
    CAPTURE(m);
    CHECK(rel_max_diff(fast.y, dense.y) <= 1e-5);
  }
}

TEST_CASE("shape errors are reported") {
  const auto cs = make_case(8, 12, 10, 4, true, true, 1);
  const std::vector<float> short_c(9, 0.0f);
  CHECK_THROWS_AS(fused_apply(short_c, cs.selection, cs.basis, cs.x), ShapeError);
  CHECK_THROWS_AS(fused_apply(cs.c, cs.selection, cs.basis, Matrix(4, 11)), ShapeError);
  CHECK_THROWS_AS(naive_apply(cs.c, SelectionSet::zigzag(8, 13, 10), cs.basis, cs.x), ShapeError);
}

TEST_CASE("bench emits one row per shape and path") {
  const auto rows = bench_fused_vs_naive({{32, 64, 200, 8, BasisKind::dct}, {16, 16, 20, 4, BasisKind::random}}, 2);
  REQUIRE(rows.size() == 6);
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  CHECK(csv.str().rfind("shape,path,wall_ns,bytes_read,bytes_written,scratch_peak\n", 0) == 0);
  CHECK(rows[1].path == "fused");
  CHECK(rows[1].bytes_read + rows[1].bytes_written < rows[0].bytes_read + rows[0].bytes_written);
}

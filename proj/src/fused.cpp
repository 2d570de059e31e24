#include "spectral/fused.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <stdexcept>

#include "spectral/rng.hpp"
#include "spectral/tensor.hpp"

namespace spectral {

namespace {

void validate(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis, const Matrix& x) {
  if (selection.rows() != basis.rows() || selection.cols() != basis.cols()) {
    throw ShapeError("fused: selection grid " + std::to_string(selection.rows()) + "x" +
                     std::to_string(selection.cols()) + " does not match basis " + std::to_string(basis.rows()) +
                     "x" + std::to_string(basis.cols()));
  }
  if (static_cast<std::int64_t>(c.size()) != selection.size()) {
    throw ShapeError("fused: " + std::to_string(c.size()) + " coefficients for K = " +
                     std::to_string(selection.size()));
  }
  if (x.cols() != basis.cols()) {
    throw ShapeError("fused: input has " + std::to_string(x.cols()) + " columns, layer expects " +
                     std::to_string(basis.cols()));
  }
}

/// Per-row transform machinery shared by the fused paths. Two buffers of
/// length max(m, n) hold u and v; each doubles as the other's transform
/// scratch.
class RowKernel {
 public:
  RowKernel(const SelectionSet& selection, const SeparableBasis& basis, FusedOptions options)
      : selection_(selection), basis_(basis), m_(basis.rows()), n_(basis.cols()) {
    if (basis.kind() == BasisKind::dct && options.fast_transform) {
      fast_row_.emplace(m_);
      fast_col_.emplace(n_);
    }
  }

  std::int64_t width() const { return std::max(m_, n_); }
  std::uint64_t basis_bytes() const {
    return fast_row_ ? 0 : 4 * static_cast<std::uint64_t>(m_ * m_ + n_ * n_);
  }

  /// a[0:n] <- Q_col x, using b as scratch.
  void to_coefficients(std::span<const float> x, float* a, float* b) const {
    if (fast_col_) {
      std::copy(x.begin(), x.end(), a);
      fast_col_->forward({a, static_cast<std::size_t>(n_)}, {b, static_cast<std::size_t>(n_)});
      return;
    }
    const Matrix& q = basis_.q_col();
    for (std::int64_t i = 0; i < n_; ++i) {
      double acc = 0.0;
      const auto row = q.row(i);
      for (std::int64_t j = 0; j < n_; ++j) acc += static_cast<double>(row[j]) * x[j];
      a[i] = static_cast<float>(acc);
    }
  }

  /// b[0:m] += C[:, chunk] a for selection entries [first, last).
  void sparse_product(std::span<const float> c_chunk, std::int64_t first, const float* a, float* b) const {
    const auto& idx = selection_.indices();
    for (std::size_t k = 0; k < c_chunk.size(); ++k) {
      const auto& g = idx[static_cast<std::size_t>(first) + k];
      b[g.row] += c_chunk[k] * a[g.col];
    }
  }

  /// out <- Q_row^T b[0:m], using a as scratch.
  void to_output(float* b, float* a, std::span<float> out) const {
    if (fast_row_) {
      fast_row_->inverse({b, static_cast<std::size_t>(m_)}, {a, static_cast<std::size_t>(m_)});
      std::copy(b, b + m_, out.begin());
      return;
    }
    const Matrix& q = basis_.q_row();
    std::fill(out.begin(), out.end(), 0.0f);
    std::vector<double> acc(static_cast<std::size_t>(m_), 0.0);
    for (std::int64_t i = 0; i < m_; ++i) {
      const auto row = q.row(i);
      for (std::int64_t j = 0; j < m_; ++j) acc[static_cast<std::size_t>(j)] += static_cast<double>(row[j]) * b[i];
    }
    for (std::int64_t j = 0; j < m_; ++j) out[j] = static_cast<float>(acc[static_cast<std::size_t>(j)]);
  }

 private:
  const SelectionSet& selection_;
  const SeparableBasis& basis_;
  std::int64_t m_;
  std::int64_t n_;
  std::optional<FastDct> fast_row_;
  std::optional<FastDct> fast_col_;
};

}  // namespace

std::uint64_t fused_scratch_bytes(std::int64_t m, std::int64_t n, std::int64_t k) {
  return 4 * static_cast<std::uint64_t>(2 * std::max(m, n) + k);
}

std::uint64_t minimum_tile_budget(std::int64_t m, std::int64_t n) {
  return 4 * static_cast<std::uint64_t>(2 * std::max(m, n) + 1);
}

FusedResult naive_apply(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis,
                        const Matrix& x) {
  validate(c, selection, basis, x);
  const auto m = static_cast<std::uint64_t>(basis.rows());
  const auto n = static_cast<std::uint64_t>(basis.cols());
  const auto bt = static_cast<std::uint64_t>(x.rows());
  FusedResult r;
  const Matrix w = idct2_sparse(c, selection, basis);
  r.traffic.read(c.size());
  r.traffic.write(m * n);  // W leaves the reconstruction
  r.y = multiply_nt(x, w);
  r.traffic.read(m * n + bt * n);
  r.traffic.write(bt * m);
  r.traffic.scratch(m * n);
  r.traffic.basis_bytes = 4 * (m * m + n * n);
  return r;
}

FusedResult fused_apply(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis,
                        const Matrix& x, FusedOptions options) {
  validate(c, selection, basis, x);
  const RowKernel kernel(selection, basis, options);
  const std::int64_t m = basis.rows(), bt = x.rows();
  const auto width = static_cast<std::size_t>(kernel.width());
  FusedResult r;
  r.y = Matrix(bt, m);
  // scratch: coefficients plus the two row buffers
  std::vector<float> coeffs(c.begin(), c.end());
  std::vector<float> a(width), b(width);
  r.traffic.read(c.size());
  r.traffic.scratch(coeffs.size() + a.size() + b.size());
  for (std::int64_t row = 0; row < bt; ++row) {
    kernel.to_coefficients(x.row(row), a.data(), b.data());
    std::fill(b.begin(), b.begin() + m, 0.0f);
    kernel.sparse_product(coeffs, 0, a.data(), b.data());
    kernel.to_output(b.data(), a.data(), r.y.row(row));
  }
  r.traffic.read(static_cast<std::uint64_t>(bt * basis.cols()));
  r.traffic.write(static_cast<std::uint64_t>(bt * m));
  r.traffic.basis_bytes = kernel.basis_bytes();
  return r;
}

FusedResult fused_apply_blocked(std::span<const float> c, const SelectionSet& selection, const SeparableBasis& basis,
                                const Matrix& x, std::uint64_t tile_budget_bytes, FusedOptions options) {
  validate(c, selection, basis, x);
  const std::int64_t m = basis.rows(), n = basis.cols(), bt = x.rows();
  const auto k = static_cast<std::int64_t>(c.size());
  if (tile_budget_bytes < minimum_tile_budget(m, n)) {
    throw std::invalid_argument("fused_apply_blocked: budget of " + std::to_string(tile_budget_bytes) +
                                " bytes is below the minimum tile of " +
                                std::to_string(minimum_tile_budget(m, n)) + " bytes");
  }
  const RowKernel kernel(selection, basis, options);
  const std::int64_t width = kernel.width();
  const auto budget_floats = static_cast<std::int64_t>(tile_budget_bytes / 4);

  // Resident mode: rows * 2 * width + K fits. Streaming mode: half the
  // budget for row buffers, the rest for a coefficient chunk.
  std::int64_t rows_per_tile = (budget_floats - k) / (2 * width);
  std::int64_t chunk = k;
  if (rows_per_tile < 1) {
    rows_per_tile = std::max<std::int64_t>(1, budget_floats / (4 * width));
    chunk = budget_floats - rows_per_tile * 2 * width;
  }
  rows_per_tile = std::min(rows_per_tile, std::max<std::int64_t>(bt, 1));
  const bool resident = chunk == k;

  FusedResult r;
  r.y = Matrix(bt, m);
  std::vector<float> buffers(static_cast<std::size_t>(rows_per_tile * 2 * width));
  std::vector<float> coeffs(static_cast<std::size_t>(chunk));
  r.traffic.scratch(buffers.size() + coeffs.size());
  if (r.traffic.scratch_peak > tile_budget_bytes) throw std::logic_error("fused_apply_blocked: tile exceeds budget");

  if (resident) {
    std::copy(c.begin(), c.end(), coeffs.begin());
    r.traffic.read(c.size());
  }
  for (std::int64_t start = 0; start < bt; start += rows_per_tile) {
    const std::int64_t rows = std::min(rows_per_tile, bt - start);
    auto a_of = [&](std::int64_t t) { return buffers.data() + t * 2 * width; };
    auto b_of = [&](std::int64_t t) { return buffers.data() + t * 2 * width + width; };
    for (std::int64_t t = 0; t < rows; ++t) {
      kernel.to_coefficients(x.row(start + t), a_of(t), b_of(t));
      std::fill(b_of(t), b_of(t) + m, 0.0f);
    }
    if (resident) {
      for (std::int64_t t = 0; t < rows; ++t) kernel.sparse_product(coeffs, 0, a_of(t), b_of(t));
    } else {
      for (std::int64_t first = 0; first < k; first += chunk) {
        const std::int64_t len = std::min(chunk, k - first);
        std::copy(c.begin() + first, c.begin() + first + len, coeffs.begin());
        r.traffic.read(static_cast<std::uint64_t>(len));
        const std::span<const float> part(coeffs.data(), static_cast<std::size_t>(len));
        for (std::int64_t t = 0; t < rows; ++t) kernel.sparse_product(part, first, a_of(t), b_of(t));
      }
    }
    for (std::int64_t t = 0; t < rows; ++t) kernel.to_output(b_of(t), a_of(t), r.y.row(start + t));
  }
  r.traffic.read(static_cast<std::uint64_t>(bt * n));
  r.traffic.write(static_cast<std::uint64_t>(bt * m));
  r.traffic.basis_bytes = kernel.basis_bytes();
  return r;
}

// --- benchmark -----------------------------------------------------------------------

std::string BenchShape::label() const {
  return std::to_string(m) + "x" + std::to_string(n) + "/K" + std::to_string(k) + "/BT" + std::to_string(bt) + "/" +
         std::string(to_string(basis));
}

std::vector<BenchRow> bench_fused_vs_naive(const std::vector<BenchShape>& shapes, int reps, std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("bench: reps must be positive");
  constexpr std::uint64_t kBudget = 32 * 1024;
  std::vector<BenchRow> rows;
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const auto& sh = shapes[s];
    const auto basis = sh.basis == BasisKind::dct
                           ? SeparableBasis::dct(sh.m, sh.n)
                           : SeparableBasis::random(sh.m, sh.n, derive_seed(seed, 4 * s), derive_seed(seed, 4 * s + 1));
    const auto selection = SelectionSet::random(sh.m, sh.n, sh.k, derive_seed(seed, 4 * s + 2));
    Rng rng(derive_seed(seed, 4 * s + 3));
    std::vector<float> c(static_cast<std::size_t>(sh.k));
    rng.fill_normal(c, 1.0);
    Matrix x(sh.bt, sh.n);
    rng.fill_normal(x.data(), 1.0);

    auto time_path = [&](const std::string& name, auto&& fn) {
      std::vector<std::uint64_t> times;
      FusedResult last;
      for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        last = fn();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(
            static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
      }
      std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
      rows.push_back({sh.label(), name, times[times.size() / 2], last.traffic.bytes_read, last.traffic.bytes_written,
                      last.traffic.scratch_peak});
    };
    time_path("naive", [&] { return naive_apply(c, selection, basis, x); });
    time_path("fused", [&] { return fused_apply(c, selection, basis, x); });
    if (kBudget >= minimum_tile_budget(sh.m, sh.n)) {
      time_path("blocked_32KiB", [&] { return fused_apply_blocked(c, selection, basis, x, kBudget); });
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "shape,path,wall_ns,bytes_read,bytes_written,scratch_peak\n";
  for (const auto& r : rows) {
    out << r.shape << ',' << r.path << ',' << r.wall_ns << ',' << r.bytes_read << ',' << r.bytes_written << ','
        << r.scratch_peak << '\n';
  }
}

}  // namespace spectral

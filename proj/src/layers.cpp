#include "spectral/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "spectral/kernels.hpp"
#include "spectral/rng.hpp"

namespace spectral {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
      return "dense";
    case LayerKind::spectral:
      return "spectral";
    case LayerKind::lora:
      return "lora";
  }
  return "?";
}

LayerSeeds LayerSeeds::derive(std::uint64_t master, std::uint64_t layer_index) {
  return {derive_seed(master, 4 * layer_index + 0), derive_seed(master, 4 * layer_index + 1),
          derive_seed(master, 4 * layer_index + 2), derive_seed(master, 4 * layer_index + 3)};
}

std::int64_t spectral_k(std::int64_t rows, std::int64_t cols, double ratio) {
  if (!(ratio >= 1.0)) throw std::invalid_argument("spectral_k: compression ratio must be >= 1");
  const auto k = std::llround(static_cast<double>(rows * cols) / ratio);
  return std::max<std::int64_t>(1, k);
}

BlockLinear::BlockLinear(std::int64_t out_features, std::int64_t in_features)
    : out_(out_features), in_(in_features) {
  if (out_features < 1 || in_features < 1) throw std::invalid_argument("BlockLinear: dimensions must be positive");
}

Matrix BlockLinear::materialize() const {
  NoGradScope no_grad;
  const Tensor w = weight();
  return Matrix(out_, in_, std::vector<float>(w.data().begin(), w.data().end()));
}

Tensor BlockLinear::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.shape().back() != in_) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not end in " + std::to_string(in_));
  }
  if (x.rank() == 2) return matmul_nt(x, weight());
  Shape out_shape = x.shape();
  out_shape.back() = out_;
  const Tensor flat = reshape(x, {x.numel() / in_, in_});
  return reshape(matmul_nt(flat, weight()), std::move(out_shape));
}

// --- dense ------------------------------------------------------------------

DenseLinear::DenseLinear(std::int64_t out_features, std::int64_t in_features)
    : BlockLinear(out_features, in_features), w_(Tensor::zeros({out_features, in_features}, true)) {}

void DenseLinear::init(std::uint64_t seed) {
  Rng rng(seed);
  rng.fill_normal(w_.mutable_data(), std::sqrt(2.0 / static_cast<double>(in_)));
}

nlohmann::json DenseLinear::describe() const {
  return {{"kind", "dense"}, {"rows", out_}, {"cols", in_}};
}

void DenseLinear::save(TensorArchive& archive, const std::string& prefix) const { archive.put(prefix + ".w", w_); }

void DenseLinear::load(const TensorArchive& archive, const std::string& prefix) {
  archive.load_into(prefix + ".w", w_);
}

// --- spectral -----------------------------------------------------------------

Tensor spectral_reconstruct(const Tensor& c, const SelectionSet& selection, const SeparableBasis& basis) {
  if (c.rank() != 1 || c.dim(0) != selection.size()) {
    throw ShapeError("spectral_reconstruct: coefficient vector " + to_string(c.shape()) + " does not match K = " +
                     std::to_string(selection.size()));
  }
  if (selection.rows() != basis.rows() || selection.cols() != basis.cols()) {
    throw ShapeError("spectral_reconstruct: selection grid does not match basis dimensions");
  }
  const std::int64_t m = basis.rows(), n = basis.cols();
  const Matrix w = idct2(scatter(c.data(), selection), basis);
  Tensor out = make_result({m, n}, std::vector<float>(w.data().begin(), w.data().end()), {c});

  // The basis and selection outlive every tape that records this op: both
  // are owned by the layer, and tapes are reset each step.
  const SeparableBasis* b = &basis;
  const SelectionSet* s = &selection;
  auto ci = c.impl(), oi = out.impl();
  finish_op("spectral_reconstruct", {c}, out, [ci, oi, b, s, m, n] {
    // G = Q_row dW Q_col^T, then read G at S.
    std::vector<float> tmp(static_cast<std::size_t>(m * n)), g(static_cast<std::size_t>(m * n));
    kernels::gemm(false, false, m, n, m, 1.0f, b->q_row().data().data(), m, oi->grad.data(), n, 0.0f, tmp.data(),
                  n);
    kernels::gemm(false, true, m, n, n, 1.0f, tmp.data(), n, b->q_col().data().data(), n, 0.0f, g.data(), n);
    if (ci->grad.empty()) ci->grad.assign(ci->value.size(), 0.0f);
    const auto& flat = s->flat();
    for (std::size_t k = 0; k < flat.size(); ++k) ci->grad[k] += g[static_cast<std::size_t>(flat[k])];
  });
  return out;
}

SpectralLinear::SpectralLinear(SeparableBasis basis, SelectionSet selection)
    : BlockLinear(basis.rows(), basis.cols()),
      basis_(std::move(basis)),
      selection_(std::move(selection)),
      c_(Tensor::zeros({selection_.size()}, true)) {
  if (selection_.rows() != basis_.rows() || selection_.cols() != basis_.cols()) {
    throw std::invalid_argument("SpectralLinear: selection grid does not match basis dimensions");
  }
}

Tensor SpectralLinear::weight() const { return spectral_reconstruct(c_, selection_, basis_); }

double SpectralLinear::init_stddev(std::int64_t rows, std::int64_t cols, std::int64_t k) {
  return std::sqrt(2.0 / static_cast<double>(cols)) *
         std::sqrt(static_cast<double>(rows * cols) / static_cast<double>(k));
}

void SpectralLinear::init(std::uint64_t seed) {
  Rng rng(seed);
  rng.fill_normal(c_.mutable_data(), init_stddev(out_, in_, selection_.size()));
}

nlohmann::json SpectralLinear::describe() const {
  return {{"kind", "spectral"},
          {"rows", out_},
          {"cols", in_},
          {"k", selection_.size()},
          {"basis", to_string(basis_.kind())},
          {"basis_row_seed", basis_.row_seed()},
          {"basis_col_seed", basis_.col_seed()},
          {"selection", to_string(selection_.kind())},
          {"selection_seed", selection_.seed()}};
}

void SpectralLinear::save(TensorArchive& archive, const std::string& prefix) const {
  archive.put(prefix + ".c", c_);
}

void SpectralLinear::load(const TensorArchive& archive, const std::string& prefix) {
  archive.load_into(prefix + ".c", c_);
}

// --- lora -----------------------------------------------------------------------

LoraLinear::LoraLinear(std::int64_t out_features, std::int64_t in_features, std::int64_t rank)
    : BlockLinear(out_features, in_features),
      rank_(rank),
      a_(Tensor::zeros({out_features, rank}, true)),
      b_(Tensor::zeros({rank, in_features}, true)) {
  if (rank < 1) throw std::invalid_argument("LoraLinear: rank must be positive");
}

double LoraLinear::init_stddev(std::int64_t in_features, std::int64_t rank) {
  return std::pow(2.0 / static_cast<double>(in_features * rank), 0.25);
}

void LoraLinear::init(std::uint64_t seed) {
  Rng rng(seed);
  const double s = init_stddev(in_, rank_);
  rng.fill_normal(a_.mutable_data(), s);
  rng.fill_normal(b_.mutable_data(), s);
}

nlohmann::json LoraLinear::describe() const {
  return {{"kind", "lora"}, {"rows", out_}, {"cols", in_}, {"rank", rank_}};
}

void LoraLinear::save(TensorArchive& archive, const std::string& prefix) const {
  archive.put(prefix + ".a", a_);
  archive.put(prefix + ".b", b_);
}

void LoraLinear::load(const TensorArchive& archive, const std::string& prefix) {
  archive.load_into(prefix + ".a", a_);
  archive.load_into(prefix + ".b", b_);
}

std::unique_ptr<BlockLinear> layer_from_description(const nlohmann::json& d) {
  const auto kind = d.at("kind").get<std::string>();
  const auto rows = d.at("rows").get<std::int64_t>();
  const auto cols = d.at("cols").get<std::int64_t>();
  if (kind == "dense") return std::make_unique<DenseLinear>(rows, cols);
  if (kind == "lora") return std::make_unique<LoraLinear>(rows, cols, d.at("rank").get<std::int64_t>());
  if (kind == "spectral") {
    const auto k = d.at("k").get<std::int64_t>();
    const auto basis_kind = parse_basis_kind(d.at("basis").get<std::string>());
    auto basis = basis_kind == BasisKind::dct
                     ? SeparableBasis::dct(rows, cols)
                     : SeparableBasis::random(rows, cols, d.at("basis_row_seed").get<std::uint64_t>(),
                                              d.at("basis_col_seed").get<std::uint64_t>());
    auto selection = parse_selection_kind(d.at("selection").get<std::string>()) == SelectionKind::zigzag
                         ? SelectionSet::zigzag(rows, cols, k)
                         : SelectionSet::random(rows, cols, k, d.at("selection_seed").get<std::uint64_t>());
    return std::make_unique<SpectralLinear>(std::move(basis), std::move(selection));
  }
  throw CheckpointError("unknown layer kind '" + kind + "'");
}

}  // namespace spectral

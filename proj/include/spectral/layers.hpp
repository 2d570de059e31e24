#pragma once

// Interchangeable parameterizations of a bias-free linear layer y = x W^T,
// W in R^{out x in}:
//   DenseLinear     W itself is trainable                      (out * in params)
//   SpectralLinear  W = Q_row^T scatter_S(c) Q_col, c trainable (K params)
//   LoraLinear      W = A B with A [out x r], B [r x in]        (r (out + in) params)

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spectral/checkpoint.hpp"
#include "spectral/matrix.hpp"
#include "spectral/tensor.hpp"
#include "spectral/transforms.hpp"

namespace spectral {

enum class LayerKind { dense, spectral, lora };

std::string_view to_string(LayerKind kind);

/// Per-layer seeds, split deterministically from a master seed and the
/// layer's index in the model: stream 4*index + {0: init, 1: selection,
/// 2: basis rows, 3: basis columns}.
struct LayerSeeds {
  std::uint64_t init = 0;
  std::uint64_t selection = 0;
  std::uint64_t basis_row = 0;
  std::uint64_t basis_col = 0;

  static LayerSeeds derive(std::uint64_t master, std::uint64_t layer_index);
};

/// K = round(rows * cols / ratio), halves rounded away from zero, at least 1.
std::int64_t spectral_k(std::int64_t rows, std::int64_t cols, double ratio);

class BlockLinear {
 public:
  BlockLinear(std::int64_t out_features, std::int64_t in_features);
  virtual ~BlockLinear() = default;
  BlockLinear(const BlockLinear&) = delete;
  BlockLinear& operator=(const BlockLinear&) = delete;

  std::int64_t out_features() const { return out_; }
  std::int64_t in_features() const { return in_; }

  virtual LayerKind kind() const = 0;
  /// The weight matrix as a tape value (recorded when a tape is active).
  virtual Tensor weight() const = 0;
  virtual std::vector<Tensor> parameters() const = 0;
  virtual std::int64_t param_count() const = 0;
  /// Seeded re-initialization of all trainable values.
  virtual void init(std::uint64_t seed) = 0;
  /// W without touching the tape.
  Matrix materialize() const;

  /// x [... x in] -> [... x out]
  Tensor forward(const Tensor& x) const;

  /// Structural description (kind, dims, K or rank, seeds) for checkpoints.
  virtual nlohmann::json describe() const = 0;
  /// Stores trainable buffers under `prefix`.
  virtual void save(TensorArchive& archive, const std::string& prefix) const = 0;
  virtual void load(const TensorArchive& archive, const std::string& prefix) = 0;

 protected:
  std::int64_t out_;
  std::int64_t in_;
};

class DenseLinear final : public BlockLinear {
 public:
  DenseLinear(std::int64_t out_features, std::int64_t in_features);

  LayerKind kind() const override { return LayerKind::dense; }
  Tensor weight() const override { return w_; }
  std::vector<Tensor> parameters() const override { return {w_}; }
  std::int64_t param_count() const override { return out_ * in_; }
  /// Kaiming normal, std sqrt(2 / in).
  void init(std::uint64_t seed) override;
  nlohmann::json describe() const override;
  void save(TensorArchive& archive, const std::string& prefix) const override;
  void load(const TensorArchive& archive, const std::string& prefix) override;

  Tensor& w() { return w_; }

 private:
  Tensor w_;
};

class SpectralLinear final : public BlockLinear {
 public:
  SpectralLinear(SeparableBasis basis, SelectionSet selection);

  LayerKind kind() const override { return LayerKind::spectral; }
  /// Reconstructs W on the tape. Backward projects dL/dW onto the selected
  /// basis atoms: dL/dc = gather_S(Q_row dW Q_col^T).
  Tensor weight() const override;
  std::vector<Tensor> parameters() const override { return {c_}; }
  std::int64_t param_count() const override { return selection_.size(); }
  /// c ~ N(0, s^2), s = sqrt(2/in) * sqrt(out*in/K): the reconstructed W then
  /// has Kaiming variance 2/in per entry.
  void init(std::uint64_t seed) override;
  nlohmann::json describe() const override;
  void save(TensorArchive& archive, const std::string& prefix) const override;
  void load(const TensorArchive& archive, const std::string& prefix) override;

  static double init_stddev(std::int64_t rows, std::int64_t cols, std::int64_t k);

  const SeparableBasis& basis() const { return basis_; }
  const SelectionSet& selection() const { return selection_; }
  Tensor& coefficients() { return c_; }
  const Tensor& coefficients() const { return c_; }

 private:
  SeparableBasis basis_;
  SelectionSet selection_;
  Tensor c_;
};

class LoraLinear final : public BlockLinear {
 public:
  LoraLinear(std::int64_t out_features, std::int64_t in_features, std::int64_t rank);

  LayerKind kind() const override { return LayerKind::lora; }
  Tensor weight() const override { return matmul(a_, b_); }
  std::vector<Tensor> parameters() const override { return {a_, b_}; }
  std::int64_t param_count() const override { return rank_ * (out_ + in_); }
  /// A, B ~ N(0, s^2) with s = (2 / (in * rank))^(1/4), so Var(AB) = 2 / in.
  void init(std::uint64_t seed) override;
  nlohmann::json describe() const override;
  void save(TensorArchive& archive, const std::string& prefix) const override;
  void load(const TensorArchive& archive, const std::string& prefix) override;

  static double init_stddev(std::int64_t in_features, std::int64_t rank);

  std::int64_t rank() const { return rank_; }
  Tensor& a() { return a_; }
  Tensor& b() { return b_; }

 private:
  std::int64_t rank_;
  Tensor a_;
  Tensor b_;
};

/// Differentiable W = Q_row^T scatter_S(c) Q_col. The backward rule keeps
/// references to `selection` and `basis`; both must outlive the tape.
Tensor spectral_reconstruct(const Tensor& c, const SelectionSet& selection, const SeparableBasis& basis);

/// Rebuilds a layer's structure from describe() output. Trainable values start
/// at zero; restore them with load().
std::unique_ptr<BlockLinear> layer_from_description(const nlohmann::json& description);

}  // namespace spectral

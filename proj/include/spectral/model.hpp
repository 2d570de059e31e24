#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spectral/data.hpp"
#include "spectral/layers.hpp"

namespace spectral {

/// Parameterization shared by all block linears of a run.
enum class Variant { standard, dct_zigzag, dct_random, rand_zigzag, rand_random, lora };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);
bool is_spectral(Variant variant);
BasisKind basis_kind(Variant variant);
SelectionKind selection_kind(Variant variant);

/// The four block linears of every transformer block.
enum class LayerClass { qkv = 0, attn_out = 1, mlp1 = 2, mlp2 = 3 };
inline constexpr std::array<LayerClass, 4> kLayerClasses = {LayerClass::qkv, LayerClass::attn_out, LayerClass::mlp1,
                                                           LayerClass::mlp2};
std::string_view to_string(LayerClass cls);

struct ModelConfig {
  std::int64_t n_layers = 4;
  std::int64_t d_model = 128;
  std::int64_t n_heads = 4;
  std::int64_t context = 128;
  std::int64_t d_mlp = 512;
  std::int64_t vocab_size = 65;
  Variant variant = Variant::standard;
  double ratio = 2.0;           // spectral variants: K = round(mn / ratio)
  std::int64_t lora_rank = 48;  // lora variant

  void validate() const;
  /// (out, in) of a block linear.
  std::pair<std::int64_t, std::int64_t> linear_shape(LayerClass cls) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct ParamCounts {
  std::int64_t block = 0;      // the 4 * n_layers block linears
  std::int64_t non_block = 0;  // embeddings, positional table, layernorms, head
  std::int64_t total() const { return block + non_block; }
};

/// Pre-LN decoder-only transformer with learned positional embeddings, GELU
/// MLP, untied LM head, no dropout and no biases in the block linears.
class TransformerModel {
 public:
  TransformerModel(ModelConfig config, std::uint64_t seed);
  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;
  TransformerModel(TransformerModel&&) = default;
  TransformerModel& operator=(TransformerModel&&) = default;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// tokens is batch x seq row-major; returns logits [batch, seq, vocab].
  Tensor forward(std::span<const std::int32_t> tokens, std::int64_t batch, std::int64_t seq) const;
  /// Mean cross-entropy over all batch * seq positions.
  Tensor loss(const Batch& batch) const;

  std::vector<Tensor> parameters() const;
  /// Trainable values of the block linears (W, c, A, B).
  std::vector<Tensor> block_parameters() const;
  /// Everything else: embeddings, positional table, layernorms, head.
  std::vector<Tensor> non_block_parameters() const;
  ParamCounts param_counts() const;

  const BlockLinear& linear(std::int64_t layer, LayerClass cls) const;
  BlockLinear& linear(std::int64_t layer, LayerClass cls);

  /// Writes config, seed, layer descriptions, `extra_meta` and every buffer.
  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = nlohmann::json::object()) const;
  /// Restores a model written by save(). The rebuilt structure must match the
  /// stored layer descriptions exactly.
  static TransformerModel load(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

 private:
  struct Block {
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    std::array<std::unique_ptr<BlockLinear>, 4> linears;
  };

  std::unique_ptr<BlockLinear> make_linear(std::int64_t layer, LayerClass cls) const;

  ModelConfig config_;
  std::uint64_t seed_;
  Tensor tok_emb_;
  Tensor pos_emb_;
  std::vector<Block> blocks_;
  Tensor lnf_gamma_, lnf_beta_;
  Tensor head_;
};

}  // namespace spectral

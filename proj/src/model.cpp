#include "spectral/model.hpp"

#include <stdexcept>

#include "spectral/rng.hpp"

namespace spectral {

namespace {

constexpr double kEmbeddingStd = 0.02;
// Seed streams for non-block tensors, kept clear of the per-layer streams.
constexpr std::uint64_t kTokEmbStream = 1'000'000;
constexpr std::uint64_t kPosEmbStream = 1'000'001;
constexpr std::uint64_t kHeadStream = 1'000'002;

Tensor filled(Shape shape, float value) {
  const auto n = shape_numel(shape);
  return Tensor::from(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), true);
}

Tensor gaussian(Shape shape, std::uint64_t seed, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  Rng rng(seed);
  rng.fill_normal(t.mutable_data(), stddev);
  return t;
}

std::string block_prefix(std::int64_t layer) { return "block" + std::to_string(layer); }

}  // namespace

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::standard:
      return "standard";
    case Variant::dct_zigzag:
      return "dct_zigzag";
    case Variant::dct_random:
      return "dct_random";
    case Variant::rand_zigzag:
      return "rand_zigzag";
    case Variant::rand_random:
      return "rand_random";
    case Variant::lora:
      return "lora";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::standard, Variant::dct_zigzag, Variant::dct_random, Variant::rand_zigzag,
                 Variant::rand_random, Variant::lora}) {
    if (name == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

bool is_spectral(Variant v) { return v != Variant::standard && v != Variant::lora; }

BasisKind basis_kind(Variant v) {
  if (!is_spectral(v)) throw std::invalid_argument("variant " + std::string(to_string(v)) + " has no basis");
  return (v == Variant::dct_zigzag || v == Variant::dct_random) ? BasisKind::dct : BasisKind::random;
}

SelectionKind selection_kind(Variant v) {
  if (!is_spectral(v)) throw std::invalid_argument("variant " + std::string(to_string(v)) + " has no selection");
  return (v == Variant::dct_zigzag || v == Variant::rand_zigzag) ? SelectionKind::zigzag : SelectionKind::random;
}

std::string_view to_string(LayerClass cls) {
  switch (cls) {
    case LayerClass::qkv:
      return "qkv";
    case LayerClass::attn_out:
      return "attn_out";
    case LayerClass::mlp1:
      return "mlp1";
    case LayerClass::mlp2:
      return "mlp2";
  }
  return "?";
}

// --- ModelConfig ------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || context < 1 || d_mlp < 1 || vocab_size < 1) {
    throw std::invalid_argument("ModelConfig: all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  }
  if (is_spectral(variant) && !(ratio >= 1.0)) throw std::invalid_argument("ModelConfig: ratio must be >= 1");
  if (variant == Variant::lora && lora_rank < 1) throw std::invalid_argument("ModelConfig: lora rank must be >= 1");
}

std::pair<std::int64_t, std::int64_t> ModelConfig::linear_shape(LayerClass cls) const {
  switch (cls) {
    case LayerClass::qkv:
      return {3 * d_model, d_model};
    case LayerClass::attn_out:
      return {d_model, d_model};
    case LayerClass::mlp1:
      return {d_mlp, d_model};
    case LayerClass::mlp2:
      return {d_model, d_mlp};
  }
  throw std::logic_error("linear_shape: bad layer class");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers}, {"d_model", d_model},   {"n_heads", n_heads},
          {"context", context},   {"d_mlp", d_mlp},       {"vocab_size", vocab_size},
          {"variant", to_string(variant)}, {"ratio", ratio}, {"lora_rank", lora_rank}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.context = j.value("context", c.context);
  c.d_mlp = j.value("d_mlp", c.d_mlp);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.variant = parse_variant(j.value("variant", std::string(to_string(c.variant))));
  c.ratio = j.value("ratio", c.ratio);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  return c;
}

// --- TransformerModel ------------------------------------------------------------------

TransformerModel::TransformerModel(ModelConfig config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const auto d = config_.d_model;
  tok_emb_ = gaussian({config_.vocab_size, d}, derive_seed(seed, kTokEmbStream), kEmbeddingStd);
  pos_emb_ = gaussian({config_.context, d}, derive_seed(seed, kPosEmbStream), kEmbeddingStd);
  head_ = gaussian({config_.vocab_size, d}, derive_seed(seed, kHeadStream), kEmbeddingStd);
  lnf_gamma_ = filled({d}, 1.0f);
  lnf_beta_ = filled({d}, 0.0f);
  blocks_.resize(static_cast<std::size_t>(config_.n_layers));
  for (std::int64_t l = 0; l < config_.n_layers; ++l) {
    auto& b = blocks_[static_cast<std::size_t>(l)];
    b.ln1_gamma = filled({d}, 1.0f);
    b.ln1_beta = filled({d}, 0.0f);
    b.ln2_gamma = filled({d}, 1.0f);
    b.ln2_beta = filled({d}, 0.0f);
    for (auto cls : kLayerClasses) b.linears[static_cast<std::size_t>(cls)] = make_linear(l, cls);
  }
}

std::unique_ptr<BlockLinear> TransformerModel::make_linear(std::int64_t layer, LayerClass cls) const {
  const auto [rows, cols] = config_.linear_shape(cls);
  const auto index = static_cast<std::uint64_t>(layer * 4 + static_cast<std::int64_t>(cls));
  const auto seeds = LayerSeeds::derive(seed_, index);
  std::unique_ptr<BlockLinear> linear;
  switch (config_.variant) {
    case Variant::standard:
      linear = std::make_unique<DenseLinear>(rows, cols);
      break;
    case Variant::lora:
      linear = std::make_unique<LoraLinear>(rows, cols, config_.lora_rank);
      break;
    default: {
      const auto k = spectral_k(rows, cols, config_.ratio);
      auto basis = basis_kind(config_.variant) == BasisKind::dct
                       ? SeparableBasis::dct(rows, cols)
                       : SeparableBasis::random(rows, cols, seeds.basis_row, seeds.basis_col);
      auto selection = selection_kind(config_.variant) == SelectionKind::zigzag
                           ? SelectionSet::zigzag(rows, cols, k)
                           : SelectionSet::random(rows, cols, k, seeds.selection);
      linear = std::make_unique<SpectralLinear>(std::move(basis), std::move(selection));
    }
  }
  linear->init(seeds.init);
  return linear;
}

const BlockLinear& TransformerModel::linear(std::int64_t layer, LayerClass cls) const {
  return *blocks_.at(static_cast<std::size_t>(layer)).linears[static_cast<std::size_t>(cls)];
}

BlockLinear& TransformerModel::linear(std::int64_t layer, LayerClass cls) {
  return *blocks_.at(static_cast<std::size_t>(layer)).linears[static_cast<std::size_t>(cls)];
}

Tensor TransformerModel::forward(std::span<const std::int32_t> tokens, std::int64_t batch, std::int64_t seq) const {
  if (seq < 1 || seq > config_.context) {
    throw ShapeError("forward: sequence length " + std::to_string(seq) + " outside [1, " +
                     std::to_string(config_.context) + "]");
  }
  if (static_cast<std::int64_t>(tokens.size()) != batch * seq) {
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens for batch " + std::to_string(batch) +
                     " x seq " + std::to_string(seq));
  }
  for (auto t : tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw ShapeError("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
  std::vector<std::int32_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % seq);

  Tensor x = add(embedding(tok_emb_, tokens), embedding(pos_emb_, positions));
  for (std::int64_t l = 0; l < config_.n_layers; ++l) {
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    NameScope scope(block_prefix(l));
    {
      NameScope attn("attn");
      const Tensor h = layernorm(x, b.ln1_gamma, b.ln1_beta);
      const Tensor qkv = b.linears[0]->forward(h);
      const Tensor a = causal_attention(qkv, batch, seq, config_.n_heads);
      x = add(x, b.linears[1]->forward(a));
    }
    {
      NameScope mlp("mlp");
      const Tensor h = layernorm(x, b.ln2_gamma, b.ln2_beta);
      const Tensor u = gelu(b.linears[2]->forward(h));
      x = add(x, b.linears[3]->forward(u));
    }
  }
  NameScope scope("head");
  const Tensor logits = matmul_nt(layernorm(x, lnf_gamma_, lnf_beta_), head_);
  return reshape(logits, {batch, seq, config_.vocab_size});
}

Tensor TransformerModel::loss(const Batch& batch) const {
  const Tensor logits = forward(batch.inputs, batch.batch, batch.seq);
  return cross_entropy_mean(reshape(logits, {batch.batch * batch.seq, config_.vocab_size}), batch.targets);
}

std::vector<Tensor> TransformerModel::block_parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks_)
    for (const auto& lin : b.linears)
      for (auto& p : lin->parameters()) out.push_back(p);
  return out;
}

std::vector<Tensor> TransformerModel::non_block_parameters() const {
  std::vector<Tensor> out{tok_emb_, pos_emb_};
  for (const auto& b : blocks_) {
    out.insert(out.end(), {b.ln1_gamma, b.ln1_beta, b.ln2_gamma, b.ln2_beta});
  }
  out.insert(out.end(), {lnf_gamma_, lnf_beta_, head_});
  return out;
}

std::vector<Tensor> TransformerModel::parameters() const {
  auto out = block_parameters();
  for (auto& p : non_block_parameters()) out.push_back(p);
  return out;
}

ParamCounts TransformerModel::param_counts() const {
  ParamCounts counts;
  for (const auto& b : blocks_)
    for (const auto& lin : b.linears) counts.block += lin->param_count();
  for (const auto& p : non_block_parameters()) counts.non_block += p.numel();
  return counts;
}

void TransformerModel::save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const {
  TensorArchive archive;
  archive.meta() = extra_meta;
  archive.meta()["model"] = config_.to_json();
  archive.meta()["seed"] = seed_;
  auto& layers = archive.meta()["layers"] = nlohmann::json::array();
  archive.put("tok_emb", tok_emb_);
  archive.put("pos_emb", pos_emb_);
  archive.put("head", head_);
  archive.put("lnf.gamma", lnf_gamma_);
  archive.put("lnf.beta", lnf_beta_);
  for (std::int64_t l = 0; l < config_.n_layers; ++l) {
    const auto& b = blocks_[static_cast<std::size_t>(l)];
    const auto prefix = block_prefix(l);
    archive.put(prefix + ".ln1.gamma", b.ln1_gamma);
    archive.put(prefix + ".ln1.beta", b.ln1_beta);
    archive.put(prefix + ".ln2.gamma", b.ln2_gamma);
    archive.put(prefix + ".ln2.beta", b.ln2_beta);
    for (auto cls : kLayerClasses) {
      const auto name = prefix + "." + std::string(to_string(cls));
      const auto& lin = *b.linears[static_cast<std::size_t>(cls)];
      auto record = lin.describe();
      record["name"] = name;
      layers.push_back(record);
      lin.save(archive, name);
    }
  }
  archive.save(path);
}

TransformerModel TransformerModel::load(const std::filesystem::path& path, nlohmann::json* meta_out) {
  const TensorArchive archive = TensorArchive::load(path);
  const auto& meta = archive.meta();
  if (!meta.contains("model") || !meta.contains("seed") || !meta.contains("layers")) {
    throw CheckpointError("checkpoint '" + path.string() + "' has no model manifest");
  }
  TransformerModel model(ModelConfig::from_json(meta.at("model")), meta.at("seed").get<std::uint64_t>());
  archive.load_into("tok_emb", model.tok_emb_);
  archive.load_into("pos_emb", model.pos_emb_);
  archive.load_into("head", model.head_);
  archive.load_into("lnf.gamma", model.lnf_gamma_);
  archive.load_into("lnf.beta", model.lnf_beta_);
  std::size_t record = 0;
  const auto& layers = meta.at("layers");
  for (std::int64_t l = 0; l < model.config_.n_layers; ++l) {
    auto& b = model.blocks_[static_cast<std::size_t>(l)];
    const auto prefix = block_prefix(l);
    archive.load_into(prefix + ".ln1.gamma", b.ln1_gamma);
    archive.load_into(prefix + ".ln1.beta", b.ln1_beta);
    archive.load_into(prefix + ".ln2.gamma", b.ln2_gamma);
    archive.load_into(prefix + ".ln2.beta", b.ln2_beta);
    for (auto cls : kLayerClasses) {
      const auto name = prefix + "." + std::string(to_string(cls));
      auto& lin = *b.linears[static_cast<std::size_t>(cls)];
      if (record >= layers.size()) throw CheckpointError("checkpoint lists too few layers");
      auto stored = layers[record++];
      stored.erase("name");
      if (stored != lin.describe()) {
        throw CheckpointError("checkpoint layer '" + name + "' does not match the rebuilt structure");
      }
      lin.load(archive, name);
    }
  }
  if (meta_out) *meta_out = meta;
  return model;
}

}  // namespace spectral

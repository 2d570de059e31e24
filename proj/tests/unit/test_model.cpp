#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>

#include "support/model_fd.hpp"
#include "support/oracles.hpp"
#include "spectral/model.hpp"
#include "spectral/rng.hpp"

using namespace spectral;

namespace {

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.context = 8;
  c.d_mlp = 64;
  c.vocab_size = 11;
  c.variant = v;
  c.ratio = 2.0;
  c.lora_rank = 4;
  return c;
}

std::vector<std::int32_t> random_tokens(std::size_t n, std::int64_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int32_t> t(n);
  for (auto& v : t) v = static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(vocab)));
  return t;
}

Batch random_batch(std::int64_t b, std::int64_t t, std::int64_t vocab, std::uint64_t seed) {
  Batch batch;
  batch.batch = b;
  batch.seq = t;
  batch.inputs = random_tokens(static_cast<std::size_t>(b * t), vocab, seed);
  batch.targets = random_tokens(static_cast<std::size_t>(b * t), vocab, seed + 1);
  batch.offsets.assign(static_cast<std::size_t>(b), 0);
  return batch;
}

constexpr Variant kAllVariants[] = {Variant::standard,    Variant::dct_zigzag,  Variant::dct_random,
                                    Variant::rand_zigzag, Variant::rand_random, Variant::lora};

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("sparse"), std::invalid_argument);
  CHECK(basis_kind(Variant::rand_zigzag) == BasisKind::random);
  CHECK(selection_kind(Variant::rand_zigzag) == SelectionKind::zigzag);
  CHECK_THROWS(basis_kind(Variant::lora));
}

TEST_CASE("config validation and json") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config(Variant::dct_random);
  c.ratio = 10.0;
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("parameter audit at full size") {
  ModelConfig c;  // 4 layers, d=128, vocab 65
  struct Expect {
    Variant v;
    double ratio;
    std::int64_t block;
  };
  const Expect cases[] = {{Variant::standard, 2.0, 786432},  {Variant::lora, 2.0, 393216},
                          {Variant::dct_zigzag, 2.0, 393216}, {Variant::rand_random, 2.0, 393216},
                          {Variant::dct_zigzag, 10.0, 78644}, {Variant::dct_zigzag, 20.0, 39324}};
  std::int64_t non_block = -1;
  for (const auto& e : cases) {
    c.variant = e.v;
    c.ratio = e.ratio;
    CAPTURE(to_string(e.v));
    CAPTURE(e.ratio);
    const TransformerModel model(c, 1);
    const auto counts = model.param_counts();
    CHECK(counts.block == e.block);
    // tok 65*128 + pos 128*128 + head 65*128 + 9 layernorms * 256
    CHECK(counts.non_block == 35328);
    if (non_block >= 0) CHECK(counts.non_block == non_block);
    non_block = counts.non_block;
    std::int64_t numel = 0;
    for (const auto& p : model.block_parameters()) numel += p.numel();
    CHECK(numel == counts.block);
  }
}

TEST_CASE("forward shape, finiteness and token checks") {
  const TransformerModel model(small_config(Variant::standard), 3);
  const std::vector<std::int32_t> one{4};
  const Tensor logits = model.forward(one, 1, 1);
  CHECK(logits.shape() == Shape{1, 1, 11});
  for (float v : logits.data()) CHECK(std::isfinite(v));
  const std::vector<std::int32_t> bad{11};
  CHECK_THROWS_AS(model.forward(bad, 1, 1), ShapeError);
  const std::vector<std::int32_t> long_seq(9, 0);
  CHECK_THROWS_AS(model.forward(long_seq, 1, 9), ShapeError);
}

TEST_CASE("causal mask: perturbing token t only changes positions >= t") {
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    const TransformerModel model(small_config(v), 4);
    auto tokens = random_tokens(2 * 8, 11, 5);
    const Tensor base = model.forward(tokens, 2, 8);
    const std::int64_t t = 3;
    tokens[static_cast<std::size_t>(8 + t)] = (tokens[static_cast<std::size_t>(8 + t)] + 1) % 11;
    const Tensor moved = model.forward(tokens, 2, 8);
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t pos = 0; pos < 8; ++pos) {
        double diff = 0.0;
        for (std::int64_t j = 0; j < 11; ++j) {
          const auto i = (b * 8 + pos) * 11 + j;
          diff = std::max(diff, static_cast<double>(std::abs(base.data()[i] - moved.data()[i])));
        }
        if (b == 1 && pos >= t) {
          CHECK(diff > 0.0);
        } else {
          CHECK(diff == 0.0);
        }
      }
    }
  }
}

TEST_CASE("untrained loss is near ln(vocab)") {
  ModelConfig c;
  c.n_layers = 2;
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    c.variant = v;
    const TransformerModel model(c, 6);
    const Tensor loss = model.loss(random_batch(4, 32, 65, 7));
    CHECK(loss.item() == doctest::Approx(std::log(65.0)).epsilon(0.02));
  }
}

TEST_CASE("full-model gradients match finite differences") {
  // B=2, T=8 over every parameter tensor
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    ModelConfig c = small_config(v);
    const TransformerModel model(c, 8);
    const double worst = oracle::model_gradient_error(model, random_batch(2, 8, c.vocab_size, 9));
    CHECK(worst <= 2e-2);
    MESSAGE(to_string(v), " worst relative gradient error ", worst);
  }
}

TEST_CASE("forward is deterministic and seeds matter") {
  const auto tokens = random_tokens(16, 11, 1);
  const TransformerModel a(small_config(Variant::rand_random), 42);
  const TransformerModel b(small_config(Variant::rand_random), 42);
  const TransformerModel c(small_config(Variant::rand_random), 43);
  const Tensor la = a.forward(tokens, 2, 8);
  const Tensor lb = b.forward(tokens, 2, 8);
  const Tensor lc = c.forward(tokens, 2, 8);
  CHECK(std::memcmp(la.data().data(), lb.data().data(), la.data().size_bytes()) == 0);
  CHECK(std::memcmp(la.data().data(), lc.data().data(), la.data().size_bytes()) != 0);
}

TEST_CASE("model checkpoints round trip bit-exactly") {
  const auto path = std::filesystem::temp_directory_path() / "spectral_test_model.ckpt";
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    TransformerModel model(small_config(v), 12);
    // move away from init so a structural reload alone cannot pass
    for (auto& p : model.parameters())
      for (auto& x : p.mutable_data()) x += 0.125f;
    model.save(path, {{"vocab", "abcdefghijk"}});
    nlohmann::json meta;
    const TransformerModel back = TransformerModel::load(path, &meta);
    CHECK(meta.at("vocab") == "abcdefghijk");
    const auto pa = model.parameters();
    const auto pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(std::memcmp(pa[i].data().data(), pb[i].data().data(), pa[i].data().size_bytes()) == 0);
    }
  }
  std::filesystem::remove(path);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/corpora.hpp"
#include "spectral/rng.hpp"
#include "spectral/trainer.hpp"

using namespace spectral;

namespace {

using oracle::verse_corpus;

TrainConfig tiny_config(Variant v) {
  TrainConfig t;
  t.model.n_layers = 2;
  t.model.d_model = 32;
  t.model.n_heads = 2;
  t.model.context = 16;
  t.model.d_mlp = 128;
  t.model.variant = v;
  t.model.ratio = 2.0;
  t.model.lora_rank = 8;
  t.epochs = 2;
  t.steps_per_epoch = 10;
  t.batch_size = 8;
  t.eval_batches = 4;
  return t;
}

constexpr Variant kAllVariants[] = {Variant::standard,    Variant::dct_zigzag,  Variant::dct_random,
                                    Variant::rand_zigzag, Variant::rand_random, Variant::lora};

}  // namespace

TEST_CASE("cosine schedule") {
  const CosineSchedule s{1e-3, 6000};
  CHECK(s.lr(0) == doctest::Approx(1e-3));
  CHECK(s.lr(3000) == doctest::Approx(5e-4));
  CHECK(s.lr(6000) == doctest::Approx(0.0));
  CHECK(s.lr(9000) == doctest::Approx(0.0));
  double prev = s.lr(0);
  for (std::int64_t i = 1; i <= 6000; i += 37) {
    CHECK(s.lr(i) <= prev);
    prev = s.lr(i);
  }
}

TEST_CASE("peak learning rate defaults by variant") {
  TrainConfig c;
  c.model.variant = Variant::standard;
  CHECK(c.resolved_peak_lr() == 3e-4);
  c.model.variant = Variant::lora;
  CHECK(c.resolved_peak_lr() == 3e-4);
  c.model.variant = Variant::rand_zigzag;
  CHECK(c.resolved_peak_lr() == 1e-3);
  c.peak_lr = 5e-3;
  CHECK(c.resolved_peak_lr() == 5e-3);
  CHECK(c.total_steps() == 6000);
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("global norm clipping") {
  Tensor a = Tensor::zeros({2}, true);
  Tensor b = Tensor::zeros({1}, true);
  a.grad()[0] = 3.0f;
  b.grad()[0] = 4.0f;  // norm 5
  std::vector<Tensor> params{a, b};
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(global_grad_norm(params) == doctest::Approx(1.0));

  a.grad()[0] = 0.3f;
  b.grad()[0] = 0.4f;  // norm 0.5
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(0.5));
  CHECK(a.grad()[0] == 0.3f);
  CHECK(b.grad()[0] == 0.4f);
}

TEST_CASE("AdamW first step and pure decay") {
  Tensor p = Tensor::from({1}, {2.0f}, true);
  AdamW opt({p}, {false}, {0.9, 0.999, 1e-8, 0.0});
  p.grad()[0] = 1.0f;
  opt.step(1e-2);
  CHECK(p.data()[0] == doctest::Approx(2.0 - 1e-2).epsilon(1e-6));

  Tensor q = Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true);
  AdamW decay({q}, {true}, {0.9, 0.999, 1e-8, 0.01});
  const double lr = 0.1;
  for (int i = 0; i < 5; ++i) decay.step(lr);  // no gradient at all
  const double shrink = std::pow(1.0 - lr * 0.01, 5);
  CHECK(q.data()[0] == doctest::Approx(1.0 * shrink).epsilon(1e-6));
  CHECK(q.data()[1] == doctest::Approx(-2.0 * shrink).epsilon(1e-6));
  CHECK(decay.step_count() == 5);

  CHECK_THROWS_AS(AdamW({q}, {true, false}), std::invalid_argument);
}

TEST_CASE("AdamW trajectory on a quadratic matches a reference") {
  // L = 0.5 * sum a_i (x_i - t_i)^2, gradients formed by hand.
  const std::vector<double> a{1.0, 4.0, 0.25, 2.0};
  const std::vector<double> target{0.5, -1.0, 2.0, 0.0};
  std::vector<double> ref{1.0, 1.0, -1.0, 0.3};
  Tensor x = Tensor::from({4}, {1.0f, 1.0f, -1.0f, 0.3f}, true);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  AdamW opt({x}, {true}, {b1, b2, eps, wd});
  std::vector<double> m(4, 0.0), v(4, 0.0);
  for (int t = 1; t <= 10; ++t) {
    for (int i = 0; i < 4; ++i) x.grad()[i] = static_cast<float>(a[i] * (x.data()[i] - target[i]));
    opt.step(lr);
    for (int i = 0; i < 4; ++i) {
      const double g = a[i] * (ref[i] - target[i]);
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * ref[i]);
    }
  }
  for (int i = 0; i < 4; ++i) CHECK(std::abs(x.data()[i] - ref[i]) <= 1e-6);
}

TEST_CASE("training is bit-exactly reproducible") {
  const auto corpus = CharCorpus::from_text(verse_corpus(300, 1));
  const auto cfg = tiny_config(Variant::dct_random);
  const auto r1 = train_run(cfg, corpus);
  const auto r2 = train_run(cfg, corpus);
  REQUIRE(r1.records.size() == 2);
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    CHECK(r1.records[i].val_loss == r2.records[i].val_loss);
    CHECK(r1.records[i].train_loss == r2.records[i].train_loss);
    CHECK(r1.records[i].step == static_cast<std::int64_t>(10 * (i + 1)));
  }
  auto other = cfg;
  other.data_seed = 99;
  CHECK(train_run(other, corpus).records.back().val_loss != r1.records.back().val_loss);
}

TEST_CASE("loss decreases over 200 steps for every variant") {
  const auto corpus = CharCorpus::from_text(verse_corpus(2000, 2));
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    auto cfg = tiny_config(v);
    cfg.epochs = 1;
    cfg.steps_per_epoch = 200;
    cfg.epoch_ranks = false;
    Trainer trainer(cfg, corpus);
    const double before = trainer.evaluate();
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
      const double l = trainer.step();
      if (i < 20) first += l / 20;
      if (i >= 180) last += l / 20;
    }
    CHECK(last < first - 0.3);
    CHECK(trainer.evaluate() < before - 0.3);
  }
}

TEST_CASE("dense model memorizes a single batch") {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 64;
  c.n_heads = 4;
  c.context = 32;
  c.d_mlp = 256;
  c.vocab_size = 20;
  const TransformerModel model(c, 5);
  Batch batch;
  batch.batch = 4;
  batch.seq = 32;
  Rng rng(6);
  for (int i = 0; i < 4 * 32; ++i) {
    batch.inputs.push_back(static_cast<std::int32_t>(rng.uniform_below(20)));
    batch.targets.push_back(static_cast<std::int32_t>(rng.uniform_below(20)));
  }
  auto params = model.parameters();
  AdamW opt(params, std::vector<bool>(params.size(), false), {0.9, 0.999, 1e-8, 0.0});
  double loss = 0.0;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    for (auto& p : params) p.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    const Tensor l = model.loss(batch);
    loss = l.item();
    if (loss < 0.1) break;
    tape.backward(l);
    clip_grad_norm(params, 1.0);
    opt.step(1e-3);
  }
  MESSAGE("memorized to ", loss, " in ", steps, " steps");
  CHECK(loss < 0.1);
}

TEST_CASE("spectral weights stay in the selected subspace during training") {
  const auto corpus = CharCorpus::from_text(verse_corpus(500, 3));
  for (auto v : {Variant::dct_zigzag, Variant::dct_random, Variant::rand_zigzag, Variant::rand_random}) {
    CAPTURE(to_string(v));
    auto cfg = tiny_config(v);
    cfg.epoch_ranks = false;
    Trainer trainer(cfg, corpus);
    for (int i = 0; i < 50; ++i) trainer.step();
    for (std::int64_t l = 0; l < cfg.model.n_layers; ++l) {
      for (auto cls : kLayerClasses) {
        const auto& layer = dynamic_cast<const SpectralLinear&>(trainer.model().linear(l, cls));
        const Matrix grid = dct2_forward(layer.materialize(), layer.basis());
        std::vector<bool> on(static_cast<std::size_t>(grid.size()), false);
        for (auto f : layer.selection().flat()) on[static_cast<std::size_t>(f)] = true;
        double worst = 0.0;
        for (std::int64_t i = 0; i < grid.size(); ++i)
          if (!on[static_cast<std::size_t>(i)]) worst = std::max(worst, std::abs(double(grid.data()[i])));
        CHECK(worst <= 1e-6);
      }
    }
  }
}

TEST_CASE("divergence aborts with variant, step and learning rate") {
  const auto corpus = CharCorpus::from_text(verse_corpus(300, 4));
  auto cfg = tiny_config(Variant::standard);
  cfg.peak_lr = 1e30;
  cfg.epoch_ranks = false;
  Trainer trainer(cfg, corpus);
  bool thrown = false;
  try {
    for (int i = 0; i < 20; ++i) trainer.step();
  } catch (const TrainingDiverged& e) {
    thrown = true;
    CHECK(e.variant() == Variant::standard);
    CHECK(e.step() >= 1);
    CHECK(e.lr() > 1e29);
    CHECK(std::string(e.what()).find("standard") != std::string::npos);
  }
  CHECK(thrown);
}

TEST_CASE("run directory artifacts") {
  const auto corpus = CharCorpus::from_text(verse_corpus(300, 5));
  const auto dir = std::filesystem::temp_directory_path() / "spectral_test_run";
  std::filesystem::remove_all(dir);
  int seen = 0;
  const auto result = train_run(tiny_config(Variant::lora), corpus, dir, [&](const MetricsRecord&) { ++seen; });
  CHECK(seen == 2);
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  std::vector<MetricsRecord> lines;
  while (std::getline(in, line)) lines.push_back(MetricsRecord::from_json(nlohmann::json::parse(line)));
  REQUIRE(lines.size() == 2);
  CHECK(lines[1].val_loss == result.records[1].val_loss);
  REQUIRE(lines[1].stable_rank.has_value());
  nlohmann::json meta;
  const auto model = TransformerModel::load(dir / "model.ckpt", &meta);
  CHECK(meta.at("vocab").get<std::string>().size() == static_cast<std::size_t>(corpus.vocab_size()));
  const auto report = rank_report(dir / "model.ckpt");
  for (const auto& l : report.layers) CHECK(l.numerical_rank <= 8);
  CHECK(std::filesystem::exists(dir / "ranks.json"));
  std::filesystem::remove_all(dir);
}

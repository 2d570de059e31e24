#include "spectral/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace spectral {

namespace {

ModelConfig with_vocab(ModelConfig m, const CharCorpus& corpus) {
  m.vocab_size = corpus.vocab_size();
  return m;
}

std::vector<bool> decay_flags(const TransformerModel& model, const TrainConfig& config) {
  std::vector<bool> flags(model.block_parameters().size(), config.adamw.weight_decay > 0.0);
  flags.resize(flags.size() + model.non_block_parameters().size(), false);
  return flags;
}

std::string vocab_string(const CharCorpus& corpus) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(corpus.vocab_size()));
  std::iota(ids.begin(), ids.end(), 0);
  return corpus.decode(ids);
}

}  // namespace

// --- config and records ------------------------------------------------------------

double TrainConfig::resolved_peak_lr() const {
  if (peak_lr > 0.0) return peak_lr;
  return is_spectral(model.variant) ? 1e-3 : 3e-4;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"init_seed", init_seed},
          {"data_seed", data_seed},
          {"eval_seed", eval_seed},
          {"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"batch_size", batch_size},
          {"eval_batches", eval_batches},
          {"peak_lr", peak_lr},
          {"clip_norm", clip_norm},
          {"beta1", adamw.beta1},
          {"beta2", adamw.beta2},
          {"eps", adamw.eps},
          {"weight_decay", adamw.weight_decay},
          {"epoch_ranks", epoch_ranks}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.init_seed = j.value("init_seed", c.init_seed);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eval_batches = j.value("eval_batches", c.eval_batches);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.adamw.beta1 = j.value("beta1", c.adamw.beta1);
  c.adamw.beta2 = j.value("beta2", c.adamw.beta2);
  c.adamw.eps = j.value("eps", c.adamw.eps);
  c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
  c.epoch_ranks = j.value("epoch_ranks", c.epoch_ranks);
  return c;
}

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch},   {"step", step},           {"train_loss", train_loss},
                      {"val_loss", val_loss}, {"lr", lr},           {"grad_norm", grad_norm},
                      {"seconds", seconds}};
  if (stable_rank) {
    for (auto cls : kLayerClasses)
      j["stable_rank"][std::string(to_string(cls))] = (*stable_rank)[static_cast<std::size_t>(cls)];
  }
  return j;
}

MetricsRecord MetricsRecord::from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.epoch = j.at("epoch").get<std::int64_t>();
  r.step = j.at("step").get<std::int64_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.lr = j.at("lr").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.seconds = j.value("seconds", 0.0);
  if (j.contains("stable_rank")) {
    std::array<double, 4> sr{};
    for (auto cls : kLayerClasses)
      sr[static_cast<std::size_t>(cls)] = j.at("stable_rank").at(std::string(to_string(cls))).get<double>();
    r.stable_rank = sr;
  }
  return r;
}

TrainingDiverged::TrainingDiverged(Variant variant, std::int64_t step, double lr, const std::string& detail)
    : std::runtime_error("training diverged: variant " + std::string(to_string(variant)) + ", step " +
                         std::to_string(step) + ", lr " + std::to_string(lr) + ": " + detail),
      variant_(variant),
      step_(step),
      lr_(lr) {}

// --- Trainer -----------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, const CharCorpus& corpus)
    : config_([&] {
        config.model = with_vocab(config.model, corpus);
        return config;
      }()),
      corpus_(corpus),
      model_(config_.model, config_.init_seed),
      params_(model_.parameters()),
      optimizer_(params_, decay_flags(model_, config_), config_.adamw),
      schedule_{config_.resolved_peak_lr(), config_.total_steps()},
      train_stream_(corpus, Segment::train, config_.batch_size, config_.model.context, config_.data_seed),
      eval_(val_eval_batches(corpus, config_.eval_seed, config_.eval_batches, config_.batch_size,
                             config_.model.context)) {
  if (config_.epochs < 1 || config_.steps_per_epoch < 1) {
    throw std::invalid_argument("TrainConfig: epochs and steps_per_epoch must be positive");
  }
  if (!(config_.clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
}

double Trainer::step() {
  const std::int64_t s = optimizer_.step_count();
  const double lr = schedule_.lr(s);
  const Batch batch = train_stream_.next();
  for (auto& p : params_) p.zero_grad();
  double loss_value = 0.0;
  try {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = model_.loss(batch);
    loss_value = loss.item();
    tape.backward(loss);
  } catch (const NumericError& e) {
    throw TrainingDiverged(config_.model.variant, s, lr, std::string("non-finite value in ") + e.where());
  }
  last_grad_norm_ = clip_grad_norm(params_, config_.clip_norm);
  if (!std::isfinite(loss_value) || !std::isfinite(last_grad_norm_)) {
    throw TrainingDiverged(config_.model.variant, s, lr, "non-finite loss or gradient norm");
  }
  optimizer_.step(lr);
  return loss_value;
}

double Trainer::evaluate() const {
  NoGradScope no_grad;
  double total = 0.0;
  for (const auto& b : eval_) total += model_.loss(b).item();
  return total / static_cast<double>(eval_.size());
}

MetricsRecord Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  MetricsRecord r;
  double loss_sum = 0.0, norm_sum = 0.0;
  for (std::int64_t i = 0; i < config_.steps_per_epoch; ++i) {
    r.lr = schedule_.lr(optimizer_.step_count());
    loss_sum += step();
    norm_sum += last_grad_norm_;
  }
  r.step = optimizer_.step_count();
  r.epoch = r.step / config_.steps_per_epoch;
  r.train_loss = loss_sum / static_cast<double>(config_.steps_per_epoch);
  r.grad_norm = norm_sum / static_cast<double>(config_.steps_per_epoch);
  r.val_loss = evaluate();
  if (!std::isfinite(r.val_loss)) {
    throw TrainingDiverged(config_.model.variant, r.step, r.lr, "non-finite validation loss");
  }
  if (config_.epoch_ranks) r.stable_rank = class_stable_ranks(model_);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

TrainResult train_run(const TrainConfig& config, const CharCorpus& corpus, const std::filesystem::path& out_dir,
                      const std::function<void(const MetricsRecord&)>& on_epoch) {
  Trainer trainer(config, corpus);
  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + (out_dir / "metrics.jsonl").string());
  }
  TrainResult result;
  for (std::int64_t e = 0; e < trainer.config().epochs; ++e) {
    auto record = trainer.run_epoch();
    if (metrics.is_open()) metrics << record.to_json().dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(record);
    result.records.push_back(std::move(record));
  }
  result.final_ranks = rank_report(trainer.model());
  result.params = trainer.model().param_counts();
  if (!out_dir.empty()) {
    trainer.model().save(out_dir / "model.ckpt",
                         {{"vocab", vocab_string(corpus)}, {"train", trainer.config().to_json()}});
    std::ofstream(out_dir / "ranks.json") << result.final_ranks.to_json().dump(2) << '\n';
  }
  return result;
}

}  // namespace spectral

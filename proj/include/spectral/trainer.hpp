#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral/data.hpp"
#include "spectral/diagnostics.hpp"
#include "spectral/model.hpp"
#include "spectral/optim.hpp"

namespace spectral {

struct TrainConfig {
  ModelConfig model;  // vocab_size is taken from the corpus
  std::uint64_t init_seed = 1;
  std::uint64_t data_seed = 2;
  std::uint64_t eval_seed = 3;
  std::int64_t epochs = 30;
  std::int64_t steps_per_epoch = 200;
  std::int64_t batch_size = 32;
  std::int64_t eval_batches = 50;
  /// 0 selects the default for the variant: 3e-4 dense and lora, 1e-3 spectral.
  double peak_lr = 0.0;
  double clip_norm = 1.0;
  AdamWConfig adamw;
  /// Record per-class stable ranks with every epoch's metrics.
  bool epoch_ranks = true;

  double resolved_peak_lr() const;
  std::int64_t total_steps() const { return epochs * steps_per_epoch; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct MetricsRecord {
  std::int64_t epoch = 0;  // 1-based
  std::int64_t step = 0;   // optimizer steps completed
  double train_loss = 0.0;  // mean over the epoch's steps
  double val_loss = 0.0;    // mean over the fixed evaluation batches
  double lr = 0.0;          // learning rate of the epoch's last step
  double grad_norm = 0.0;   // mean pre-clip global norm over the epoch
  std::optional<std::array<double, 4>> stable_rank;  // per layer class
  double seconds = 0.0;     // wall time of the epoch, excluded from equality

  nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& j);
};

/// Non-finite loss or gradient during training.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(Variant variant, std::int64_t step, double lr, const std::string& detail);
  Variant variant() const { return variant_; }
  std::int64_t step() const { return step_; }
  double lr() const { return lr_; }

 private:
  Variant variant_;
  std::int64_t step_;
  double lr_;
};

/// One training run: model, optimizer, batch streams and schedule.
class Trainer {
 public:
  Trainer(TrainConfig config, const CharCorpus& corpus);

  /// One optimizer step on the next training batch; returns its loss.
  double step();
  /// Mean loss over the fixed evaluation batches, without recording.
  double evaluate() const;
  /// Runs one epoch of steps and evaluates.
  MetricsRecord run_epoch();

  const TrainConfig& config() const { return config_; }
  const TransformerModel& model() const { return model_; }
  std::int64_t steps_done() const { return optimizer_.step_count(); }
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  TrainConfig config_;
  const CharCorpus& corpus_;
  TransformerModel model_;
  std::vector<Tensor> params_;
  AdamW optimizer_;
  CosineSchedule schedule_;
  BatchStream train_stream_;
  std::vector<Batch> eval_;
  double last_grad_norm_ = 0.0;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  RankReport final_ranks;
  ParamCounts params;
};

/// Full run. When `out_dir` is non-empty it receives metrics.jsonl (one
/// record per epoch, written as epochs finish), model.ckpt and ranks.json.
/// `on_epoch` is called after each record.
TrainResult train_run(const TrainConfig& config, const CharCorpus& corpus, const std::filesystem::path& out_dir = {},
                      const std::function<void(const MetricsRecord&)>& on_epoch = {});

}  // namespace spectral

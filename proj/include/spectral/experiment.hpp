#pragma once

// The compression grid: one dense cell, one LoRA cell, and the four
// spectral variants at each compression ratio. Every cell shares the data
// seed, so all cells see the same batch order.
//
// Run directory layout:
//   <out>/manifest.json            cells with their config hashes
//   <out>/cells/<id>/cell.json     the cell's TrainConfig
//   <out>/cells/<id>/metrics.jsonl one record per epoch
//   <out>/cells/<id>/model.ckpt
//   <out>/cells/<id>/ranks.json
//   <out>/cells/<id>/status.json   written last; marks the cell complete

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral/trainer.hpp"

namespace spectral {

struct ExperimentConfig {
  TrainConfig base;  // model.variant and model.ratio are overridden per cell
  std::vector<double> ratios = {2.0, 10.0, 20.0};
  std::filesystem::path corpus;  // empty: taken from the command line

  /// Missing keys keep their defaults, which reproduce the full grid.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct GridCell {
  std::string id;  // e.g. standard, lora_r48, dct_random_r10
  TrainConfig config;

  Variant variant() const { return config.model.variant; }
  double ratio() const { return config.model.ratio; }
  /// 16 hex digits of FNV-1a over the canonical config JSON.
  std::string hash() const;
};

std::vector<GridCell> enumerate_grid(const ExperimentConfig& config);
std::string cell_id(Variant variant, double ratio, std::int64_t lora_rank);

enum class CellState { complete, diverged, failed, skipped };
std::string_view to_string(CellState s);

struct CellOutcome {
  std::string id;
  CellState state = CellState::failed;
  std::string detail;
};

struct GridOptions {
  int parallel = 1;
  std::vector<std::string> only;  // cell ids; empty runs every cell
  bool quiet = false;
};

/// Runs every requested cell whose status.json is missing or whose hash no
/// longer matches. A diverged or throwing cell is recorded and the others
/// continue. Outcomes are returned in grid order.
std::vector<CellOutcome> run_grid(const ExperimentConfig& config, const CharCorpus& corpus,
                                  const std::filesystem::path& out_dir, const GridOptions& options = {});

/// What a completed cell left on disk.
struct CellResult {
  std::string id;
  Variant variant = Variant::standard;
  double ratio = 0.0;
  std::string state;  // complete | diverged | failed
  std::vector<MetricsRecord> records;
  std::optional<RankReport> ranks;
  ParamCounts params;

  std::optional<double> final_val_loss() const;
};

/// Reads every cell listed in the manifest; cells without status.json are
/// returned with state "missing".
std::vector<CellResult> load_grid(const std::filesystem::path& out_dir);
const CellResult* find_cell(const std::vector<CellResult>& cells, Variant variant, double ratio);

/// Writes table1/2/3 as .csv and .txt under <out>/tables. Missing values
/// are written as NA.
void emit_tables(const std::filesystem::path& out_dir);
/// Writes <out>/figure.svg: (a) validation loss and (b) QKV stable rank
/// against compression ratio.
void emit_figure(const std::filesystem::path& out_dir);

}  // namespace spectral

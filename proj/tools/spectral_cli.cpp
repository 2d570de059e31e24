// spectral: run the compression grid and turn its run directories into
// tables, a figure and benchmark numbers.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "spectral/experiment.hpp"
#include "spectral/fused.hpp"

#ifdef SPECTRAL_HAVE_CHECKS
#include "checks.hpp"
#endif

namespace {

using namespace spectral;
namespace fs = std::filesystem;

int cmd_run(const std::string& config_path, const fs::path& out, std::string corpus_path,
            const std::vector<std::string>& cells, int parallel, std::optional<std::uint64_t> seed) {
  ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
  if (seed) {
    config.base.init_seed = *seed;
    config.base.data_seed = *seed + 1;
    config.base.eval_seed = *seed + 2;
  }
  if (corpus_path.empty()) corpus_path = config.corpus.string();
  if (corpus_path.empty()) {
    std::cerr << "run: no corpus; pass --corpus or set \"corpus\" in the config\n";
    return 2;
  }
  const auto corpus = CharCorpus::load(corpus_path);
  std::cerr << "corpus " << corpus_path << ": " << corpus.size() << " characters, vocabulary "
            << corpus.vocab_size() << "\n";
  const auto outcomes = run_grid(config, corpus, out, {.parallel = parallel, .only = cells});
  int bad = 0;
  for (const auto& o : outcomes) {
    const bool ok = o.state == CellState::complete || o.state == CellState::skipped;
    bad += !ok;
    std::cout << o.id << "\t" << to_string(o.state) << (o.detail.empty() ? "" : "\t" + o.detail) << "\n";
  }
  return bad == 0 ? 0 : 1;
}

int cmd_bench(const std::string& out_path, int reps) {
  std::vector<BenchShape> shapes;
  // block shapes of the default model at each ratio
  const std::pair<std::int64_t, std::int64_t> blocks[] = {{384, 128}, {128, 128}, {512, 128}, {128, 512}};
  for (auto [m, n] : blocks) {
    for (double ratio : {2.0, 10.0, 20.0}) {
      shapes.push_back({m, n, std::llround(static_cast<double>(m * n) / ratio), 64, BasisKind::dct});
    }
  }
  // mn sweep at fixed K and BT
  for (std::int64_t m : {128, 256, 512}) shapes.push_back({m, 512, 6554, 64, BasisKind::dct});
  shapes.push_back({128, 512, 6554, 64, BasisKind::random});
  const auto rows = bench_fused_vs_naive(shapes, reps);
  if (out_path.empty() || out_path == "-") {
    write_bench_csv(std::cout, rows);
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    write_bench_csv(out, rows);
  }
  return 0;
}

int cmd_check(const std::string& grid) {
#ifdef SPECTRAL_HAVE_CHECKS
  std::vector<checks::Verdict> verdicts;
  if (!grid.empty()) verdicts = checks::grid_criteria(grid);
  for (auto& v : checks::property_criteria()) verdicts.push_back(std::move(v));
  checks::print(std::cout, verdicts);
  return std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass; }) ? 0 : 1;
#else
  (void)grid;
  std::cerr << "check: built without the test suites (SPECTRAL_BUILD_TESTS=OFF)\n";
  return 2;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse spectral weight experiments"};
  app.require_subcommand(1);

  std::string config_path, corpus, out = "runs/grid", bench_out, grid;
  std::vector<std::string> cells;
  int parallel = 1, reps = 5;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "train the grid cells that are missing or out of date");
  run->add_option("--config", config_path, "grid config JSON; omitted keys take the default values");
  run->add_option("--out", out, "artifact directory")->capture_default_str();
  run->add_option("--corpus", corpus, "training text (overrides the config)");
  run->add_option("--cell", cells, "run only these cell ids (repeatable)");
  run->add_option("--parallel", parallel, "cells trained concurrently")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "init seed; data and eval seeds follow as seed+1 and seed+2");

  auto* tables = app.add_subcommand("tables", "write tables/ from a run directory");
  tables->add_option("--out", out, "artifact directory")->capture_default_str();
  auto* figure = app.add_subcommand("figure", "write figure.svg from a run directory");
  figure->add_option("--out", out, "artifact directory")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "time fused against naive reconstruction; CSV on stdout");
  bench->add_option("--out", bench_out, "CSV path instead of stdout");
  bench->add_option("--reps", reps, "repetitions per path; the median is reported")->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check", "run the property suites, and grid criteria with --grid");
  check->add_option("--grid", grid, "completed artifact directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, out, corpus, cells, parallel, seed);
    if (*tables) {
      emit_tables(out);
      std::cout << (fs::path(out) / "tables").string() << "\n";
      return 0;
    }
    if (*figure) {
      emit_figure(out);
      std::cout << (fs::path(out) / "figure.svg").string() << "\n";
      return 0;
    }
    if (*bench) return cmd_bench(bench_out, reps);
    if (*check) return cmd_check(grid);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

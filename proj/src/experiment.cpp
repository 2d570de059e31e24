#include "spectral/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace spectral {

namespace fs = std::filesystem;

namespace {

constexpr Variant kSpectral[] = {Variant::dct_zigzag, Variant::dct_random, Variant::rand_zigzag, Variant::rand_random};
constexpr Variant kTableOrder[] = {Variant::standard,    Variant::dct_zigzag,  Variant::dct_random,
                                   Variant::rand_zigzag, Variant::rand_random, Variant::lora};

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string ratio_label(double ratio) {
  std::ostringstream s;
  s << ratio;
  return s.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string signed_fixed(double v, int digits) { return (v >= 0.0 ? "+" : "") + fixed(v, digits); }

std::string method_name(Variant v, std::int64_t lora_rank) {
  if (v == Variant::lora) return "lora_r" + std::to_string(lora_rank);
  return std::string(to_string(v));
}

}  // namespace

// --- configuration -----------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("train")) c.base = TrainConfig::from_json(j.at("train"));
  if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::vector<double>>();
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<std::string>();
  if (c.ratios.empty()) throw std::invalid_argument("experiment config: ratios must not be empty");
  for (double r : c.ratios) {
    if (!(r >= 1.0)) throw std::invalid_argument("experiment config: ratio " + std::to_string(r) + " is below 1");
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  try {
    auto c = from_json(read_json(path));
    if (!c.corpus.empty() && c.corpus.is_relative()) c.corpus = path.parent_path() / c.corpus;
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("experiment config " + path.string() + ": " + e.what());
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = {{"train", base.to_json()}, {"ratios", ratios}};
  if (!corpus.empty()) j["corpus"] = corpus.string();
  return j;
}

// --- grid --------------------------------------------------------------------------

std::string cell_id(Variant variant, double ratio, std::int64_t lora_rank) {
  if (variant == Variant::standard) return "standard";
  if (variant == Variant::lora) return "lora_r" + std::to_string(lora_rank);
  return std::string(to_string(variant)) + "_r" + ratio_label(ratio);
}

std::string GridCell::hash() const {
  // FNV-1a, 64 bit
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<GridCell> enumerate_grid(const ExperimentConfig& config) {
  std::vector<GridCell> cells;
  auto add = [&](Variant v, double ratio) {
    TrainConfig t = config.base;
    t.model.variant = v;
    t.model.ratio = is_spectral(v) ? ratio : config.base.model.ratio;
    cells.push_back({cell_id(v, ratio, t.model.lora_rank), t});
  };
  add(Variant::standard, 0.0);
  add(Variant::lora, 0.0);
  for (double r : config.ratios)
    for (Variant v : kSpectral) add(v, r);
  return cells;
}

std::string_view to_string(CellState s) {
  switch (s) {
    case CellState::complete: return "complete";
    case CellState::diverged: return "diverged";
    case CellState::failed: return "failed";
    case CellState::skipped: return "skipped";
  }
  return "unknown";
}

std::vector<CellOutcome> run_grid(const ExperimentConfig& config, const CharCorpus& corpus, const fs::path& out_dir,
                                  const GridOptions& options) {
  const auto cells = enumerate_grid(config);
  for (const auto& id : options.only) {
    if (std::none_of(cells.begin(), cells.end(), [&](const GridCell& c) { return c.id == id; })) {
      throw std::invalid_argument("unknown cell '" + id + "'");
    }
  }
  fs::create_directories(out_dir / "cells");
  nlohmann::json manifest = {{"config", config.to_json()}, {"cells", nlohmann::json::array()}};
  for (const auto& c : cells) {
    manifest["cells"].push_back({{"id", c.id},
                                 {"hash", c.hash()},
                                 {"variant", std::string(to_string(c.variant()))},
                                 {"ratio", is_spectral(c.variant()) ? c.ratio() : 0.0}});
  }
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (options.only.empty() ||
        std::find(options.only.begin(), options.only.end(), cells[i].id) != options.only.end()) {
      todo.push_back(i);
    }
  }

  std::vector<CellOutcome> outcomes(todo.size());
  std::mutex log_mutex;
  auto log = [&](const std::string& line) {
    if (options.quiet) return;
    std::lock_guard lock(log_mutex);
    std::cerr << line << '\n';
  };

  auto run_one = [&](std::size_t slot) {
    const GridCell& cell = cells[todo[slot]];
    const fs::path dir = out_dir / "cells" / cell.id;
    CellOutcome& out = outcomes[slot];
    out.id = cell.id;
    const std::string hash = cell.hash();
    if (fs::exists(dir / "status.json")) {
      try {
        const auto status = read_json(dir / "status.json");
        const auto state = status.value("state", std::string());
        if (status.value("hash", std::string()) == hash && (state == "complete" || state == "diverged")) {
          out.state = state == "complete" ? CellState::skipped : CellState::diverged;
          out.detail = state == "complete" ? "up to date" : status.value("detail", std::string());
          log(cell.id + ": " + out.detail);
          return;
        }
      } catch (const std::exception&) {
        // unreadable status: rerun the cell
      }
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_text(dir / "cell.json", cell.config.to_json().dump(2) + "\n");
    nlohmann::json status = {{"id", cell.id}, {"hash", hash}};
    try {
      const auto result = train_run(cell.config, corpus, dir, [&](const MetricsRecord& r) {
        log(cell.id + ": epoch " + std::to_string(r.epoch) + " val " + fixed(r.val_loss, 4));
      });
      status["state"] = "complete";
      status["params"] = {{"block", result.params.block}, {"non_block", result.params.non_block}};
      status["final_val_loss"] = result.records.back().val_loss;
      out.state = CellState::complete;
    } catch (const TrainingDiverged& e) {
      status["state"] = "diverged";
      status["detail"] = e.what();
      status["step"] = e.step();
      status["lr"] = e.lr();
      ModelConfig m = cell.config.model;
      m.vocab_size = corpus.vocab_size();
      const TransformerModel probe(m, 0);
      const auto counts = probe.param_counts();
      status["params"] = {{"block", counts.block}, {"non_block", counts.non_block}};
      out.state = CellState::diverged;
      out.detail = e.what();
    } catch (const std::exception& e) {
      status["state"] = "failed";
      status["detail"] = e.what();
      out.state = CellState::failed;
      out.detail = e.what();
    }
    write_text(dir / "status.json", status.dump(2) + "\n");
    log(cell.id + ": " + std::string(to_string(out.state)) + (out.detail.empty() ? "" : " (" + out.detail + ")"));
  };

  const int workers = std::clamp(options.parallel, 1, static_cast<int>(std::max<std::size_t>(todo.size(), 1)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t slot; (slot = next.fetch_add(1)) < todo.size();) run_one(slot);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return outcomes;
}

// --- loading results ---------------------------------------------------------------

std::optional<double> CellResult::final_val_loss() const {
  if (state != "complete" || records.empty()) return std::nullopt;
  return records.back().val_loss;
}

std::vector<CellResult> load_grid(const fs::path& out_dir) {
  const auto manifest = read_json(out_dir / "manifest.json");
  std::vector<CellResult> cells;
  for (const auto& entry : manifest.at("cells")) {
    CellResult c;
    c.id = entry.at("id").get<std::string>();
    c.variant = parse_variant(entry.at("variant").get<std::string>());
    c.ratio = entry.at("ratio").get<double>();
    const fs::path dir = out_dir / "cells" / c.id;
    if (!fs::exists(dir / "status.json")) {
      c.state = "missing";
      cells.push_back(std::move(c));
      continue;
    }
    const auto status = read_json(dir / "status.json");
    if (status.value("hash", std::string()) != entry.at("hash").get<std::string>()) {
      c.state = "stale";
      cells.push_back(std::move(c));
      continue;
    }
    c.state = status.at("state").get<std::string>();
    if (status.contains("params")) {
      c.params.block = status.at("params").at("block").get<std::int64_t>();
      c.params.non_block = status.at("params").at("non_block").get<std::int64_t>();
    }
    if (std::ifstream metrics(dir / "metrics.jsonl"); metrics) {
      for (std::string line; std::getline(metrics, line);) {
        if (!line.empty()) c.records.push_back(MetricsRecord::from_json(nlohmann::json::parse(line)));
      }
    }
    if (fs::exists(dir / "ranks.json")) c.ranks = RankReport::from_json(read_json(dir / "ranks.json"));
    cells.push_back(std::move(c));
  }
  return cells;
}

const CellResult* find_cell(const std::vector<CellResult>& cells, Variant variant, double ratio) {
  for (const auto& c : cells) {
    if (c.variant == variant && (!is_spectral(variant) || c.ratio == ratio)) return &c;
  }
  return nullptr;
}

// --- tables ------------------------------------------------------------------------

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cols) {
      for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }

  std::string text(const std::string& title) const {
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    std::ostringstream out;
    out << title << "\n\n";
    auto line = [&](const std::vector<std::string>& cols) {
      for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i == 0) {
          out << std::left << std::setw(static_cast<int>(width[i])) << cols[i];
        } else {
          out << "  " << std::right << std::setw(static_cast<int>(width[i])) << cols[i];
        }
      }
      out << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out << std::string(total - 2, '-') << '\n';
    for (const auto& r : rows) line(r);
    return out.str();
  }
};

const std::string kNA = "NA";

}  // namespace

void emit_tables(const fs::path& out_dir) {
  const auto cells = load_grid(out_dir);
  const auto config = ExperimentConfig::from_json(read_json(out_dir / "manifest.json").at("config"));
  const auto lora_rank = config.base.model.lora_rank;
  const auto& ratios = config.ratios;

  const CellResult* dense = find_cell(cells, Variant::standard, 0.0);
  const std::optional<double> dense_opt = dense ? dense->final_val_loss() : std::nullopt;
  const bool have_dense = dense_opt.has_value();
  const double dense_loss = dense_opt.value_or(0.0);
  const std::int64_t dense_params = dense && dense->state != "missing" ? dense->params.total() : 0;

  auto params_of = [](const CellResult* c) {
    return c && c->params.total() > 0 ? std::to_string(c->params.total()) : kNA;
  };
  auto loss_of = [](const CellResult* c) {
    const auto l = c ? c->final_val_loss() : std::nullopt;
    return l ? fixed(*l, 3) : kNA;
  };
  auto delta_of = [&](const CellResult* c) {
    const auto l = c ? c->final_val_loss() : std::nullopt;
    if (!l || !have_dense) return kNA;
    // both operands rounded as printed, so the column is exact arithmetic on the table
    return signed_fixed(std::round(l.value() * 1000.0) / 1000.0 - std::round(dense_loss * 1000.0) / 1000.0, 3);
  };

  const fs::path dir = out_dir / "tables";
  fs::create_directories(dir);

  Table t1{{"method", "params", "pct_dense", "val_loss", "delta"}, {}};
  for (Variant v : kTableOrder) {
    const CellResult* c = find_cell(cells, v, ratios.front());
    std::string pct = kNA;
    if (c && c->params.total() > 0 && dense_params > 0) {
      pct = std::to_string(static_cast<std::int64_t>(std::lround(100.0 * c->params.total() / dense_params)));
    }
    t1.rows.push_back({method_name(v, lora_rank), params_of(c), pct, loss_of(c), delta_of(c)});
  }
  write_text(dir / "table1.csv", t1.csv());
  write_text(dir / "table1.txt", t1.text("Matched parameters, K = mn/" + ratio_label(ratios.front())));

  Table t2{{"method"}, {}};
  const std::vector<double> high(ratios.begin() + 1, ratios.end());
  for (double r : high) {
    const std::string s = "_r" + ratio_label(r);
    t2.header.insert(t2.header.end(), {"params" + s, "val_loss" + s, "delta" + s});
  }
  for (Variant v : kTableOrder) {
    std::vector<std::string> row{method_name(v, lora_rank)};
    for (double r : high) {
      const CellResult* c = find_cell(cells, v, r);
      row.insert(row.end(), {params_of(c), loss_of(c), delta_of(c)});
    }
    t2.rows.push_back(std::move(row));
  }
  write_text(dir / "table2.csv", t2.csv());
  write_text(dir / "table2.txt", t2.text("High compression"));

  // Stable ranks come from each cell's final checkpoint report.
  auto rank_of = [](const CellResult* c, LayerClass cls) {
    return c && c->state == "complete" && c->ranks ? fixed(c->ranks->stable_rank_of(cls), 1) : kNA;
  };
  Table t3{{"K"}, {}};
  for (Variant v : kTableOrder) t3.header.push_back(method_name(v, lora_rank));
  Table t3_all{{"method", "ratio", "class", "stable_rank"}, {}};
  for (double r : ratios) {
    std::vector<std::string> row{"mn/" + ratio_label(r)};
    for (Variant v : kTableOrder) row.push_back(rank_of(find_cell(cells, v, r), LayerClass::qkv));
    t3.rows.push_back(std::move(row));
    for (Variant v : kTableOrder) {
      for (auto cls : kLayerClasses) {
        t3_all.rows.push_back({method_name(v, lora_rank), ratio_label(r), std::string(to_string(cls)),
                               rank_of(find_cell(cells, v, r), cls)});
      }
    }
  }
  write_text(dir / "table3.csv", t3.csv());
  write_text(dir / "table3.txt", t3.text("QKV stable rank at the final checkpoint, mean over blocks"));
  write_text(dir / "table3_all_classes.csv", t3_all.csv());

  Table summary{{"cell", "state", "block_params", "non_block_params", "epochs", "final_val_loss"}, {}};
  for (const auto& c : cells) {
    summary.rows.push_back({c.id, c.state, c.params.block ? std::to_string(c.params.block) : kNA,
                            c.params.non_block ? std::to_string(c.params.non_block) : kNA,
                            std::to_string(c.records.size()), loss_of(&c)});
  }
  write_text(dir / "cells.csv", summary.csv());
}

// --- figure ------------------------------------------------------------------------

namespace {

struct Series {
  std::string name;
  std::string color;
  std::string dash;  // empty: solid
  std::vector<std::optional<double>> y;  // one per ratio
  bool reference = false;  // ratio-independent horizontal line
};

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += ch;
    }
  }
  return out;
}

void draw_panel(std::ostringstream& svg, const std::string& id, const std::string& title, const std::string& ylabel,
                const std::vector<double>& ratios, const std::vector<Series>& series, double x0, double y0) {
  constexpr double w = 380, h = 340, left = 60, right = 20, top = 40, bottom = 110;
  svg << "<g class=\"panel\" id=\"" << id << "\" transform=\"translate(" << x0 << "," << y0 << ")\">\n";
  svg << "  <text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
      << "</text>\n";

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (const auto& v : s.y)
      if (v) lo = std::min(lo, *v), hi = std::max(hi, *v);
  if (!std::isfinite(lo)) {
    svg << "  <text class=\"note\" x=\"" << w / 2 << "\" y=\"" << h / 2
        << "\" text-anchor=\"middle\" font-size=\"12\">no completed cells: panel omitted</text>\n</g>\n";
    return;
  }
  const double pad = std::max(0.05 * (hi - lo), 1e-3);
  lo -= pad;
  hi += pad;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](std::size_t i) {
    return left + (ratios.size() == 1 ? pw / 2 : pw * static_cast<double>(i) / static_cast<double>(ratios.size() - 1));
  };
  auto py = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

  svg << "  <rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    svg << "  <text class=\"xtick\" x=\"" << px(i) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << ratio_label(ratios[i]) << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    svg << "  <text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
        << fixed(v, 2) << "</text>\n";
  }
  svg << "  <text x=\"" << left + pw / 2 << "\" y=\"" << top + ph + 38
      << "\" text-anchor=\"middle\" font-size=\"12\">compression ratio mn/K</text>\n";
  svg << "  <text x=\"14\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
      << top + ph / 2 << ")\">" << svg_escape(ylabel) << "</text>\n";

  for (const auto& s : series) {
    svg << "  <g class=\"series\" data-name=\"" << s.name << "\">\n";
    const std::string style = "fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\"" +
                              (s.dash.empty() ? "" : " stroke-dasharray=\"" + s.dash + "\"");
    if (s.reference) {
      if (s.y.front()) {
        svg << "    <line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(*s.y.front()) << "\" y2=\""
            << py(*s.y.front()) << "\" " << style << "/>\n";
      }
    } else {
      std::string points;
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (s.y[i]) points += fixed(px(i), 1) + "," + fixed(py(*s.y[i]), 1) + " ";
      }
      if (!points.empty()) svg << "    <polyline points=\"" << points << "\" " << style << "/>\n";
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (s.y[i]) {
          svg << "    <circle cx=\"" << fixed(px(i), 1) << "\" cy=\"" << fixed(py(*s.y[i]), 1) << "\" r=\"3\" fill=\""
              << s.color << "\"/>\n";
        }
      }
    }
    svg << "  </g>\n";
  }
  // legend below the axes, three per row
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const double lx = left + static_cast<double>(i % 3) * (pw / 3.0);
    const double ly = top + ph + 62 + static_cast<double>(i / 3) * 16;
    svg << "  <line x1=\"" << lx << "\" x2=\"" << lx + 22 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
        << (s.dash.empty() ? "" : " stroke-dasharray=\"" + s.dash + "\"") << "/>\n";
    svg << "  <text x=\"" << lx + 26 << "\" y=\"" << ly + 4 << "\" font-size=\"10\">" << s.name << "</text>\n";
  }
  svg << "</g>\n";
}

}  // namespace

void emit_figure(const fs::path& out_dir) {
  const auto cells = load_grid(out_dir);
  const auto config = ExperimentConfig::from_json(read_json(out_dir / "manifest.json").at("config"));
  const auto& ratios = config.ratios;
  const auto lora_rank = config.base.model.lora_rank;

  auto build = [&](auto value_of) {
    std::vector<Series> out;
    const std::pair<Variant, std::pair<const char*, const char*>> styles[] = {
        {Variant::dct_zigzag, {"#1f77b4", ""}},      {Variant::rand_zigzag, {"#d62728", ""}},
        {Variant::dct_random, {"#1f77b4", "6 4"}},   {Variant::rand_random, {"#d62728", "6 4"}},
        {Variant::lora, {"#2ca02c", "2 3"}},         {Variant::standard, {"#555555", "10 3 2 3"}}};
    for (const auto& [v, style] : styles) {
      Series s{method_name(v, lora_rank), style.first, style.second, {}, !is_spectral(v)};
      for (double r : ratios) s.y.push_back(value_of(find_cell(cells, v, r)));
      out.push_back(std::move(s));
    }
    return out;
  };
  const auto loss = build([](const CellResult* c) { return c ? c->final_val_loss() : std::nullopt; });
  const auto rank = build([](const CellResult* c) -> std::optional<double> {
    if (!c || c->state != "complete" || !c->ranks) return std::nullopt;
    return c->ranks->stable_rank_of(LayerClass::qkv);
  });

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"340\" viewBox=\"0 0 800 340\" "
         "font-family=\"sans-serif\">\n";
  svg << "<rect width=\"800\" height=\"340\" fill=\"white\"/>\n";
  draw_panel(svg, "panel-a", "(a) validation loss", "val loss", ratios, loss, 0, 0);
  draw_panel(svg, "panel-b", "(b) QKV stable rank", "stable rank", ratios, rank, 400, 0);
  svg << "</svg>\n";
  write_text(out_dir / "figure.svg", svg.str());
}

}  // namespace spectral

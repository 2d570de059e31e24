#include "spectral/diagnostics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "spectral/rng.hpp"

namespace spectral {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& w) {
  Eigen::MatrixXd a(w.rows(), w.cols());
  for (std::int64_t i = 0; i < w.rows(); ++i)
    for (std::int64_t j = 0; j < w.cols(); ++j) a(i, j) = w(i, j);
  return a;
}

double frobenius_sq(const Matrix& w) {
  double s = 0.0;
  for (float v : w.data()) s += static_cast<double>(v) * v;
  return s;
}

void require_nonzero(double fro_sq) {
  if (!(fro_sq > 0.0)) throw std::invalid_argument("stable_rank: matrix is zero");
}

int rank_of(const Eigen::MatrixXd& a, double rel_tol) {
  const Eigen::VectorXd s = Eigen::BDCSVD<Eigen::MatrixXd>(a).singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) > rel_tol * s(0) ? 1 : 0;
  return r;
}

Eigen::MatrixXd gaussian_eigen(std::int64_t rows, std::int64_t cols, Rng& rng) {
  Eigen::MatrixXd a(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) a(i, j) = rng.normal();
  return a;
}

}  // namespace

std::vector<double> singular_values(const Matrix& w) {
  const Eigen::VectorXd s = Eigen::BDCSVD<Eigen::MatrixXd>(to_eigen(w)).singularValues();
  return {s.data(), s.data() + s.size()};
}

double stable_rank(const Matrix& w) {
  const double fro = frobenius_sq(w);
  require_nonzero(fro);
  const double s0 = singular_values(w).front();
  return fro / (s0 * s0);
}

double stable_rank_power(const Matrix& w, double tol, int max_iter, std::uint64_t seed) {
  const double fro = frobenius_sq(w);
  require_nonzero(fro);
  const Eigen::MatrixXd a = to_eigen(w);
  Rng rng(seed);
  Eigen::VectorXd v = gaussian_eigen(a.cols(), 1, rng);
  v.normalize();
  // The Rayleigh quotient rises geometrically towards sigma_max^2; the ratio
  // of successive increments estimates the rate, and the remaining gap is
  // extrapolated from it before declaring convergence.
  double lambda = 0.0;
  double prev_delta = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd u = a * v;
    const double next = u.squaredNorm();
    Eigen::VectorXd nv = a.transpose() * u;
    const double norm = nv.norm();
    if (norm == 0.0) break;
    v = nv / norm;
    const double delta = std::abs(next - lambda);
    lambda = next;
    if (it >= 2 && prev_delta > 0.0) {
      const double rate = delta / prev_delta;
      const double remaining = rate < 1.0 ? delta * rate / (1.0 - rate) : delta;
      if (remaining <= tol * lambda) break;
    }
    prev_delta = delta;
  }
  return fro / lambda;
}

int numerical_rank(const Matrix& w, double rel_tol) { return rank_of(to_eigen(w), rel_tol); }

// --- reports ---------------------------------------------------------------------

nlohmann::json RankReport::to_json() const {
  nlohmann::json j;
  j["variant"] = to_string(variant);
  j["ratio"] = ratio;
  j["lora_rank"] = lora_rank;
  for (auto cls : kLayerClasses) j["class_stable_rank"][std::string(to_string(cls))] = stable_rank_of(cls);
  auto& arr = j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"name", l.name},
                   {"layer", l.layer},
                   {"class", to_string(l.cls)},
                   {"rows", l.rows},
                   {"cols", l.cols},
                   {"stable_rank", l.stable_rank},
                   {"numerical_rank", l.numerical_rank}});
  }
  return j;
}

RankReport RankReport::from_json(const nlohmann::json& j) {
  RankReport r;
  r.variant = parse_variant(j.at("variant").get<std::string>());
  r.ratio = j.at("ratio").get<double>();
  r.lora_rank = j.at("lora_rank").get<std::int64_t>();
  for (auto cls : kLayerClasses) {
    r.class_stable_rank[static_cast<std::size_t>(cls)] =
        j.at("class_stable_rank").at(std::string(to_string(cls))).get<double>();
  }
  for (const auto& l : j.at("layers")) {
    LayerRank lr;
    lr.name = l.at("name").get<std::string>();
    lr.layer = l.at("layer").get<std::int64_t>();
    const auto cls = l.at("class").get<std::string>();
    for (auto c : kLayerClasses)
      if (cls == to_string(c)) lr.cls = c;
    lr.rows = l.at("rows").get<std::int64_t>();
    lr.cols = l.at("cols").get<std::int64_t>();
    lr.stable_rank = l.at("stable_rank").get<double>();
    lr.numerical_rank = l.at("numerical_rank").get<int>();
    r.layers.push_back(std::move(lr));
  }
  return r;
}

RankReport rank_report(const TransformerModel& model) {
  const auto& cfg = model.config();
  RankReport r;
  r.variant = cfg.variant;
  r.ratio = is_spectral(cfg.variant) ? cfg.ratio : 0.0;
  r.lora_rank = cfg.variant == Variant::lora ? cfg.lora_rank : 0;
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    for (auto cls : kLayerClasses) {
      const Matrix w = model.linear(l, cls).materialize();
      const auto s = singular_values(w);
      LayerRank lr;
      lr.name = "block" + std::to_string(l) + "." + std::string(to_string(cls));
      lr.layer = l;
      lr.cls = cls;
      lr.rows = w.rows();
      lr.cols = w.cols();
      lr.stable_rank = frobenius_sq(w) / (s.front() * s.front());
      for (double v : s) lr.numerical_rank += v > 1e-5 * s.front() ? 1 : 0;
      r.class_stable_rank[static_cast<std::size_t>(cls)] += lr.stable_rank / static_cast<double>(cfg.n_layers);
      r.layers.push_back(std::move(lr));
    }
  }
  return r;
}

RankReport rank_report(const std::filesystem::path& checkpoint) {
  return rank_report(TransformerModel::load(checkpoint));
}

std::array<double, 4> class_stable_ranks(const TransformerModel& model) {
  const auto& cfg = model.config();
  std::array<double, 4> out{};
  for (std::int64_t l = 0; l < cfg.n_layers; ++l)
    for (auto cls : kLayerClasses)
      out[static_cast<std::size_t>(cls)] +=
          stable_rank(model.linear(l, cls).materialize()) / static_cast<double>(cfg.n_layers);
  return out;
}

// --- rank probes -----------------------------------------------------------------

int generic_subspace_rank_probe(std::int64_t m, std::int64_t n, std::int64_t k, int trials, std::uint64_t seed,
                                ProbeBasis basis) {
  if (m < 1 || n < 1) throw std::invalid_argument("rank probe: dimensions must be positive");
  if (k < 1 || k > m * n) throw std::invalid_argument("rank probe: K must lie in [1, mn]");
  if (trials < 1) throw std::invalid_argument("rank probe: need at least one trial");
  const auto selection = SelectionSet::random(m, n, k, derive_seed(seed, 0));
  Rng rng(derive_seed(seed, 1));
  int best = 0;
  if (basis == ProbeBasis::dense_haar) {
    const std::int64_t mn = m * n;
    if (mn > 4096) throw std::invalid_argument("rank probe: dense basis limited to mn <= 4096");
    // Columns of a Haar orthogonal matrix are the atoms; the selection picks K.
    const Matrix q = random_orthogonal(mn, derive_seed(seed, 2));
    for (int t = 0; t < trials; ++t) {
      Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, n);
      for (std::int64_t a = 0; a < k; ++a) {
        const double c = rng.normal();
        const auto atom = selection.flat()[static_cast<std::size_t>(a)];
        for (std::int64_t e = 0; e < mn; ++e) w(e / n, e % n) += c * q(e, atom);
      }
      best = std::max(best, rank_of(w, 1e-5));
    }
    return best;
  }
  const auto sep = basis == ProbeBasis::separable_dct
                       ? SeparableBasis::dct(m, n)
                       : SeparableBasis::random(m, n, derive_seed(seed, 3), derive_seed(seed, 4));
  std::vector<float> c(static_cast<std::size_t>(k));
  for (int t = 0; t < trials; ++t) {
    for (auto& v : c) v = static_cast<float>(rng.normal());
    best = std::max(best, numerical_rank(idct2_sparse(c, selection, sep)));
  }
  return best;
}

int lora_rank_probe(std::int64_t m, std::int64_t n, std::int64_t r, int trials, std::uint64_t seed) {
  if (m < 1 || n < 1 || r < 1) throw std::invalid_argument("lora probe: dimensions must be positive");
  Rng rng(seed);
  int best = 0;
  for (int t = 0; t < trials; ++t) {
    const Eigen::MatrixXd a = gaussian_eigen(m, r, rng);
    const Eigen::MatrixXd b = gaussian_eigen(r, n, rng);
    best = std::max(best, rank_of(a * b, 1e-5));
  }
  return best;
}

}  // namespace spectral

#include "spectral/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace spectral {

AdamW::AdamW(std::vector<Tensor> params, std::vector<bool> decay, AdamWConfig config)
    : params_(std::move(params)), decay_(std::move(decay)), config_(config) {
  if (decay_.size() != params_.size()) {
    throw std::invalid_argument("AdamW: " + std::to_string(decay_.size()) + " decay flags for " +
                                std::to_string(params_.size()) + " parameters");
  }
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (static_cast<std::size_t>(p.numel()) != m_[i].size()) {
      throw ShapeError("AdamW: parameter " + std::to_string(i) + " changed size to " + to_string(p.shape()));
    }
    const auto grad = std::as_const(p).grad();
    const bool has_grad = !grad.empty();
    const double wd = decay_[i] ? config_.weight_decay : 0.0;
    auto theta = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + config_.eps) + wd * theta[j];
      theta[j] = static_cast<float>(theta[j] - lr * update);
    }
  }
}

double CosineSchedule::lr(std::int64_t step) const {
  if (total_steps < 1) throw std::invalid_argument("CosineSchedule: total_steps must be positive");
  const double s = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * s / static_cast<double>(total_steps)));
}

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.grad()) g *= scale;
  }
  return norm;
}

}  // namespace spectral

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spectral/tensor.hpp"

namespace spectral {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam:
///   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// with m_hat, v_hat bias-corrected, and wd applied only where `decay` is set.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, std::vector<bool> decay, AdamWConfig config = {});

  /// One update from the gradients currently held by the parameters.
  /// Parameters that never received a gradient are treated as g = 0.
  void step(double lr);

  std::int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  std::span<const float> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const float> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  std::vector<bool> decay_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t t_ = 0;
};

/// Cosine decay from `peak` at step 0 to zero at `total_steps`, no warmup.
struct CosineSchedule {
  double peak = 0.0;
  std::int64_t total_steps = 1;

  double lr(std::int64_t step) const;
};

/// Global L2 norm over all gradients, accumulated in double.
double global_grad_norm(std::span<const Tensor> params);

/// Rescales every gradient by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace spectral

#include "spectral/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "spectral/kernels.hpp"

namespace spectral {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::vector<std::string> g_scope_stack;

std::vector<float>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0f);
  return t.grad;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

std::int64_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

}  // namespace

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

// --- Tensor --------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values do not fill shape " + to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

std::span<float> Tensor::mutable_data() {
  ++impl_->version;
  return impl_->value;
}

float Tensor::item() const {
  if (impl_->value.size() != 1) {
    throw ShapeError("Tensor::item: tensor of shape " + to_string(shape()) + " is not a scalar");
  }
  return impl_->value[0];
}

std::span<float> Tensor::grad() { return grad_buffer(*impl_); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

// --- Tape ------------------------------------------------------------------------

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward) {
  if (consumed_) throw TapeError("Tape::record: tape already consumed by backward(); call reset() first");
  Entry e;
  e.inputs.reserve(inputs.size());
  e.input_versions.reserve(inputs.size());
  for (auto& in : inputs) {
    e.input_versions.push_back(in.version());
    e.inputs.push_back(in.impl());
  }
  e.output = output.impl();
  e.backward = std::move(backward);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward: loss must be a scalar, got shape " +
                    (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (consumed_) throw TapeError("backward: called twice on the same tape without reset()");
  auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                         [&](const Entry& e) { return e.output == loss.impl(); });
  if (it == entries_.rend()) throw TapeError("backward: loss was not produced on this tape (stale tape?)");

  for (auto e = it; e != entries_.rend(); ++e) {
    for (std::size_t i = 0; i < e->inputs.size(); ++i) {
      if (e->inputs[i]->version != e->input_versions[i]) {
        throw TapeError("backward: an op input was modified after it was recorded");
      }
    }
  }

  consumed_ = true;
  grad_buffer(*loss.impl())[0] += 1.0f;
  for (auto e = it; e != entries_.rend(); ++e) {
    if (e->output->grad.empty()) continue;  // not reachable from the loss
    e->backward();
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

NameScope::NameScope(std::string name) { g_scope_stack.push_back(std::move(name)); }
NameScope::~NameScope() { g_scope_stack.pop_back(); }

std::string current_scope() {
  std::string s;
  for (const auto& part : g_scope_stack) {
    if (!s.empty()) s += ".";
    s += part;
  }
  return s.empty() ? "<root>" : s;
}

Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (active_tape() != nullptr) {
    out.impl_->requires_grad =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  }
  return out;
}

void finish_op(const char* op, std::vector<Tensor> inputs, const Tensor& output, Tape::BackwardFn backward) {
  for (float v : output.data()) {
    if (!std::isfinite(v)) throw NumericError(current_scope(), std::string("non-finite output of ") + op);
  }
  if (output.requires_grad()) active_tape()->record(std::move(inputs), output, std::move(backward));
}

// --- ops -----------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<float> out(static_cast<std::size_t>(m * n));
  kernels::gemm(false, false, m, n, k, 1.0f, a.data().data(), k, b.data().data(), n, 0.0f, out.data(), n);
  Tensor c = make_result({m, n}, std::move(out), {a, b});
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  finish_op("matmul", {a, b}, c, [ai, bi, ci, m, k, n] {
    const float* dc = ci->grad.data();
    if (ai->requires_grad) {  // dA = dC B^T
      kernels::gemm(false, true, m, k, n, 1.0f, dc, n, bi->value.data(), n, 1.0f, grad_buffer(*ai).data(), k);
    }
    if (bi->requires_grad) {  // dB = A^T dC
      kernels::gemm(true, false, k, n, m, 1.0f, ai->value.data(), k, dc, n, 1.0f, grad_buffer(*bi).data(), n);
    }
  });
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt", "a");
  require_rank(b, 2, "matmul_nt", "b");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()) + "^T");
  }
  std::vector<float> out(static_cast<std::size_t>(m * n));
  kernels::gemm(false, true, m, n, k, 1.0f, a.data().data(), k, b.data().data(), k, 0.0f, out.data(), n);
  Tensor c = make_result({m, n}, std::move(out), {a, b});
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  finish_op("matmul_nt", {a, b}, c, [ai, bi, ci, m, k, n] {
    const float* dc = ci->grad.data();
    if (ai->requires_grad) {  // dA = dC B
      kernels::gemm(false, false, m, k, n, 1.0f, dc, n, bi->value.data(), k, 1.0f, grad_buffer(*ai).data(), k);
    }
    if (bi->requires_grad) {  // dB = dC^T A
      kernels::gemm(true, false, n, k, m, 1.0f, dc, n, ai->value.data(), k, 1.0f, grad_buffer(*bi).data(), k);
    }
  });
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tensor c = make_result(a.shape(), std::move(out), {a, b});
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  finish_op("add", {a, b}, c, [ai, bi, ci] {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto& g = grad_buffer(*t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ci->grad[i];
    }
  });
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tensor c = make_result(a.shape(), std::move(out), {a, b});
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  finish_op("mul", {a, b}, c, [ai, bi, ci] {
    if (ai->requires_grad) {
      auto& g = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ci->grad[i] * bi->value[i];
    }
    if (bi->requires_grad) {
      auto& g = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ci->grad[i] * ai->value[i];
    }
  });
  return c;
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (float& v : out) v *= s;
  Tensor c = make_result(a.shape(), std::move(out), {a});
  auto ai = a.impl(), ci = c.impl();
  finish_op("scale", {a}, c, [ai, ci, s] {
    auto& g = grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * ci->grad[i];
  });
  return c;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor c = make_result({}, {static_cast<float>(acc)}, {a});
  auto ai = a.impl(), ci = c.impl();
  finish_op("sum", {a}, c, [ai, ci] {
    auto& g = grad_buffer(*ai);
    const float d = ci->grad[0];
    for (float& v : g) v += d;
  });
  return c;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor c = make_result(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()), {a});
  auto ai = a.impl(), ci = c.impl();
  finish_op("reshape", {a}, c, [ai, ci] {
    auto& g = grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += ci->grad[i];
  });
  return c;
}

Tensor gelu(const Tensor& a) {
  constexpr float kAlpha = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kCubic = 0.044715f;
  auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float v = x[i];
    out[i] = 0.5f * v * (1.0f + std::tanh(kAlpha * (v + kCubic * v * v * v)));
  }
  Tensor c = make_result(a.shape(), std::move(out), {a});
  auto ai = a.impl(), ci = c.impl();
  finish_op("gelu", {a}, c, [ai, ci] {
    auto& g = grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float v = ai->value[i];
      const float t = std::tanh(kAlpha * (v + kCubic * v * v * v));
      const float dt = (1.0f - t * t) * kAlpha * (1.0f + 3.0f * kCubic * v * v);
      g[i] += ci->grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
    }
  });
  return c;
}

Tensor softmax_lastdim(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax_lastdim: scalar input");
  const auto d = last_dim(a);
  const auto rows = a.numel() / d;
  auto x = a.data();
  std::vector<float> out(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = x.data() + r * d;
    float* yr = out.data() + r * d;
    const float mx = *std::max_element(xr, xr + d);
    float total = 0.0f;
    for (std::int64_t j = 0; j < d; ++j) total += (yr[j] = std::exp(xr[j] - mx));
    const float inv = 1.0f / total;
    for (std::int64_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  Tensor c = make_result(a.shape(), std::move(out), {a});
  auto ai = a.impl(), ci = c.impl();
  finish_op("softmax_lastdim", {a}, c, [ai, ci, rows, d] {
    auto& g = grad_buffer(*ai);
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* y = ci->value.data() + r * d;
      const float* dy = ci->grad.data() + r * d;
      float dot = 0.0f;
      for (std::int64_t j = 0; j < d; ++j) dot += y[j] * dy[j];
      for (std::int64_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
  return c;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() == 0) throw ShapeError("layernorm: scalar input");
  const auto d = last_dim(x);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(d) + "], got " +
                     to_string(gamma.shape()) + " and " + to_string(beta.shape()));
  }
  const auto rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<float> out(xv.size());
  // Saved per row: normalized values and reciprocal standard deviation.
  auto xhat = std::make_shared<std::vector<float>>(xv.size());
  auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * d;
    float mean = 0.0f;
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<float>(d);
    const float rs = 1.0f / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const float h = (xr[j] - mean) * rs;
      (*xhat)[static_cast<std::size_t>(r * d + j)] = h;
      out[static_cast<std::size_t>(r * d + j)] = h * gv[j] + bv[j];
    }
  }
  Tensor c = make_result(x.shape(), std::move(out), {x, gamma, beta});
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), ci = c.impl();
  finish_op("layernorm", {x, gamma, beta}, c, [xi, gi, bi, ci, xhat, rstd, rows, d] {
    const float* dy = ci->grad.data();
    if (gi->requires_grad || bi->requires_grad) {
      auto& dg = grad_buffer(*gi);
      auto& db = grad_buffer(*bi);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < d; ++j) {
          dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
          db[j] += dy[r * d + j];
        }
      }
    }
    if (xi->requires_grad) {
      auto& dx = grad_buffer(*xi);
      const float* g = gi->value.data();
      const float inv_d = 1.0f / static_cast<float>(d);
      for (std::int64_t r = 0; r < rows; ++r) {
        float mean_dh = 0.0f, mean_dh_h = 0.0f;
        for (std::int64_t j = 0; j < d; ++j) {
          const float dh = dy[r * d + j] * g[j];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[r * d + j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        const float rs = (*rstd)[r];
        for (std::int64_t j = 0; j < d; ++j) {
          const float dh = dy[r * d + j] * g[j];
          dx[r * d + j] += rs * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
        }
      }
    }
  });
  return c;
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const std::int32_t> targets) {
  require_rank(logits, 2, "cross_entropy_mean", "logits");
  const auto n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  auto x = logits.data();
  auto probs = std::make_shared<std::vector<float>>(x.size());
  auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
  double total = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= classes) {
      throw ShapeError("cross_entropy_mean: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    const float* xr = x.data() + r * classes;
    float* pr = probs->data() + r * classes;
    const float mx = *std::max_element(xr, xr + classes);
    double z = 0.0;
    for (std::int64_t j = 0; j < classes; ++j) {
      pr[j] = std::exp(xr[j] - mx);
      z += pr[j];
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::int64_t j = 0; j < classes; ++j) pr[j] *= inv;
    total += std::log(z) + mx - xr[t];
  }
  Tensor c = make_result({}, {static_cast<float>(total / static_cast<double>(n))}, {logits});
  auto li = logits.impl(), ci = c.impl();
  finish_op("cross_entropy_mean", {logits}, c, [li, ci, probs, tgt, n, classes] {
    auto& g = grad_buffer(*li);
    const float s = ci->grad[0] / static_cast<float>(n);
    for (std::int64_t r = 0; r < n; ++r) {
      const float* pr = probs->data() + r * classes;
      float* gr = g.data() + r * classes;
      for (std::int64_t j = 0; j < classes; ++j) gr[j] += s * pr[j];
      gr[(*tgt)[static_cast<std::size_t>(r)]] -= s;
    }
  });
  return c;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding", "table");
  const auto vocab = table.dim(0), d = table.dim(1);
  const auto n = static_cast<std::int64_t>(ids.size());
  std::vector<float> out(static_cast<std::size_t>(n * d));
  auto tv = table.data();
  for (std::int64_t r = 0; r < n; ++r) {
    const auto id = ids[static_cast<std::size_t>(r)];
    if (id < 0 || id >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data() + id * d, d, out.data() + r * d);
  }
  Tensor c = make_result({n, d}, std::move(out), {table});
  auto ti = table.impl(), ci = c.impl();
  auto saved = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  finish_op("embedding", {table}, c, [ti, ci, saved, d] {
    auto& g = grad_buffer(*ti);
    for (std::size_t r = 0; r < saved->size(); ++r) {
      float* gr = g.data() + (*saved)[r] * d;
      const float* dy = ci->grad.data() + static_cast<std::int64_t>(r) * d;
      for (std::int64_t j = 0; j < d; ++j) gr[j] += dy[j];
    }
  });
  return c;
}

Tensor causal_attention(const Tensor& qkv, std::int64_t batch, std::int64_t seq, std::int64_t heads) {
  require_rank(qkv, 2, "causal_attention", "qkv");
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0) {
    throw ShapeError("causal_attention: qkv " + to_string(qkv.shape()) + " does not match batch " +
                     std::to_string(batch) + " x seq " + std::to_string(seq) + " x 3d");
  }
  const auto d = qkv.dim(1) / 3;
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const auto hd = d / heads;
  const auto ld = 3 * d;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
  const auto tt = seq * seq;

  // probs[(b*heads + h)] is a seq x seq row-stochastic matrix, zero above the diagonal.
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(batch * heads * tt));
  std::vector<float> out(static_cast<std::size_t>(batch * seq * d));
  const float* base = qkv.data().data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t h = 0; h < heads; ++h) {
      const float* q = base + b * seq * ld + h * hd;
      const float* k = q + d;
      const float* v = q + 2 * d;
      float* p = probs->data() + (b * heads + h) * tt;
      kernels::gemm(false, true, seq, seq, hd, inv_sqrt, q, ld, k, ld, 0.0f, p, seq);
      for (std::int64_t i = 0; i < seq; ++i) {
        float* row = p + i * seq;
        const float mx = *std::max_element(row, row + i + 1);
        float total = 0.0f;
        for (std::int64_t j = 0; j <= i; ++j) total += (row[j] = std::exp(row[j] - mx));
        const float inv = 1.0f / total;
        for (std::int64_t j = 0; j <= i; ++j) row[j] *= inv;
        std::fill(row + i + 1, row + seq, 0.0f);
      }
      kernels::gemm(false, false, seq, hd, seq, 1.0f, p, seq, v, ld, 0.0f, out.data() + b * seq * d + h * hd, d);
    }
  }

  Tensor c = make_result({batch * seq, d}, std::move(out), {qkv});
  auto qi = qkv.impl(), ci = c.impl();
  finish_op("causal_attention", {qkv}, c, [qi, ci, probs, batch, seq, heads, d, hd, ld, inv_sqrt, tt] {
    auto& g = grad_buffer(*qi);
    std::vector<float> dp(static_cast<std::size_t>(tt));
    const float* base = qi->value.data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t h = 0; h < heads; ++h) {
        const std::int64_t off = b * seq * ld + h * hd;
        const float* q = base + off;
        const float* k = q + d;
        const float* v = q + 2 * d;
        float* dq = g.data() + off;
        float* dk = dq + d;
        float* dv = dq + 2 * d;
        const float* p = probs->data() + (b * heads + h) * tt;
        const float* dout = ci->grad.data() + b * seq * d + h * hd;
        // dP = dO V^T, dV += P^T dO
        kernels::gemm(false, true, seq, seq, hd, 1.0f, dout, d, v, ld, 0.0f, dp.data(), seq);
        kernels::gemm(true, false, seq, hd, seq, 1.0f, p, seq, dout, d, 1.0f, dv, ld);
        // dS = P * (dP - rowsum(P * dP)), scaled by 1/sqrt(hd)
        for (std::int64_t i = 0; i < seq; ++i) {
          const float* pr = p + i * seq;
          float* dr = dp.data() + i * seq;
          float dot = 0.0f;
          for (std::int64_t j = 0; j <= i; ++j) dot += pr[j] * dr[j];
          for (std::int64_t j = 0; j <= i; ++j) dr[j] = inv_sqrt * pr[j] * (dr[j] - dot);
          std::fill(dr + i + 1, dr + seq, 0.0f);
        }
        // dQ += dS K, dK += dS^T Q
        kernels::gemm(false, false, seq, hd, seq, 1.0f, dp.data(), seq, k, ld, 1.0f, dq, ld);
        kernels::gemm(true, false, seq, hd, seq, 1.0f, dp.data(), seq, q, ld, 1.0f, dk, ld);
      }
    }
  });
  return c;
}

}  // namespace spectral

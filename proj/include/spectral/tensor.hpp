#pragma once

// Minimal reverse-mode automatic differentiation over dense float32 tensors.
//
// Ops record themselves on the thread's active Tape (see TapeScope). Without an
// active tape every op runs forward-only, which is how evaluation is done.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spectral {

using Shape = std::vector<std::int64_t>;

std::string to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a forward output contains NaN or Inf. `where` names the
/// enclosing NameScope stack (e.g. "block2.mlp1") and the op.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string where, const std::string& what)
      : std::runtime_error(what + " in " + where), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t version = 0;  // bumped by every mutable access to value
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }

  std::span<const float> data() const { return impl_->value; }
  /// Mutable view of the values. Invalidates any recorded use of this tensor.
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zero-filled on first access.
  std::span<float> grad();
  std::span<const float> grad() const { return impl_->grad; }
  void zero_grad();

  std::uint64_t version() const { return impl_->version; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<float>, std::initializer_list<Tensor>);
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of executed ops. backward() replays it in exact reverse.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward);

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf reached.
  /// Throws TapeError on a non-scalar loss, a loss not produced on this tape,
  /// an input mutated after use, or a second call without reset().
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<std::uint64_t> input_versions;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape of the calling thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (evaluation mode) for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Pushes a label used in NumericError diagnostics.
class NameScope {
 public:
  explicit NameScope(std::string name);
  ~NameScope();
  NameScope(const NameScope&) = delete;
  NameScope& operator=(const NameScope&) = delete;
};

std::string current_scope();

// --- extension point for ops defined outside this module --------------------

/// Creates an op output. It requires grad iff a tape is active and any input
/// requires grad.
Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs);

/// Records `backward` for `output` if it requires grad, after checking the
/// forward values are finite.
void finish_op(const char* op, std::vector<Tensor> inputs, const Tensor& output, Tape::BackwardFn backward);

// --- ops ---------------------------------------------------------------------

/// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T, i.e. a linear layer y = x W^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// tanh approximation of GELU.
Tensor gelu(const Tensor& a);
/// Max-subtracted softmax over the last axis.
Tensor softmax_lastdim(const Tensor& a);
/// Normalizes the last axis, then applies gamma and beta (both [d]).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
/// Mean over rows of -log softmax(logits)[target]. logits is [N x C].
Tensor cross_entropy_mean(const Tensor& logits, std::span<const std::int32_t> targets);

/// Gathers rows of table[V x d] by id; result [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Multi-head causal self-attention. qkv is [B*T x 3d] laid out as
/// [queries | keys | values]; the result is [B*T x d].
Tensor causal_attention(const Tensor& qkv, std::int64_t batch, std::int64_t seq, std::int64_t heads);

}  // namespace spectral

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hvfi {

/// Raised when operand shapes are incompatible. The message carries both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised in finite-check mode (HVFI_CHECK_FINITE=1) when an op emits NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

namespace detail {

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  T* ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Dense NCHW array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Values are
/// treated as immutable once a tensor has been consumed by an op; only leaf
/// tensors (parameters, inputs) are written through mutable_data().
template <class T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->shape.numel(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return {impl_->ensure_grad(), impl_->data.size()}; }
  void zero_grad();

  /// Deep copy of the values with no gradient state.
  Tensor detach() const;

  template <class U>
  Tensor<U> cast() const;

  const std::shared_ptr<Impl>& ptr() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

/// Define-by-run record of differentiable ops.
///
/// Constructing a Tape installs it as the current tape of the calling thread
/// (the previous one is restored on destruction). Ops whose inputs require a
/// gradient append a node while a tape is active; with no tape, ops run
/// forward only.
template <class T>
class Tape {
 public:
  using Impl = detail::TensorImpl<T>;
  using BackwardFn = std::function<void(const T* grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(std::shared_ptr<Impl> output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded node once in reverse
  /// order. The tape is empty afterwards.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<Impl> output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  static thread_local Tape* current_;

  template <class U>
  friend class NoGradScope;
};

/// Detaches the calling thread from its current tape for the scope's lifetime,
/// so ops run forward only.
template <class T>
class NoGradScope {
 public:
  NoGradScope() : saved_(Tape<T>::current_) { Tape<T>::current_ = nullptr; }
  ~NoGradScope() { Tape<T>::current_ = saved_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* saved_;
};

template <class T>
thread_local Tape<T>* Tape<T>::current_ = nullptr;

template <class T>
template <class U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> values(impl_->data.begin(), impl_->data.end());
  return Tensor<U>(impl_->shape, std::move(values));
}

/// Backward through the current thread's tape.
template <class T>
void backward(const Tensor<T>& loss);

namespace detail {

bool finite_checks_enabled();

template <class T>
void check_finite(const Tensor<T>& out, const char* op);

/// True when the op should be recorded: a tape is active and an input needs grad.
template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs);

/// Returns the gradient buffer of an input, or nullptr if it takes no gradient.
template <class T>
T* grad_sink(const Tensor<T>& t) {
  return t.defined() && t.requires_grad() ? t.ptr()->ensure_grad() : nullptr;
}

/// Records `out` on the current tape when `record` is set, then runs the
/// finite check. Every op funnels its result through here.
template <class T>
Tensor<T> finish(Tensor<T> out, bool record, typename Tape<T>::BackwardFn backward,
                 const char* op) {
  if (record) {
    out.set_requires_grad(true);
    Tape<T>::current()->record(out.ptr(), std::move(backward));
  }
  check_finite(out, op);
  return out;
}

}  // namespace detail

}  // namespace hvfi

#include "hvfi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace hvfi {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("negative tensor dimension " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
  return impl_->data[0];
}

template <class T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = impl_->shape;
  return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <class T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <class T>
Tape<T>::Tape() : previous_(current_) {
  current_ = this;
}

template <class T>
Tape<T>::~Tape() {
  current_ = previous_;
}

template <class T>
void Tape<T>::record(std::shared_ptr<Impl> output, BackwardFn backward) {
  nodes_.push_back(Node{std::move(output), std::move(backward)});
}

template <class T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a loss that does not depend on any parameter");
  }
  loss.ptr()->ensure_grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad.data());
  }
  nodes_.clear();
}

template <class T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::current();
  if (tape == nullptr) throw std::logic_error("backward() called with no active tape");
  tape->backward(loss);
}

namespace detail {

bool finite_checks_enabled() {
  static const bool enabled = [] {
    const char* v = std::getenv("HVFI_CHECK_FINITE");
    return v != nullptr && std::strcmp(v, "1") == 0;
  }();
  return enabled;
}

template <class T>
void check_finite(const Tensor<T>& out, const char* op) {
  if (!finite_checks_enabled()) return;
  for (T v : out.data()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op);
    }
  }
}

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);
template bool any_requires_grad<float>(std::initializer_list<const Tensor<float>*>);
template bool any_requires_grad<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace hvfi

#include "apvt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <utility>

namespace apvt {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::TensorNode<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  node_->data.assign(apvt::numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::TensorNode<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (apvt::numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
detail::TensorNode<T>& Tensor<T>::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = node().shape;
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return node().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node().requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  auto& n = node();
  if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
  return n.grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& n = node();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node().shape, node().data);
}

template <typename T>
thread_local Tape<T>* Tape<T>::current_ = nullptr;

template <typename T>
Tape<T>::Tape() : previous_(current_) {
  current_ = this;
}

template <typename T>
Tape<T>::~Tape() {
  if (current_ == this) current_ = previous_;
}

template <typename T>
void Tape<T>::record(std::function<void()> backward_fn) {
  if (consumed_) throw std::logic_error("recording onto a tape that already ran backward");
  entries_.push_back(std::move(backward_fn));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw std::logic_error("backward already ran on this tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss");
  }
  if (!loss.requires_grad()) throw std::logic_error("loss does not depend on any tracked tensor");
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("backward on a non-finite loss");
  consumed_ = true;
  if (current_ == this) current_ = previous_;

  auto seed = const_cast<Tensor<T>&>(loss).mutable_grad();
  seed[0] = T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
  entries_.shrink_to_fit();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace apvt

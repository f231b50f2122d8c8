#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace apvt {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A model, recipe or run configuration violates its invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf surfaced in a tensor, a loss or a gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Finite-value guard run after every primitive. Defaults to on in debug
// builds and off when NDEBUG is defined.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor. Copies are shallow handles onto the same storage
/// (so that the tape can refer back to it); use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  T& operator[](std::size_t i) { return node().data[i]; }
  T operator[](std::size_t i) const { return node().data[i]; }
  T item() const;

  bool requires_grad() const { return defined() && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return defined() && !node_->grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  // Allocates a zero gradient on first use.
  std::span<T> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;  // deep copy of data, no gradient state
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  detail::TensorNode<T>& node() const;
  std::shared_ptr<detail::TensorNode<T>> node_;
};

/// Ordered record of differentiable primitives executed while the tape is
/// active on the current thread. Construction activates it (nesting restores
/// the previous tape on destruction). backward() may run once.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return current_; }

  void record(std::function<void()> backward_fn);
  void backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  std::vector<std::function<void()>> entries_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
  static thread_local Tape* current_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace apvt

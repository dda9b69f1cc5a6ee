#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace minmt {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Every op output is scanned for NaN/Inf unless disabled here or compiled
// with MINMT_DISABLE_FINITE_CHECKS.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

bool grad_mode_enabled();

// Suspends graph recording on the current thread (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows here
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<T>& ensure_grad();
};

/// Dense row-major tensor handle with reverse-mode autodiff.
///
/// Copies share the underlying node (handle semantics, like the parameter
/// tensors of most frameworks). Use clone() for a detached deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node);

  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const;
  // Leading extent for 2-D use; 1 for scalars.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t row, std::size_t col) const;
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Back-propagates from this scalar. Leaf gradients accumulate across
  /// calls; intermediate gradients are reset at the start of each call.
  void backward() const;

  Tensor clone() const;
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

void check_finite_or_throw(const char* op, const float* data, std::size_t n);
void check_finite_or_throw(const char* op, const double* data, std::size_t n);

// Wraps an op output. Records the backward rule only when grad mode is on and
// some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace minmt

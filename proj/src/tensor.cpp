#include "minmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace minmt {

namespace {

bool g_finite_checks = true;
thread_local bool t_grad_mode = true;

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

bool grad_mode_enabled() { return t_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }

template <typename T>
std::vector<T>& Node<T>::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  return grad;
}

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, T{0}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, value, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return rank() == 0 ? 1 : node_->shape[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return rank() == 0 ? 1 : size() / node_->shape[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw std::out_of_range("tensor index out of range");
  return node_->data[row * cols() + col];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T{0});
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_to_string(shape()));
  }
  if (!node_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS; graphs from deep decoders overflow recursion.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T{0});
  }
  node_->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor copy(node_->shape, node_->data, node_->requires_grad);
  copy.node_->grad = node_->grad;
  return copy;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

namespace detail {

template <typename F>
static void check_finite_impl(const char* op, const F* data, std::size_t n) {
#ifndef MINMT_DISABLE_FINITE_CHECKS
  if (!g_finite_checks) return;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at element " + std::to_string(i));
    }
  }
#else
  (void)op;
  (void)data;
  (void)n;
#endif
}

void check_finite_or_throw(const char* op, const float* data, std::size_t n) { check_finite_impl(op, data, n); }
void check_finite_or_throw(const char* op, const double* data, std::size_t n) { check_finite_impl(op, data, n); }

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::vector<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite_or_throw(op, data.data(), data.size());
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (grad_mode_enabled()) {
    for (const Tensor<T>* input : inputs) track = track || input->requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const Tensor<T>* input : inputs) node->inputs.push_back(input->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(const char*, Shape, std::vector<float>, std::vector<const Tensor<float>*>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>, std::vector<const Tensor<double>*>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace minmt

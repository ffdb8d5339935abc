#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hstr {

/// Batch x channels x height x width.
struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense 4-D array that participates in reverse-mode differentiation.
///
/// Copies are shallow: two handles to the same array share data and gradient.
/// Operations record their inputs only when grad mode is enabled and at least
/// one input requires a gradient. The network runs on the float instantiation;
/// the double one exists for finite-difference verification of the kernels.
template <typename T>
class BasicDiffArray {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  BasicDiffArray() = default;
  explicit BasicDiffArray(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static BasicDiffArray zeros(Shape shape, bool requires_grad = false);
  static BasicDiffArray full(Shape shape, T value, bool requires_grad = false);
  static BasicDiffArray from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& at(int64_t n, int64_t c, int64_t y, int64_t x) { return node_->data[index(n, c, y, x)]; }
  T at(int64_t n, int64_t c, int64_t y, int64_t x) const { return node_->data[index(n, c, y, x)]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient view; materialized as zeros on first access.
  std::span<T> grad() { return node_->grad_buffer(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  /// Backpropagates from this scalar. Frees the recorded graph afterwards.
  void backward();

  /// New leaf holding a copy of the data, detached from any graph.
  BasicDiffArray detach() const;

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  size_t index(int64_t n, int64_t c, int64_t y, int64_t x) const {
    const Shape& s = node_->shape;
    return static_cast<size_t>(((n * s.c + c) * s.h + y) * s.w + x);
  }

  std::shared_ptr<NodeType> node_;
};

using DiffArray = BasicDiffArray<float>;
using DiffArray64 = BasicDiffArray<double>;

extern template class BasicDiffArray<float>;
extern template class BasicDiffArray<double>;

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Allocates a zero-filled op result. The backward function is kept only if
/// some input requires a gradient and grad mode is on.
template <typename T>
BasicDiffArray<T> make_result(Shape shape, std::vector<std::shared_ptr<Node<T>>> inputs,
                              std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

template <typename T>
void require_same_shape(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace hstr

#include "hstr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace hstr {

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool enabled) { grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

template <typename T>
BasicDiffArray<T> BasicDiffArray<T>::zeros(Shape shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
BasicDiffArray<T> BasicDiffArray<T>::full(Shape shape, T value, bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
    throw ShapeError("negative dimension in shape " + shape.str());
  return from(shape, std::vector<T>(static_cast<size_t>(shape.numel()), value), requires_grad);
}

template <typename T>
BasicDiffArray<T> BasicDiffArray<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape.numel())
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " + shape.str());
  auto node = std::make_shared<NodeType>();
  node->shape = shape;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return BasicDiffArray(std::move(node));
}

template <typename T>
T BasicDiffArray<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar array " + shape().str());
  return node_->data[0];
}

template <typename T>
void BasicDiffArray<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicDiffArray<T> BasicDiffArray<T>::detach() const {
  return from(node_->shape, node_->data);
}

template <typename T>
void BasicDiffArray<T>::backward() {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape().str());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<NodeType*> order;
  std::unordered_set<NodeType*> visited;
  std::vector<std::pair<NodeType*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeType* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeType* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Release interior activations; leaves keep their gradients.
  for (NodeType* node : order) {
    if (!node->backward_fn) continue;
    node->backward_fn = nullptr;
    node->inputs.clear();
    if (node != node_.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

namespace detail {

template <typename T>
BasicDiffArray<T> make_result(Shape shape, std::vector<std::shared_ptr<Node<T>>> inputs,
                              std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data.assign(static_cast<size_t>(shape.numel()), T(0));
  bool needs = GradMode::enabled() && std::any_of(inputs.begin(), inputs.end(), [](const auto& in) {
                 return in && in->requires_grad;
               });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return BasicDiffArray<T>(std::move(node));
}

template BasicDiffArray<float> make_result(Shape, std::vector<std::shared_ptr<Node<float>>>,
                                           std::function<void(Node<float>&)>);
template BasicDiffArray<double> make_result(Shape, std::vector<std::shared_ptr<Node<double>>>,
                                            std::function<void(Node<double>&)>);

}  // namespace detail

template class BasicDiffArray<float>;
template class BasicDiffArray<double>;

}  // namespace hstr

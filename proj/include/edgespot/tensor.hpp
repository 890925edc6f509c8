#pragma once

// Dense n-dimensional tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle onto a graph node. Operations that touch
// at least one tensor with requires_grad record a backward closure on their
// output; backward() walks the recorded graph once in reverse topological
// order and then releases it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace edgespot {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorized kernels split work into scalar head,
/// packets and tail according to the address, which changes rounding; a fixed
/// base alignment makes results depend on shapes only.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}
  Tensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data), requires_grad) {}
  Tensor(Shape shape, Buffer<T> data, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Buffer<T> d(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, Buffer<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<const T> grad() const { return node_->grad; }
  const Buffer<T>& values() const { return node_->data; }
  T at(std::size_t i) const { return node_->data.at(i); }

  /// Writable view onto a leaf's storage (parameters, optimizer updates).
  std::span<T> mutable_data() {
    if (node_->backward) throw std::logic_error("mutable_data() on a non-leaf tensor");
    return node_->data;
  }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

  const NodePtr& node() const { return node_; }

  /// Back-propagates from a single-element tensor. Gradients accumulate into
  /// every requires_grad leaf; the recorded graph is released afterwards.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a single-element tensor");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    for (Node<T>* n : order) {
      if (n->backward) {
        n->backward = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

 private:
  NodePtr node_;
};

/// Builds an op output. The backward closure is recorded only when grad mode
/// is on and some input participates in the tape; it receives the output node
/// and must accumulate into its parents' grad buffers.
template <class T, class Backward>
Tensor<T> make_op(Shape shape, Buffer<T> data, std::initializer_list<const Tensor<T>*> inputs,
                  Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const Tensor<T>* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const Tensor<T>* t : inputs) n.parents.push_back(t->node());
  n.backward = std::forward<Backward>(backward);
  return out;
}

template <class T>
Tensor<T> make_op_list(Shape shape, Buffer<T> data, const std::vector<Tensor<T>>& inputs,
                       std::function<void(Node<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

/// Converts between precisions; the result is a fresh leaf.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x, bool requires_grad = false) {
  Buffer<To> d(x.data().begin(), x.data().end());
  return Tensor<To>(x.shape(), std::move(d), requires_grad);
}

}  // namespace edgespot

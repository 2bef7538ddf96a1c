#pragma once

// Dense tensor with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle to a shared node. Ops build new nodes that keep
// their parents alive; calling backward() on a scalar walks every reachable
// node in reverse construction order and accumulates gradients into leaves.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace eegatt {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when an op produces NaN/Inf from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents.
  std::function<void(TensorNode&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_sequence();
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_sequence();
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad_buffer(); }
  std::span<const T> grad() const { return node_->grad_buffer(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  // Same values, no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
void check_finite(std::string_view op, const std::vector<T>& values) {
  // All-ones exponent marks inf or NaN; the integer reduction vectorizes.
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  constexpr Bits exp_mask = sizeof(T) == 8 ? Bits(0x7ff0000000000000ULL) : Bits(0x7f800000U);
  Bits low = exp_mask;  // reaches 0 only if some value has every exponent bit set
  const T* p = values.data();
  const std::size_t n = values.size();
  for (std::size_t i = 0; i < n; ++i) low = std::min(low, Bits(~std::bit_cast<Bits>(p[i]) & exp_mask));
  if (low == 0) throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
}

// Builds the result node of an op and wires it into the tape when any input
// requires a gradient.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(TensorNode<T>&)> backward_fn) {
  check_finite(op, data);
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || (in && in->defined() && in->requires_grad());
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.op = std::string(op);
  for (const Tensor<T>* in : inputs) {
    if (in && in->defined()) node.parents.push_back(in->node());
  }
  node.backward_fn = std::move(backward_fn);
  return out;
}

// Gradient buffer of a parent, or nullptr if it does not take gradients.
template <typename T>
T* grad_of(const std::shared_ptr<TensorNode<T>>& node) {
  if (!node || !node->requires_grad) return nullptr;
  return node->grad_buffer().data();
}

}  // namespace detail

template <typename T>
void Tensor<T>::backward() const {
  if (!node_) throw GraphError("backward() on undefined tensor");
  if (size() != 1) throw GraphError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (!node_->requires_grad || !node_->backward_fn) {
    throw GraphError("backward() called on a tensor without recorded graph");
  }

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  node_->grad_buffer()[0] = T(1);
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (Node* n : order) {
    if (n->backward_fn) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto px = x.node();
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {&x}, [px](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.size();
  std::vector<T> out(n);
  const T* as = a.values().data();
  const T* bs = b.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = as[i] + bs[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [pa, pb, n](TensorNode<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = detail::grad_of(pa)) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    if (T* gb = detail::grad_of(pb)) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [pa, pb](TensorNode<T>& self) {
    const auto& g = self.grad;
    if (T* ga = detail::grad_of(pa)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = detail::grad_of(pb)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [pa, pb](TensorNode<T>& self) {
    const auto& g = self.grad;
    if (T* ga = detail::grad_of(pa)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i];
    if (T* gb = detail::grad_of(pb)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->data[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  auto px = x.node();
  return detail::make_result<T>("scale", x.shape(), std::move(out), {&x}, [px, factor](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
  auto px = x.node();
  return detail::make_result<T>("add_scalar", x.shape(), std::move(out), {&x}, [px](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (const T& v : x.values()) s += v;
  auto px = x.node();
  return detail::make_result<T>("sum", Shape{1}, std::vector<T>{s}, {&x}, [px](TensorNode<T>& self) {
    if (T* g = detail::grad_of(px)) {
      const T go = self.grad[0];
      for (std::size_t i = 0; i < px->data.size(); ++i) g[i] += go;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

}  // namespace eegatt

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "flare/errors.hpp"

namespace flare {

// Process-wide accounting of live tensor storage (values + grads), used by
// the profiling reports. Single-threaded training keeps this exact.
struct MemoryStats {
  static std::atomic<long long>& live_bytes() {
    static std::atomic<long long> v{0};
    return v;
  }
  static std::atomic<long long>& peak_bytes() {
    static std::atomic<long long> v{0};
    return v;
  }
  static void add(long long n) {
    long long cur = live_bytes().fetch_add(n) + n;
    long long peak = peak_bytes().load();
    while (cur > peak && !peak_bytes().compare_exchange_weak(peak, cur)) {
    }
  }
  static void sub(long long n) { live_bytes().fetch_sub(n); }
  static void reset_peak() { peak_bytes().store(live_bytes().load()); }
};

namespace detail {

inline uint64_t next_node_id() {
  thread_local uint64_t counter = 0;
  return ++counter;
}

// One node of the define-by-run graph. Creation order (id) is a valid
// topological order, so backward simply walks ids in reverse.
template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  TensorNode(std::vector<int> s, std::vector<T> v, bool rg)
      : shape(std::move(s)), value(std::move(v)), requires_grad(rg),
        id(next_node_id()) {
    MemoryStats::add(static_cast<long long>(value.size() * sizeof(T)));
  }

  TensorNode(const TensorNode&) = delete;
  TensorNode& operator=(const TensorNode&) = delete;

  ~TensorNode() {
    MemoryStats::sub(
        static_cast<long long>((value.size() + grad.size()) * sizeof(T)));
  }

  void ensure_grad() {
    if (grad.empty()) {
      grad.assign(value.size(), T(0));
      MemoryStats::add(static_cast<long long>(grad.size() * sizeof(T)));
    }
  }
};

inline int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace detail

// Value handle over a graph node. Copies share the node; fresh results come
// from the free-function ops. Leaf tensors with requires_grad=true are the
// trainable parameters; backward() accumulates into their .grad().
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor from_data(std::vector<int> shape, std::vector<T> data,
                          bool requires_grad = false) {
    int n = detail::shape_numel(shape);
    if (static_cast<size_t>(n) != data.size())
      throw DimensionError("from_data: shape " + shape_string(shape) +
                           " wants " + std::to_string(n) + " values, got " +
                           std::to_string(data.size()));
    if (shape.empty())
      throw DimensionError("from_data: empty shape");
    return Tensor(std::make_shared<Node>(std::move(shape), std::move(data),
                                         requires_grad));
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    int n = detail::shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(std::vector<int> shape, T v, bool requires_grad = false) {
    int n = detail::shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return check().shape; }
  int numel() const { return static_cast<int>(check().value.size()); }
  int dim(int axis) const { return check().shape.at(axis); }
  uint64_t id() const { return check().id; }
  bool requires_grad() const { return check().requires_grad; }
  void set_requires_grad(bool rg) { check().requires_grad = rg; }

  const std::vector<T>& data() const { return check().value; }
  // In-place mutation is reserved for leaves (init, optimizer updates).
  std::vector<T>& data_mut() { return check().value; }

  const std::vector<T>& grad() const {
    check().ensure_grad();
    return node_->grad;
  }
  std::vector<T>& grad_mut() {
    check().ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    auto& g = check().grad;
    std::fill(g.begin(), g.end(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ContractError("item: tensor has shape " +
                          shape_string(shape()) + ", expected one element");
    return check().value[0];
  }

  T at(std::initializer_list<int> idx) const {
    const auto& sh = shape();
    if (idx.size() != sh.size())
      throw IndexError("at: rank mismatch");
    long flat = 0;
    size_t k = 0;
    for (int i : idx) {
      if (i < 0 || i >= sh[k])
        throw IndexError("at: index " + std::to_string(i) +
                         " out of range for axis " + std::to_string(k) +
                         " with extent " + std::to_string(sh[k]));
      flat = flat * sh[k] + i;
      ++k;
    }
    return check().value[static_cast<size_t>(flat)];
  }

  // New leaf holding a copy of this tensor's values, cut off from the graph.
  Tensor detached() const {
    return from_data(shape(), data(), false);
  }

  Tensor clone() const { return from_data(shape(), data(), requires_grad()); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  Node& check() const {
    if (!node_) throw ContractError("operation on an undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;

  template <typename U>
  friend Tensor<U> make_op(std::vector<int>, std::vector<U>,
                           const std::vector<Tensor<U>>&,
                           std::function<void(detail::TensorNode<U>&)>);
};

// Builds a result node. If no parent requires grad the node is a plain
// constant: no parents retained, no backward function, so forward-only
// passes free their intermediates as soon as handles die.
template <typename T>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> value,
                  const std::vector<Tensor<T>>& parents,
                  std::function<void(detail::TensorNode<T>&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  auto node = std::make_shared<detail::TensorNode<T>>(std::move(shape),
                                                      std::move(value), rg);
  if (rg) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(node);
}

// Reverse-mode sweep from a scalar loss. Visits every reachable node that
// requires grad exactly once, in reverse creation order (creation order is
// topological for a define-by-run graph). Gradients accumulate additively,
// so fan-out is handled by construction; leaves keep their .grad() after
// the sweep.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(loss.shape()));
  using Node = detail::TensorNode<T>;
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += T(1);
  for (Node* n : order) {
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

}  // namespace flare

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lomix/array.hpp"

namespace lomix {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been reset.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

  const Array<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Reverse-mode autodiff record. Nodes are appended in evaluation order, so
/// the storage order is already a topological order of the graph.
template <std::floating_point T>
class Tape {
 public:
  /// Called during backward with the node's own value and gradient; it adds
  /// parent contributions through accumulate() or grad_data().
  using BackwardFn =
      std::function<void(Tape&, const Array<T>& out_value, const Array<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Array<T> value, bool requires_grad = true) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), Array<T>{}, requires_grad, false, {}});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Array<T> value) { return leaf(std::move(value), false); }

  /// Appends an operation result. The backward rule is dropped when no
  /// parent needs a gradient.
  Var<T> record(std::string_view op, Array<T> value, std::initializer_list<Var<T>> parents,
                 BackwardFn backward) {
    return record(op, std::move(value), std::vector<Var<T>>(parents), std::move(backward));
  }

  Var<T> record(std::string_view op, Array<T> value, const std::vector<Var<T>>& parents,
                BackwardFn backward) {
    if (backward_done_) throw std::logic_error("tape: cannot record after backward; reset first");
    check_finite(value, op);
    bool needs_grad = false;
    for (const auto& p : parents) {
      if (&p.tape() != this) throw std::invalid_argument("tape: operand from a different tape");
      needs_grad = needs_grad || nodes_[p.index()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Array<T>{}, needs_grad, false,
                          needs_grad ? std::move(backward) : BackwardFn{}});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Array<T>& value(const Var<T>& v) const { return nodes_.at(v.index()).value; }
  bool requires_grad(const Var<T>& v) const { return nodes_.at(v.index()).requires_grad; }

  /// Gradient of the last backward() target with respect to v; zeros when v
  /// did not influence it.
  Array<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.index());
    if (!n.has_grad) return Array<T>::zeros_like(n.value);
    return n.grad;
  }

  /// Adds `contribution` into the gradient of `target` (no-op for constants).
  void accumulate(const Var<T>& target, const Array<T>& contribution) {
    Node& n = nodes_[target.index()];
    if (!n.requires_grad) return;
    T* g = grad_buffer(n);
    const T* c = contribution.raw();
    for (std::size_t i = 0, e = n.value.size(); i < e; ++i) g[i] += c[i];
  }

  /// Direct mutable access to a parent's gradient buffer, allocated on first
  /// use. Returns nullptr for nodes that do not require gradients.
  T* grad_data(const Var<T>& target) {
    Node& n = nodes_[target.index()];
    if (!n.requires_grad) return nullptr;
    return grad_buffer(n);
  }

  void backward(const Var<T>& loss) {
    if (backward_done_) throw std::logic_error("tape: backward called twice without reset");
    if (nodes_.empty()) throw std::logic_error("tape: backward on empty tape");
    Node& root = nodes_.at(loss.index());
    if (!root.value.is_scalar()) {
      throw ShapeError("tape: backward requires a scalar loss, got " +
                       shape_string(root.value.shape()));
    }
    backward_done_ = true;
    if (!root.requires_grad) return;
    grad_buffer(root)[0] += T{1};
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.value, n.grad);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array<T> value;
    Array<T> grad;
    bool requires_grad;
    bool has_grad;
    BackwardFn backward;
  };

  T* grad_buffer(Node& n) {
    if (!n.has_grad) {
      n.grad = Array<T>::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad.raw();
  }

  static void check_finite(const Array<T>& value, std::string_view op) {
    if (!value.all_finite()) {
      throw NonFiniteError("non-finite value produced by " + std::string(op));
    }
  }

  std::deque<Node> nodes_;  // stable references while the tape grows
  bool backward_done_ = false;
};

}  // namespace lomix

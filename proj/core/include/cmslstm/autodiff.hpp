#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmslstm/tensor.hpp"

namespace cmslstm {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Handed to backward rules. `grad(v)` returns the accumulation buffer for an
/// input (allocated zero on first use), or nullptr when v needs no gradient.
class BackwardContext {
 public:
  Tensor* grad(const Var& v);
  const Tensor& value(const Var& v) const { return v.value(); }

 private:
  friend class Tape;
  explicit BackwardContext(Tape& tape) : tape_(tape) {}
  Tape& tape_;
};

/// (output value, gradient w.r.t. output, context).
using BackwardFn = std::function<void(const Tensor&, const Tensor&, BackwardContext&)>;

/// Gradients of a scalar root with respect to every leaf variable of a tape.
class Gradients {
 public:
  /// Gradient of a leaf, or nullptr when the root does not depend on it.
  const Tensor* find(const Var& v) const;
  /// Gradient of a leaf; zeros of the leaf's shape when it was unreachable.
  Tensor of(const Var& v) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
  const Tape* tape_ = nullptr;
};

/// Append-only record of a computation for reverse-mode differentiation.
/// Nodes are stored in creation order, which is a topological order.
/// A tape belongs to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is reported by backward().
  Var variable(Tensor value);

  /// Records an op result. Gradients flow only if some input requires them;
  /// otherwise the backward rule is dropped.
  Var record(Tensor value, std::string_view op, std::vector<Var> inputs, BackwardFn backward);

  /// Visits every node reachable from `root` exactly once in reverse creation
  /// order. The root must be a single-element tensor.
  Gradients backward(const Var& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::string op;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var push(Node node);
  void check_owned(const Var& v) const;

  std::deque<Node> nodes_;  // stable addresses: values stay valid while the tape grows
  std::vector<std::optional<Tensor>>* active_grads_ = nullptr;
};

}  // namespace cmslstm

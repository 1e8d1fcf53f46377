#include "cmslstm/autodiff.hpp"

#include "cmslstm/error.hpp"

namespace cmslstm {

Tape& Var::tape() const {
  if (!tape_) throw Error("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

bool Var::requires_grad() const { return tape().requires_grad(id_); }

Tensor* BackwardContext::grad(const Var& v) {
  auto& node = tape_.nodes_.at(v.id());
  if (!node.requires_grad) return nullptr;
  auto& slot = (*tape_.active_grads_)[v.id()];
  if (!slot) slot.emplace(node.value.shape(), 0.0);
  return &*slot;
}

const Tensor* Gradients::find(const Var& v) const {
  if (&v.tape() != tape_) throw Error("Var belongs to a different tape");
  if (v.id() >= grads_.size() || !grads_[v.id()]) return nullptr;
  return &*grads_[v.id()];
}

Tensor Gradients::of(const Var& v) const {
  if (const Tensor* g = find(v)) return *g;
  return Tensor(v.shape(), 0.0);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
  if (!v.valid() || &v.tape() != this) throw Error("Var belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  n.leaf = true;
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "variable";
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::string_view op, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.op = std::string(op);
  for (const Var& in : inputs) {
    check_owned(in);
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  return push(std::move(n));
}

Gradients Tape::backward(const Var& root) {
  check_owned(root);
  const Node& root_node = nodes_[root.id()];
  if (root_node.value.size() != 1) {
    throw ShapeError("backward() requires a scalar root, got " + shape_string(root_node.value.shape()));
  }

  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  active_grads_ = &out.grads_;
  BackwardContext ctx(*this);

  if (root_node.requires_grad) {
    out.grads_[root.id()].emplace(root_node.value.shape(), 1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.leaf || !out.grads_[i]) continue;
      Tensor g = std::move(*out.grads_[i]);
      out.grads_[i].reset();
      node.backward(node.value, g, ctx);
    }
  }
  active_grads_ = nullptr;
  return out;
}

}  // namespace cmslstm

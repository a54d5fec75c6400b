#include "ebt/autodiff/tape.hpp"

#include "ebt/errors.hpp"

namespace ebt::ad {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (find_parameter(name)) throw ContractError("parameter registered twice: " + name);
  if (!value.all_finite()) throw NumericalError("parameter '" + name + "' holds non-finite values");
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  params_.emplace_back(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

std::optional<Var> Tape::find_parameter(const std::string& name) const {
  for (const auto& [n, id] : params_) {
    if (n == name) return Var(const_cast<Tape*>(this), id);
  }
  return std::nullopt;
}

Var Tape::record(Tensor value, bool needs_grad, Backprop backprop, const char* op) {
  if (!value.all_finite()) throw NumericalError(std::string("non-finite output from ") + op);
  nodes_.push_back(Node{std::move(value), {}, needs_grad ? std::move(backprop) : Backprop{}, needs_grad});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_accum(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

Gradients Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward: root belongs to another tape");
  if (nodes_[root.id()].value.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_string(nodes_[root.id()].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_accum(root.id()).fill(1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty() || !node.backprop) continue;
    node.backprop(*this, i);
  }
  Gradients out;
  for (const auto& [name, id] : params_) {
    const auto& node = nodes_[id];
    out[name] = node.grad.empty() ? Tensor(node.value.shape(), 0.0) : node.grad;
  }
  return out;
}

}  // namespace ebt::ad

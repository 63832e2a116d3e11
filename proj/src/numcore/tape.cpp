#include "piba/numcore/tape.hpp"

#include "piba/error.hpp"

namespace piba {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::operator[](Var param) const {
  if (!contains(param)) throw Error(ErrorKind::invalid_argument, "no gradient recorded for node");
  return grads_[param.id()];
}

bool Gradients::contains(Var param) const {
  return param.id() < present_.size() && present_[param.id()];
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  require_finite(value, "parameter");
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw Error(ErrorKind::numeric, "non-finite output of " + std::string(op));
  }
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw Error(ErrorKind::invalid_argument, std::string(op) + ": input from another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Gradients Tape::backward(Var root) const {
  if (!root.valid() || &root.tape() != this || root.id() >= nodes_.size()) {
    throw Error(ErrorKind::invalid_argument, "backward root is not on this tape");
  }
  if (nodes_[root.id()].value.size() != 1) {
    throw Error(ErrorKind::shape, "backward root must be scalar, got " +
                                      shape_string(nodes_[root.id()].value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  if (nodes_[root.id()].requires_grad) {
    grads[root.id()] = Tensor(nodes_[root.id()].value.shape(), 1.0);
  }
  std::vector<Tensor*> slots;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[k] = &grads[in];
    }
    node.backward(grads[i], slots);
    // interior gradients are dead once propagated
    grads[i] = Tensor();
  }
  Gradients out;
  out.grads_.resize(nodes_.size());
  out.present_.assign(nodes_.size(), false);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].parameter) continue;
    out.present_[i] = true;
    out.grads_[i] = grads[i].empty() ? Tensor(nodes_[i].value.shape(), 0.0) : std::move(grads[i]);
  }
  return out;
}

}  // namespace piba

#include "seqvo/autodiff.hpp"

#include "seqvo/errors.hpp"

namespace seqvo::ad {

Var Tape::leaf(Tensor value, bool requires_grad) {
  round_in_place(value);
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  round_in_place(value);
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("operation mixes variables from different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& node = nodes_.at(id);
  if (!node.grad.is_allocated()) node.grad = Tensor::like(node.value);
  return node.grad;
}

Tensor& Tape::grad_accum(NodeId id) {
  Node& node = nodes_.at(id);
  if (!node.grad.is_allocated()) node.grad = Tensor::like(node.value);
  return node.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw Error("backward root belongs to another tape");
  for (auto& node : nodes_) node.grad = Tensor();
  grad_accum(root.id()).fill(1.0);
  for (NodeId id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward || !node.grad.is_allocated()) continue;
    node.backward(*this, id);
  }
}

void Tape::round_in_place(Tensor& t) const {
  if (precision_ != Precision::kFloat32) return;
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace seqvo::ad

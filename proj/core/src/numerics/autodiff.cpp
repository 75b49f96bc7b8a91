#include "opd/numerics/autodiff.hpp"

#include "opd/errors.hpp"

namespace opd {

std::size_t ParameterStore::add(std::string name, Tensor value) {
  for (const auto& p : params_) {
    if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  value.set_requires_grad(true);
  params_.push_back(Parameter{std::move(name), std::move(value)});
  return params_.size() - 1;
}

Parameter& ParameterStore::get(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("unknown parameter '" + std::string(name) + "'");
}

const Parameter& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::set_requires_grad(bool on) {
  for (auto& p : params_) p.value.set_requires_grad(on);
}

const Tensor& GradientMap::at(const Parameter& p) const {
  auto it = grads_.find(&p);
  if (it == grads_.end()) throw ContractError("no gradient recorded for '" + p.name + "'");
  return it->second;
}

Tensor& GradientMap::slot(const Parameter& p) {
  auto it = grads_.find(&p);
  if (it == grads_.end()) it = grads_.emplace(&p, Tensor(p.value.shape())).first;
  return it->second;
}

void GradientMap::zero() {
  for (auto& [_, g] : grads_) g.fill(0.0);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Tensor& value) {
  Node node;
  node.ref = &value;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Parameter& p, bool trainable) {
  Node node;
  node.ref = &p.value;
  node.param = &p;
  node.requires_grad = trainable && p.value.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ContractError("operands recorded on different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad_target) return *n.grad_target;
  if (n.grad.size() == 0) n.grad = Tensor(value(id).shape());
  return n.grad;
}

GradientMap Tape::backward(Var loss) {
  GradientMap grads;
  backward(loss, grads);
  return grads;
}

void Tape::backward(Var loss, GradientMap& accumulator) {
  if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(lv.shape()));
  }
  for (auto& n : nodes_) {
    n.grad = Tensor();
    n.grad_target = nullptr;
    if (n.param && n.requires_grad) n.grad_target = &accumulator.slot(*n.param);
  }
  if (!nodes_[loss.id()].requires_grad) return;

  // Seed separately so a parameter used directly as the loss accumulates.
  grad(loss.id())[0] += 1.0;
  std::vector<bool> touched(nodes_.size(), false);
  touched[loss.id()] = true;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!touched[i] || !n.requires_grad || !n.backward) continue;
    for (auto in : n.inputs) touched[in] = true;
    n.backward(*this, i);
  }
}

}  // namespace opd

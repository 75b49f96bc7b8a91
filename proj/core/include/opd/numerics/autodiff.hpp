#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "opd/numerics/tensor.hpp"

namespace opd {

/// A named trainable array. Gradients are keyed by the Parameter's address,
/// so a Parameter must not move while a Tape refers to it.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, copyable collection of parameters. Models address entries by the
/// index returned from add(); the order is also the checkpoint order.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void set_requires_grad(bool on);

 private:
  std::vector<Parameter> params_;
};

class GradientMap {
 public:
  bool contains(const Parameter& p) const { return grads_.count(&p) != 0; }
  const Tensor& at(const Parameter& p) const;
  /// Gradient slot for p, created as zeros of p's shape on first use.
  Tensor& slot(const Parameter& p);
  std::size_t size() const { return grads_.size(); }
  void zero();

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Computation record for reverse-mode differentiation. Nodes are appended in
/// execution order, which is therefore a topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Non-owning constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Leaf bound to a parameter. It requires a gradient only when `trainable`
  /// and the parameter's tensor is flagged requires_grad.
  Var param(const Parameter& p, bool trainable = true);

  GradientMap backward(Var loss);
  /// Adds this tape's gradients into `accumulator`.
  void backward(Var loss, GradientMap& accumulator);

  std::size_t size() const { return nodes_.size(); }

  // Plumbing used by the primitive operations.
  Var push(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);
  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }
  /// Gradient buffer of a node, zero-filled on first access.
  Tensor& grad(std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    const Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
    Tensor* grad_target = nullptr;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace opd

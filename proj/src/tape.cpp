#include "camvr/tape.hpp"

namespace camvr {

const Tensor &Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto &in : inputs) {
    if (&in.tape() != this)
      throw ContractError("op mixes values from different tapes");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var> &inputs, Backward backward) {
  bool needs = false;
  for (const auto &in : inputs) {
    if (&in.tape() != this)
      throw ContractError("op mixes values from different tapes");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor &Tape::grad_of(const Var &v) {
  Node &n = nodes_[v.id()];
  if (n.grad.empty())
    n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var &loss) {
  if (&loss.tape() != this)
    throw ContractError("backward: loss recorded on another tape");
  if (loss.value().size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        to_string(loss.shape()));
  for (auto &n : nodes_)
    n.grad = Tensor();
  visits_ = 0;
  grad_of(loss)[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node &n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward)
      continue;
    ++visits_;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var &v) const {
  const Node &n = nodes_[v.id()];
  return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
}

std::vector<Var> bind_variables(Tape &tape, const std::vector<Tensor> &values) {
  std::vector<Var> vars;
  vars.reserve(values.size());
  for (const auto &v : values)
    vars.push_back(tape.variable(v));
  return vars;
}

Gradients collect_gradients(const Tape &tape, const std::vector<Var> &vars) {
  Gradients g;
  g.reserve(vars.size());
  for (const auto &v : vars)
    g.push_back(tape.grad(v));
  return g;
}

} // namespace camvr

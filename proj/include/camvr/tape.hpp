#pragma once

#include "camvr/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

namespace camvr {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
public:
  Var() = default;

  const Tensor &value() const;
  const Shape &shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape &tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape *tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so a reverse
// sweep over node ids is a valid topological order for backpropagation.
class Tape {
public:
  // Receives the gradient of the node's output; adds into input gradients via
  // Tape::grad_of.
  using Backward = std::function<void(Tape &, const Tensor &)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var> &inputs, Backward backward);

  const Tensor &value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulator for `v`, allocated as zeros on first use.
  Tensor &grad_of(const Var &v);

  // Seeds d(loss)/d(loss) = 1 and sweeps every recorded op once, in reverse.
  void backward(const Var &loss);

  // Gradient of the last backward() w.r.t. `v`; zeros when `v` was unreachable.
  Tensor grad(const Var &v) const;

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
};

// Gradient with respect to each tensor in a bound parameter list, in order.
using Gradients = std::vector<Tensor>;

std::vector<Var> bind_variables(Tape &tape, const std::vector<Tensor> &values);
Gradients collect_gradients(const Tape &tape, const std::vector<Var> &vars);

} // namespace camvr

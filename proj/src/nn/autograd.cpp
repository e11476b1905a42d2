#include "tar2/nn/autograd.hpp"

#include <cmath>

#include "tar2/common/error.hpp"

namespace tar2::nn {

const Tensor& Var::value() const {
  require(tape_ != nullptr, Errc::state, "use of an unbound Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Tensor& v = value();
  require(v.size() == 1, Errc::shape_mismatch, "scalar() on a non-scalar tensor");
  return v[0];
}

Var Tape::push(Node node) {
#ifndef NDEBUG
  if (!node.value.all_finite()) fail(Errc::non_finite, "non-finite value produced on the tape");
#endif
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.needs_grad = grad_enabled_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    require(in.tape() == this, Errc::state, "input Var belongs to a different tape");
    n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  require(!backward_done_, Errc::state, "backward already ran on this tape");
  require(loss.tape() == this, Errc::state, "loss belongs to a different tape");
  require(loss.value().size() == 1, Errc::shape_mismatch, "backward needs a scalar loss");
  backward_done_ = true;
  if (!nodes_[loss.id()].needs_grad) return;

  grad(loss.id()).fill(1.0);
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    // Closures only touch the gradients of earlier nodes; nodes_ does not grow.
    if (n.backward) n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.param && n.grad.size() == n.value.size()) {
      if (n.param->grad.size() != n.param->value.size()) n.param->zero_grad();
      n.param->grad.axpy(1.0, n.grad);
    }
  }
}

double grad_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data()) sq += g * g;
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.data()) g *= scale;
  }
  return norm;
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace tar2::nn

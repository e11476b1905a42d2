#pragma once

// Tape-based reverse-mode differentiation.
//
// A Tape records every primitive applied during a forward pass as a node that
// owns its output value and a closure propagating the node's gradient to its
// inputs. Nodes are appended in evaluation order, so walking the tape backwards
// is a valid reverse topological order and each node is visited once.
//
// Parameters live outside the tape. `Tape::param` binds a Parameter to a leaf
// node; after `backward` the leaf gradients are accumulated into
// Parameter::grad. A tape is single-use: build, backward, discard.

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tar2/nn/tensor.hpp"

namespace tar2::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the node's output gradient; propagates into inputs through the tape.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  // With grad disabled, parameters bind as constants and no backward closures
  // are kept; used for inference.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  // Records a primitive. `inputs` decide whether the node needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  // Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(std::size_t id);
  Tensor& grad(const Var& v) { return grad(v.id()); }

  // Runs the reverse sweep from a scalar loss and accumulates into the bound
  // parameters. Calling it twice on the same tape is an error.
  void backward(const Var& loss);
  bool backward_done() const noexcept { return backward_done_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool grad_enabled() const noexcept { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

// Global-norm of the gradients of a parameter list.
double grad_norm(const std::vector<Parameter*>& params);
// Scales gradients so their global norm is at most max_norm. Returns the norm
// before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);
void zero_grads(const std::vector<Parameter*>& params);

}  // namespace tar2::nn

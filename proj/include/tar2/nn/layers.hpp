#pragma once

// Parameterized building blocks. Each layer offers a taped forward for training
// and a plain `eval` over tensors for inference.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tar2/nn/autograd.hpp"
#include "tar2/nn/ops.hpp"

namespace tar2::nn {

enum class Activation { none, relu, tanh, gelu };

Var activate(const Var& x, Activation act);
void activate_inplace(Tensor& x, Activation act);

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, bool with_bias = true);

  // uniform(-a, a), a = sqrt(6 / (in + out)); bias zero.
  void init(std::mt19937_64& rng);

  Var operator()(Tape& tape, const Var& x);
  Tensor eval(const Tensor& x) const;

  std::size_t in() const { return weight.value.rows(); }
  std::size_t out() const { return weight.value.cols(); }
  void collect(std::vector<Parameter*>& out);

  bool has_bias() const { return bias.value.size() > 0; }

  Parameter weight;  // [in, out]
  Parameter bias;    // [1, out], empty when constructed without bias
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t width, double eps = 1e-10);

  Var operator()(Tape& tape, const Var& x);
  Tensor eval(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);

  Parameter gain;
  Parameter bias;
  double eps = 1e-10;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(std::string name, std::size_t count, std::size_t width);

  // normal(0, 0.02)
  void init(std::mt19937_64& rng);

  Var operator()(Tape& tape, std::span<const std::size_t> ids);
  Tensor eval(std::span<const std::size_t> ids) const;
  void collect(std::vector<Parameter*>& out);

  Parameter table;
};

// Stack of Linear layers with a shared hidden activation; the last layer is
// followed by `out_act`.
class MLP {
 public:
  MLP() = default;
  MLP(std::string name, const std::vector<std::size_t>& widths, Activation hidden,
      Activation out_act = Activation::none);

  void init(std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x);
  Tensor eval(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);

  std::vector<Linear> layers;
  Activation hidden = Activation::relu;
  Activation out_act = Activation::none;
};

}  // namespace tar2::nn

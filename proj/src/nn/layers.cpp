#include "tar2/nn/layers.hpp"

#include <cmath>

#include "tar2/common/error.hpp"

namespace tar2::nn {

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::gelu: return gelu(x);
    case Activation::none: break;
  }
  return x;
}

void activate_inplace(Tensor& x, Activation act) {
  constexpr double c = 0.7978845608028654;
  for (double& v : x.data()) {
    switch (act) {
      case Activation::relu: v = v > 0.0 ? v : 0.0; break;
      case Activation::tanh: v = std::tanh(v); break;
      case Activation::gelu: v = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); break;
      case Activation::none: break;
    }
  }
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, bool with_bias) : weight(name + ".weight", in, out) {
  require(in > 0 && out > 0, Errc::invalid_argument, "Linear: zero width");
  if (with_bias) bias = Parameter(name + ".bias", 1, out);
}

void Linear::init(std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in() + out()));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& w : weight.value.data()) w = u(rng);
  bias.value.fill(0.0);
}

Var Linear::operator()(Tape& tape, const Var& x) {
  Var y = matmul(x, tape.param(weight));
  return has_bias() ? add_row(y, tape.param(bias)) : y;
}

Tensor Linear::eval(const Tensor& x) const {
  require(x.cols() == in(), Errc::shape_mismatch, "Linear::eval: input width");
  Tensor y(x.rows(), out());
  gemm(x, false, weight.value, false, y, false);
  if (!has_bias()) return y;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bias.value[c];
  return y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias()) out.push_back(&bias);
}

LayerNorm::LayerNorm(std::string name, std::size_t width, double e)
    : gain(name + ".gain", 1, width), bias(name + ".bias", 1, width), eps(e) {
  gain.value.fill(1.0);
}

Var LayerNorm::operator()(Tape& tape, const Var& x) {
  return layer_norm_rows(x, tape.param(gain), tape.param(bias), eps);
}

Tensor LayerNorm::eval(const Tensor& x) const {
  const std::size_t n = x.cols();
  require(n == gain.value.cols(), Errc::shape_mismatch, "LayerNorm::eval: input width");
  Tensor y(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += x(r, c);
    mu /= static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    const double is = 1.0 / std::sqrt(var / static_cast<double>(n) + eps);
    for (std::size_t c = 0; c < n; ++c) y(r, c) = gain.value[c] * (x(r, c) - mu) * is + bias.value[c];
  }
  return y;
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

Embedding::Embedding(std::string name, std::size_t count, std::size_t width) : table(name + ".table", count, width) {}

void Embedding::init(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.02);
  for (double& w : table.value.data()) w = n(rng);
}

Var Embedding::operator()(Tape& tape, std::span<const std::size_t> ids) { return gather_rows(tape.param(table), ids); }

Tensor Embedding::eval(std::span<const std::size_t> ids) const {
  const std::size_t w = table.value.cols();
  Tensor y(ids.size(), w);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] < table.value.rows(), Errc::invalid_argument, "Embedding: id out of range");
    for (std::size_t c = 0; c < w; ++c) y(r, c) = table.value(ids[r], c);
  }
  return y;
}

void Embedding::collect(std::vector<Parameter*>& out) { out.push_back(&table); }

MLP::MLP(std::string name, const std::vector<std::size_t>& widths, Activation h, Activation o)
    : hidden(h), out_act(o) {
  require(widths.size() >= 2, Errc::invalid_argument, "MLP needs at least input and output widths");
  for (std::size_t k = 0; k + 1 < widths.size(); ++k)
    layers.emplace_back(name + "." + std::to_string(k), widths[k], widths[k + 1]);
}

void MLP::init(std::mt19937_64& rng) {
  for (Linear& l : layers) l.init(rng);
}

Var MLP::operator()(Tape& tape, const Var& x) {
  Var h = x;
  for (std::size_t k = 0; k < layers.size(); ++k)
    h = activate(layers[k](tape, h), k + 1 < layers.size() ? hidden : out_act);
  return h;
}

Tensor MLP::eval(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    h = layers[k].eval(h);
    activate_inplace(h, k + 1 < layers.size() ? hidden : out_act);
  }
  return h;
}

void MLP::collect(std::vector<Parameter*>& out) {
  for (Linear& l : layers) l.collect(out);
}

}  // namespace tar2::nn

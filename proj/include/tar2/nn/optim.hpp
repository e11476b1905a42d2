#pragma once

#include <cstdint>
#include <vector>

#include "tar2/nn/autograd.hpp"

namespace tar2::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
  double clip_norm = 0.0;     // global-norm clip; 0 disables
};

// Bias-corrected Adam over a fixed list of parameters.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  // Clips, updates parameters from their current grads, returns the
  // pre-clip global gradient norm. Does not zero the grads.
  double step();

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  std::uint64_t steps() const { return step_; }
  void set_steps(std::uint64_t s) { step_ = s; }
  const std::vector<Parameter*>& params() const { return params_; }

  // First and second moment buffers, one per parameter.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace tar2::nn

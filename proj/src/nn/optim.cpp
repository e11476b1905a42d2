#include "tar2/nn/optim.hpp"

#include <cmath>

#include "tar2/common/error.hpp"

namespace tar2::nn {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  require(cfg_.lr >= 0.0 && cfg_.eps > 0.0 && cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 &&
              cfg_.beta2 < 1.0,
          Errc::invalid_argument, "Adam: invalid hyperparameters");
  for (Parameter* p : params_) {
    if (p->grad.size() != p->value.size()) p->zero_grad();
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

double Adam::step() {
  const double norm = clip_grad_norm(params_, cfg_.clip_norm);
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j] + cfg_.weight_decay * p.value[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      p.value[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace tar2::nn

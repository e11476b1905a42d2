#pragma once

// Element-wise comparison of taped gradients against the central-difference
// oracle in oracles.hpp.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "tar2/nn/autograd.hpp"

namespace tar2::testing {

// Largest per-tensor relative error ||analytic - numeric||_inf / max(||.||_inf).
inline double max_rel_error_vs_oracle(const std::function<nn::Var(nn::Tape&)>& build,
                                      const std::vector<nn::Parameter*>& params, double h = 1e-5) {
  nn::zero_grads(params);
  {
    nn::Tape tape;
    tape.backward(build(tape));
  }
  double worst = 0.0;
  for (nn::Parameter* p : params) {
    std::vector<double> x(p->value.data().begin(), p->value.data().end());
    auto f = [&](const std::vector<double>& xs) {
      std::copy(xs.begin(), xs.end(), p->value.data().begin());
      nn::Tape tape;
      return build(tape).scalar();
    };
    double err = 0.0, scale = 1e-8;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double num = oracle::central_difference(f, x, k, h);
      err = std::max(err, std::abs(num - p->grad[k]));
      scale = std::max({scale, std::abs(num), std::abs(p->grad[k])});
    }
    std::copy(x.begin(), x.end(), p->value.data().begin());
    worst = std::max(worst, err / scale);
  }
  return worst;
}

}  // namespace tar2::testing

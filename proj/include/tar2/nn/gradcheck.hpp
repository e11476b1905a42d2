#pragma once

// Central-difference verification of taped gradients.

#include <functional>
#include <string>
#include <vector>

#include "tar2/nn/autograd.hpp"

namespace tar2::nn {

struct GradCheckEntry {
  std::string name;
  double max_abs_error = 0.0;
  double rel_error = 0.0;  // ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor)
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

// `loss` builds the scalar on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

GradCheckReport gradient_check(const LossBuilder& loss, const std::vector<Parameter*>& params, double h = 1e-5,
                               double tol = 1e-4, double floor = 1e-8);

}  // namespace tar2::nn

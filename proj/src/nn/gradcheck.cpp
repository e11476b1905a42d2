#include "tar2/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tar2::nn {

namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  return loss(tape).scalar();
}

}  // namespace

GradCheckReport gradient_check(const LossBuilder& loss, const std::vector<Parameter*>& params, double h, double tol,
                               double floor) {
  zero_grads(params);
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradCheckReport report;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    Tensor numeric(p->value.rows(), p->value.cols());
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const double saved = p->value[j];
      p->value[j] = saved + h;
      const double fp = evaluate(loss);
      p->value[j] = saved - h;
      const double fm = evaluate(loss);
      p->value[j] = saved;
      numeric[j] = (fp - fm) / (2.0 * h);
    }
    GradCheckEntry e{p->name, 0.0, 0.0};
    for (std::size_t j = 0; j < numeric.size(); ++j)
      e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic[j] - numeric[j]));
    e.rel_error = e.max_abs_error / std::max({analytic.max_abs(), numeric.max_abs(), floor});
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace tar2::nn

#pragma once

// Variance of a contribution target with and without conditioning on the
// episode outcome, on a synthetic model c = g(tau) + h(Z) + noise.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tar2/analysis/gradients.hpp"

namespace tar2::analysis {

struct SyntheticContribution {
  std::vector<double> g;  // per trajectory class
  std::vector<double> h;  // per outcome value
  double noise = 1.0;     // stddev of the Gaussian residual
};

struct ConditioningOptions {
  std::size_t draws_per_class = 4000;
  std::uint64_t seed = 1;
  std::size_t bootstrap = 1000;
};

// Averages over trajectory classes of the three terms of the decomposition
// Var(c|tau) = E[Var(c|tau,Z)] + Var(E[c|tau,Z]).
//   total     Var(c|tau)               unbiased sample variance
//   residual  E[Var(c|tau,Z)]          pooled within-outcome variance
//   explained Var(E[c|tau,Z])          total - residual (moment estimator)
// Z is uniform over outcome values within every class.
struct ConditioningReport {
  double total = 0.0;
  double residual = 0.0;
  double explained = 0.0;
  Interval ci_total, ci_residual, ci_explained;
  Interval ci_gap;  // total - explained, i.e. the residual term
};

ConditioningReport conditioning_variance_study(const SyntheticContribution& model,
                                               const ConditioningOptions& options = {});

}  // namespace tar2::analysis

#pragma once

// Score-function (REINFORCE) estimators under the team reward and under
// redistributed rewards, and their variance decomposition.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tar2/analysis/modes.hpp"
#include "tar2/core/redistribution.hpp"
#include "tar2/env/environment.hpp"
#include "tar2/env/episode.hpp"
#include "tar2/marl/networks.hpp"
#include "tar2/rm/reward_model.hpp"

namespace tar2::analysis {

// Gradient of sum_t log pi_k(a_{k,t} | o_{k,t}) over agent k's active steps
// with respect to its actor parameters, flattened in parameter order.
std::vector<double> score_function(marl::ActorCritic& policy, const env::Episode& ep, std::size_t agent);

struct AgentGradient {
  std::vector<double> global;  // G_k * R
  std::vector<double> shaped;  // G_k * sum_t s[t,k]
  double delta = 0.0;
  double max_residual = 0.0;   // max_j |shaped_j - delta * global_j|
  double global_inf_norm = 0.0;
};

struct GradientReport {
  std::vector<AgentGradient> agents;
  // max over agents of max_residual / (1 + ||global||_inf)
  double max_relative_residual = 0.0;
};

// Both estimators for one trajectory. `shaped` must carry its weights and
// belong to `ep` (same shape and team reward).
GradientReport reinforce_estimates(marl::ActorCritic& policy, const env::Episode& ep,
                                   const core::RedistributedRewards& shaped);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

// Sample variances summed over parameter coordinates, with 95% percentile
// bootstrap intervals.
struct VarianceReport {
  std::size_t samples = 0;
  double var_tar2 = 0.0;
  double var_orig = 0.0;
  double var_pbrs = 0.0;
  double covariance = 0.0;  // summed Cov(g_orig, g_tar2)
  Interval ci_tar2, ci_orig, ci_pbrs, ci_covariance;
  Interval ci_gap;  // Var(pbrs) - Var(tar2)
  // |Var(pbrs) - Var(orig) - Var(tar2) - 2 Cov| / max(1, Var(pbrs)); each
  // term is accumulated independently from the same draws.
  double identity_residual = 0.0;
};

struct VarianceStudyOptions {
  std::size_t num_samples = 50000;
  std::uint64_t seed = 1;
  std::size_t bootstrap = 1000;
  std::size_t blocks = 200;  // resampling unit; draws are split evenly
  std::size_t threads = 1;   // rollout collection only
};

// Monte-Carlo study under a frozen policy. g_orig uses the terminal team
// reward as every agent's return, g_tar2 the mode's redistributed return and
// g_pbrs their sum. `model` supplies scores for the learned modes.
VarianceReport variance_study(marl::ActorCritic& policy, const env::Environment& env, RedistributionMode mode,
                              rm::RewardModel* model, const VarianceStudyOptions& options = {});

}  // namespace tar2::analysis

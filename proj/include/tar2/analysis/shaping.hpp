#pragma once

// Per-mode conversion of an episode's team reward into per-cell rewards.

#include <optional>

#include "tar2/analysis/modes.hpp"
#include "tar2/core/redistribution.hpp"
#include "tar2/env/episode.hpp"
#include "tar2/rm/reward_model.hpp"

namespace tar2::analysis {

struct ShapedEpisode {
  core::Matrix rewards;  // T x N
  // Weights that produced the rewards; absent for raw-score rewards.
  std::optional<core::RedistributionWeights> weights;
};

// Raw model scores used directly as rewards: no shift, no normalization and
// no rescale to the team reward. Only meant as an ablation arm.
core::Matrix no_normalization_rewards(rm::RewardModel& model, const env::Episode& ep);
core::Matrix no_normalization_rewards(const core::ScoreMatrix& scores);

// Rewards for `mode` given the model's scores for the episode. `scores` may
// be null for the uniform mode and while a learned mode is still warming up,
// in which case the uniform split is used.
ShapedEpisode shape_episode(RedistributionMode mode, const core::ScoreMatrix* scores, const env::Episode& ep,
                            double epsilon = core::kDefaultEpsilon);

// Reward-model settings implied by the mode (outcome conditioning and the
// inverse-dynamics term are switched off by their ablations).
rm::RewardModelConfig model_config_for(RedistributionMode mode, rm::RewardModelConfig base);

}  // namespace tar2::analysis

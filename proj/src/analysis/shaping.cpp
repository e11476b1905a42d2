#include "tar2/analysis/shaping.hpp"

#include "tar2/common/error.hpp"

namespace tar2::analysis {

core::Matrix no_normalization_rewards(const core::ScoreMatrix& scores) {
  core::Matrix out(scores.T(), scores.N());
  for (std::size_t t = 0; t < scores.T(); ++t)
    for (std::size_t i = 0; i < scores.N(); ++i) out(t, i) = scores.active(t, i) ? scores.score(t, i) : 0.0;
  return out;
}

core::Matrix no_normalization_rewards(rm::RewardModel& model, const env::Episode& ep) {
  return no_normalization_rewards(model.score(ep));
}

ShapedEpisode shape_episode(RedistributionMode mode, const core::ScoreMatrix* scores, const env::Episode& ep,
                            double epsilon) {
  if (scores != nullptr && (scores->T() != ep.T || scores->N() != ep.N))
    fail(Errc::shape_mismatch, "shape_episode: scores do not match the episode");
  if (mode == RedistributionMode::no_normalization) {
    require(scores != nullptr, Errc::invalid_argument, "shape_episode: raw-score mode needs model scores");
    return {no_normalization_rewards(*scores), std::nullopt};
  }
  core::RedistributedRewards r;
  if (mode == RedistributionMode::uniform || scores == nullptr)
    r = core::uniform_redistribution(ep.T, ep.N, ep.active, ep.team_reward);
  else if (mode == RedistributionMode::temporal_only)
    r = core::temporal_only_redistribution(*scores, ep.team_reward, epsilon);
  else
    r = core::redistribute(*scores, ep.team_reward, epsilon);
  return {std::move(r.rewards), std::move(r.weights)};
}

rm::RewardModelConfig model_config_for(RedistributionMode mode, rm::RewardModelConfig base) {
  if (mode == RedistributionMode::no_outcome) base.condition_on_outcome = false;
  if (mode == RedistributionMode::no_inverse_dynamics) base.use_inverse_dynamics = false;
  return base;
}

}  // namespace tar2::analysis

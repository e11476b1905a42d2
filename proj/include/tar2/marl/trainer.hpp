#pragma once

// On-policy multi-agent training loop with a periodically refit reward model.
//
// Each iteration collects a batch of episodes with the current policy, turns
// every team reward into per-agent per-step rewards according to the
// redistribution mode, computes GAE advantages against PopArt-normalized
// values, runs PPO epochs, and refits the reward model whenever another
// `update_freq` episodes have been added to its buffer. Until the first refit
// the learned modes fall back to the uniform split.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tar2/analysis/modes.hpp"
#include "tar2/common/state.hpp"
#include "tar2/core/redistribution.hpp"
#include "tar2/env/environment.hpp"
#include "tar2/marl/networks.hpp"
#include "tar2/marl/popart.hpp"
#include "tar2/marl/ppo.hpp"
#include "tar2/marl/rollout.hpp"
#include "tar2/rm/buffer.hpp"
#include "tar2/rm/reward_model.hpp"

namespace tar2::marl {

struct TrainerConfig {
  std::string env = "key_treasure";
  analysis::RedistributionMode mode = analysis::RedistributionMode::tar2;
  std::uint64_t seed = 1;
  std::size_t episode_budget = 2000;
  std::size_t episodes_per_iteration = 10;
  std::size_t threads = 1;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  std::size_t actor_hidden = 64;
  std::size_t critic_hidden = 64;
  PpoConfig ppo;
  double popart_beta = 0.999;
  bool popart_per_agent = false;
  bool normalize_advantages = true;
  double redistribution_epsilon = core::kDefaultEpsilon;
  double success_threshold = 1.0;  // team reward counted as a success
  rm::RewardModelConfig reward_model;

  void validate() const;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  std::size_t episodes = 0;  // cumulative
  double mean_return = 0.0;
  double success_rate = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  // Last reward-model round so far; NaN before the first refit.
  double rm_regression_loss = 0.0;
  double rm_id_loss = 0.0;
  // Over agents and episodes of this iteration; NaN when rewards are raw scores.
  double delta_mean = 0.0;
  double delta_min = 0.0;
  double delta_max = 0.0;
  double clip_fraction = 0.0;
  std::size_t rm_rounds = 0;
  std::size_t model_age = 0;  // episodes collected since the last refit
  std::size_t equivalence_violations = 0;
  double doubling_residual = 0.0;  // |mean(sum s + R) - 2 mean(R)|
  std::size_t faults = 0;
};

class Trainer {
 public:
  explicit Trainer(const TrainerConfig& cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainerConfig& config() const noexcept { return cfg_; }
  bool finished() const noexcept { return episodes_ >= cfg_.episode_budget; }
  std::size_t iteration() const noexcept { return iteration_; }
  std::size_t episodes() const noexcept { return episodes_; }

  // One collect / shape / update cycle. Throws Error{non_finite} on a NaN
  // loss and Error{verification} if a return-preserving mode breaks return
  // equivalence.
  IterationMetrics iterate();

  // Iterates until the budget is spent. `sink` sees every iteration.
  // `on_fault` runs before a non-finite failure propagates, with the
  // iteration that failed, so the caller can checkpoint.
  std::vector<IterationMetrics> run(const std::function<void(const IterationMetrics&)>& sink = {},
                                    const std::function<void(std::size_t)>& on_fault = {});

  void save(StateDict& out) const;
  void load(const StateDict& in);

  ActorCritic& policy() noexcept { return *net_; }
  const env::Environment& environment() const noexcept { return *env_; }
  rm::RewardModel* reward_model() noexcept { return model_.get(); }
  const rm::TrajectoryBuffer& buffer() const noexcept { return buffer_; }
  const PopArt& popart() const noexcept { return popart_; }

  // Episodes and rewards used in the most recent iteration.
  const std::vector<Rollout>& last_rollouts() const noexcept { return last_rollouts_; }
  const std::vector<core::Matrix>& last_rewards() const noexcept { return last_rewards_; }

 private:
  std::size_t channel(std::size_t agent) const { return cfg_.popart_per_agent ? agent : 0; }
  void refit_reward_model();

  TrainerConfig cfg_;
  std::unique_ptr<env::Environment> env_;
  std::unique_ptr<ActorCritic> net_;
  std::unique_ptr<PpoLearner> ppo_;
  std::unique_ptr<rm::RewardModel> model_;
  rm::TrajectoryBuffer buffer_;
  PopArt popart_;
  std::mt19937_64 rng_;
  std::size_t iteration_ = 0;
  std::size_t episodes_ = 0;
  std::size_t refits_ = 0;
  std::size_t last_refit_episode_ = 0;
  double rm_regression_loss_;
  double rm_id_loss_;
  std::vector<Rollout> last_rollouts_;
  std::vector<core::Matrix> last_rewards_;
};

}  // namespace tar2::marl

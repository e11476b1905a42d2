#pragma once

// Clipped-surrogate actor updates and value-clipped critic updates.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "tar2/marl/networks.hpp"
#include "tar2/marl/rollout.hpp"
#include "tar2/nn/optim.hpp"

namespace tar2::marl {

struct PpoConfig {
  std::size_t epochs = 15;
  std::size_t batch_episodes = 30;  // episodes per minibatch
  double policy_clip = 0.2;
  double value_clip = 0.2;
  double entropy_pen = 1e-2;
  double policy_lr = 5e-4;
  double policy_weight_decay = 0.0;
  double grad_clip_actor = 0.5;
  double value_lr = 5e-4;
  double value_weight_decay = 0.0;
  double grad_clip_critic = 0.5;

  void validate() const;
};

// min(r A, clip(r, 1-c, 1+c) A) for one sample.
double clipped_surrogate(double ratio, double advantage, double clip);

// Everything the update needs about one collected episode. All arrays are
// T * N; value quantities are in normalized units.
struct PpoSample {
  const Rollout* rollout = nullptr;
  std::vector<double> advantages;
  std::vector<double> targets;     // normalized returns
  std::vector<double> old_values;  // critic outputs before the update, same units as targets
};

struct PpoStats {
  double policy_loss = 0.0;  // mean negative surrogate
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  std::size_t minibatches = 0;
};

struct ActorLoss {
  nn::Var total;           // surrogate loss minus the entropy bonus
  double surrogate = 0.0;  // mean negative clipped surrogate
  double entropy = 0.0;
  double clip_fraction = 0.0;
  std::size_t samples = 0;
};

// Loss of actor `agent` over its active steps in `batch`. `samples == 0`
// (and an invalid `total`) when the agent never acted.
ActorLoss actor_loss(nn::Tape& tape, nn::MLP& actor, std::size_t agent, std::span<const PpoSample* const> batch,
                     const PpoConfig& cfg);
// Mean over active cells of max((v - G)^2, (v_clipped - G)^2).
nn::Var critic_loss(nn::Tape& tape, ActorCritic& net, std::span<const PpoSample* const> batch, const PpoConfig& cfg);

class PpoLearner {
 public:
  PpoLearner() = default;
  PpoLearner(ActorCritic& net, const PpoConfig& cfg);
  PpoLearner(const PpoLearner&) = delete;
  PpoLearner& operator=(const PpoLearner&) = delete;

  // `epochs` passes over shuffled minibatches of `batch_episodes` episodes.
  PpoStats update(std::span<const PpoSample> samples, std::mt19937_64& rng);

  std::vector<nn::Adam>& actor_optimizers() { return actor_opt_; }
  nn::Adam& critic_optimizer() { return critic_opt_; }
  const PpoConfig& config() const { return cfg_; }

 private:
  ActorCritic* net_ = nullptr;
  PpoConfig cfg_;
  std::vector<nn::Adam> actor_opt_;
  nn::Adam critic_opt_;
};

}  // namespace tar2::marl

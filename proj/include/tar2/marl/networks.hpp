#pragma once

// Decentralized actors and a centralized critic.
//
// Actor i maps its own observation to action logits. The critic sees every
// agent's observation, the global state and the normalized time t/T, and
// outputs one (normalized) value per agent.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tar2/env/environment.hpp"
#include "tar2/env/episode.hpp"
#include "tar2/nn/layers.hpp"

namespace tar2::marl {

class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(const env::EnvSpec& spec, std::size_t actor_hidden, std::size_t critic_hidden, std::uint64_t seed);

  const env::EnvSpec& spec() const noexcept { return spec_; }
  std::size_t critic_input_dim() const noexcept { return spec_.n_agents * spec_.obs_dim + spec_.state_dim + 1; }

  // `joint_obs` holds all agents' observations, agent-major.
  void critic_features(std::span<const double> joint_obs, std::span<const double> state, std::size_t t,
                       double* out) const;
  // Critic input rows for every step of an episode: [T, critic_input_dim].
  nn::Tensor critic_features(const env::Episode& ep) const;

  std::vector<nn::Parameter*> actor_parameters(std::size_t agent);
  std::vector<nn::Parameter*> critic_parameters();
  std::vector<nn::Parameter*> parameters();

  std::vector<nn::MLP> actors;
  nn::MLP critic;

 private:
  env::EnvSpec spec_{};
};

}  // namespace tar2::marl

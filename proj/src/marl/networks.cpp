#include "tar2/marl/networks.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "tar2/common/error.hpp"

namespace tar2::marl {

using nn::Activation;

ActorCritic::ActorCritic(const env::EnvSpec& spec, std::size_t actor_hidden, std::size_t critic_hidden,
                         std::uint64_t seed)
    : spec_(spec) {
  require(actor_hidden > 0 && critic_hidden > 0, Errc::config, "actor/critic hidden width must be positive");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.n_agents; ++i) {
    actors.emplace_back("actor" + std::to_string(i), std::vector<std::size_t>{spec.obs_dim, actor_hidden, actor_hidden,
                                                                              spec.n_actions},
                        Activation::tanh);
    actors.back().init(rng);
  }
  critic = nn::MLP("critic", {critic_input_dim(), critic_hidden, critic_hidden, spec.n_agents}, Activation::tanh);
  critic.init(rng);
}

void ActorCritic::critic_features(std::span<const double> joint_obs, std::span<const double> state, std::size_t t,
                                  double* out) const {
  if (joint_obs.size() != spec_.n_agents * spec_.obs_dim || state.size() != spec_.state_dim)
    fail(Errc::shape_mismatch, "critic features: observation or state width does not match the environment");
  out = std::copy(joint_obs.begin(), joint_obs.end(), out);
  out = std::copy(state.begin(), state.end(), out);
  *out = static_cast<double>(t) / static_cast<double>(spec_.horizon);
}

nn::Tensor ActorCritic::critic_features(const env::Episode& ep) const {
  const std::size_t width = critic_input_dim(), joint = spec_.n_agents * spec_.obs_dim;
  nn::Tensor x(ep.T, width);
  for (std::size_t t = 0; t < ep.T; ++t)
    critic_features({ep.obs.data() + t * joint, joint}, ep.state(t), t, x.ptr() + t * width);
  return x;
}

std::vector<nn::Parameter*> ActorCritic::actor_parameters(std::size_t agent) {
  std::vector<nn::Parameter*> out;
  actors.at(agent).collect(out);
  return out;
}

std::vector<nn::Parameter*> ActorCritic::critic_parameters() {
  std::vector<nn::Parameter*> out;
  critic.collect(out);
  return out;
}

std::vector<nn::Parameter*> ActorCritic::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& a : actors) a.collect(out);
  critic.collect(out);
  return out;
}

}  // namespace tar2::marl

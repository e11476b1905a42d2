#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tar2/env/environment.hpp"

namespace tar2::env {

// One finished episode as consumed by the reward model and the trainer.
// Per-step arrays are indexed [t][agent] in row-major order; `states` holds
// s_0 .. s_T.
struct Episode {
  std::size_t T = 0;
  std::size_t N = 0;
  std::size_t obs_dim = 0;
  std::size_t state_dim = 0;
  std::size_t n_actions = 0;
  std::vector<double> obs;                // T * N * obs_dim
  std::vector<std::size_t> actions;       // T * N
  std::vector<std::uint8_t> active;       // T * N
  std::vector<double> states;             // (T + 1) * state_dim
  std::vector<double> action_probs;       // T * N * n_actions, empty when unknown
  double team_reward = 0.0;
  std::uint64_t seed = 0;
  std::vector<Event> events;

  std::span<const double> observation(std::size_t t, std::size_t i) const {
    return {obs.data() + (t * N + i) * obs_dim, obs_dim};
  }
  std::span<const double> state(std::size_t t) const { return {states.data() + t * state_dim, state_dim}; }
  std::span<const double> final_state() const { return state(T); }
  std::size_t action(std::size_t t, std::size_t i) const { return actions[t * N + i]; }
  bool is_active(std::size_t t, std::size_t i) const { return active[t * N + i] != 0; }

  // Checks array lengths against the declared sizes.
  void validate() const;
};

// Records an episode step by step while an environment is driven externally.
class EpisodeRecorder {
 public:
  // Resets `env` with `seed` and captures s_0.
  EpisodeRecorder(Environment& env, std::uint64_t seed);

  // Applies the joint action. `probs` (n_agents * n_actions) is optional.
  StepResult step(std::span<const std::size_t> actions, std::span<const double> probs = {});

  bool done() const { return env_.done(); }
  // Moves the finished episode out. Requires done().
  Episode finish();

 private:
  Environment& env_;
  Episode ep_;
};

}  // namespace tar2::env

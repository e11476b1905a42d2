#include "tar2/env/episode.hpp"

#include "tar2/common/error.hpp"

namespace tar2::env {

void Episode::validate() const {
  const std::size_t cells = T * N;
  require(T >= 1 && N >= 1, Errc::invalid_argument, "episode needs T >= 1 and N >= 1");
  require(obs.size() == cells * obs_dim, Errc::shape_mismatch, "episode observations length");
  require(actions.size() == cells, Errc::shape_mismatch, "episode actions length");
  require(active.size() == cells, Errc::shape_mismatch, "episode activity mask length");
  require(states.size() == (T + 1) * state_dim, Errc::shape_mismatch, "episode states length");
  require(action_probs.empty() || action_probs.size() == cells * n_actions, Errc::shape_mismatch,
          "episode action probabilities length");
  for (std::size_t a : actions) require(a < n_actions, Errc::invalid_argument, "episode action out of range");
}

EpisodeRecorder::EpisodeRecorder(Environment& env, std::uint64_t seed) : env_(env) {
  env_.reset(seed);
  ep_.T = env.horizon();
  ep_.N = env.n_agents();
  ep_.obs_dim = env.obs_dim();
  ep_.state_dim = env.state_dim();
  ep_.n_actions = env.n_actions();
  ep_.seed = seed;
  const std::size_t cells = ep_.T * ep_.N;
  ep_.obs.reserve(cells * ep_.obs_dim);
  ep_.actions.reserve(cells);
  ep_.active.reserve(cells);
  ep_.states.reserve((ep_.T + 1) * ep_.state_dim);
  const auto s0 = env.global_state();
  ep_.states.insert(ep_.states.end(), s0.begin(), s0.end());
}

StepResult EpisodeRecorder::step(std::span<const std::size_t> actions, std::span<const double> probs) {
  require(probs.empty() || probs.size() == ep_.N * ep_.n_actions, Errc::shape_mismatch,
          "recorder: probability block has the wrong length");
  const auto o = env_.observations();
  const auto m = env_.active_mask();
  const StepResult r = env_.step(actions);
  ep_.obs.insert(ep_.obs.end(), o.begin(), o.end());
  ep_.active.insert(ep_.active.end(), m.begin(), m.end());
  ep_.actions.insert(ep_.actions.end(), actions.begin(), actions.end());
  if (!probs.empty()) ep_.action_probs.insert(ep_.action_probs.end(), probs.begin(), probs.end());
  const auto s = env_.global_state();
  ep_.states.insert(ep_.states.end(), s.begin(), s.end());
  if (r.done) ep_.team_reward = r.reward;
  return r;
}

Episode EpisodeRecorder::finish() {
  require(env_.done(), Errc::state, "recorder: episode not finished");
  if (ep_.action_probs.size() != ep_.T * ep_.N * ep_.n_actions) ep_.action_probs.clear();
  ep_.events = env_.events();
  ep_.validate();
  return std::move(ep_);
}

}  // namespace tar2::env

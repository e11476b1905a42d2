#include "tar2/marl/rollout.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <random>
#include <thread>

#include "tar2/common/error.hpp"

namespace tar2::marl {

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lz;
  return out;
}

namespace {

Rollout run_episode(const ActorCritic& policy, env::Environment& e, std::uint64_t seed, bool greedy) {
  const env::EnvSpec& s = policy.spec();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  env::EpisodeRecorder rec(e, seed);
  Rollout out;
  std::vector<std::size_t> actions(s.n_agents);
  std::vector<double> probs(s.n_agents * s.n_actions), log_probs(s.n_agents);
  nn::Tensor feat(1, policy.critic_input_dim());
  while (!rec.done()) {
    for (std::size_t i = 0; i < s.n_agents; ++i) {
      const auto o = e.observation(i);
      const nn::Tensor logits = policy.actors[i].eval(nn::Tensor(1, s.obs_dim, o));
      const auto lp = log_softmax(logits.data());
      for (std::size_t a = 0; a < s.n_actions; ++a) probs[i * s.n_actions + a] = std::exp(lp[a]);
      std::size_t a = 0;
      if (greedy) {
        a = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      } else {
        // Inverse CDF over the categorical; always consumes one draw.
        double u = unit(rng), acc = 0.0;
        a = s.n_actions - 1;
        for (std::size_t k = 0; k < s.n_actions; ++k) {
          acc += probs[i * s.n_actions + k];
          if (u < acc) {
            a = k;
            break;
          }
        }
      }
      actions[i] = a;
      log_probs[i] = lp[a];
    }
    policy.critic_features(e.observations(), e.global_state(), e.t(), feat.ptr());
    const nn::Tensor v = policy.critic.eval(feat);
    for (std::size_t i = 0; i < s.n_agents; ++i) {
      out.log_probs.push_back(log_probs[i]);
      out.values.push_back(v[i]);
    }
    rec.step(actions, probs);
  }
  out.episode = rec.finish();
  return out;
}

}  // namespace

RolloutBatch collect_rollouts(const ActorCritic& policy, const env::Environment& prototype,
                              std::span<const std::uint64_t> seeds, const RolloutOptions& options) {
  require(env::spec_of(prototype) == policy.spec(), Errc::shape_mismatch,
          "collect_rollouts: policy was built for a different environment");
  const std::size_t n = seeds.size();
  std::vector<std::optional<Rollout>> slots(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    auto e = prototype.clone();
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        slots[k] = run_episode(policy, *e, seeds[k], options.greedy);
      } catch (const std::exception& ex) {
        errors[k] = ex.what();
        e = prototype.clone();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  RolloutBatch batch;
  for (std::size_t k = 0; k < n; ++k) {
    if (slots[k])
      batch.rollouts.push_back(std::move(*slots[k]));
    else
      batch.faults.push_back({k, errors[k]});
  }
  return batch;
}

}  // namespace tar2::marl

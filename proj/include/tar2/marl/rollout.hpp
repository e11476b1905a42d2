#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tar2/env/environment.hpp"
#include "tar2/env/episode.hpp"
#include "tar2/marl/networks.hpp"

namespace tar2::marl {

struct Rollout {
  env::Episode episode;
  std::vector<double> log_probs;  // T * N, log pi(a | o) under the collecting snapshot
  std::vector<double> values;     // T * N, normalized critic outputs
};

struct RolloutFault {
  std::size_t index = 0;
  std::string message;
};

struct RolloutBatch {
  std::vector<Rollout> rollouts;     // in seed order, faulted episodes removed
  std::vector<RolloutFault> faults;
};

struct RolloutOptions {
  std::size_t threads = 1;
  bool greedy = false;  // argmax actions instead of sampling
};

// One episode per seed. Each episode uses its seed both for the environment
// reset and for action sampling, so results do not depend on `threads`.
// The policy is only read.
RolloutBatch collect_rollouts(const ActorCritic& policy, const env::Environment& prototype,
                              std::span<const std::uint64_t> seeds, const RolloutOptions& options = {});

// Log-softmax of one logit row.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace tar2::marl

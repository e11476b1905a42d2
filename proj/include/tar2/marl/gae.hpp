#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tar2::marl {

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantage + value
};

// GAE(gamma, lambda) over one agent's reward stream of length T. The value
// after the last step is 0. When `active` is given, a step whose successor
// is inactive is treated as terminal and inactive steps get zero advantage
// and return.
AdvantageEstimate gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda,
                      std::span<const std::uint8_t> active = {});

}  // namespace tar2::marl

#include "tar2/marl/gae.hpp"

#include <string>

#include "tar2/common/error.hpp"

namespace tar2::marl {

AdvantageEstimate gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda,
                      std::span<const std::uint8_t> active) {
  const std::size_t T = rewards.size();
  if (values.size() != T || (!active.empty() && active.size() != T))
    fail(Errc::shape_mismatch, "gae: rewards (" + std::to_string(T) + "), values (" + std::to_string(values.size()) +
                                   ") and mask lengths differ");
  auto live = [&](std::size_t t) { return active.empty() || active[t] != 0; };
  AdvantageEstimate out{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
  double next_adv = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    if (!live(k)) {
      next_adv = 0.0;
      continue;
    }
    const bool terminal = k + 1 == T || !live(k + 1);
    const double next_value = terminal ? 0.0 : values[k + 1];
    const double delta = rewards[k] + gamma * next_value - values[k];
    out.advantages[k] = delta + (terminal ? 0.0 : gamma * lambda * next_adv);
    out.returns[k] = out.advantages[k] + values[k];
    next_adv = out.advantages[k];
  }
  return out;
}

}  // namespace tar2::marl

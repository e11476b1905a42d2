#include "tar2/analysis/modes.hpp"

namespace tar2::analysis {

std::string_view to_string(RedistributionMode m) {
  switch (m) {
    case RedistributionMode::tar2: return "tar2";
    case RedistributionMode::uniform: return "uniform";
    case RedistributionMode::temporal_only: return "temporal_only";
    case RedistributionMode::no_normalization: return "no_normalization";
    case RedistributionMode::no_outcome: return "no_outcome";
    case RedistributionMode::no_inverse_dynamics: return "no_inverse_dynamics";
  }
  return "unknown";
}

std::optional<RedistributionMode> parse_mode(std::string_view name) {
  for (RedistributionMode m : kAllModes)
    if (to_string(m) == name) return m;
  return std::nullopt;
}

}  // namespace tar2::analysis

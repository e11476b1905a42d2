#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace tar2::analysis {

// How the episodic team reward is turned into per-agent, per-step rewards.
enum class RedistributionMode {
  tar2,                 // learned scores, shift-and-normalize, exact return
  uniform,              // equal split over active cells
  temporal_only,        // learned temporal weights, uniform across agents
  no_normalization,     // raw learned scores used directly as rewards
  no_outcome,           // tar2 with the final-outcome embedding zeroed
  no_inverse_dynamics,  // tar2 trained without the inverse-dynamics term
};

inline constexpr std::array<RedistributionMode, 6> kAllModes{
    RedistributionMode::tar2,          RedistributionMode::uniform,    RedistributionMode::temporal_only,
    RedistributionMode::no_normalization, RedistributionMode::no_outcome, RedistributionMode::no_inverse_dynamics};

std::string_view to_string(RedistributionMode m);
std::optional<RedistributionMode> parse_mode(std::string_view name);

// Modes that need a reward model at all.
inline bool uses_reward_model(RedistributionMode m) { return m != RedistributionMode::uniform; }
// Modes whose rewards sum to the team reward by construction.
inline bool preserves_return(RedistributionMode m) { return m != RedistributionMode::no_normalization; }

}  // namespace tar2::analysis

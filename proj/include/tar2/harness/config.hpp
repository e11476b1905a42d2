#pragma once

// Experiment configuration as flat "key = value" text. Trainer keys use the
// MAPPO hyperparameter names (ppo_epochs, entropy_pen, ...); reward-model keys
// live under "tar2." and sweep grids under "sweep.".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tar2/marl/trainer.hpp"

namespace tar2::harness {

struct ExperimentConfig {
  std::string name = "experiment";
  marl::TrainerConfig trainer;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir;             // empty: <output root>/<name>
  std::size_t checkpoint_every = 0;   // iterations; 0 keeps only the final checkpoint
  std::size_t eval_episodes = 100;
  std::size_t final_window = 10;      // iterations averaged for "final" metrics
  std::map<std::string, std::vector<std::string>> sweep;

  void validate() const;
};

// Keys in canonical order.
const std::vector<std::string>& config_keys();

// Every error is Errc::config and names the origin, line and key.
ExperimentConfig parse_config(std::string_view text, const std::string& origin = "<text>");

// `ref` is a file path, or a name resolved as <name>.cfg then configs/<name>.cfg
// (also under $TAR2_CONFIG_DIR when set).
std::filesystem::path resolve_config(const std::string& ref);
ExperimentConfig load_config(const std::string& ref);

// `key` may be a full key or the unique last dotted component of one.
void set_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);
std::string get_value(const ExperimentConfig& cfg, std::string_view key);
// "KEY=VAL"
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

// Parses "5" as seeds 1..5 and "3,7,9" as that list.
std::vector<std::uint64_t> parse_seeds(std::string_view text);

// Every key, one per line, in canonical order; parse_config round-trips it.
std::string to_text(const ExperimentConfig& cfg);

// FNV-1a over the keys that influence training results (not seeds, output
// location, thread count or checkpoint cadence).
std::uint64_t config_hash(const ExperimentConfig& cfg);

// Output directory after applying $TAR2_OUTPUT_ROOT (default "runs").
std::filesystem::path output_directory(const ExperimentConfig& cfg);

}  // namespace tar2::harness

#pragma once

// Checkpoint files: a text header (format version, config hash, iteration,
// metadata including RNG states, and the full experiment config) ended by a
// line "end", followed by named arrays, each stored as
//   u64 name length | name bytes | u64 count | count x f64
// with all integers and reals little-endian.

#include <cstdint>
#include <filesystem>
#include <memory>

#include "tar2/common/state.hpp"
#include "tar2/harness/config.hpp"

namespace tar2::harness {

inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  StateDict state;
};

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, std::uint64_t seed,
                     const StateDict& state);

// Reads a checkpoint; Errc::io for unreadable files, Errc::state for
// malformed content.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Reads a checkpoint for use with `expected`; a config-hash mismatch is an
// Errc::config error unless `force` is set.
Checkpoint read_checkpoint(const std::filesystem::path& path, const ExperimentConfig& expected, bool force);

// Trainer restored from a checkpoint, built from `cfg` when given (e.g. a
// forced load under a different config) and from the embedded config otherwise.
std::unique_ptr<marl::Trainer> restore_trainer(const Checkpoint& ckpt, const ExperimentConfig* cfg = nullptr);

}  // namespace tar2::harness

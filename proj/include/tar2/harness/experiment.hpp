#pragma once

// Experiment orchestration behind the command-line tool. Every command writes
// under the config's output directory:
//   train   metrics_seed<S>.jsonl, checkpoint_seed<S>.ckpt, summary.json
//   ablate  <arm>/... per arm, curves/<arm>.csv, ranking.json
//   sweep   point_<k>/... per grid point, sweep.json
//   eval    eval.json, heatmap.csv

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tar2/harness/config.hpp"
#include "tar2/marl/trainer.hpp"

namespace tar2::harness {

using LogFn = std::function<void(const std::string&)>;

struct SeedResult {
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::size_t episodes = 0;
  double final_success_rate = 0.0;  // mean over the last final_window iterations
  double final_mean_return = 0.0;
  double success_auc = 0.0;         // mean success rate over all iterations
  double return_auc = 0.0;
  std::size_t equivalence_violations = 0;
  std::vector<double> success_curve;  // per iteration
  std::vector<double> return_curve;
  std::vector<std::size_t> episode_axis;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; NaN for a single seed
  double ci_lo = 0.0;   // 95% Student-t interval for the mean
  double ci_hi = 0.0;
  std::size_t n = 0;
};

Aggregate aggregate(const std::vector<double>& values);

struct RunSummary {
  std::string name;
  std::string mode;
  std::uint64_t config_hash = 0;
  std::vector<SeedResult> seeds;
  Aggregate final_success_rate, final_mean_return, success_auc, return_auc;
};

// Runs an existing trainer for `seed` to the end of its budget, writing
// metrics_seed<S>.jsonl (truncated first) and checkpoints under `dir`.
SeedResult train_seed(marl::Trainer& trainer, const ExperimentConfig& cfg, std::uint64_t seed,
                      const std::filesystem::path& dir, const LogFn& log = {});

// Trains every configured seed. A non-finite loss checkpoints the failing
// seed to fault_seed<S>.ckpt and rethrows (Errc::non_finite).
RunSummary run_train(const ExperimentConfig& cfg, const LogFn& log = {});

// Continues one seed from a checkpoint to the end of its budget, appending to
// that seed's metrics file.
SeedResult resume_train(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg, bool force,
                        const LogFn& log = {});

struct ArmResult {
  std::string arm;
  RunSummary summary;
};

// Runs `arms` (redistribution mode names) under the config's shared seeds;
// the result is ordered by mean success AUC, best first.
std::vector<ArmResult> run_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& arms,
                                  const LogFn& log = {});
std::vector<std::string> default_ablation_arms();

struct SweepPoint {
  std::vector<std::pair<std::string, std::string>> assignment;
  RunSummary summary;
};

// Cartesian product of the config's sweep grids, ordered by mean success AUC.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const LogFn& log = {});

struct EvalOptions {
  std::size_t episodes = 100;
  std::uint64_t seed = 1;
  bool greedy = false;
  bool force = false;
  std::filesystem::path output_dir;  // empty: next to the checkpoint
  const ExperimentConfig* expected = nullptr;  // checked against the header hash
};

struct EvalResult {
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  std::filesystem::path heatmap;
  std::filesystem::path report;
};

// Rolls out the checkpointed policy and exports the weight heatmap of the
// first evaluation episode, using the weights the trainer would apply (for
// the raw-score arm, the weights implied by its scores).
EvalResult run_eval(const std::filesystem::path& checkpoint, const EvalOptions& options, const LogFn& log = {});

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  double max_residual = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  // Name of a check whose residual is deliberately corrupted, to confirm
  // that the gate reports it.
  std::string inject;
  // Sees each check as soon as it finishes.
  std::function<void(const VerifyCheck&)> on_check;
};

std::vector<VerifyCheck> run_verify(const VerifyOptions& options = {}, const LogFn& log = {});
std::vector<std::string> verify_check_names();

}  // namespace tar2::harness

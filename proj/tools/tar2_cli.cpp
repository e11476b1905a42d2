// Command-line front end. Talks to the library only through its C interface.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tar2/tar2.h"

namespace {

enum Exit { kPass = 0, kConfigError = 1, kRuntimeFault = 2, kVerificationFailure = 3 };

int exit_code(tar2_status s) {
  switch (s) {
    case TAR2_OK: return kPass;
    case TAR2_ERR_CONFIG:
    case TAR2_ERR_INVALID_ARGUMENT: return kConfigError;
    case TAR2_ERR_VERIFICATION: return kVerificationFailure;
    default: return kRuntimeFault;
  }
}

int report(tar2_status s) {
  if (s != TAR2_OK) std::fprintf(stderr, "error (%s): %s\n", tar2_status_name(s), tar2_last_error());
  return exit_code(s);
}

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

struct ConfigFlags {
  std::string config;
  std::string seeds;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::size_t threads = 0;
  std::string mode;

  void attach(CLI::App* app, bool config_required) {
    auto* c = app->add_option("--config", config, "config file or name under configs/");
    if (config_required) c->required();
    app->add_option("--seeds", seeds, "seed count N (seeds 1..N) or a comma-separated list");
    app->add_option("--override", overrides, "KEY=VAL, repeatable")->allow_extra_args(false);
    app->add_option("--out", out_dir, "output directory (default $TAR2_OUTPUT_ROOT/<name>)");
    app->add_option("--threads", threads, "rollout worker threads");
    app->add_option("--mode", mode, "tar2|uniform|temporal_only|no_normalization|no_outcome|no_inverse_dynamics");
  }

  // Builds the config; returns a status and leaves *out null on failure.
  tar2_status build(tar2_config** out) const {
    *out = nullptr;
    tar2_config* cfg = nullptr;
    tar2_status s = config.empty() ? tar2_config_default(&cfg) : tar2_config_load(config.c_str(), &cfg);
    auto set = [&](const char* key, const std::string& value) {
      if (s == TAR2_OK && !value.empty()) s = tar2_config_set(cfg, key, value.c_str());
    };
    set("mode", mode);
    set("seeds", seeds);
    set("output_dir", out_dir);
    if (threads > 0) set("threads", std::to_string(threads));
    for (const auto& o : overrides)
      if (s == TAR2_OK) s = tar2_config_override(cfg, o.c_str());
    if (s == TAR2_OK) s = tar2_config_validate(cfg);
    if (s != TAR2_OK) {
      tar2_config_free(cfg);
      return s;
    }
    *out = cfg;
    return TAR2_OK;
  }
};

void print_check(const tar2_check* c, void*) {
  std::printf("%-24s %-4s %10llu  %-12.4g %-10.3g %s\n", c->name, c->passed ? "PASS" : "FAIL",
              static_cast<unsigned long long>(c->cases), c->max_residual, c->tolerance, c->detail);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agent-temporal reward redistribution for cooperative multi-agent RL"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tar2_version());

  ConfigFlags train_flags, ablate_flags, sweep_flags;
  std::string resume;
  bool force = false;
  auto* train = app.add_subcommand("train", "train every configured seed, write metrics, checkpoints and a summary");
  train_flags.attach(train, false);
  train->add_option("--resume", resume, "continue one seed from this checkpoint");
  train->add_flag("--force", force, "load a checkpoint even if its config hash differs");

  std::string arms;
  auto* ablate = app.add_subcommand("ablate", "run redistribution-mode arms under shared seeds and rank them");
  ablate_flags.attach(ablate, true);
  ablate->add_option("--arms", arms, "comma-separated modes (default tar2,no_outcome,no_inverse_dynamics,no_normalization)");

  auto* sweep = app.add_subcommand("sweep", "grid over the config's sweep.<key> lists");
  sweep_flags.attach(sweep, true);

  std::string checkpoint, eval_out, eval_config;
  std::uint64_t episodes = 100, eval_seed = 1;
  bool greedy = false, eval_force = false;
  auto* eval = app.add_subcommand("eval", "roll out a checkpointed policy and export a weight heatmap");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_flag("--greedy", greedy, "take argmax actions");
  eval->add_option("--out", eval_out, "output directory (default: next to the checkpoint)");
  eval->add_option("--config", eval_config, "check the checkpoint against this config");
  eval->add_flag("--force", eval_force, "ignore a config-hash mismatch");

  std::uint64_t verify_seed = 1;
  std::string inject;
  auto* verify = app.add_subcommand("verify", "run the property suite and print a pass/fail table");
  verify->add_option("--seed", verify_seed, "seed for the randomized checks");
  verify->add_option("--inject", inject, "corrupt the named check to exercise the gate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (*verify) {
    std::printf("%-24s %-4s %10s  %-12s %-10s %s\n", "check", "", "cases", "max resid", "tolerance", "detail");
    const tar2_status s = tar2_run_verify(verify_seed, inject.empty() ? nullptr : inject.c_str(), print_check, nullptr);
    if (s == TAR2_ERR_VERIFICATION) {
      std::printf("verification FAILED\n");
      return kVerificationFailure;
    }
    if (s == TAR2_OK) {
      std::printf("all checks passed\n");
      return kPass;
    }
    report(s);
    return kRuntimeFault;
  }

  if (*eval) {
    tar2_config* cfg = nullptr;
    if (!eval_config.empty()) {
      const tar2_status s = tar2_config_load(eval_config.c_str(), &cfg);
      if (s != TAR2_OK) return report(s);
    }
    tar2_eval_result r{};
    const tar2_status s = tar2_run_eval(checkpoint.c_str(), cfg, episodes, eval_seed, greedy ? 1 : 0, eval_force ? 1 : 0,
                                        eval_out.empty() ? nullptr : eval_out.c_str(), &r, print_line, nullptr);
    tar2_config_free(cfg);
    if (s == TAR2_OK)
      std::printf("episodes %llu  success rate %.4f  mean return %.4f\n", static_cast<unsigned long long>(r.episodes),
                  r.success_rate, r.mean_return);
    return report(s);
  }

  const ConfigFlags& flags = *train ? train_flags : *ablate ? ablate_flags : sweep_flags;
  tar2_config* cfg = nullptr;
  tar2_status s = flags.build(&cfg);
  if (s != TAR2_OK) return report(s);
  if (*train)
    s = resume.empty() ? tar2_run_train(cfg, print_line, nullptr)
                       : tar2_run_resume(resume.c_str(), cfg, force ? 1 : 0, print_line, nullptr);
  else if (*ablate)
    s = tar2_run_ablate(cfg, arms.empty() ? nullptr : arms.c_str(), print_line, nullptr);
  else
    s = tar2_run_sweep(cfg, print_line, nullptr);
  tar2_config_free(cfg);
  return report(s);
}

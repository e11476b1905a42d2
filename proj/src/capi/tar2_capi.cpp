#include "tar2/tar2.h"

#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "tar2/common/error.hpp"
#include "tar2/core/redistribution.hpp"
#include "tar2/harness/checkpoint.hpp"
#include "tar2/harness/experiment.hpp"

struct tar2_config {
  tar2::harness::ExperimentConfig cfg;
};

struct tar2_trainer {
  tar2::harness::ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::unique_ptr<tar2::marl::Trainer> trainer;
};

namespace {

thread_local std::string g_last_error;

tar2_status to_status(tar2::Errc c) {
  switch (c) {
    case tar2::Errc::invalid_argument: return TAR2_ERR_INVALID_ARGUMENT;
    case tar2::Errc::shape_mismatch: return TAR2_ERR_SHAPE;
    case tar2::Errc::non_finite: return TAR2_ERR_NON_FINITE;
    case tar2::Errc::config: return TAR2_ERR_CONFIG;
    case tar2::Errc::io: return TAR2_ERR_IO;
    case tar2::Errc::state: return TAR2_ERR_STATE;
    case tar2::Errc::runtime: return TAR2_ERR_RUNTIME;
    case tar2::Errc::verification: return TAR2_ERR_VERIFICATION;
  }
  return TAR2_ERR_INTERNAL;
}

// Runs `f`, translating exceptions into status codes and the thread's error text.
template <class F>
tar2_status guard(F&& f) {
  try {
    f();
    return TAR2_OK;
  } catch (const tar2::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TAR2_ERR_RUNTIME;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return TAR2_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TAR2_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return TAR2_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) tar2::fail(tar2::Errc::invalid_argument, std::string(what) + " must not be NULL");
}

tar2::harness::LogFn logger(tar2_log_fn log, void* user) {
  if (!log) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (cap == 0) return;
  need(buf, "buf");
  const size_t n = std::min(cap - 1, s.size());
  std::memcpy(buf, s.data(), n);
  buf[n] = '\0';
}

tar2::core::ScoreMatrix score_matrix(size_t T, size_t N, const double* scores, const uint8_t* active) {
  need(scores, "scores");
  std::vector<double> s(scores, scores + T * N);
  if (!active) return tar2::core::ScoreMatrix(T, N, std::move(s));
  return tar2::core::ScoreMatrix(T, N, std::move(s), std::vector<std::uint8_t>(active, active + T * N));
}

void fill_metrics(const tar2::marl::IterationMetrics& m, tar2_metrics* out) {
  out->iteration = m.iteration;
  out->episodes = m.episodes;
  out->mean_return = m.mean_return;
  out->success_rate = m.success_rate;
  out->policy_loss = m.policy_loss;
  out->value_loss = m.value_loss;
  out->entropy = m.entropy;
  out->rm_regression_loss = m.rm_regression_loss;
  out->rm_id_loss = m.rm_id_loss;
  out->delta_mean = m.delta_mean;
  out->delta_min = m.delta_min;
  out->delta_max = m.delta_max;
  out->clip_fraction = m.clip_fraction;
  out->rm_rounds = m.rm_rounds;
  out->model_age = m.model_age;
  out->equivalence_violations = m.equivalence_violations;
  out->doubling_residual = m.doubling_residual;
}

}  // namespace

extern "C" {

const char* tar2_version(void) { return "1.0.0"; }

const char* tar2_last_error(void) { return g_last_error.c_str(); }

const char* tar2_status_name(tar2_status s) {
  switch (s) {
    case TAR2_OK: return "ok";
    case TAR2_ERR_INVALID_ARGUMENT: return "invalid argument";
    case TAR2_ERR_SHAPE: return "shape mismatch";
    case TAR2_ERR_NON_FINITE: return "non-finite value";
    case TAR2_ERR_CONFIG: return "config error";
    case TAR2_ERR_IO: return "i/o error";
    case TAR2_ERR_STATE: return "state error";
    case TAR2_ERR_RUNTIME: return "runtime error";
    case TAR2_ERR_VERIFICATION: return "verification failure";
    case TAR2_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

tar2_status tar2_redistribute(size_t T, size_t N, const double* scores, const uint8_t* active, double team_reward,
                              double epsilon, double* rewards_out, double* temporal_out, double* agent_out) {
  return guard([&] {
    need(rewards_out, "rewards_out");
    const auto r = tar2::core::redistribute(score_matrix(T, N, scores, active), team_reward, epsilon);
    std::copy(r.rewards.data().begin(), r.rewards.data().end(), rewards_out);
    if (temporal_out) std::copy(r.weights.temporal.begin(), r.weights.temporal.end(), temporal_out);
    if (agent_out) std::copy(r.weights.agent.data().begin(), r.weights.agent.data().end(), agent_out);
  });
}

tar2_status tar2_agent_shares(size_t T, size_t N, const double* scores, const uint8_t* active, double epsilon,
                              double* delta_out) {
  return guard([&] {
    need(delta_out, "delta_out");
    const auto d = tar2::core::delta_k(tar2::core::compute_weights(score_matrix(T, N, scores, active), epsilon));
    std::copy(d.begin(), d.end(), delta_out);
  });
}

tar2_status tar2_config_default(tar2_config** out) {
  return guard([&] {
    need(out, "out");
    *out = new tar2_config{};
  });
}

tar2_status tar2_config_load(const char* ref, tar2_config** out) {
  return guard([&] {
    need(ref, "ref");
    need(out, "out");
    *out = new tar2_config{tar2::harness::load_config(ref)};
  });
}

tar2_status tar2_config_parse(const char* text, tar2_config** out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    *out = new tar2_config{tar2::harness::parse_config(text)};
  });
}

tar2_status tar2_config_override(tar2_config* cfg, const char* assignment) {
  return guard([&] {
    need(cfg, "cfg");
    need(assignment, "assignment");
    tar2::harness::apply_override(cfg->cfg, assignment);
  });
}

tar2_status tar2_config_set(tar2_config* cfg, const char* key, const char* value) {
  return guard([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    tar2::harness::set_value(cfg->cfg, key, value);
  });
}

tar2_status tar2_config_get(const tar2_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(cfg, "cfg");
    need(key, "key");
    copy_out(tar2::harness::get_value(cfg->cfg, key), buf, cap, needed);
  });
}

tar2_status tar2_config_text(const tar2_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(cfg, "cfg");
    copy_out(tar2::harness::to_text(cfg->cfg), buf, cap, needed);
  });
}

tar2_status tar2_config_hash(const tar2_config* cfg, uint64_t* out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = tar2::harness::config_hash(cfg->cfg);
  });
}

tar2_status tar2_config_validate(const tar2_config* cfg) {
  return guard([&] {
    need(cfg, "cfg");
    cfg->cfg.validate();
  });
}

void tar2_config_free(tar2_config* cfg) { delete cfg; }

tar2_status tar2_trainer_create(const tar2_config* cfg, uint64_t seed, tar2_trainer** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    cfg->cfg.validate();
    auto t = std::make_unique<tar2_trainer>();
    t->cfg = cfg->cfg;
    t->seed = seed;
    auto tc = cfg->cfg.trainer;
    tc.seed = seed;
    t->trainer = std::make_unique<tar2::marl::Trainer>(tc);
    *out = t.release();
  });
}

tar2_status tar2_trainer_iterate(tar2_trainer* t, tar2_metrics* out) {
  return guard([&] {
    need(t, "trainer");
    if (t->trainer->finished()) tar2::fail(tar2::Errc::state, "trainer has spent its episode budget");
    const auto m = t->trainer->iterate();
    if (out) fill_metrics(m, out);
  });
}

int tar2_trainer_finished(const tar2_trainer* t) { return t && t->trainer->finished() ? 1 : 0; }

tar2_status tar2_trainer_save(const tar2_trainer* t, const char* path) {
  return guard([&] {
    need(t, "trainer");
    need(path, "path");
    tar2::StateDict sd;
    t->trainer->save(sd);
    tar2::harness::save_checkpoint(path, t->cfg, t->seed, sd);
  });
}

tar2_status tar2_trainer_load(const char* path, const tar2_config* cfg, int force, tar2_trainer** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    const auto ck = cfg ? tar2::harness::read_checkpoint(path, cfg->cfg, force != 0) : tar2::harness::read_checkpoint(path);
    auto t = std::make_unique<tar2_trainer>();
    t->cfg = cfg ? cfg->cfg : ck.config;
    t->seed = ck.seed;
    t->trainer = tar2::harness::restore_trainer(ck, &t->cfg);
    *out = t.release();
  });
}

void tar2_trainer_free(tar2_trainer* t) { delete t; }

tar2_status tar2_run_train(const tar2_config* cfg, tar2_log_fn log, void* user) {
  return guard([&] {
    need(cfg, "cfg");
    tar2::harness::run_train(cfg->cfg, logger(log, user));
  });
}

tar2_status tar2_run_resume(const char* checkpoint, const tar2_config* cfg, int force, tar2_log_fn log, void* user) {
  return guard([&] {
    need(checkpoint, "checkpoint");
    need(cfg, "cfg");
    tar2::harness::resume_train(checkpoint, cfg->cfg, force != 0, logger(log, user));
  });
}

tar2_status tar2_run_ablate(const tar2_config* cfg, const char* arms, tar2_log_fn log, void* user) {
  return guard([&] {
    need(cfg, "cfg");
    std::vector<std::string> list;
    if (arms) {
      std::string s(arms);
      std::size_t start = 0;
      while (start <= s.size()) {
        const auto c = s.find(',', start);
        std::string item = s.substr(start, c == std::string::npos ? std::string::npos : c - start);
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (!item.empty()) list.push_back(item);
        if (c == std::string::npos) break;
        start = c + 1;
      }
    } else {
      list = tar2::harness::default_ablation_arms();
    }
    tar2::harness::run_ablate(cfg->cfg, list, logger(log, user));
  });
}

tar2_status tar2_run_sweep(const tar2_config* cfg, tar2_log_fn log, void* user) {
  return guard([&] {
    need(cfg, "cfg");
    tar2::harness::run_sweep(cfg->cfg, logger(log, user));
  });
}

tar2_status tar2_run_eval(const char* checkpoint, const tar2_config* cfg, uint64_t episodes, uint64_t seed, int greedy,
                          int force, const char* out_dir, tar2_eval_result* out, tar2_log_fn log, void* user) {
  return guard([&] {
    need(checkpoint, "checkpoint");
    tar2::harness::EvalOptions o;
    o.episodes = episodes;
    o.seed = seed;
    o.greedy = greedy != 0;
    o.force = force != 0;
    if (out_dir) o.output_dir = out_dir;
    if (cfg) o.expected = &cfg->cfg;
    const auto r = tar2::harness::run_eval(checkpoint, o, logger(log, user));
    if (out) *out = {r.episodes, r.success_rate, r.mean_return};
  });
}

tar2_status tar2_run_verify(uint64_t seed, const char* inject, tar2_check_fn on_check, void* user) {
  bool all = true;
  const tar2_status st = guard([&] {
    tar2::harness::VerifyOptions o;
    o.seed = seed;
    if (inject) o.inject = inject;
    o.on_check = [&](const tar2::harness::VerifyCheck& c) {
      if (!on_check) return;
      const tar2_check v{c.name.c_str(), c.passed ? 1 : 0, c.cases, c.max_residual, c.tolerance, c.detail.c_str()};
      on_check(&v, user);
    };
    for (const auto& c : tar2::harness::run_verify(o)) all = all && c.passed;
  });
  if (st != TAR2_OK) return st;
  if (!all) {
    g_last_error = "one or more property checks failed";
    return TAR2_ERR_VERIFICATION;
  }
  return TAR2_OK;
}

}  // extern "C"

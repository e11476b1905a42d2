// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Arguments, if given, select criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "episodes.hpp"
#include "fd_check.hpp"
#include "oracles.hpp"
#include "tar2/analysis/conditioning.hpp"
#include "tar2/analysis/gradients.hpp"
#include "tar2/common/rng.hpp"
#include "tar2/core/redistribution.hpp"
#include "tar2/harness/checkpoint.hpp"
#include "tar2/harness/config.hpp"
#include "tar2/harness/experiment.hpp"
#include "tar2/marl/rollout.hpp"
#include "tar2/nn/gradcheck.hpp"
#include "tar2/rm/reward_model.hpp"

using namespace tar2;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path workdir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tar2_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- fuzz corpus ---------------------------------------------------------

struct Instance {
  std::size_t T = 0, N = 0;
  std::vector<double> scores;
  std::vector<std::uint8_t> active;
  double R = 0.0;
};

// N in [1,8], T in [1,64]; each row and each column is made constant with
// probability 0.2; each cell is inactive with probability 0.1 (one cell is
// kept active so the episode has an acting agent); R uniform in [-10,10].
std::vector<Instance> corpus(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(1, 8), td(1, 64);
  std::uniform_real_distribution<double> rd(-10.0, 10.0), u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<Instance> out(count);
  for (auto& c : out) {
    c.N = nd(rng);
    c.T = td(rng);
    c.scores.resize(c.T * c.N);
    c.active.resize(c.T * c.N);
    for (auto& s : c.scores) s = g(rng);
    for (std::size_t t = 0; t < c.T; ++t)
      if (u(rng) < 0.2) std::fill_n(c.scores.begin() + t * c.N, c.N, g(rng));
    for (std::size_t i = 0; i < c.N; ++i)
      if (u(rng) < 0.2) {
        const double v = g(rng);
        for (std::size_t t = 0; t < c.T; ++t) c.scores[t * c.N + i] = v;
      }
    bool any = false;
    for (auto& a : c.active) any |= (a = u(rng) < 0.1 ? 0 : 1);
    if (!any) c.active[std::uniform_int_distribution<std::size_t>(0, c.T * c.N - 1)(rng)] = 1;
    c.R = rd(rng);
  }
  return out;
}

core::ScoreMatrix matrix(const Instance& c) { return core::ScoreMatrix(c.T, c.N, c.scores, c.active); }

// ---- criteria ------------------------------------------------------------

Outcome c1_return_equivalence() {
  const auto cases = corpus(10000, 101);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto r = core::redistribute(matrix(c), c.R);
    long double sum = 0.0L;
    for (double v : r.rewards.data()) sum += v;
    worst = std::max(worst, static_cast<double>(std::fabs(sum - c.R)) / std::max(1.0, std::abs(c.R)));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // Cross-check the weights against the independent reference on a subset.
  double ref = 0.0;
  for (std::size_t k = 0; k < 500; ++k) {
    const auto& c = cases[k];
    const auto r = core::redistribute(matrix(c), c.R, 1e-14);
    const auto o = oracle::redistribute(c.T, c.N, c.scores, c.active, c.R);
    for (std::size_t j = 0; j < c.T * c.N; ++j)
      ref = std::max(ref, std::abs(r.rewards.data()[j] - static_cast<double>(o.rewards[j])) / std::max(1.0, std::abs(c.R)));
  }
  return {worst <= 1e-9 && secs < 10.0 && ref <= 1e-9,
          fmt("cases=10000 max|sum-R|/max(1,|R|)=%.3g (tol 1e-9) time=%.2fs (limit 10s) reference-dev=%.3g (tol 1e-9)",
              worst, secs, ref)};
}

Outcome c2_delta() {
  const auto cases = corpus(10000, 101);
  double range = 0.0, sum_dev = 0.0;
  std::size_t full = 0;
  for (const auto& c : cases) {
    const auto w = core::compute_weights(matrix(c));
    const auto d = core::delta_k(w);
    long double s = 0.0L;
    for (double x : d) {
      range = std::max({range, -x, x - 1.0});
      s += x;
    }
    bool every_step = true;
    for (std::size_t t = 0; t < c.T; ++t) {
      bool on = false;
      for (std::size_t i = 0; i < c.N; ++i) on |= c.active[t * c.N + i] != 0;
      every_step &= on;
    }
    if (every_step) {
      ++full;
      sum_dev = std::max(sum_dev, static_cast<double>(std::fabs(s - 1.0L)));
    }
  }
  return {range <= 0.0 && sum_dev <= 1e-9,
          fmt("cases=10000 outside[0,1]=%.3g (tol 0) |sum delta-1|=%.3g over %zu fully-active cases (tol 1e-9)", range,
              sum_dev, full)};
}

// Linear softmax policy per agent with an analytic score function.
struct LinearSoftmax {
  std::size_t d, A;
  std::vector<double> theta;  // A x d
  std::vector<double> probs(const double* x) const {
    std::vector<double> z(A);
    double mx = -INFINITY;
    for (std::size_t a = 0; a < A; ++a) {
      z[a] = 0.0;
      for (std::size_t j = 0; j < d; ++j) z[a] += theta[a * d + j] * x[j];
      mx = std::max(mx, z[a]);
    }
    double s = 0.0;
    for (auto& v : z) s += (v = std::exp(v - mx));
    for (auto& v : z) v /= s;
    return z;
  }
};

Outcome c3_gradient_direction() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> rd(-10.0, 10.0);

  // Route 1: the library estimator on network policies and real rollouts.
  double lib = 0.0;
  std::size_t lib_cases = 0;
  for (const char* name : {"key_treasure", "switches"}) {
    auto proto = env::make_environment(name);
    for (int k = 0; k < 100; ++k) {
      marl::ActorCritic ac(env::spec_of(*proto), 32, 32, rng());
      const std::uint64_t seed = rng();
      env::Episode ep = marl::collect_rollouts(ac, *proto, std::span(&seed, 1)).rollouts.front().episode;
      ep.team_reward = rd(rng);
      std::vector<double> s(ep.T * ep.N);
      for (auto& x : s) x = g(rng);
      const auto shaped = core::redistribute(core::ScoreMatrix(ep.T, ep.N, s, ep.active), ep.team_reward);
      lib = std::max(lib, analysis::reinforce_estimates(ac, ep, shaped).max_relative_residual);
      ++lib_cases;
    }
  }

  // Route 2: analytic score functions of linear softmax policies on synthetic
  // trajectories, shaped returns taken from the redistributed rewards.
  double lin = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t T = 1 + rng() % 40, N = 1 + rng() % 5, d = 1 + rng() % 6, A = 2 + rng() % 5;
    std::vector<LinearSoftmax> pol(N, {d, A, {}});
    for (auto& p : pol) {
      p.theta.resize(A * d);
      for (auto& v : p.theta) v = g(rng);
    }
    std::vector<double> x(T * N * d), s(T * N);
    std::vector<std::uint8_t> active(T * N);
    std::vector<std::size_t> act(T * N);
    for (auto& v : x) v = g(rng);
    for (auto& v : s) v = g(rng);
    for (auto& a : active) a = (rng() % 10) != 0;
    active[0] = 1;
    for (std::size_t c = 0; c < T * N; ++c) {
      const auto p = pol[c % N].probs(&x[c * d]);
      act[c] = std::discrete_distribution<std::size_t>(p.begin(), p.end())(rng);
    }
    const double R = rd(rng);
    const auto shaped = core::redistribute(core::ScoreMatrix(T, N, s, active), R);
    const auto delta = core::delta_k(shaped.weights);
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<double> G(A * d, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t c = t * N + i;
        if (!active[c]) continue;
        const auto p = pol[i].probs(&x[c * d]);
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t j = 0; j < d; ++j) G[a * d + j] += ((a == act[c]) - p[a]) * x[c * d + j];
      }
      double ret = 0.0;
      for (std::size_t t = 0; t < T; ++t) ret += shaped.rewards.data()[t * N + i];
      double inf = 0.0, res = 0.0;
      for (double v : G) {
        inf = std::max(inf, std::abs(v * R));
        res = std::max(res, std::abs(v * ret - delta[i] * v * R));
      }
      lin = std::max(lin, res / (1.0 + inf));
    }
  }
  return {lib <= 1e-6 && lin <= 1e-6,
          fmt("network route: %zu pairs max residual %.3g; linear-softmax route: 200 pairs max residual %.3g "
              "(tol 1e-6*(1+|g_global|_inf))",
              lib_cases, lib, lin)};
}

Outcome c4_telescoping() {
  const auto cases = corpus(1000, 404);
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto r = core::redistribute(matrix(c), c.R);
    worst = std::max(worst, core::verify_telescoping(core::potential_series(r), r.rewards, 0.0).max_residual);
  }
  double dbl = 0.0;
  std::size_t batches = 0;
  for (const char* env_name : {"key_treasure", "switches"}) {
    marl::TrainerConfig tc;
    tc.env = env_name;
    tc.mode = analysis::RedistributionMode::tar2;
    tc.seed = 404;
    tc.episode_budget = 400;
    tc.reward_model.embed_dim = 16;
    tc.reward_model.num_heads = 2;
    tc.reward_model.depth = 1;
    tc.reward_model.batch_size = 32;
    tc.reward_model.update_freq = 50;
    tc.reward_model.update_epochs = 20;
    marl::Trainer t(tc);
    for (const auto& m : t.run()) {
      dbl = std::max(dbl, m.doubling_residual);
      ++batches;
    }
  }
  return {worst == 0.0 && dbl <= 1e-9,
          fmt("telescoping: 1000 cases max residual %.3g (exact); doubling: %zu trainer batches max "
              "|mean(sum s+R)-2 mean(R)| %.3g (tol 1e-9)",
              worst, batches, dbl)};
}

Outcome c5_autodiff() {
  const auto t0 = std::chrono::steady_clock::now();
  auto proto = env::make_environment("key_treasure");
  rm::RewardModelConfig c;
  c.embed_dim = 16;
  c.depth = 2;
  rm::RewardModel model(c, env::spec_of(*proto), 505);
  auto eps = testing::random_episodes(*proto, 2, 505);
  // Nonzero rewards so the regression term has a gradient of its own.
  eps[0].team_reward = 0.9;
  eps[1].team_reward = 0.3;
  const std::vector<const env::Episode*> batch{&eps[0], &eps[1]};
  auto build = [&](nn::Tape& t) { return model.loss(t, batch); };
  const auto params = model.parameters();
  const auto lib = nn::gradient_check(build, params, 1e-5);
  const double ref = testing::max_rel_error_vs_oracle(build, params, 1e-5);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t scalars = 0;
  for (auto* p : params) scalars += p->value.size();
  return {lib.entries.size() == params.size() && lib.max_rel_error <= 1e-4 && ref <= 1e-4 && secs < 300.0,
          fmt("%zu tensors (%zu scalars), h=1e-5: max rel error %.3g (library check), %.3g (reference) "
              "(tol 1e-4) time=%.1fs (limit 300s)",
              params.size(), scalars, lib.max_rel_error, ref, secs)};
}

Outcome c6_model_fit() {
  auto proto = env::make_environment("key_treasure");
  std::vector<double> ratios;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    rm::TrajectoryBuffer buffer(512);
    for (auto& ep : testing::random_episodes(*proto, 512, 600 + seed)) buffer.add(std::move(ep));
    std::vector<const env::Episode*> all;
    for (std::size_t k = 0; k < buffer.size(); ++k) all.push_back(&buffer.at(k));
    rm::RewardModel model(rm::RewardModelConfig{}, env::spec_of(*proto), seed);
    const double first = model.evaluate_loss(all).regression;
    for (int round = 0; round < 200; ++round) model.train_round(buffer);
    const double last = model.evaluate_loss(all).regression;
    ratios.push_back(last / first);
    per_seed += fmt(" %.4g->%.4g", first, last);
  }
  std::sort(ratios.begin(), ratios.end());
  return {ratios[1] <= 0.10,
          fmt("512 random-policy episodes, 200 rounds; buffer regression loss%s; median ratio %.4f (limit 0.10)",
              per_seed.c_str(), ratios[1])};
}

Outcome c7_variance() {
  const analysis::SyntheticContribution mixed{{0.0, 1.0}, {-1.0, 1.0}, 0.5};
  const auto cond = analysis::conditioning_variance_study(mixed, {.draws_per_class = 4000, .seed = 707, .bootstrap = 1000});

  auto proto = env::make_environment("key_treasure");
  const auto spec = env::spec_of(*proto);
  rm::RewardModelConfig rc;
  rc.embed_dim = 16;
  rc.num_heads = 2;
  rc.depth = 1;
  rc.batch_size = 32;
  rm::RewardModel model(rc, spec, 707);
  rm::TrajectoryBuffer buffer(512);
  for (auto& ep : testing::random_episodes(*proto, 512, 707)) buffer.add(std::move(ep));
  for (int round = 0; round < 100; ++round) model.train_round(buffer);
  marl::ActorCritic policy(spec, 64, 64, 707);
  analysis::VarianceStudyOptions vo;
  vo.num_samples = 50000;
  vo.seed = 707;
  const auto v = analysis::variance_study(policy, *proto, analysis::RedistributionMode::tar2, &model, vo);
  const bool finite = std::isfinite(v.var_tar2) && std::isfinite(v.var_orig) && std::isfinite(v.var_pbrs) &&
                      std::isfinite(v.covariance);
  return {cond.ci_gap.lo > 0.0 && v.samples == 50000 && finite && v.identity_residual <= 1e-9,
          fmt("conditioning: Var(c|tau)=%.4f Var(E[c|tau,Z])=%.4f gap CI [%.4f, %.4f] (need lo > 0); "
              "frozen-policy study, %zu samples: Var(tar2)=%.4g Var(orig)=%.4g Var(pbrs)=%.4g 2Cov=%.4g "
              "Var(pbrs)-Var(tar2) CI [%.4g, %.4g], identity residual %.3g (tol 1e-9)",
              cond.total, cond.explained, cond.ci_gap.lo, cond.ci_gap.hi, v.samples, v.var_tar2, v.var_orig,
              v.var_pbrs, 2.0 * v.covariance, v.ci_gap.lo, v.ci_gap.hi, v.identity_residual)};
}

// KeyTreasure arms shared by the learning-efficacy and ablation criteria.
std::vector<harness::ArmResult> g_arms;

const harness::RunSummary& arm(const std::string& name) {
  if (g_arms.empty()) {
    harness::ExperimentConfig cfg = harness::load_config(TAR2_SOURCE_DIR "/configs/keytreasure_tar2.cfg");
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.trainer.threads = 1;
    cfg.output_dir = workdir("keytreasure").string();
    g_arms = harness::run_ablate(cfg, {"tar2", "uniform", "no_normalization"}, [](const std::string& line) {
      std::fprintf(stderr, "  %s\n", line.c_str());
    });
  }
  for (const auto& a : g_arms)
    if (a.arm == name) return a.summary;
  std::abort();
}

Outcome c8_learning() {
  const auto& tar = arm("tar2");
  const auto& uni = arm("uniform");
  int auc_wins = 0, solved = 0;
  std::string rows;
  for (std::size_t k = 0; k < tar.seeds.size(); ++k) {
    const auto& a = tar.seeds[k];
    const auto& b = uni.seeds[k];
    auc_wins += a.success_auc >= b.success_auc;
    solved += a.final_success_rate >= 0.9;
    rows += fmt(" s%llu[auc %.3f vs %.3f, final %.2f]", static_cast<unsigned long long>(a.seed), a.success_auc,
                b.success_auc, a.final_success_rate);
  }
  return {auc_wins >= 4 && solved >= 3,
          fmt("TAR2 AUC >= uniform in %d/5 (need 4), final success >= 0.9 in %d/5 (need 3):%s", auc_wins, solved,
              rows.c_str())};
}

Outcome c9_ablation() {
  const auto& tar = arm("tar2");
  const auto& raw = arm("no_normalization");
  int below = 0;
  double min_rate = 1.0;
  std::string rows;
  for (std::size_t k = 0; k < tar.seeds.size(); ++k) {
    const auto& a = tar.seeds[k];
    const auto& b = raw.seeds[k];
    below += b.final_mean_return <= a.final_mean_return;
    const double rate = static_cast<double>(b.equivalence_violations) / static_cast<double>(b.episodes);
    min_rate = std::min(min_rate, rate);
    rows += fmt(" s%llu[%.3f vs %.3f, viol %.4f]", static_cast<unsigned long long>(a.seed), b.final_mean_return,
                a.final_mean_return, rate);
  }
  return {below >= 4 && min_rate > 0.99,
          fmt("raw-score final return <= TAR2 in %d/5 (need 4); min violation rate %.4f (need > 0.99):%s", below,
              min_rate, rows.c_str())};
}

Outcome c10_reproducibility() {
  harness::ExperimentConfig cfg = harness::load_config(TAR2_SOURCE_DIR "/configs/keytreasure_tar2.cfg");
  cfg.seeds = {7};
  cfg.trainer.threads = 1;
  cfg.trainer.episode_budget = 500;
  cfg.trainer.reward_model.update_freq = 100;
  cfg.trainer.reward_model.update_epochs = 20;
  cfg.checkpoint_every = 20;
  const fs::path a = workdir("repro_a"), b = workdir("repro_b");
  cfg.output_dir = a.string();
  harness::run_train(cfg);
  const std::string first = slurp(a / "metrics_seed7.jsonl");
  cfg.output_dir = b.string();
  cfg.checkpoint_every = 0;
  harness::run_train(cfg);
  const std::string second = slurp(b / "metrics_seed7.jsonl");

  // Interrupted run: the state and metrics lines as they stood after 20
  // iterations, checkpointed to disk, then resumed to the end of the budget.
  const fs::path c = workdir("repro_c");
  cfg.output_dir = c.string();
  cfg.checkpoint_every = 20;
  {
    marl::TrainerConfig tc = cfg.trainer;
    tc.seed = 7;
    marl::Trainer t(tc);
    std::ofstream m(c / "metrics_seed7.jsonl");
    std::istringstream lines(first);
    std::string line;
    for (int k = 0; k < 20; ++k) {
      t.iterate();
      std::getline(lines, line);
      m << line << "\n";
    }
    StateDict sd;
    t.save(sd);
    harness::save_checkpoint(c / "checkpoint_seed7.ckpt", cfg, 7, sd);
  }
  harness::resume_train(c / "checkpoint_seed7.ckpt", cfg, false);
  const std::string resumed = slurp(c / "metrics_seed7.jsonl");
  std::size_t lines = std::count(first.begin(), first.end(), '\n');
  return {!first.empty() && first == second && resumed == first,
          fmt("%zu metrics lines; rerun identical: %s; resumed at iteration 20 identical: %s", lines,
              first == second ? "yes" : "no", resumed == first ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"return-equivalence", c1_return_equivalence}, {"delta-properties", c2_delta},
      {"gradient-direction", c3_gradient_direction}, {"telescoping-doubling", c4_telescoping},
      {"autodiff-soundness", c5_autodiff},           {"reward-model-fit", c6_model_fit},
      {"variance-reports", c7_variance},             {"learning-efficacy", c8_learning},
      {"ablation-ordering", c9_ablation},            {"reproducibility", c10_reproducibility}};
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(static_cast<int>(k + 1))) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.passed;
    std::printf("%s  %2zu %-22s %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "tar2/analysis/conditioning.hpp"
#include "tar2/analysis/gradients.hpp"
#include "tar2/common/error.hpp"
#include "tar2/common/rng.hpp"
#include "tar2/harness/experiment.hpp"
#include "tar2/marl/popart.hpp"
#include "tar2/marl/rollout.hpp"
#include "tar2/marl/trainer.hpp"
#include "tar2/nn/gradcheck.hpp"

namespace tar2::harness {

namespace {

struct FuzzCase {
  core::ScoreMatrix scores;
  double R = 0.0;
};

// Random score matrices with degenerate rows/columns and random inactivity.
FuzzCase fuzz_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> nd(1, 8), td(1, 64);
  std::uniform_real_distribution<double> rd(-10.0, 10.0), u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 3.0);
  const std::size_t N = nd(rng), T = td(rng);
  std::vector<double> s(T * N);
  std::vector<std::uint8_t> active(T * N);
  for (auto& x : s) x = n(rng);
  for (auto& a : active) a = u(rng) < 0.1 ? 0 : 1;
  active[0] = 1;
  for (std::size_t t = 0; t < T; ++t)
    if (u(rng) < 0.2) {
      const double c = n(rng);
      for (std::size_t i = 0; i < N; ++i) s[t * N + i] = c;
    }
  for (std::size_t i = 0; i < N; ++i)
    if (u(rng) < 0.2) {
      const double c = n(rng);
      for (std::size_t t = 0; t < T; ++t) s[t * N + i] = c;
    }
  return {core::ScoreMatrix(T, N, std::move(s), std::move(active)), rd(rng)};
}

VerifyCheck make(std::string name, std::size_t cases, double residual, double tol, std::string detail = {}) {
  return {std::move(name), residual <= tol, cases, residual, tol, std::move(detail)};
}

VerifyCheck return_equivalence(std::mt19937_64& rng) {
  double worst = 0.0;
  const std::size_t n = 2000;
  for (std::size_t k = 0; k < n; ++k) {
    const FuzzCase c = fuzz_case(rng);
    const auto r = core::redistribute(c.scores, c.R);
    double sum = 0.0;
    for (double v : r.rewards.data()) sum += v;
    worst = std::max(worst, std::abs(sum - c.R) / std::max(1.0, std::abs(c.R)));
  }
  return make("return_equivalence", n, worst, 1e-9, "|sum of rewards - R| / max(1,|R|)");
}

VerifyCheck delta_bounds(std::mt19937_64& rng) {
  double worst = 0.0;
  const std::size_t n = 2000;
  for (std::size_t k = 0; k < n; ++k) {
    const FuzzCase c = fuzz_case(rng);
    const auto w = core::compute_weights(c.scores);
    const auto d = core::delta_k(w);
    double sum = 0.0;
    for (double x : d) {
      worst = std::max({worst, -x, x - 1.0});
      sum += x;
    }
    if (w.empty_timesteps.empty()) worst = std::max(worst, std::abs(sum - 1.0));
  }
  return make("delta_bounds", n, worst, 1e-9, "distance of delta_k from [0,1] and of sum_k delta_k from 1");
}

VerifyCheck telescoping(std::mt19937_64& rng) {
  double worst = 0.0;
  const std::size_t n = 1000;
  for (std::size_t k = 0; k < n; ++k) {
    const FuzzCase c = fuzz_case(rng);
    const auto r = core::redistribute(c.scores, c.R);
    worst = std::max(worst, core::verify_telescoping(core::potential_series(r), r.rewards, 0.0).max_residual);
  }
  return make("telescoping", n, worst, 0.0, "exact potential differences minus rewards");
}

VerifyCheck gradient_direction(std::mt19937_64& rng) {
  double worst = 0.0;
  std::size_t cases = 0;
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> rd(-10.0, 10.0);
  for (const char* name : {"key_treasure", "switches"}) {
    auto proto = env::make_environment(name);
    for (int k = 0; k < 25; ++k) {
      marl::ActorCritic ac(env::spec_of(*proto), 16, 16, rng());
      const std::uint64_t seed = rng();
      const auto batch = marl::collect_rollouts(ac, *proto, std::span(&seed, 1));
      env::Episode ep = batch.rollouts.front().episode;
      ep.team_reward = rd(rng);
      std::vector<double> s(ep.T * ep.N);
      for (auto& x : s) x = n(rng);
      const auto shaped = core::redistribute(core::ScoreMatrix(ep.T, ep.N, s, ep.active), ep.team_reward);
      worst = std::max(worst, analysis::reinforce_estimates(ac, ep, shaped).max_relative_residual);
      ++cases;
    }
  }
  return make("gradient_direction", cases, worst, 1e-6, "max |g_shaped - delta_k g_global| / (1 + |g_global|_inf)");
}

VerifyCheck model_gradients(std::mt19937_64& rng) {
  auto proto = env::make_environment("key_treasure");
  rm::RewardModelConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.depth = 2;
  c.lambda_id = 0.3;
  rm::RewardModel model(c, env::spec_of(*proto), rng());
  marl::ActorCritic ac(env::spec_of(*proto), 8, 8, rng());
  const std::uint64_t seeds[] = {rng(), rng()};
  const auto batch = marl::collect_rollouts(ac, *proto, seeds);
  std::vector<const env::Episode*> eps;
  for (const auto& r : batch.rollouts) eps.push_back(&r.episode);
  const auto report = nn::gradient_check([&](nn::Tape& t) { return model.loss(t, eps); }, model.parameters());
  return make("model_gradients", report.entries.size(), report.max_rel_error, 1e-4,
              "relative error of reward-model gradients against central differences");
}

VerifyCheck popart_inverse(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  marl::PopArt p(2);
  double worst = 0.0;
  std::size_t cases = 0;
  for (int u = 0; u < 50; ++u) {
    std::vector<std::vector<double>> batch(2);
    for (auto& b : batch)
      for (int k = 0; k < 20; ++k) b.push_back(5.0 + 30.0 * n(rng));
    p.update(batch);
    for (std::size_t c = 0; c < 2; ++c)
      for (int k = 0; k < 20; ++k) {
        const double x = 50.0 * n(rng);
        worst = std::max(worst, std::abs(p.normalize(c, p.denormalize(c, x)) - x) / std::max(1.0, std::abs(x)));
        ++cases;
      }
  }
  return make("popart_inverse", cases, worst, 1e-10, "normalize(denormalize(x)) - x");
}

VerifyCheck variance_identity(std::mt19937_64& rng) {
  auto proto = env::make_environment("key_treasure");
  marl::ActorCritic ac(env::spec_of(*proto), 64, 64, rng());
  analysis::VarianceStudyOptions o;
  o.num_samples = 2000;
  o.blocks = 100;
  o.bootstrap = 100;
  o.seed = rng();
  const auto r = analysis::variance_study(ac, *proto, analysis::RedistributionMode::uniform, nullptr, o);
  std::ostringstream d;
  d << "Var(pbrs)=" << r.var_pbrs << " Var(orig)=" << r.var_orig << " Var(tar2)=" << r.var_tar2
    << " Cov=" << r.covariance;
  return make("variance_identity", r.samples, r.identity_residual, 1e-9, d.str());
}

VerifyCheck conditioning(std::mt19937_64& rng) {
  const analysis::SyntheticContribution m{{0.0, 1.0}, {-1.0, 1.0}, 0.5};
  const auto r = analysis::conditioning_variance_study(m, {.draws_per_class = 4000, .seed = rng(), .bootstrap = 300});
  // Residual is how far the lower CI end of Var(c|tau) - Var(E[c|tau,Z]) sits below 0.
  std::ostringstream d;
  d << "total=" << r.total << " explained=" << r.explained << " gap CI=[" << r.ci_gap.lo << "," << r.ci_gap.hi << "]";
  VerifyCheck c = make("conditioning_direction", 2 * 4000, std::max(0.0, -r.ci_gap.lo), 0.0, d.str());
  c.passed = r.ci_gap.lo > 0.0;
  return c;
}

VerifyCheck objective_doubling(std::mt19937_64& rng) {
  marl::TrainerConfig c;
  c.env = "switches";
  c.mode = analysis::RedistributionMode::tar2;
  c.seed = rng();
  c.episode_budget = 40;
  c.actor_hidden = c.critic_hidden = 16;
  c.ppo.epochs = 2;
  c.ppo.batch_episodes = 5;
  c.reward_model.embed_dim = 8;
  c.reward_model.num_heads = 2;
  c.reward_model.depth = 1;
  c.reward_model.batch_size = 8;
  c.reward_model.update_freq = 10;
  c.reward_model.update_epochs = 3;
  marl::Trainer t(c);
  double worst = 0.0;
  std::size_t episodes = 0;
  for (const auto& m : t.run()) {
    worst = std::max(worst, m.doubling_residual);
    episodes = m.episodes;
  }
  return make("objective_doubling", episodes, worst, 1e-9, "|mean(sum s + R) - 2 mean(R)| per trainer batch");
}

using CheckFn = VerifyCheck (*)(std::mt19937_64&);

const std::vector<std::pair<std::string, CheckFn>>& checks() {
  static const std::vector<std::pair<std::string, CheckFn>> c{
      {"return_equivalence", return_equivalence}, {"delta_bounds", delta_bounds},
      {"telescoping", telescoping},               {"gradient_direction", gradient_direction},
      {"model_gradients", model_gradients},       {"popart_inverse", popart_inverse},
      {"variance_identity", variance_identity},   {"conditioning_direction", conditioning},
      {"objective_doubling", objective_doubling}};
  return c;
}

}  // namespace

std::vector<std::string> verify_check_names() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : checks()) out.push_back(name);
  return out;
}

std::vector<VerifyCheck> run_verify(const VerifyOptions& opt, const LogFn& log) {
  if (!opt.inject.empty()) {
    const auto names = verify_check_names();
    require(std::find(names.begin(), names.end(), opt.inject) != names.end(), Errc::config,
            "verify: unknown check '" + opt.inject + "'");
  }
  std::vector<VerifyCheck> out;
  std::uint64_t index = 0;
  for (const auto& [name, fn] : checks()) {
    std::mt19937_64 rng(derive_seed(opt.seed, index++));
    VerifyCheck c = fn(rng);
    if (c.name == opt.inject) {
      c.max_residual += 1.0;
      c.passed = false;
      c.detail += " [injected fault]";
    }
    if (log) log(c.name + (c.passed ? ": pass" : ": FAIL"));
    if (opt.on_check) opt.on_check(c);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace tar2::harness

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "fd_check.hpp"
#include "tar2/common/error.hpp"
#include "tar2/marl/gae.hpp"
#include "tar2/marl/popart.hpp"
#include "tar2/marl/ppo.hpp"
#include "tar2/marl/rollout.hpp"
#include "tar2/marl/trainer.hpp"

using namespace tar2;
using namespace tar2::marl;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_metrics(const IterationMetrics& a, const IterationMetrics& b) {
  const double xa[] = {a.mean_return, a.success_rate, a.policy_loss, a.value_loss, a.entropy, a.rm_regression_loss,
                       a.rm_id_loss, a.delta_mean, a.delta_min, a.delta_max, a.clip_fraction, a.doubling_residual};
  const double xb[] = {b.mean_return, b.success_rate, b.policy_loss, b.value_loss, b.entropy, b.rm_regression_loss,
                       b.rm_id_loss, b.delta_mean, b.delta_min, b.delta_max, b.clip_fraction, b.doubling_residual};
  for (std::size_t k = 0; k < std::size(xa); ++k)
    if (!same_bits(xa[k], xb[k])) return false;
  return a.iteration == b.iteration && a.episodes == b.episodes && a.rm_rounds == b.rm_rounds &&
         a.model_age == b.model_age && a.equivalence_violations == b.equivalence_violations;
}

TrainerConfig small_config(analysis::RedistributionMode mode, std::string env = "key_treasure") {
  TrainerConfig c;
  c.env = std::move(env);
  c.mode = mode;
  c.seed = 5;
  c.episode_budget = 40;
  c.episodes_per_iteration = 10;
  c.actor_hidden = 16;
  c.critic_hidden = 16;
  c.ppo.epochs = 2;
  c.ppo.batch_episodes = 5;
  c.reward_model.embed_dim = 8;
  c.reward_model.num_heads = 2;
  c.reward_model.depth = 1;
  c.reward_model.batch_size = 8;
  c.reward_model.update_freq = 20;
  c.reward_model.update_epochs = 5;
  return c;
}

// Samples with synthetic advantages and targets for loss-level checks.
std::vector<PpoSample> synthetic_samples(const std::vector<Rollout>& rollouts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<PpoSample> out;
  for (const Rollout& r : rollouts) {
    PpoSample s;
    s.rollout = &r;
    const std::size_t cells = r.episode.T * r.episode.N;
    for (std::size_t k = 0; k < cells; ++k) {
      s.advantages.push_back(n(rng));
      s.targets.push_back(n(rng));
      s.old_values.push_back(r.values[k]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint64_t> seed_range(std::uint64_t from, std::size_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::size_t k = 0; k < count; ++k) s[k] = from + k;
  return s;
}

}  // namespace

TEST_CASE("gae examples") {
  SUBCASE("reward-to-go limit") {
    const std::vector<double> s{0.5, -1.0, 2.0, 0.25}, v(4, 0.0);
    const auto est = gae(s, v, 1.0, 1.0);
    CHECK(est.advantages[0] == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(est.advantages[1] == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(est.advantages[3] == 0.25);
  }
  SUBCASE("two-step hand recursion") {
    // delta1 = 0.8, delta0 = 0.99 * 0.2 - 0.5 = -0.302,
    // A0 = -0.302 + 0.99 * 0.95 * 0.8 = -0.302 + 0.7524 = 0.4504.
    const auto est = gae(std::vector<double>{0.0, 1.0}, std::vector<double>{0.5, 0.2}, 0.99, 0.95);
    CHECK(est.advantages[0] == doctest::Approx(0.4504).epsilon(1e-12));
    CHECK(est.advantages[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(est.returns[0] == doctest::Approx(0.9504).epsilon(1e-12));
    CHECK(est.advantages[0] == doctest::Approx(oracle::gae({0.0, 1.0}, {0.5, 0.2}, 0.99, 0.95)[0]).epsilon(1e-12));
  }
  SUBCASE("zero in, zero out") {
    const auto est = gae(std::vector<double>(5, 0.0), std::vector<double>(5, 0.0), 0.99, 0.95);
    for (double a : est.advantages) CHECK(a == 0.0);
  }
  CHECK_THROWS_AS(gae(std::vector<double>(3), std::vector<double>(2), 0.9, 0.9), Error);
}

TEST_CASE("gae matches the term-by-term oracle") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + rng() % 30;
    std::vector<double> s(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      s[t] = n(rng);
      v[t] = n(rng);
    }
    const double gamma = 0.9 + 0.1 * (rng() % 10) / 10.0, lambda = (rng() % 11) / 10.0;
    const auto est = gae(s, v, gamma, lambda);
    const auto ref = oracle::gae(s, v, gamma, lambda);
    for (std::size_t t = 0; t < T; ++t) {
      CHECK(est.advantages[t] == doctest::Approx(ref[t]).epsilon(1e-12));
      CHECK(est.returns[t] == doctest::Approx(ref[t] + v[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gae ends an agent's stream when it becomes inactive") {
  const std::vector<double> s{1.0, 2.0, 0.0, 0.0}, v{0.1, 0.2, 0.3, 0.4};
  const std::vector<std::uint8_t> live{1, 1, 0, 0};
  const auto est = gae(s, v, 0.99, 0.95, live);
  const auto ref = oracle::gae({1.0, 2.0}, {0.1, 0.2}, 0.99, 0.95);
  CHECK(est.advantages[0] == doctest::Approx(ref[0]).epsilon(1e-14));
  CHECK(est.advantages[1] == doctest::Approx(ref[1]).epsilon(1e-14));
  CHECK(est.advantages[2] == 0.0);
  CHECK(est.returns[3] == 0.0);
}

TEST_CASE("popart moments, inverse pair and output preservation") {
  SUBCASE("first update with [1,3]") {
    PopArt p(1);
    p.update({{1.0, 3.0}});
    CHECK(p.mean(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(p.stddev(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.normalize(0, 1.0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(p.normalize(0, 3.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("inverse pair") {
    PopArt p(2);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(3.0, 5.0);
    for (int k = 0; k < 20; ++k) p.update({{n(rng), n(rng)}, {n(rng)}});
    for (int k = 0; k < 100; ++k) {
      const double x = n(rng) * 10.0;
      CHECK(std::abs(p.denormalize(1, p.normalize(1, x)) - x) <= 1e-10);
    }
  }
  SUBCASE("constant stream normalizes towards zero") {
    PopArt p(1);
    double last = 0.0;
    for (int k = 0; k < 5000; ++k) {
      p.update({{4.0, 4.0}});
      last = p.normalize(0, 4.0);
    }
    CHECK(std::abs(last) < 1e-9);
    CHECK(p.stddev(0) > 0.0);
  }
  SUBCASE("critic predictions survive a statistics update") {
    std::mt19937_64 rng(2);
    nn::Linear head("h", 4, 3);
    head.init(rng);
    for (double& b : head.bias.value.data()) b = 0.3;
    PopArt p(3);
    p.update({{1.0, 2.0}, {5.0}, {-3.0, 0.0, 1.0}});
    const nn::Tensor x(5, 4, std::vector<double>{0.1, -0.2, 0.3, 0.4, 1, 2, 3, 4, -1, 0, 1, 0, 0.5, 0.5, 0.5, 0.5,
                                                 2, -2, 2, -2});
    const nn::Tensor before = head.eval(x);
    const std::size_t channel_of[] = {0, 1, 2};
    p.update_preserving({{10.0, 20.0}, {}, {7.0}}, head, channel_of);
    const nn::Tensor after = head.eval(x);
    PopArt ref(3);
    ref.update({{1.0, 2.0}, {5.0}, {-3.0, 0.0, 1.0}});
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(p.denormalize(j, after(r, j)) == doctest::Approx(ref.denormalize(j, before(r, j))).epsilon(1e-12));
  }
}

TEST_CASE("clipped surrogate boundary cases") {
  CHECK(clipped_surrogate(1.0, 0.7, 0.2) == 0.7);
  CHECK(clipped_surrogate(2.0, 1.5, 0.2) == doctest::Approx(1.2 * 1.5));
  CHECK(clipped_surrogate(2.0, -1.5, 0.2) == doctest::Approx(-3.0));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
}

TEST_CASE("rollouts: reproducible, thread-count independent, consistent log-probs") {
  auto e = env::make_environment("switches");
  ActorCritic net(env::spec_of(*e), 16, 16, 9);
  const auto seeds = seed_range(100, 7);
  const RolloutBatch one = collect_rollouts(net, *e, seeds);
  const RolloutBatch three = collect_rollouts(net, *e, seeds, {.threads = 3});
  REQUIRE(one.rollouts.size() == 7);
  REQUIRE(three.rollouts.size() == 7);
  CHECK(one.faults.empty());
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(one.rollouts[k].episode.actions == three.rollouts[k].episode.actions);
    CHECK(one.rollouts[k].episode.obs == three.rollouts[k].episode.obs);
    CHECK(one.rollouts[k].log_probs == three.rollouts[k].log_probs);
    CHECK(one.rollouts[k].values == three.rollouts[k].values);
  }

  const auto g1 = collect_rollouts(net, *e, seeds, {.greedy = true});
  const auto g2 = collect_rollouts(net, *e, seed_range(100, 7), {.greedy = true});
  CHECK(g1.rollouts[0].episode.actions == g2.rollouts[0].episode.actions);

  double worst = 0.0;
  for (const Rollout& r : one.rollouts) {
    const env::Episode& ep = r.episode;
    for (std::size_t t = 0; t < ep.T; ++t)
      for (std::size_t i = 0; i < ep.N; ++i) {
        const auto o = ep.observation(t, i);
        const nn::Tensor logits = net.actors[i].eval(nn::Tensor(1, ep.obs_dim, std::vector<double>(o.begin(), o.end())));
        const auto lp = log_softmax(logits.data());
        worst = std::max(worst, std::abs(lp[ep.action(t, i)] - r.log_probs[t * ep.N + i]));
      }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("actor and critic losses: finite differences and descent") {
  auto e = env::make_environment("key_treasure");
  ActorCritic net(env::spec_of(*e), 8, 8, 4);
  const auto batch = collect_rollouts(net, *e, seed_range(1, 3));
  // Perturb the policy so ratios differ from 1 and some samples clip.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto* p : net.parameters())
    for (double& w : p->value.data()) w += n(rng);
  const auto samples = synthetic_samples(batch.rollouts, 7);
  std::vector<const PpoSample*> mb;
  for (const auto& s : samples) mb.push_back(&s);
  PpoConfig cfg;
  cfg.value_clip = 0.5;

  for (std::size_t i = 0; i < 2; ++i) {
    const double err = testing::max_rel_error_vs_oracle(
        [&](nn::Tape& t) { return actor_loss(t, net.actors[i], i, mb, cfg).total; }, net.actor_parameters(i));
    CHECK(err <= 1e-4);
  }
  const double err = testing::max_rel_error_vs_oracle([&](nn::Tape& t) { return critic_loss(t, net, mb, cfg); },
                                                      net.critic_parameters());
  CHECK(err <= 1e-4);

  auto combined = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      nn::Tape t(false);
      total += actor_loss(t, net.actors[i], i, mb, cfg).total.scalar();
    }
    nn::Tape t(false);
    return total + critic_loss(t, net, mb, cfg).scalar();
  };
  PpoConfig small = cfg;
  small.epochs = 1;
  small.batch_episodes = 100;
  small.policy_lr = small.value_lr = 1e-5;
  PpoLearner learner(net, small);
  const double before = combined();
  std::mt19937_64 shuffle(1);
  learner.update(samples, shuffle);
  CHECK(combined() < before);
}

TEST_CASE("actor loss reproduces the per-sample surrogate") {
  auto e = env::make_environment("key_treasure");
  ActorCritic net(env::spec_of(*e), 8, 8, 12);
  const auto batch = collect_rollouts(net, *e, seed_range(40, 2));
  const auto samples = synthetic_samples(batch.rollouts, 8);
  std::vector<const PpoSample*> mb{&samples[0], &samples[1]};
  PpoConfig cfg;
  cfg.entropy_pen = 0.0;
  // Unchanged policy: every ratio is 1, so the loss is minus the mean advantage.
  nn::Tape t(false);
  const ActorLoss l = actor_loss(t, net.actors[1], 1, mb, cfg);
  double sum = 0.0;
  for (const auto* s : mb)
    for (std::size_t k = 1; k < s->advantages.size(); k += 2) sum += s->advantages[k];
  CHECK(l.samples == 40);
  CHECK(l.total.scalar() == doctest::Approx(-sum / 40.0).epsilon(1e-12));
  CHECK(l.clip_fraction == 0.0);
}

TEST_CASE("trainer: smoke on switches, buffer growth, credit conservation") {
  TrainerConfig c = small_config(analysis::RedistributionMode::uniform, "switches");
  c.reward_model.buffer_capacity = 25;
  Trainer uni(c);
  const auto metrics = uni.run();
  REQUIRE(metrics.size() == 4);
  for (const auto& m : metrics) {
    CHECK(std::isfinite(m.policy_loss));
    CHECK(std::isfinite(m.value_loss));
    CHECK(m.equivalence_violations == 0);
    CHECK(m.doubling_residual <= 1e-9);
  }
  CHECK(metrics.back().episodes == 40);
  CHECK(uni.reward_model() == nullptr);

  c.mode = analysis::RedistributionMode::tar2;
  Trainer tar(c);
  std::vector<std::size_t> sizes;
  while (!tar.finished()) {
    const auto m = tar.iterate();
    sizes.push_back(tar.buffer().size());
    CHECK(m.equivalence_violations == 0);
    for (std::size_t e = 0; e < tar.last_rollouts().size(); ++e)
      CHECK(core::return_equivalent(tar.last_rewards()[e], tar.last_rollouts()[e].episode.team_reward));
  }
  CHECK(sizes == std::vector<std::size_t>{10, 20, 25, 25});
  CHECK(tar.reward_model()->rounds_trained() == 10);
}

TEST_CASE("trainer: raw-score ablation breaks equivalence, warmup is uniform") {
  Trainer raw(small_config(analysis::RedistributionMode::no_normalization));
  const auto m = raw.iterate();
  CHECK(m.equivalence_violations == 10);
  CHECK(std::isnan(m.delta_mean));

  Trainer tar(small_config(analysis::RedistributionMode::tar2));
  const auto first = tar.iterate();
  CHECK(first.delta_min == doctest::Approx(0.5));
  CHECK(first.delta_max == doctest::Approx(0.5));
  CHECK(std::isnan(first.rm_regression_loss));
  tar.iterate();
  const auto third = tar.iterate();
  CHECK(std::isfinite(third.rm_regression_loss));
  CHECK(third.delta_mean == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("trainer: seeded runs and checkpoint continuation are bit-identical") {
  const TrainerConfig c = small_config(analysis::RedistributionMode::tar2);
  Trainer a(c), b(c);
  const auto ma = a.run(), mb = b.run();
  REQUIRE(ma.size() == mb.size());
  for (std::size_t k = 0; k < ma.size(); ++k) CHECK(same_metrics(ma[k], mb[k]));

  Trainer first(c);
  first.iterate();
  first.iterate();
  StateDict state;
  first.save(state);
  Trainer resumed(c);
  resumed.load(state);
  CHECK(resumed.episodes() == 20);
  for (int k = 0; k < 2; ++k) CHECK(same_metrics(first.iterate(), resumed.iterate()));
  // The seeded runs above went through the same iterations uninterrupted.
  Trainer fresh(c);
  const auto all = fresh.run();
  Trainer again(c);
  again.load(state);
  CHECK(same_metrics(again.iterate(), all[2]));
}

TEST_CASE("trainer: non-finite loss halts and reports the iteration") {
  Trainer t(small_config(analysis::RedistributionMode::uniform));
  t.iterate();
  t.policy().critic.layers[0].weight.value[0] = std::numeric_limits<double>::quiet_NaN();
  std::size_t reported = 0;
  try {
    t.run({}, [&](std::size_t it) { reported = it; });
    FAIL("expected a non-finite failure");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite);
  }
  CHECK(reported == 2);
}

TEST_CASE("trainer config validation") {
  TrainerConfig c;
  c.episode_budget = 0;
  CHECK_THROWS_AS(Trainer{c}, Error);
  c = TrainerConfig{};
  c.env = "nowhere";
  CHECK_THROWS_AS(Trainer{c}, Error);
  c = TrainerConfig{};
  c.ppo.policy_clip = 0.0;
  CHECK_THROWS_AS(Trainer{c}, Error);
}

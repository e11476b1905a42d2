#include "tar2/marl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tar2/analysis/shaping.hpp"
#include "tar2/common/error.hpp"
#include "tar2/common/rng.hpp"
#include "tar2/marl/gae.hpp"

namespace tar2::marl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream indices far above any episode index.
constexpr std::uint64_t kNetworkStream = ~0ULL - 1;
constexpr std::uint64_t kModelStream = ~0ULL - 2;
constexpr std::uint64_t kShuffleStream = ~0ULL - 3;

}  // namespace

void TrainerConfig::validate() const {
  require(episode_budget > 0, Errc::config, "trainer: episode budget must be positive");
  require(episodes_per_iteration > 0, Errc::config, "trainer: episodes_per_iteration must be positive");
  require(threads > 0, Errc::config, "trainer: threads must be positive");
  require(gamma >= 0.0 && gamma <= 1.0 && gae_lambda >= 0.0 && gae_lambda <= 1.0, Errc::config,
          "trainer: gamma and gae_lambda must be in [0,1]");
  require(popart_beta >= 0.0 && popart_beta < 1.0, Errc::config, "trainer: popart decay must be in [0,1)");
  require(redistribution_epsilon > 0.0, Errc::config, "trainer: redistribution epsilon must be positive");
  ppo.validate();
  reward_model.validate();
}

Trainer::Trainer(const TrainerConfig& cfg)
    : cfg_(cfg),
      buffer_(cfg.reward_model.buffer_capacity),
      rng_(derive_seed(cfg.seed, kShuffleStream)),
      rm_regression_loss_(kNaN),
      rm_id_loss_(kNaN) {
  cfg_.validate();
  env_ = env::make_environment(cfg_.env);
  const env::EnvSpec spec = env::spec_of(*env_);
  net_ = std::make_unique<ActorCritic>(spec, cfg_.actor_hidden, cfg_.critic_hidden,
                                       derive_seed(cfg_.seed, kNetworkStream));
  ppo_ = std::make_unique<PpoLearner>(*net_, cfg_.ppo);
  if (analysis::uses_reward_model(cfg_.mode))
    model_ = std::make_unique<rm::RewardModel>(analysis::model_config_for(cfg_.mode, cfg_.reward_model), spec,
                                               derive_seed(cfg_.seed, kModelStream));
  popart_ = PopArt(cfg_.popart_per_agent ? spec.n_agents : 1, cfg_.popart_beta);
}

void Trainer::refit_reward_model() {
  const auto rounds = model_->train(buffer_);
  if (!rounds.empty()) {
    rm_regression_loss_ = rounds.back().loss.regression;
    rm_id_loss_ = rounds.back().loss.id;
  }
  ++refits_;
  last_refit_episode_ = episodes_;
}

IterationMetrics Trainer::iterate() {
  require(!finished(), Errc::state, "trainer: episode budget already spent");
  const env::EnvSpec& spec = net_->spec();
  const std::size_t N = spec.n_agents;
  const std::size_t count = std::min(cfg_.episodes_per_iteration, cfg_.episode_budget - episodes_);
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t k = 0; k < count; ++k) seeds[k] = derive_seed(cfg_.seed, episodes_ + k);

  RolloutBatch batch = collect_rollouts(*net_, *env_, seeds, RolloutOptions{.threads = cfg_.threads});
  IterationMetrics m;
  m.faults = batch.faults.size();
  std::vector<Rollout>& rollouts = batch.rollouts;
  const std::size_t E = rollouts.size();

  if (model_)
    for (const Rollout& r : rollouts) buffer_.add(r.episode);

  // Shaped rewards.
  const bool learned = model_ && (refits_ > 0 || cfg_.mode == analysis::RedistributionMode::no_normalization);
  std::vector<core::ScoreMatrix> scores;
  if (learned && E > 0) {
    std::vector<const env::Episode*> eps;
    for (const Rollout& r : rollouts) eps.push_back(&r.episode);
    scores = model_->score_batch(eps);
  }
  std::vector<core::Matrix> rewards(E);
  double delta_sum = 0.0, delta_min = kNaN, delta_max = kNaN;
  std::size_t delta_n = 0;
  double sum_R = 0.0, sum_shaped_plus_R = 0.0;
  std::size_t successes = 0;
  for (std::size_t e = 0; e < E; ++e) {
    const env::Episode& ep = rollouts[e].episode;
    analysis::ShapedEpisode shaped =
        analysis::shape_episode(cfg_.mode, learned ? &scores[e] : nullptr, ep, cfg_.redistribution_epsilon);
    const bool equivalent = core::return_equivalent(shaped.rewards, ep.team_reward);
    if (!equivalent) {
      if (analysis::preserves_return(cfg_.mode))
        fail(Errc::verification, "trainer: shaped rewards of episode seed " + std::to_string(ep.seed) +
                                     " do not sum to the team reward");
      ++m.equivalence_violations;
    }
    if (shaped.weights) {
      for (double d : core::delta_k(*shaped.weights)) {
        delta_sum += d;
        delta_min = delta_n == 0 ? d : std::min(delta_min, d);
        delta_max = delta_n == 0 ? d : std::max(delta_max, d);
        ++delta_n;
      }
    }
    sum_R += ep.team_reward;
    sum_shaped_plus_R += shaped.rewards.sum() + ep.team_reward;
    successes += ep.team_reward >= cfg_.success_threshold;
    rewards[e] = std::move(shaped.rewards);
  }
  if (E > 0) {
    const double n = static_cast<double>(E);
    m.mean_return = sum_R / n;
    m.success_rate = static_cast<double>(successes) / n;
    m.doubling_residual = std::abs(sum_shaped_plus_R / n - 2.0 * sum_R / n);
  }
  m.delta_mean = delta_n > 0 ? delta_sum / static_cast<double>(delta_n) : kNaN;
  m.delta_min = delta_min;
  m.delta_max = delta_max;

  // Advantages against denormalized values, then PopArt on the returns.
  std::vector<PpoSample> samples(E);
  std::vector<std::vector<double>> returns_by_channel(popart_.channels());
  std::vector<double> rew(spec.horizon), val(spec.horizon);
  std::vector<std::uint8_t> act(spec.horizon);
  for (std::size_t e = 0; e < E; ++e) {
    const Rollout& r = rollouts[e];
    const env::Episode& ep = r.episode;
    PpoSample& s = samples[e];
    s.rollout = &r;
    s.advantages.assign(ep.T * N, 0.0);
    s.targets.assign(ep.T * N, 0.0);
    s.old_values.assign(ep.T * N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      rew.resize(ep.T);
      val.resize(ep.T);
      act.resize(ep.T);
      for (std::size_t t = 0; t < ep.T; ++t) {
        rew[t] = rewards[e](t, i);
        val[t] = popart_.denormalize(channel(i), r.values[t * N + i]);
        act[t] = ep.active[t * N + i];
      }
      const AdvantageEstimate est = gae(rew, val, cfg_.gamma, cfg_.gae_lambda, act);
      for (std::size_t t = 0; t < ep.T; ++t) {
        const std::size_t k = t * N + i;
        s.advantages[k] = est.advantages[t];
        s.targets[k] = est.returns[t];   // raw for now
        s.old_values[k] = val[t];        // raw for now
        if (act[t]) returns_by_channel[channel(i)].push_back(est.returns[t]);
      }
    }
  }
  std::vector<std::size_t> channel_of(N);
  for (std::size_t i = 0; i < N; ++i) channel_of[i] = channel(i);
  popart_.update_preserving(returns_by_channel, net_->critic.layers.back(), channel_of);
  double adv_sum = 0.0, adv_sq = 0.0;
  std::size_t adv_n = 0;
  for (PpoSample& s : samples) {
    const env::Episode& ep = s.rollout->episode;
    for (std::size_t k = 0; k < ep.T * N; ++k) {
      s.targets[k] = popart_.normalize(channel(k % N), s.targets[k]);
      s.old_values[k] = popart_.normalize(channel(k % N), s.old_values[k]);
      if (ep.active[k]) {
        adv_sum += s.advantages[k];
        adv_sq += s.advantages[k] * s.advantages[k];
        ++adv_n;
      }
    }
  }
  if (cfg_.normalize_advantages && adv_n > 1) {
    const double mu = adv_sum / static_cast<double>(adv_n);
    const double sd = std::sqrt(std::max(adv_sq / static_cast<double>(adv_n) - mu * mu, 0.0));
    for (PpoSample& s : samples)
      for (double& a : s.advantages) a = (a - mu) / (sd + 1e-8);
  }

  const PpoStats ps = ppo_->update(samples, rng_);
  m.policy_loss = ps.policy_loss;
  m.value_loss = ps.value_loss;
  m.entropy = ps.entropy;
  m.clip_fraction = ps.clip_fraction;

  episodes_ += count;
  ++iteration_;
  if (model_) {
    const std::size_t freq = model_->config().update_freq;
    while (refits_ < buffer_.total_added() / freq) refit_reward_model();
  }

  m.iteration = iteration_;
  m.episodes = episodes_;
  m.rm_regression_loss = rm_regression_loss_;
  m.rm_id_loss = rm_id_loss_;
  m.rm_rounds = model_ ? static_cast<std::size_t>(model_->rounds_trained()) : 0;
  m.model_age = model_ ? episodes_ - last_refit_episode_ : 0;
  last_rollouts_ = std::move(rollouts);
  for (std::size_t e = 0; e < E; ++e) samples[e].rollout = nullptr;
  last_rewards_ = std::move(rewards);
  return m;
}

std::vector<IterationMetrics> Trainer::run(const std::function<void(const IterationMetrics&)>& sink,
                                           const std::function<void(std::size_t)>& on_fault) {
  std::vector<IterationMetrics> out;
  while (!finished()) {
    try {
      out.push_back(iterate());
    } catch (const Error& e) {
      if (e.code() == Errc::non_finite && on_fault) on_fault(iteration_ + 1);
      throw;
    }
    if (sink) sink(out.back());
  }
  return out;
}

namespace {

std::vector<double> split_u64(std::uint64_t v) {
  return {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)};
}

std::uint64_t join_u64(double hi, double lo) {
  return (static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo);
}

}  // namespace

void Trainer::save(StateDict& out) const {
  auto& net = *net_;
  out.put_params("policy.", net.parameters());
  for (std::size_t i = 0; i < net.actors.size(); ++i)
    out.put_adam("opt.actor" + std::to_string(i) + ".", ppo_->actor_optimizers()[i]);
  out.put_adam("opt.critic.", ppo_->critic_optimizer());
  out.put("popart", popart_.raw());
  out.put_meta("popart.updates", popart_.updates());
  out.put_rng("rng.trainer", rng_);
  out.put_meta("trainer.iteration", iteration_);
  out.put_meta("trainer.episodes", episodes_);
  out.put_meta("trainer.refits", refits_);
  out.put_meta("trainer.last_refit_episode", last_refit_episode_);
  out.put("trainer.rm_losses", {rm_regression_loss_, rm_id_loss_});
  if (!model_) return;
  out.put_params("rm.", model_->parameters());
  out.put_adam("opt.rm.", model_->optimizer());
  out.put_rng("rng.rm", model_->rng());

  // Buffer: concatenated per-field arrays plus a per-episode header
  // [T, team_reward, seed_hi, seed_lo, has_probs].
  std::vector<double> head, obs, actions, active, states, probs;
  for (std::size_t k = 0; k < buffer_.size(); ++k) {
    const env::Episode& ep = buffer_.at(k);
    const auto s = split_u64(ep.seed);
    head.insert(head.end(), {double(ep.T), ep.team_reward, s[0], s[1], ep.action_probs.empty() ? 0.0 : 1.0});
    obs.insert(obs.end(), ep.obs.begin(), ep.obs.end());
    for (std::size_t a : ep.actions) actions.push_back(static_cast<double>(a));
    for (std::uint8_t a : ep.active) active.push_back(a);
    states.insert(states.end(), ep.states.begin(), ep.states.end());
    probs.insert(probs.end(), ep.action_probs.begin(), ep.action_probs.end());
  }
  out.put("buffer.head", std::move(head));
  out.put("buffer.obs", std::move(obs));
  out.put("buffer.actions", std::move(actions));
  out.put("buffer.active", std::move(active));
  out.put("buffer.states", std::move(states));
  out.put("buffer.probs", std::move(probs));
  out.put_meta("buffer.total_added", buffer_.total_added());
}

void Trainer::load(const StateDict& in) {
  auto& net = *net_;
  in.get_params("policy.", net.parameters());
  for (std::size_t i = 0; i < net.actors.size(); ++i)
    in.get_adam("opt.actor" + std::to_string(i) + ".", ppo_->actor_optimizers()[i]);
  in.get_adam("opt.critic.", ppo_->critic_optimizer());
  popart_.set_raw(in.get("popart"), in.get_meta_u64("popart.updates"));
  in.get_rng("rng.trainer", rng_);
  iteration_ = in.get_meta_u64("trainer.iteration");
  episodes_ = in.get_meta_u64("trainer.episodes");
  refits_ = in.get_meta_u64("trainer.refits");
  last_refit_episode_ = in.get_meta_u64("trainer.last_refit_episode");
  const auto& losses = in.get("trainer.rm_losses", 2);
  rm_regression_loss_ = losses[0];
  rm_id_loss_ = losses[1];
  last_rollouts_.clear();
  last_rewards_.clear();
  if (!model_) return;
  in.get_params("rm.", model_->parameters());
  in.get_adam("opt.rm.", model_->optimizer());
  in.get_rng("rng.rm", model_->rng());

  const env::EnvSpec& s = net.spec();
  const auto& head = in.get("buffer.head");
  const auto &obs = in.get("buffer.obs"), &actions = in.get("buffer.actions"), &active = in.get("buffer.active"),
             &states = in.get("buffer.states"), &probs = in.get("buffer.probs");
  require(head.size() % 5 == 0, Errc::state, "checkpoint: malformed buffer header");
  buffer_.clear();
  std::size_t po = 0, pa = 0, ps = 0, pp = 0;
  for (std::size_t k = 0; k < head.size(); k += 5) {
    env::Episode ep;
    ep.T = static_cast<std::size_t>(head[k]);
    ep.N = s.n_agents;
    ep.obs_dim = s.obs_dim;
    ep.state_dim = s.state_dim;
    ep.n_actions = s.n_actions;
    ep.team_reward = head[k + 1];
    ep.seed = join_u64(head[k + 2], head[k + 3]);
    const std::size_t cells = ep.T * ep.N, n_obs = cells * s.obs_dim, n_states = (ep.T + 1) * s.state_dim;
    const std::size_t n_probs = head[k + 4] != 0.0 ? cells * s.n_actions : 0;
    if (po + n_obs > obs.size() || pa + cells > actions.size() || pa + cells > active.size() ||
        ps + n_states > states.size() || pp + n_probs > probs.size())
      fail(Errc::state, "checkpoint: buffer arrays are shorter than their header claims");
    ep.obs.assign(obs.begin() + po, obs.begin() + po + n_obs);
    for (std::size_t c = 0; c < cells; ++c) {
      ep.actions.push_back(static_cast<std::size_t>(actions[pa + c]));
      ep.active.push_back(static_cast<std::uint8_t>(active[pa + c]));
    }
    ep.states.assign(states.begin() + ps, states.begin() + ps + n_states);
    ep.action_probs.assign(probs.begin() + pp, probs.begin() + pp + n_probs);
    po += n_obs;
    pa += cells;
    ps += n_states;
    pp += n_probs;
    buffer_.add(std::move(ep));
  }
  buffer_.set_total_added(in.get_meta_u64("buffer.total_added"));
}

}  // namespace tar2::marl

#include "tar2/marl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tar2/common/error.hpp"
#include "tar2/nn/ops.hpp"

namespace tar2::marl {

using nn::Tape;
using nn::Tensor;
using nn::Var;

void PpoConfig::validate() const {
  require(epochs > 0 && batch_episodes > 0, Errc::config, "ppo: epochs and batch size must be positive");
  require(policy_clip > 0.0 && value_clip > 0.0, Errc::config, "ppo: clip ranges must be positive");
  require(entropy_pen >= 0.0, Errc::config, "ppo: entropy penalty must be non-negative");
  require(policy_lr > 0.0 && value_lr > 0.0, Errc::config, "ppo: learning rates must be positive");
  require(policy_weight_decay >= 0.0 && value_weight_decay >= 0.0 && grad_clip_actor >= 0.0 && grad_clip_critic >= 0.0,
          Errc::config, "ppo: weight decay and gradient clips must be non-negative");
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

ActorLoss actor_loss(Tape& tape, nn::MLP& actor, std::size_t agent, std::span<const PpoSample* const> batch,
                     const PpoConfig& cfg) {
  ActorLoss out;
  std::size_t obs_dim = 0;
  std::vector<double> obs;
  std::vector<std::size_t> acts;
  std::vector<double> old_lp, adv;
  for (const PpoSample* s : batch) {
    const env::Episode& ep = s->rollout->episode;
    obs_dim = ep.obs_dim;
    for (std::size_t t = 0; t < ep.T; ++t) {
      if (!ep.is_active(t, agent)) continue;
      const std::size_t k = t * ep.N + agent;
      const auto o = ep.observation(t, agent);
      obs.insert(obs.end(), o.begin(), o.end());
      acts.push_back(ep.actions[k]);
      old_lp.push_back(s->rollout->log_probs[k]);
      adv.push_back(s->advantages[k]);
    }
  }
  out.samples = acts.size();
  if (out.samples == 0) return out;
  const std::size_t m = out.samples;
  const double inv_m = 1.0 / static_cast<double>(m);

  Var lsm = nn::log_softmax_rows(actor(tape, tape.constant(Tensor(m, obs_dim, std::move(obs)))));
  Var logp = nn::pick(lsm, acts);
  Var ratio = nn::exp(nn::sub(logp, tape.constant(Tensor(m, 1, std::move(old_lp)))));
  Var a = tape.constant(Tensor(m, 1, adv));
  Var surr = nn::minimum(nn::mul(ratio, a), nn::mul(nn::clamp(ratio, 1.0 - cfg.policy_clip, 1.0 + cfg.policy_clip), a));
  Var policy = nn::scale(nn::sum(surr), -inv_m);
  Var entropy = nn::scale(nn::sum(nn::mul(nn::softmax_rows(lsm), lsm)), -inv_m);
  out.total = nn::sub(policy, nn::scale(entropy, cfg.entropy_pen));
  out.surrogate = policy.scalar();
  out.entropy = entropy.scalar();
  std::size_t clipped = 0;
  for (double r : ratio.value().data()) clipped += std::abs(r - 1.0) > cfg.policy_clip;
  out.clip_fraction = static_cast<double>(clipped) * inv_m;
  return out;
}

Var critic_loss(Tape& tape, ActorCritic& net, std::span<const PpoSample* const> batch, const PpoConfig& cfg) {
  require(!batch.empty(), Errc::invalid_argument, "critic loss: empty batch");
  const std::size_t N = net.spec().n_agents, width = net.critic_input_dim();
  std::size_t rows = 0;
  for (const PpoSample* s : batch) rows += s->rollout->episode.T;
  Tensor x(rows, width), target(rows, N), old(rows, N), mask(rows, N);
  std::size_t r0 = 0, active = 0;
  for (const PpoSample* s : batch) {
    const env::Episode& ep = s->rollout->episode;
    const Tensor f = net.critic_features(ep);
    std::copy(f.data().begin(), f.data().end(), x.ptr() + r0 * width);
    for (std::size_t k = 0; k < ep.T * N; ++k) {
      const std::size_t cell = r0 * N + k;
      mask[cell] = ep.active[k] ? 1.0 : 0.0;
      active += ep.active[k] != 0;
      target[cell] = s->targets[k];
      old[cell] = s->old_values[k];
    }
    r0 += ep.T;
  }
  require(active > 0, Errc::invalid_argument, "critic loss: no active cells");
  Var v = net.critic(tape, tape.constant(std::move(x)));
  Var g = tape.constant(std::move(target));
  Var vo = tape.constant(std::move(old));
  Var v_clipped = nn::add(vo, nn::clamp(nn::sub(v, vo), -cfg.value_clip, cfg.value_clip));
  Var err = nn::maximum(nn::square(nn::sub(v, g)), nn::square(nn::sub(v_clipped, g)));
  return nn::scale(nn::sum(nn::mul(err, tape.constant(std::move(mask)))), 1.0 / static_cast<double>(active));
}

PpoLearner::PpoLearner(ActorCritic& net, const PpoConfig& cfg) : net_(&net), cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < net.actors.size(); ++i)
    actor_opt_.emplace_back(net.actor_parameters(i), nn::AdamConfig{.lr = cfg_.policy_lr,
                                                                    .weight_decay = cfg_.policy_weight_decay,
                                                                    .clip_norm = cfg_.grad_clip_actor});
  critic_opt_ = nn::Adam(net.critic_parameters(), nn::AdamConfig{.lr = cfg_.value_lr,
                                                                 .weight_decay = cfg_.value_weight_decay,
                                                                 .clip_norm = cfg_.grad_clip_critic});
}

PpoStats PpoLearner::update(std::span<const PpoSample> samples, std::mt19937_64& rng) {
  require(net_ != nullptr, Errc::state, "ppo: learner is not bound to a network");
  PpoStats stats;
  if (samples.empty()) return stats;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double pl = 0.0, vl = 0.0, ent = 0.0, cf = 0.0;
  std::size_t actor_terms = 0;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_episodes) {
      std::vector<const PpoSample*> mb;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg_.batch_episodes); ++k)
        mb.push_back(&samples[order[k]]);
      for (std::size_t i = 0; i < net_->actors.size(); ++i) {
        auto params = net_->actor_parameters(i);
        nn::zero_grads(params);
        Tape tape;
        ActorLoss l = actor_loss(tape, net_->actors[i], i, mb, cfg_);
        if (l.samples == 0) continue;
        if (!std::isfinite(l.total.scalar())) fail(Errc::non_finite, "ppo: non-finite policy loss");
        tape.backward(l.total);
        actor_opt_[i].step();
        pl += l.surrogate;
        ent += l.entropy;
        cf += l.clip_fraction;
        ++actor_terms;
      }
      auto params = net_->critic_parameters();
      nn::zero_grads(params);
      Tape tape;
      Var l = critic_loss(tape, *net_, mb, cfg_);
      if (!std::isfinite(l.scalar())) fail(Errc::non_finite, "ppo: non-finite value loss");
      tape.backward(l);
      critic_opt_.step();
      vl += l.scalar();
      ++stats.minibatches;
    }
  }
  if (actor_terms > 0) {
    stats.policy_loss = pl / static_cast<double>(actor_terms);
    stats.entropy = ent / static_cast<double>(actor_terms);
    stats.clip_fraction = cf / static_cast<double>(actor_terms);
  }
  stats.value_loss = vl / static_cast<double>(stats.minibatches);
  return stats;
}

}  // namespace tar2::marl

#include "tar2/rm/reward_model.hpp"

#include <cmath>
#include <string>

#include "tar2/common/error.hpp"

namespace tar2::rm {

using nn::Activation;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void RewardModelConfig::validate() const {
  require(embed_dim > 0 && num_heads > 0 && embed_dim % num_heads == 0, Errc::config,
          "reward model: embed_dim must be a positive multiple of num_heads");
  require(depth >= 1, Errc::config, "reward model: depth must be at least 1");
  require(dropout >= 0.0 && dropout < 1.0, Errc::config, "reward model: dropout must be in [0,1)");
  require(lambda_id >= 0.0, Errc::config, "reward model: lambda_id must be non-negative");
  require(lr > 0.0 && weight_decay >= 0.0 && grad_clip >= 0.0, Errc::config,
          "reward model: lr must be positive, weight_decay and grad_clip non-negative");
  require(batch_size > 0 && update_freq > 0 && buffer_capacity > 0, Errc::config,
          "reward model: batch_size, update_freq and buffer_capacity must be positive");
}

RewardModel::RewardModel(const RewardModelConfig& cfg, const env::EnvSpec& spec, std::uint64_t seed)
    : cfg_(cfg), spec_(spec), rng_(seed) {
  cfg_.validate();
  require(spec.n_agents > 0 && spec.horizon > 0 && spec.obs_dim > 0 && spec.state_dim > 0 && spec.n_actions > 0,
          Errc::invalid_argument, "reward model: empty environment spec");
  const std::size_t d = cfg_.embed_dim;
  obs_proj_ = nn::Linear("rm.obs_proj", spec.obs_dim, d);
  action_emb_ = nn::Embedding("rm.action_emb", spec.n_actions, d);
  agent_emb_ = nn::Embedding("rm.agent_emb", cfg_.tie_agent_embeddings ? 1 : spec.n_agents, d);
  pos_emb_ = nn::Embedding("rm.pos_emb", spec.horizon, d);
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::string p = "rm.block" + std::to_string(l) + ".";
    // Key projections carry no bias: a shared shift of all logits in a row
    // cancels in the softmax, so such a bias would never receive gradient.
    blocks_.push_back(Block{
        nn::Linear(p + "tq", d, d), nn::Linear(p + "tk", d, d, false), nn::Linear(p + "tv", d, d), nn::Linear(p + "to", d, d),
        nn::LayerNorm(p + "tln", d),
        nn::Linear(p + "aq", d, d), nn::Linear(p + "ak", d, d, false), nn::Linear(p + "av", d, d), nn::Linear(p + "ao", d, d),
        nn::LayerNorm(p + "aln", d),
        nn::Linear(p + "f1", d, 2 * d), nn::Linear(p + "f2", 2 * d, d), nn::LayerNorm(p + "fln", d)});
  }
  state_proj_ = nn::Linear("rm.state_proj", spec.state_dim, d);
  outcome_ = nn::MLP("rm.outcome", {d, d, d}, Activation::gelu);
  score_head_ = nn::MLP("rm.score_head", {2 * d, d, 1}, Activation::gelu);
  id_start_ = nn::Parameter("rm.id_start", 1, d);
  id_head_ = nn::MLP("rm.id_head", {3 * d, d, spec.n_actions}, Activation::gelu);

  obs_proj_.init(rng_);
  action_emb_.init(rng_);
  agent_emb_.init(rng_);
  pos_emb_.init(rng_);
  for (Block& b : blocks_)
    for (nn::Linear* l : {&b.tq, &b.tk, &b.tv, &b.to, &b.aq, &b.ak, &b.av, &b.ao, &b.f1, &b.f2}) l->init(rng_);
  state_proj_.init(rng_);
  outcome_.init(rng_);
  score_head_.init(rng_);
  std::normal_distribution<double> n(0.0, 0.02);
  for (double& v : id_start_.value.data()) v = n(rng_);
  id_head_.init(rng_);

  adam_ = nn::Adam(parameters(), nn::AdamConfig{.lr = cfg_.lr,
                                                .weight_decay = cfg_.weight_decay,
                                                .clip_norm = cfg_.grad_clip});
}

std::vector<nn::Parameter*> RewardModel::parameters() {
  std::vector<nn::Parameter*> out;
  obs_proj_.collect(out);
  action_emb_.collect(out);
  agent_emb_.collect(out);
  pos_emb_.collect(out);
  for (Block& b : blocks_) {
    for (nn::Linear* l : {&b.tq, &b.tk, &b.tv, &b.to}) l->collect(out);
    b.tln.collect(out);
    for (nn::Linear* l : {&b.aq, &b.ak, &b.av, &b.ao}) l->collect(out);
    b.aln.collect(out);
    b.f1.collect(out);
    b.f2.collect(out);
    b.fln.collect(out);
  }
  state_proj_.collect(out);
  outcome_.collect(out);
  score_head_.collect(out);
  out.push_back(&id_start_);
  id_head_.collect(out);
  return out;
}

std::vector<nn::Parameter*> RewardModel::id_parameters() {
  std::vector<nn::Parameter*> out{&id_start_};
  id_head_.collect(out);
  return out;
}

void RewardModel::check_episode(const env::Episode& ep) const {
  const bool ok = ep.N == spec_.n_agents && ep.T >= 1 && ep.T <= spec_.horizon && ep.obs_dim == spec_.obs_dim &&
                  ep.state_dim == spec_.state_dim && ep.n_actions == spec_.n_actions;
  if (!ok)
    fail(Errc::shape_mismatch, "reward model: episode shape (T=" + std::to_string(ep.T) + ", N=" +
                                   std::to_string(ep.N) + ") does not match the model");
  ep.validate();
}

Var RewardModel::drop(const Var& x, std::mt19937_64* rng) {
  if (cfg_.dropout == 0.0 || rng == nullptr) return x;
  return nn::dropout(x, cfg_.dropout, *rng);
}

RewardModel::Forward RewardModel::forward(Tape& tape, std::span<const env::Episode* const> batch,
                                          std::mt19937_64* dropout_rng) {
  require(!batch.empty(), Errc::invalid_argument, "reward model: empty batch");
  const std::size_t B = batch.size(), T = batch.front()->T, N = spec_.n_agents;
  for (const env::Episode* ep : batch) {
    check_episode(*ep);
    require(ep->T == T, Errc::shape_mismatch, "reward model: episodes in a batch must share T");
  }
  const std::size_t rows = B * T * N, d = cfg_.embed_dim;

  Tensor obs(rows, spec_.obs_dim), finals(B, spec_.state_dim), mask(rows, 1);
  std::vector<std::size_t> act(rows), agent(rows), pos(rows), owner(rows);
  nn::AttentionGroups over_time, over_agents;
  over_time.key_active.resize(rows);
  over_agents.groups.resize(B * T);
  over_time.groups.resize(B * N);
  for (std::size_t b = 0; b < B; ++b) {
    const env::Episode& ep = *batch[b];
    std::copy(ep.obs.begin(), ep.obs.end(), obs.ptr() + b * T * N * spec_.obs_dim);
    const auto fs = ep.final_state();
    std::copy(fs.begin(), fs.end(), finals.ptr() + b * spec_.state_dim);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t r = (b * T + t) * N + i;
        act[r] = ep.action(t, i);
        agent[r] = cfg_.tie_agent_embeddings ? 0 : i;
        pos[r] = t;
        owner[r] = b;
        mask[r] = ep.is_active(t, i) ? 1.0 : 0.0;
        over_time.key_active[r] = ep.is_active(t, i) ? 1 : 0;
        over_time.groups[b * N + i].push_back(r);
        over_agents.groups[b * T + t].push_back(r);
      }
  }
  over_agents.key_active = over_time.key_active;

  Var x = nn::add(nn::add(obs_proj_(tape, tape.constant(std::move(obs))), action_emb_(tape, act)),
                  nn::add(agent_emb_(tape, agent), pos_emb_(tape, pos)));
  const std::size_t heads = cfg_.num_heads;
  for (Block& blk : blocks_) {
    Var a = blk.to(tape, nn::grouped_attention(blk.tq(tape, x), blk.tk(tape, x), blk.tv(tape, x), over_time, heads));
    x = blk.tln(tape, nn::add(x, drop(a, dropout_rng)));
    a = blk.ao(tape, nn::grouped_attention(blk.aq(tape, x), blk.ak(tape, x), blk.av(tape, x), over_agents, heads));
    x = blk.aln(tape, nn::add(x, drop(a, dropout_rng)));
    Var f = blk.f2(tape, nn::gelu(blk.f1(tape, x)));
    x = blk.fln(tape, nn::add(x, drop(f, dropout_rng)));
  }

  Forward out;
  out.batch = B;
  out.latents = x;
  out.z = cfg_.condition_on_outcome ? outcome_(tape, state_proj_(tape, tape.constant(std::move(finals))))
                                    : tape.constant(Tensor(B, d));
  Var head_in = nn::concat_cols({x, nn::gather_rows(out.z, owner)});
  out.scores = nn::mul(score_head_(tape, head_in), tape.constant(std::move(mask)));
  return out;
}

Var RewardModel::id_logits(Tape& tape, const Forward& fwd, std::span<const env::Episode* const> batch) {
  const std::size_t B = batch.size(), T = batch.front()->T, N = spec_.n_agents;
  const std::size_t rows = B * T * N;
  Tensor states(B * (T + 1), spec_.state_dim);
  for (std::size_t b = 0; b < B; ++b)
    std::copy(batch[b]->states.begin(), batch[b]->states.end(), states.ptr() + b * (T + 1) * spec_.state_dim);
  Var se = state_proj_(tape, tape.constant(std::move(states)));
  std::vector<std::size_t> now(rows), next(rows), prev(rows);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t r = (b * T + t) * N + i;
        now[r] = b * (T + 1) + t;
        next[r] = now[r] + 1;
        prev[r] = t > 0 ? r - N : rows;  // row `rows` is the start token
      }
  Var prev_src = nn::concat_rows({fwd.latents, tape.param(id_start_)});
  Var in = nn::concat_cols({nn::gather_rows(se, now), nn::gather_rows(se, next), nn::gather_rows(prev_src, prev)});
  return id_head_(tape, in);
}

Var RewardModel::loss(Tape& tape, std::span<const env::Episode* const> batch, LossValue* out,
                      std::mt19937_64* dropout_rng) {
  Forward fwd = forward(tape, batch, dropout_rng);
  const std::size_t B = batch.size(), T = batch.front()->T, N = spec_.n_agents;
  Tensor target(B, 1);
  for (std::size_t b = 0; b < B; ++b) {
    const double R = batch[b]->team_reward;
    if (cfg_.use_log_target) {
      require(R > -1.0, Errc::invalid_argument, "reward model: log target needs team reward > -1");
      target[b] = std::log(R + 1.0);
    } else {
      target[b] = R;
    }
  }
  Var totals = nn::sum_rows(nn::reshape(fwd.scores, B, T * N));
  Var regression = nn::mean(nn::square(nn::sub(tape.constant(std::move(target)), totals)));
  Var total = regression;
  LossValue lv;
  lv.regression = regression.scalar();
  if (cfg_.use_inverse_dynamics) {
    Var logits = id_logits(tape, fwd, batch);
    Var ce;
    if (cfg_.soft_id_targets) {
      Tensor probs(B * T * N, spec_.n_actions);
      for (std::size_t b = 0; b < B; ++b) {
        require(!batch[b]->action_probs.empty(), Errc::invalid_argument,
                "reward model: soft inverse-dynamics targets need stored policy probabilities");
        std::copy(batch[b]->action_probs.begin(), batch[b]->action_probs.end(),
                  probs.ptr() + b * T * N * spec_.n_actions);
      }
      ce = nn::cross_entropy(logits, probs);
    } else {
      std::vector<std::size_t> acts;
      acts.reserve(B * T * N);
      for (const env::Episode* ep : batch) acts.insert(acts.end(), ep->actions.begin(), ep->actions.end());
      ce = nn::cross_entropy(logits, acts);
    }
    Tensor mask(B * T * N, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < T * N; ++k) mask[b * T * N + k] = batch[b]->active[k] ? 1.0 : 0.0;
    Var id = nn::scale(nn::sum(nn::mul(ce, tape.constant(std::move(mask)))), 1.0 / static_cast<double>(B));
    lv.id = id.scalar();
    total = nn::add(total, nn::scale(id, cfg_.lambda_id));
  }
  lv.total = total.scalar();
  if (out) *out = lv;
  return total;
}

LossValue RewardModel::evaluate_loss(std::span<const env::Episode* const> batch) {
  Tape tape(false);
  LossValue lv;
  loss(tape, batch, &lv);
  return lv;
}

Tensor RewardModel::encode(const env::Episode& ep) {
  Tape tape(false);
  const env::Episode* one[] = {&ep};
  return forward(tape, one).latents.value();
}

Tensor RewardModel::outcome_embedding(const env::Episode& ep) {
  Tape tape(false);
  const env::Episode* one[] = {&ep};
  return forward(tape, one).z.value();
}

std::vector<core::ScoreMatrix> RewardModel::score_batch(std::span<const env::Episode* const> batch) {
  std::vector<core::ScoreMatrix> out;
  if (batch.empty()) return out;
  // Group by length so each forward sees a uniform T.
  std::size_t start = 0;
  out.reserve(batch.size());
  while (start < batch.size()) {
    std::size_t end = start + 1;
    while (end < batch.size() && batch[end]->T == batch[start]->T) ++end;
    Tape tape(false);
    const Forward fwd = forward(tape, batch.subspan(start, end - start));
    const Tensor& s = fwd.scores.value();
    const std::size_t cells = batch[start]->T * spec_.n_agents;
    for (std::size_t b = start; b < end; ++b) {
      const double* p = s.ptr() + (b - start) * cells;
      out.emplace_back(batch[b]->T, spec_.n_agents, std::vector<double>(p, p + cells), batch[b]->active);
    }
    start = end;
  }
  return out;
}

core::ScoreMatrix RewardModel::score(const env::Episode& ep) {
  const env::Episode* one[] = {&ep};
  return std::move(score_batch(one).front());
}

std::vector<double> RewardModel::inverse_dynamics_logits(const env::Episode& ep, std::size_t t, std::size_t agent) {
  require(t < ep.T, Errc::invalid_argument, "reward model: inverse-dynamics timestep out of range");
  require(agent < spec_.n_agents, Errc::invalid_argument, "reward model: agent index out of range");
  Tape tape(false);
  const env::Episode* one[] = {&ep};
  const Forward fwd = forward(tape, one);
  const Tensor& logits = id_logits(tape, fwd, one).value();
  const auto row = logits.row_span(t * spec_.n_agents + agent);
  return {row.begin(), row.end()};
}

core::RedistributedRewards RewardModel::shaped_rewards(const env::Episode& ep, double epsilon) {
  return core::redistribute(score(ep), ep.team_reward, epsilon);
}

TrainRound RewardModel::train_round(const TrajectoryBuffer& buffer) {
  TrainRound round;
  const auto batch = buffer.sample(cfg_.batch_size, rng_, &round.with_replacement);
  auto params = parameters();
  nn::zero_grads(params);
  Tape tape;
  Var l = loss(tape, batch, &round.loss, &rng_);
  if (!std::isfinite(round.loss.total)) fail(Errc::non_finite, "reward model: non-finite loss");
  tape.backward(l);
  round.grad_norm = adam_.step();
  return round;
}

std::vector<TrainRound> RewardModel::train(const TrajectoryBuffer& buffer) {
  std::vector<TrainRound> rounds;
  rounds.reserve(cfg_.update_epochs);
  for (std::size_t k = 0; k < cfg_.update_epochs; ++k) rounds.push_back(train_round(buffer));
  return rounds;
}

}  // namespace tar2::rm

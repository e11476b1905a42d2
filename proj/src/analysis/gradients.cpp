#include "tar2/analysis/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tar2/analysis/shaping.hpp"
#include "tar2/common/error.hpp"
#include "tar2/common/rng.hpp"
#include "tar2/marl/rollout.hpp"
#include "tar2/nn/ops.hpp"

namespace tar2::analysis {

std::vector<double> score_function(marl::ActorCritic& policy, const env::Episode& ep, std::size_t agent) {
  const env::EnvSpec& s = policy.spec();
  if (ep.N != s.n_agents || ep.obs_dim != s.obs_dim || ep.n_actions != s.n_actions)
    fail(Errc::shape_mismatch, "score_function: episode does not match the policy");
  require(agent < s.n_agents, Errc::invalid_argument, "score_function: agent index out of range");
  auto params = policy.actor_parameters(agent);
  std::size_t width = 0;
  for (const nn::Parameter* p : params) width += p->value.size();
  std::vector<double> obs;
  std::vector<std::size_t> acts;
  for (std::size_t t = 0; t < ep.T; ++t) {
    if (!ep.is_active(t, agent)) continue;
    const auto o = ep.observation(t, agent);
    obs.insert(obs.end(), o.begin(), o.end());
    acts.push_back(ep.action(t, agent));
  }
  std::vector<double> out;
  out.reserve(width);
  if (acts.empty()) return std::vector<double>(width, 0.0);
  nn::zero_grads(params);
  {
    nn::Tape tape;
    const std::size_t m = acts.size();
    nn::Var logits = policy.actors[agent](tape, tape.constant(nn::Tensor(m, s.obs_dim, std::move(obs))));
    tape.backward(nn::sum(nn::pick(nn::log_softmax_rows(logits), acts)));
  }
  for (const nn::Parameter* p : params) out.insert(out.end(), p->grad.data().begin(), p->grad.data().end());
  return out;
}

GradientReport reinforce_estimates(marl::ActorCritic& policy, const env::Episode& ep,
                                   const core::RedistributedRewards& shaped) {
  if (shaped.rewards.rows() != ep.T || shaped.rewards.cols() != ep.N || shaped.weights.temporal.size() != ep.T)
    fail(Errc::shape_mismatch, "reinforce_estimates: shaped rewards do not match the trajectory");
  require(shaped.team_reward == ep.team_reward, Errc::invalid_argument,
          "reinforce_estimates: shaped rewards belong to a different team reward");
  const std::vector<double> delta = core::delta_k(shaped.weights);
  GradientReport report;
  for (std::size_t k = 0; k < ep.N; ++k) {
    const std::vector<double> G = score_function(policy, ep, k);
    double S = 0.0;
    for (std::size_t t = 0; t < ep.T; ++t) S += shaped.rewards(t, k);
    AgentGradient a;
    a.delta = delta[k];
    a.global.resize(G.size());
    a.shaped.resize(G.size());
    for (std::size_t j = 0; j < G.size(); ++j) {
      a.global[j] = G[j] * ep.team_reward;
      a.shaped[j] = G[j] * S;
      a.max_residual = std::max(a.max_residual, std::abs(a.shaped[j] - a.delta * a.global[j]));
      a.global_inf_norm = std::max(a.global_inf_norm, std::abs(a.global[j]));
    }
    report.max_relative_residual = std::max(report.max_relative_residual, a.max_residual / (1.0 + a.global_inf_norm));
    report.agents.push_back(std::move(a));
  }
  return report;
}

namespace {

// Per-block sufficient statistics; vectors are coordinate sums, scalars are
// summed squared norms and inner products.
struct Block {
  std::vector<double> s_orig, s_tar, s_pbrs;
  double q_orig = 0.0, q_tar = 0.0, q_pbrs = 0.0, cross = 0.0;
  std::size_t n = 0;

  explicit Block(std::size_t width) : s_orig(width, 0.0), s_tar(width, 0.0), s_pbrs(width, 0.0) {}
};

struct Moments {
  double orig, tar, pbrs, cov;
};

Moments moments(const std::vector<const Block*>& picks, std::size_t width, std::vector<double>& so,
                std::vector<double>& st, std::vector<double>& sp) {
  std::fill(so.begin(), so.end(), 0.0);
  std::fill(st.begin(), st.end(), 0.0);
  std::fill(sp.begin(), sp.end(), 0.0);
  double qo = 0.0, qt = 0.0, qp = 0.0, cr = 0.0;
  std::size_t n = 0;
  for (const Block* b : picks) {
    for (std::size_t j = 0; j < width; ++j) {
      so[j] += b->s_orig[j];
      st[j] += b->s_tar[j];
      sp[j] += b->s_pbrs[j];
    }
    qo += b->q_orig;
    qt += b->q_tar;
    qp += b->q_pbrs;
    cr += b->cross;
    n += b->n;
  }
  const double dn = static_cast<double>(n);
  double mo = 0.0, mt = 0.0, mp = 0.0, mc = 0.0;
  for (std::size_t j = 0; j < width; ++j) {
    mo += so[j] * so[j];
    mt += st[j] * st[j];
    mp += sp[j] * sp[j];
    mc += so[j] * st[j];
  }
  const double c = 1.0 / (dn - 1.0);
  return {(qo - mo / dn) * c, (qt - mt / dn) * c, (qp - mp / dn) * c, (cr - mc / dn) * c};
}

Interval percentile_interval(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {at(0.025), at(0.975)};
}

}  // namespace

VarianceReport variance_study(marl::ActorCritic& policy, const env::Environment& environment, RedistributionMode mode,
                              rm::RewardModel* model, const VarianceStudyOptions& opt) {
  require(opt.num_samples >= 2, Errc::invalid_argument, "variance_study: need at least two samples");
  require(opt.blocks >= 2 && opt.blocks <= opt.num_samples, Errc::invalid_argument,
          "variance_study: blocks must be in [2, num_samples]");
  require(opt.bootstrap >= 1, Errc::invalid_argument, "variance_study: bootstrap count must be positive");
  require(mode != RedistributionMode::no_normalization, Errc::invalid_argument,
          "variance_study: raw-score rewards carry no redistribution weights");
  require(!uses_reward_model(mode) || model != nullptr, Errc::invalid_argument,
          "variance_study: a learned mode needs a reward model");
  const std::size_t N = policy.spec().n_agents;
  std::vector<std::size_t> offsets{0};
  for (std::size_t k = 0; k < N; ++k) {
    std::size_t w = 0;
    for (const nn::Parameter* p : policy.actor_parameters(k)) w += p->value.size();
    offsets.push_back(offsets.back() + w);
  }
  const std::size_t width = offsets.back();

  std::vector<Block> blocks(opt.blocks, Block(width));
  std::vector<double> go(width), gt(width), shift_o, shift_t;
  constexpr std::size_t kChunk = 256;
  std::size_t drawn = 0;
  while (drawn < opt.num_samples) {
    const std::size_t count = std::min(kChunk, opt.num_samples - drawn);
    std::vector<std::uint64_t> seeds(count);
    for (std::size_t k = 0; k < count; ++k) seeds[k] = derive_seed(opt.seed, drawn + k);
    const auto batch = marl::collect_rollouts(policy, environment, seeds, {.threads = opt.threads});
    require(batch.faults.empty(), Errc::runtime, "variance_study: environment fault during sampling");
    std::vector<core::ScoreMatrix> scores;
    if (uses_reward_model(mode)) {
      std::vector<const env::Episode*> eps;
      for (const auto& r : batch.rollouts) eps.push_back(&r.episode);
      scores = model->score_batch(eps);
    }
    for (std::size_t e = 0; e < count; ++e) {
      const env::Episode& ep = batch.rollouts[e].episode;
      const ShapedEpisode shaped = shape_episode(mode, scores.empty() ? nullptr : &scores[e], ep);
      for (std::size_t k = 0; k < N; ++k) {
        const std::vector<double> G = score_function(policy, ep, k);
        double S = 0.0;
        for (std::size_t t = 0; t < ep.T; ++t) S += shaped.rewards(t, k);
        for (std::size_t j = 0; j < G.size(); ++j) {
          go[offsets[k] + j] = G[j] * ep.team_reward;
          gt[offsets[k] + j] = G[j] * S;
        }
      }
      // Shifting every draw by the first one leaves variances unchanged and
      // keeps the one-pass sums well conditioned.
      if (shift_o.empty()) {
        shift_o = go;
        shift_t = gt;
      }
      Block& b = blocks[(drawn + e) % opt.blocks];
      for (std::size_t j = 0; j < width; ++j) {
        const double o = go[j] - shift_o[j], t = gt[j] - shift_t[j], p = o + t;
        b.s_orig[j] += o;
        b.s_tar[j] += t;
        b.s_pbrs[j] += p;
        b.q_orig += o * o;
        b.q_tar += t * t;
        b.q_pbrs += p * p;
        b.cross += o * t;
      }
      ++b.n;
    }
    drawn += count;
  }

  std::vector<double> so(width), st(width), sp(width);
  std::vector<const Block*> all;
  for (const Block& b : blocks) all.push_back(&b);
  const Moments m = moments(all, width, so, st, sp);
  VarianceReport r;
  r.samples = opt.num_samples;
  r.var_orig = m.orig;
  r.var_tar2 = m.tar;
  r.var_pbrs = m.pbrs;
  r.covariance = m.cov;
  r.identity_residual = std::abs(m.pbrs - (m.orig + m.tar + 2.0 * m.cov)) / std::max(1.0, std::abs(m.pbrs));

  std::mt19937_64 rng(derive_seed(opt.seed, ~0ULL));
  std::uniform_int_distribution<std::size_t> pick(0, blocks.size() - 1);
  std::vector<double> vo, vt, vp, vc, gap;
  std::vector<const Block*> picks(blocks.size());
  for (std::size_t b = 0; b < opt.bootstrap; ++b) {
    for (auto& p : picks) p = &blocks[pick(rng)];
    const Moments x = moments(picks, width, so, st, sp);
    vo.push_back(x.orig);
    vt.push_back(x.tar);
    vp.push_back(x.pbrs);
    vc.push_back(x.cov);
    gap.push_back(x.pbrs - x.tar);
  }
  r.ci_orig = percentile_interval(vo);
  r.ci_tar2 = percentile_interval(vt);
  r.ci_pbrs = percentile_interval(vp);
  r.ci_covariance = percentile_interval(vc);
  r.ci_gap = percentile_interval(gap);
  return r;
}

}  // namespace tar2::analysis

#include "tar2/core/redistribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tar2/common/error.hpp"

namespace tar2::core {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    fail(Errc::shape_mismatch, "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows) + "x" +
              std::to_string(cols));
}

double Matrix::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

ScoreMatrix::ScoreMatrix(std::size_t T, std::size_t N, std::vector<double> scores)
    : ScoreMatrix(T, N, std::move(scores), std::vector<std::uint8_t>(T * N, 1)) {}

ScoreMatrix::ScoreMatrix(std::size_t T, std::size_t N, std::vector<double> scores,
                         std::vector<std::uint8_t> active)
    : T_(T), N_(N), scores_(std::move(scores)), active_(std::move(active)) {
  require(scores_.size() == T * N, Errc::shape_mismatch, "score matrix length does not match T*N");
  require(active_.size() == T * N, Errc::shape_mismatch, "activity mask length does not match T*N");
}

bool ScoreMatrix::timestep_active(std::size_t t) const {
  for (std::size_t i = 0; i < N_; ++i)
    if (active(t, i)) return true;
  return false;
}

void ScoreMatrix::validate() const {
  require(T_ >= 1 && N_ >= 1, Errc::invalid_argument, "score matrix needs T >= 1 and N >= 1");
  bool any_active = false;
  for (std::size_t k = 0; k < scores_.size(); ++k) {
    if (!std::isfinite(scores_[k])) {
      throw Error(Errc::non_finite,
                  "non-finite score at t=" + std::to_string(k / N_) + ", agent=" + std::to_string(k % N_), k);
    }
    any_active = any_active || active_[k] != 0;
  }
  require(any_active, Errc::invalid_argument, "score matrix has no active entry");
}

std::vector<double> aggregate_scores(const ScoreMatrix& m) {
  m.validate();
  std::vector<double> out(m.T(), 0.0);
  for (std::size_t t = 0; t < m.T(); ++t)
    for (std::size_t i = 0; i < m.N(); ++i)
      if (m.active(t, i)) out[t] += m.score(t, i);
  return out;
}

namespace {

// Shift-and-normalize `values` over entries where include(k) is true, writing
// into out (excluded entries untouched). Returns false if nothing was included.
template <typename Include, typename Out>
bool shift_normalize(std::size_t n, const double* values, Include include, double epsilon, Out out) {
  double mn = std::numeric_limits<double>::infinity();
  double max_abs = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!include(k)) continue;
    mn = std::min(mn, values[k]);
    max_abs = std::max(max_abs, std::abs(values[k]));
    ++count;
  }
  if (count == 0) return false;

  double shifted_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (include(k)) shifted_sum += values[k] - mn;

  if (shifted_sum <= kDegeneracyThreshold * std::max(1.0, max_abs)) {
    const double u = 1.0 / static_cast<double>(count);
    for (std::size_t k = 0; k < n; ++k)
      if (include(k)) out(k) = u;
    return true;
  }

  double total = 0.0;
  const double denom = shifted_sum + epsilon;
  for (std::size_t k = 0; k < n; ++k) {
    if (!include(k)) continue;
    const double w = (values[k] - mn) / denom;
    out(k) = w;
    total += w;
  }
  // The eps guard leaves total = S/(S+eps); rescale so the weights sum to one.
  for (std::size_t k = 0; k < n; ++k)
    if (include(k)) out(k) = out(k) / total;
  return true;
}

void check_epsilon(double epsilon) {
  require(epsilon > 0.0 && std::isfinite(epsilon), Errc::invalid_argument, "epsilon must be a positive finite value");
}

}  // namespace

std::vector<double> temporal_weights(std::span<const double> c_agg, double epsilon,
                                     std::span<const std::uint8_t> mask) {
  require(!c_agg.empty(), Errc::invalid_argument, "temporal_weights needs T >= 1");
  check_epsilon(epsilon);
  require(mask.empty() || mask.size() == c_agg.size(), Errc::shape_mismatch, "temporal mask length mismatch");
  for (std::size_t t = 0; t < c_agg.size(); ++t)
    if (!std::isfinite(c_agg[t]))
      throw Error(Errc::non_finite, "non-finite aggregated score at t=" + std::to_string(t), t);

  std::vector<double> w(c_agg.size(), 0.0);
  const bool ok = shift_normalize(
      c_agg.size(), c_agg.data(), [&](std::size_t k) { return mask.empty() || mask[k] != 0; }, epsilon,
      [&](std::size_t k) -> double& { return w[k]; });
  require(ok, Errc::invalid_argument, "temporal_weights: every timestep is masked out");
  return w;
}

Matrix agent_weights(const ScoreMatrix& m, double epsilon, std::vector<std::size_t>* empty_timesteps) {
  m.validate();
  check_epsilon(epsilon);
  Matrix w(m.T(), m.N());
  const auto scores = m.scores();
  for (std::size_t t = 0; t < m.T(); ++t) {
    const bool ok = shift_normalize(
        m.N(), scores.data() + t * m.N(), [&](std::size_t i) { return m.active(t, i); }, epsilon,
        [&](std::size_t i) -> double& { return w(t, i); });
    if (!ok && empty_timesteps) empty_timesteps->push_back(t);
  }
  return w;
}

RedistributionWeights compute_weights(const ScoreMatrix& m, double epsilon) {
  RedistributionWeights w;
  w.epsilon = epsilon;
  const std::vector<double> c_agg = aggregate_scores(m);
  std::vector<std::uint8_t> step_mask(m.T());
  for (std::size_t t = 0; t < m.T(); ++t) step_mask[t] = m.timestep_active(t) ? 1 : 0;
  w.temporal = temporal_weights(c_agg, epsilon, step_mask);
  w.agent = agent_weights(m, epsilon, &w.empty_timesteps);
  return w;
}

namespace {

void fill_uniform(Matrix& rewards, std::span<const std::uint8_t> active, double team_reward) {
  std::size_t count = 0;
  for (auto a : active) count += a ? 1 : 0;
  require(count > 0, Errc::invalid_argument, "redistribution needs at least one active cell");
  const double share = team_reward / static_cast<double>(count);
  auto data = rewards.data();
  for (std::size_t k = 0; k < data.size(); ++k) data[k] = active[k] ? share : 0.0;
}

// Scale rewards so they sum to team_reward. Falls back to a uniform split when
// the weights carry no mass.
void enforce_return(Matrix& rewards, std::span<const std::uint8_t> active, double team_reward) {
  if (team_reward == 0.0) {
    std::fill(rewards.data().begin(), rewards.data().end(), 0.0);
    return;
  }
  const double total = rewards.sum();
  if (total == 0.0 || !std::isfinite(total)) {
    fill_uniform(rewards, active, team_reward);
    return;
  }
  const double scale = team_reward / total;
  for (double& v : rewards.data()) v *= scale;
}

}  // namespace

RedistributedRewards redistribute(const ScoreMatrix& m, double team_reward, double epsilon) {
  require(std::isfinite(team_reward), Errc::non_finite, "team reward must be finite");
  RedistributedRewards out;
  out.team_reward = team_reward;
  out.weights = compute_weights(m, epsilon);
  out.rewards = Matrix(m.T(), m.N());
  for (std::size_t t = 0; t < m.T(); ++t)
    for (std::size_t i = 0; i < m.N(); ++i)
      out.rewards(t, i) = m.active(t, i) ? out.weights.temporal[t] * out.weights.agent(t, i) * team_reward : 0.0;
  enforce_return(out.rewards, m.active_mask(), team_reward);
  return out;
}

std::vector<double> delta_k(const RedistributionWeights& w) {
  require(w.agent.rows() == w.temporal.size(), Errc::shape_mismatch, "weights: temporal/agent length mismatch");
  std::vector<double> out(w.agent.cols(), 0.0);
  for (std::size_t t = 0; t < w.temporal.size(); ++t)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w.temporal[t] * w.agent(t, k);
  // A convex combination of weights in [0,1]; rounding can overshoot 1 by an ulp.
  for (double& x : out) x = std::min(x, 1.0);
  return out;
}

RedistributedRewards uniform_redistribution(std::size_t T, std::size_t N, std::span<const std::uint8_t> active,
                                            double team_reward) {
  require(T >= 1 && N >= 1, Errc::invalid_argument, "uniform_redistribution needs T >= 1 and N >= 1");
  require(active.size() == T * N, Errc::shape_mismatch, "activity mask length does not match T*N");
  require(std::isfinite(team_reward), Errc::non_finite, "team reward must be finite");

  RedistributedRewards out;
  out.team_reward = team_reward;
  out.rewards = Matrix(T, N);
  fill_uniform(out.rewards, active, team_reward);

  // Weights consistent with the split: uniform over active steps, then over
  // active agents within each step.
  std::vector<double> zeros(T * N, 0.0);
  const ScoreMatrix flat(T, N, std::move(zeros), std::vector<std::uint8_t>(active.begin(), active.end()));
  out.weights = compute_weights(flat, kDefaultEpsilon);
  return out;
}

RedistributedRewards temporal_only_redistribution(const ScoreMatrix& m, double team_reward, double epsilon) {
  require(std::isfinite(team_reward), Errc::non_finite, "team reward must be finite");
  RedistributedRewards out;
  out.team_reward = team_reward;
  out.weights = compute_weights(m, epsilon);

  // Replace the agent weights by a uniform split over active agents.
  const ScoreMatrix flat(m.T(), m.N(), std::vector<double>(m.T() * m.N(), 0.0),
                         std::vector<std::uint8_t>(m.active_mask().begin(), m.active_mask().end()));
  out.weights.agent = agent_weights(flat, epsilon);

  out.rewards = Matrix(m.T(), m.N());
  for (std::size_t t = 0; t < m.T(); ++t)
    for (std::size_t i = 0; i < m.N(); ++i)
      out.rewards(t, i) = m.active(t, i) ? out.weights.temporal[t] * out.weights.agent(t, i) * team_reward : 0.0;
  enforce_return(out.rewards, m.active_mask(), team_reward);
  return out;
}

bool return_equivalent(const Matrix& rewards, double team_reward, double tol) {
  return std::abs(rewards.sum() - team_reward) <= tol * std::max(1.0, std::abs(team_reward));
}

// ---------------------------------------------------------------------------
// ExactSum

namespace {

inline void two_sum(double a, double b, double& s, double& e) {
  s = a + b;
  const double bv = s - a;
  const double av = s - bv;
  e = (a - av) + (b - bv);
}

}  // namespace

void ExactSum::add(double x) {
  require(std::isfinite(x), Errc::non_finite, "ExactSum only accepts finite values");
  if (x == 0.0) return;
  std::vector<double> next;
  next.reserve(parts_.size() + 1);
  double q = x;
  for (double e : parts_) {
    double s, err;
    two_sum(q, e, s, err);
    if (err != 0.0) next.push_back(err);
    q = s;
  }
  if (q != 0.0) next.push_back(q);
  parts_ = std::move(next);
}

void ExactSum::add(const ExactSum& other) {
  // Copy first: other may alias *this.
  const std::vector<double> parts = other.parts_;
  for (double p : parts) add(p);
}

void ExactSum::subtract(const ExactSum& other) {
  const std::vector<double> parts = other.parts_;
  for (double p : parts) add(-p);
}

double ExactSum::estimate() const {
  double s = 0.0;
  for (double p : parts_) s += p;
  return s;
}

// ---------------------------------------------------------------------------
// Potentials

PotentialSeries::PotentialSeries(std::size_t T, std::size_t N) : T_(T), N_(N), phi_((T + 1) * N) {}

double PotentialSeries::potential(std::size_t t, std::size_t i) const { return exact(t, i).estimate(); }

Matrix PotentialSeries::potentials() const {
  Matrix m(T_ + 1, N_);
  for (std::size_t t = 0; t <= T_; ++t)
    for (std::size_t i = 0; i < N_; ++i) m(t, i) = potential(t, i);
  return m;
}

PotentialSeries potential_series(const Matrix& rewards) {
  PotentialSeries p(rewards.rows(), rewards.cols());
  for (std::size_t i = 0; i < rewards.cols(); ++i) {
    ExactSum running;
    for (std::size_t t = 0; t < rewards.rows(); ++t) {
      running.add(rewards(t, i));
      p.exact(t + 1, i) = running;
    }
  }
  return p;
}

TelescopingResult verify_telescoping(const PotentialSeries& p, const Matrix& rewards, double tol) {
  require(p.T() == rewards.rows() && p.N() == rewards.cols(), Errc::shape_mismatch,
          "potential series and reward matrix shapes differ");
  TelescopingResult res;
  for (std::size_t t = 0; t < p.T(); ++t) {
    for (std::size_t i = 0; i < p.N(); ++i) {
      ExactSum d = p.exact(t + 1, i);
      d.subtract(p.exact(t, i));
      d.add(-rewards(t, i));
      res.max_residual = std::max(res.max_residual, std::abs(d.estimate()));
    }
  }
  res.holds = res.max_residual <= tol;
  return res;
}

}  // namespace tar2::core

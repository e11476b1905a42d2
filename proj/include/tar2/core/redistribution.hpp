#pragma once

// Shift-and-normalize reward redistribution.
//
// A learned model produces unnormalized contribution scores c[t,i] for every
// (timestep, agent) cell of an episode. This header turns those scores into
// per-cell rewards whose sum equals the terminal team reward R exactly:
//
//   c_agg[t]   = sum over active i of c[t,i]
//   w_temp[t]  = (c_agg[t] - min c_agg) / (sum_t (c_agg - min) + eps)
//   w_agent    = same shift/normalize within each timestep, over active agents
//   s[t,i]     = w_temp[t] * w_agent[t,i] * R
//
// Degenerate vectors (no spread after the shift) fall back to uniform weights,
// and everything is renormalized so the weight sums and the reward total are
// exact rather than off by O(eps).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tar2::core {

inline constexpr double kDefaultEpsilon = 1e-8;
inline constexpr double kDegeneracyThreshold = 1e-12;

// Row-major T x N real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double sum() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Contribution scores for one episode plus the activity mask.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  // All cells active.
  ScoreMatrix(std::size_t T, std::size_t N, std::vector<double> scores);
  ScoreMatrix(std::size_t T, std::size_t N, std::vector<double> scores, std::vector<std::uint8_t> active);

  std::size_t T() const noexcept { return T_; }
  std::size_t N() const noexcept { return N_; }
  double score(std::size_t t, std::size_t i) const { return scores_[t * N_ + i]; }
  bool active(std::size_t t, std::size_t i) const { return active_[t * N_ + i] != 0; }
  std::span<const double> scores() const noexcept { return scores_; }
  std::span<const std::uint8_t> active_mask() const noexcept { return active_; }
  bool timestep_active(std::size_t t) const;

  // Throws Error{non_finite} carrying the flat index of the first bad entry, or
  // Error{invalid_argument} for empty shapes / an all-inactive episode.
  void validate() const;

 private:
  std::size_t T_ = 0;
  std::size_t N_ = 0;
  std::vector<double> scores_;
  std::vector<std::uint8_t> active_;
};

struct RedistributionWeights {
  std::vector<double> temporal;  // length T
  Matrix agent;                  // T x N
  double epsilon = kDefaultEpsilon;
  // Timesteps with no active agent; their agent row is all zeros.
  std::vector<std::size_t> empty_timesteps;
};

struct RedistributedRewards {
  Matrix rewards;  // T x N
  double team_reward = 0.0;
  RedistributionWeights weights;
};

std::vector<double> aggregate_scores(const ScoreMatrix& m);

// Shift-and-normalize over a vector. `mask` (optional, same length) excludes
// entries from the min and the sum; excluded entries get weight 0.
std::vector<double> temporal_weights(std::span<const double> c_agg, double epsilon,
                                     std::span<const std::uint8_t> mask = {});

// Per-timestep shift-and-normalize over active agents. Empty timesteps are
// reported through `empty_timesteps` when non-null.
Matrix agent_weights(const ScoreMatrix& m, double epsilon,
                     std::vector<std::size_t>* empty_timesteps = nullptr);

RedistributionWeights compute_weights(const ScoreMatrix& m, double epsilon = kDefaultEpsilon);

RedistributedRewards redistribute(const ScoreMatrix& m, double team_reward,
                                  double epsilon = kDefaultEpsilon);

// out[k] = sum_t temporal[t] * agent[t,k]
std::vector<double> delta_k(const RedistributionWeights& w);

// Equal split over active cells.
RedistributedRewards uniform_redistribution(std::size_t T, std::size_t N,
                                            std::span<const std::uint8_t> active,
                                            double team_reward);

// Temporal weights from the scores, uniform over active agents within a step.
RedistributedRewards temporal_only_redistribution(const ScoreMatrix& m, double team_reward,
                                                  double epsilon = kDefaultEpsilon);

// |sum(rewards) - R| <= tol * max(1, |R|)
bool return_equivalent(const Matrix& rewards, double team_reward, double tol = 1e-9);

// Exact sum of doubles as a nonoverlapping expansion (Shewchuk). Addition and
// subtraction are error-free; `estimate()` rounds the exact value once.
class ExactSum {
 public:
  ExactSum() = default;
  explicit ExactSum(double x) { add(x); }

  void add(double x);
  void add(const ExactSum& other);
  void subtract(const ExactSum& other);
  double estimate() const;
  bool is_zero() const noexcept { return parts_.empty(); }
  std::span<const double> parts() const noexcept { return parts_; }

 private:
  std::vector<double> parts_;  // increasing magnitude, no zeros
};

// Per-agent history potentials Phi[t,i] = sum_{k<t} s[k,i], held exactly so the
// shaping difference Phi[t+1]-Phi[t] reproduces s[t,i] without rounding.
class PotentialSeries {
 public:
  PotentialSeries() = default;
  PotentialSeries(std::size_t T, std::size_t N);

  std::size_t T() const noexcept { return T_; }
  std::size_t N() const noexcept { return N_; }
  double gamma() const noexcept { return 1.0; }

  // Rounded potential at row t in [0, T], agent i.
  double potential(std::size_t t, std::size_t i) const;
  const ExactSum& exact(std::size_t t, std::size_t i) const { return phi_[t * N_ + i]; }
  ExactSum& exact(std::size_t t, std::size_t i) { return phi_[t * N_ + i]; }
  // Rounded (T+1) x N matrix.
  Matrix potentials() const;

  void perturb(std::size_t t, std::size_t i, double delta) { exact(t, i).add(delta); }

 private:
  std::size_t T_ = 0;
  std::size_t N_ = 0;
  std::vector<ExactSum> phi_;  // (T+1) x N
};

PotentialSeries potential_series(const Matrix& rewards);
inline PotentialSeries potential_series(const RedistributedRewards& r) {
  return potential_series(r.rewards);
}

struct TelescopingResult {
  bool holds = false;
  double max_residual = 0.0;
};

// max over (t,i) of |(Phi[t+1,i] - Phi[t,i]) - s[t,i]| evaluated exactly.
TelescopingResult verify_telescoping(const PotentialSeries& p, const Matrix& rewards,
                                     double tol = 1e-12);

}  // namespace tar2::core

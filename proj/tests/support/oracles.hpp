#pragma once

// Independent reference computations used by the test suites. Nothing here
// calls into the library's numeric paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace tar2::oracle {

// Direct long-double evaluation of the shift/normalize weights, including the
// uniform fallback for degenerate vectors. Inactive entries get 0.
inline std::vector<long double> shift_normalize(const std::vector<long double>& v,
                                                const std::vector<bool>& include, long double eps) {
  std::vector<long double> out(v.size(), 0.0L);
  long double mn = INFINITY, max_abs = 0.0L;
  std::size_t count = 0;
  for (std::size_t k = 0; k < v.size(); ++k)
    if (include[k]) {
      mn = std::min(mn, v[k]);
      max_abs = std::max(max_abs, std::fabs(v[k]));
      ++count;
    }
  if (count == 0) return out;
  long double s = 0.0L;
  for (std::size_t k = 0; k < v.size(); ++k)
    if (include[k]) s += v[k] - mn;
  if (s <= 1e-12L * std::max(1.0L, max_abs)) {
    for (std::size_t k = 0; k < v.size(); ++k)
      if (include[k]) out[k] = 1.0L / count;
    return out;
  }
  for (std::size_t k = 0; k < v.size(); ++k)
    if (include[k]) out[k] = (v[k] - mn) / s;  // eps -> 0 limit
  return out;
}

struct RedistOracle {
  std::vector<long double> temporal;
  std::vector<long double> agent;  // T*N
  std::vector<long double> rewards;
};

inline RedistOracle redistribute(std::size_t T, std::size_t N, const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& active, double R) {
  RedistOracle o;
  std::vector<long double> agg(T, 0.0L);
  std::vector<bool> step_on(T, false);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i)
      if (active[t * N + i]) {
        agg[t] += scores[t * N + i];
        step_on[t] = true;
      }
  o.temporal = shift_normalize(agg, step_on, 0.0L);
  o.agent.assign(T * N, 0.0L);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<long double> row(N);
    std::vector<bool> inc(N);
    for (std::size_t i = 0; i < N; ++i) {
      row[i] = scores[t * N + i];
      inc[i] = active[t * N + i] != 0;
    }
    auto w = shift_normalize(row, inc, 0.0L);
    for (std::size_t i = 0; i < N; ++i) o.agent[t * N + i] = w[i];
  }
  o.rewards.assign(T * N, 0.0L);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i) o.rewards[t * N + i] = o.temporal[t] * o.agent[t * N + i] * R;
  return o;
}

// Backward GAE recursion written out term by term.
inline std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                               double lambda) {
  const std::size_t T = rewards.size();
  std::vector<double> delta(T), adv(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double next_v = (t + 1 < T) ? values[t + 1] : 0.0;
    delta[t] = rewards[t] + gamma * next_v - values[t];
  }
  for (std::size_t t = 0; t < T; ++t) {
    double a = 0.0, coef = 1.0;
    for (std::size_t k = t; k < T; ++k) {
      a += coef * delta[k];
      coef *= gamma * lambda;
    }
    adv[t] = a;
  }
  return adv;
}

// Central finite difference of f at x along coordinate k.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t k, double h) {
  const double x0 = x[k];
  x[k] = x0 + h;
  const double fp = f(x);
  x[k] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

}  // namespace tar2::oracle

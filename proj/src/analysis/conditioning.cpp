#include "tar2/analysis/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tar2/common/error.hpp"

namespace tar2::analysis {

namespace {

struct Terms {
  double total, residual;
};

// Draws are laid out as data[c][z] = samples for class c, outcome z.
using Draws = std::vector<std::vector<std::vector<double>>>;

Terms terms(const Draws& d, const std::vector<std::vector<std::vector<std::size_t>>>* idx) {
  double total = 0.0, residual = 0.0;
  for (std::size_t c = 0; c < d.size(); ++c) {
    double sum = 0.0, within = 0.0;
    std::size_t n = 0, groups = 0;
    for (std::size_t z = 0; z < d[c].size(); ++z) {
      const auto& v = d[c][z];
      const std::size_t m = idx ? (*idx)[c][z].size() : v.size();
      if (m == 0) continue;
      double gs = 0.0, gq = 0.0;
      // Centre on the group's first draw so the one-pass sums stay accurate.
      const double c0 = v[idx ? (*idx)[c][z][0] : 0];
      for (std::size_t k = 0; k < m; ++k) {
        const double x = v[idx ? (*idx)[c][z][k] : k] - c0;
        gs += x;
        gq += x * x;
      }
      within += gq - gs * gs / static_cast<double>(m);
      for (std::size_t k = 0; k < m; ++k) sum += v[idx ? (*idx)[c][z][k] : k];
      n += m;
      ++groups;
    }
    const double dn = static_cast<double>(n);
    const double mean = sum / dn;
    double ss = 0.0;
    for (std::size_t z = 0; z < d[c].size(); ++z) {
      const std::size_t m = idx ? (*idx)[c][z].size() : d[c][z].size();
      for (std::size_t k = 0; k < m; ++k) {
        const double x = d[c][z][idx ? (*idx)[c][z][k] : k] - mean;
        ss += x * x;
      }
    }
    total += ss / (dn - 1.0);
    residual += within / static_cast<double>(n - groups);
  }
  const double classes = static_cast<double>(d.size());
  return {total / classes, residual / classes};
}

Interval percentile(std::vector<double> v) {
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

ConditioningReport conditioning_variance_study(const SyntheticContribution& model, const ConditioningOptions& opt) {
  require(!model.g.empty() && !model.h.empty(), Errc::invalid_argument,
          "conditioning_variance_study: need at least one class and one outcome");
  require(model.noise >= 0.0 && std::isfinite(model.noise), Errc::invalid_argument,
          "conditioning_variance_study: noise must be finite and non-negative");
  require(opt.draws_per_class >= 2 * model.h.size(), Errc::invalid_argument,
          "conditioning_variance_study: need at least two draws per outcome");
  require(opt.bootstrap >= 1, Errc::invalid_argument, "conditioning_variance_study: bootstrap count must be positive");

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> outcome(0, model.h.size() - 1);
  Draws d(model.g.size(), std::vector<std::vector<double>>(model.h.size()));
  for (std::size_t c = 0; c < model.g.size(); ++c)
    for (std::size_t k = 0; k < opt.draws_per_class; ++k) {
      const std::size_t z = outcome(rng);
      d[c][z].push_back(model.g[c] + model.h[z] + model.noise * noise(rng));
    }
  for (const auto& cls : d)
    for (const auto& grp : cls)
      require(grp.size() >= 2, Errc::invalid_argument,
              "conditioning_variance_study: an outcome received fewer than two draws");

  const Terms point = terms(d, nullptr);
  ConditioningReport r;
  r.total = point.total;
  r.residual = point.residual;
  r.explained = point.total - point.residual;

  // Stratified bootstrap: resample within each (class, outcome) cell.
  std::vector<double> vt, vr, ve;
  std::vector<std::vector<std::vector<std::size_t>>> idx(d.size());
  for (std::size_t c = 0; c < d.size(); ++c) idx[c].resize(d[c].size());
  for (std::size_t b = 0; b < opt.bootstrap; ++b) {
    for (std::size_t c = 0; c < d.size(); ++c)
      for (std::size_t z = 0; z < d[c].size(); ++z) {
        const std::size_t m = d[c][z].size();
        std::uniform_int_distribution<std::size_t> pick(0, m - 1);
        idx[c][z].resize(m);
        for (auto& i : idx[c][z]) i = pick(rng);
      }
    const Terms t = terms(d, &idx);
    vt.push_back(t.total);
    vr.push_back(t.residual);
    ve.push_back(t.total - t.residual);
  }
  r.ci_total = percentile(vt);
  r.ci_residual = percentile(vr);
  r.ci_explained = percentile(ve);
  r.ci_gap = r.ci_residual;
  return r;
}

}  // namespace tar2::analysis

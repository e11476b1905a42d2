#include "tar2/marl/popart.hpp"

#include <algorithm>
#include <cmath>

#include "tar2/common/error.hpp"

namespace tar2::marl {

PopArt::PopArt(std::size_t channels, double beta, double var_floor)
    : beta_(beta), var_floor_(var_floor), mean_(channels, 0.0), sq_(channels, 0.0) {
  require(channels > 0, Errc::invalid_argument, "PopArt: need at least one channel");
  require(beta >= 0.0 && beta < 1.0, Errc::config, "PopArt: decay must be in [0,1)");
  require(var_floor > 0.0, Errc::config, "PopArt: variance floor must be positive");
}

double PopArt::stddev(std::size_t c) const {
  if (updates_ == 0) return 1.0;
  const double m = mean(c);
  return std::sqrt(std::max(debiased(sq_[c]) - m * m, var_floor_));
}

void PopArt::update(const std::vector<std::vector<double>>& samples) {
  require(samples.size() == channels(), Errc::shape_mismatch, "PopArt: one sample list per channel expected");
  bool any = false;
  for (std::size_t c = 0; c < channels(); ++c) {
    if (samples[c].empty()) continue;
    double s = 0.0, s2 = 0.0;
    for (double x : samples[c]) {
      if (!std::isfinite(x)) fail(Errc::non_finite, "PopArt: non-finite return");
      s += x;
      s2 += x * x;
    }
    const double n = static_cast<double>(samples[c].size());
    mean_[c] = beta_ * mean_[c] + (1.0 - beta_) * (s / n);
    sq_[c] = beta_ * sq_[c] + (1.0 - beta_) * (s2 / n);
    any = true;
  }
  if (!any) return;
  debias_ = beta_ * debias_ + (1.0 - beta_);
  ++updates_;
}

void PopArt::update_preserving(const std::vector<std::vector<double>>& samples, nn::Linear& head,
                               std::span<const std::size_t> channel_of) {
  require(channel_of.size() == head.out(), Errc::shape_mismatch, "PopArt: channel map must cover every output");
  std::vector<double> old_mu(channels()), old_sigma(channels());
  for (std::size_t c = 0; c < channels(); ++c) {
    old_mu[c] = mean(c);
    old_sigma[c] = stddev(c);
  }
  update(samples);
  for (std::size_t j = 0; j < head.out(); ++j) {
    const std::size_t c = channel_of[j];
    const double mu = mean(c), sigma = stddev(c);
    const double ratio = old_sigma[c] / sigma;
    for (std::size_t r = 0; r < head.in(); ++r) head.weight.value(r, j) *= ratio;
    if (head.has_bias()) head.bias.value[j] = (old_sigma[c] * head.bias.value[j] + old_mu[c] - mu) / sigma;
  }
}

std::vector<double> PopArt::raw() const {
  std::vector<double> out;
  out.reserve(2 * channels() + 1);
  out.insert(out.end(), mean_.begin(), mean_.end());
  out.insert(out.end(), sq_.begin(), sq_.end());
  out.push_back(debias_);
  return out;
}

void PopArt::set_raw(std::span<const double> values, std::size_t updates) {
  require(values.size() == 2 * channels() + 1, Errc::state, "PopArt: raw state has the wrong length");
  std::copy(values.begin(), values.begin() + channels(), mean_.begin());
  std::copy(values.begin() + channels(), values.end() - 1, sq_.begin());
  debias_ = values.back();
  updates_ = updates;
}

}  // namespace tar2::marl

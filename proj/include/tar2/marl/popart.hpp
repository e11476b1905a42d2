#pragma once

// Running return statistics for value-target normalization. With
// `rescale_output` the critic's final linear layer is adjusted after every
// update so its denormalized predictions are unchanged.

#include <cstddef>
#include <span>
#include <vector>

#include "tar2/nn/layers.hpp"

namespace tar2::marl {

class PopArt {
 public:
  PopArt() = default;
  // `channels` independent statistics (1 for a shared normalizer).
  explicit PopArt(std::size_t channels, double beta = 0.999, double var_floor = 1e-2);

  std::size_t channels() const noexcept { return mean_.size(); }

  // Folds one batch of samples per channel into the exponential moments.
  // Channels with no samples are left untouched.
  void update(const std::vector<std::vector<double>>& samples);

  double mean(std::size_t c) const { return debiased(mean_[c]); }
  double stddev(std::size_t c) const;
  // Number of updates folded in.
  std::size_t updates() const noexcept { return updates_; }

  double normalize(std::size_t c, double x) const { return (x - mean(c)) / stddev(c); }
  double denormalize(std::size_t c, double y) const { return y * stddev(c) + mean(c); }

  // Update, then rewrite `head` so that denormalize(head(x)) is preserved.
  // Output column j of the head uses channel `channel_of[j]`.
  void update_preserving(const std::vector<std::vector<double>>& samples, nn::Linear& head,
                         std::span<const std::size_t> channel_of);

  // Raw state for checkpoints: mean, mean-square, debias weight per channel.
  std::vector<double> raw() const;
  void set_raw(std::span<const double> values, std::size_t updates);

 private:
  double debiased(double x) const { return debias_ > 0.0 ? x / debias_ : x; }

  double beta_ = 0.999;
  double var_floor_ = 1e-2;
  std::vector<double> mean_, sq_;
  double debias_ = 0.0;
  std::size_t updates_ = 0;
};

}  // namespace tar2::marl

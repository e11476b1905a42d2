#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <random>
#include <vector>

#include "tar2/env/episode.hpp"

namespace tar2::rm {

// Bounded FIFO of finished episodes; the oldest is evicted when full.
class TrajectoryBuffer {
 public:
  explicit TrajectoryBuffer(std::size_t capacity = 5000);

  void add(env::Episode episode);
  void clear() { episodes_.clear(); }

  std::size_t size() const noexcept { return episodes_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return episodes_.empty(); }
  std::uint64_t total_added() const noexcept { return total_added_; }
  void set_total_added(std::uint64_t n) { total_added_ = n; }
  // Oldest first.
  const env::Episode& at(std::size_t k) const { return episodes_.at(k); }

  // `n` distinct episodes when the buffer holds at least `n`, otherwise `n`
  // draws with replacement (and *with_replacement is set).
  std::vector<const env::Episode*> sample(std::size_t n, std::mt19937_64& rng,
                                          bool* with_replacement = nullptr) const;

 private:
  std::size_t capacity_;
  std::deque<env::Episode> episodes_;
  std::uint64_t total_added_ = 0;
};

}  // namespace tar2::rm

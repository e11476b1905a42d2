#include "tar2/rm/buffer.hpp"

#include <numeric>

#include "tar2/common/error.hpp"

namespace tar2::rm {

TrajectoryBuffer::TrajectoryBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity > 0, Errc::invalid_argument, "buffer capacity must be positive");
}

void TrajectoryBuffer::add(env::Episode episode) {
  episode.validate();
  if (!episodes_.empty()) {
    const env::Episode& ref = episodes_.front();
    require(episode.T == ref.T && episode.N == ref.N && episode.obs_dim == ref.obs_dim &&
                episode.state_dim == ref.state_dim && episode.n_actions == ref.n_actions,
            Errc::shape_mismatch, "buffer: episode shape differs from stored episodes");
  }
  if (episodes_.size() == capacity_) episodes_.pop_front();
  episodes_.push_back(std::move(episode));
  ++total_added_;
}

std::vector<const env::Episode*> TrajectoryBuffer::sample(std::size_t n, std::mt19937_64& rng,
                                                          bool* with_replacement) const {
  require(!episodes_.empty(), Errc::state, "buffer: sampling from an empty buffer");
  std::vector<const env::Episode*> out;
  out.reserve(n);
  const bool replace = episodes_.size() < n;
  if (with_replacement) *with_replacement = replace;
  if (replace) {
    std::uniform_int_distribution<std::size_t> pick(0, episodes_.size() - 1);
    for (std::size_t k = 0; k < n; ++k) out.push_back(&episodes_[pick(rng)]);
    return out;
  }
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(episodes_.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
    std::swap(idx[k], idx[pick(rng)]);
    out.push_back(&episodes_[idx[k]]);
  }
  return out;
}

}  // namespace tar2::rm

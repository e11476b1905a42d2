#pragma once

// Named snapshot of everything needed to resume a run: text metadata plus
// flat f64 arrays. The on-disk layout lives with the checkpoint code.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tar2/nn/autograd.hpp"
#include "tar2/nn/optim.hpp"

namespace tar2 {

struct StateDict {
  std::map<std::string, std::string> meta;
  std::map<std::string, std::vector<double>> arrays;

  void put(const std::string& key, std::vector<double> values) { arrays[key] = std::move(values); }
  // Throws Errc::state when missing or when `expected_size` (if nonzero) differs.
  const std::vector<double>& get(const std::string& key, std::size_t expected_size = 0) const;

  void put_meta(const std::string& key, std::string value) { meta[key] = std::move(value); }
  void put_meta(const std::string& key, std::uint64_t value) { meta[key] = std::to_string(value); }
  const std::string& get_meta(const std::string& key) const;
  std::uint64_t get_meta_u64(const std::string& key) const;

  void put_rng(const std::string& key, const std::mt19937_64& rng);
  void get_rng(const std::string& key, std::mt19937_64& rng) const;

  // Parameter values keyed by `prefix + param.name`.
  void put_params(const std::string& prefix, const std::vector<nn::Parameter*>& params);
  void get_params(const std::string& prefix, const std::vector<nn::Parameter*>& params) const;

  // Adam moments and step count.
  void put_adam(const std::string& prefix, const nn::Adam& adam);
  void get_adam(const std::string& prefix, nn::Adam& adam) const;
};

}  // namespace tar2

#include "tar2/common/state.hpp"

#include <sstream>

#include "tar2/common/error.hpp"

namespace tar2 {

namespace {

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

const std::vector<double>& StateDict::get(const std::string& key, std::size_t expected_size) const {
  const auto it = arrays.find(key);
  if (it == arrays.end()) fail(Errc::state, "state: missing array '" + key + "'");
  if (expected_size != 0 && it->second.size() != expected_size)
    fail(Errc::state, "state: array '" + key + "' has " + std::to_string(it->second.size()) + " values, expected " +
                          std::to_string(expected_size));
  return it->second;
}

const std::string& StateDict::get_meta(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) fail(Errc::state, "state: missing field '" + key + "'");
  return it->second;
}

std::uint64_t StateDict::get_meta_u64(const std::string& key) const {
  const std::string& s = get_meta(key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(Errc::state, "state: field '" + key + "' is not an unsigned integer");
}

void StateDict::put_rng(const std::string& key, const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  meta[key] = os.str();
}

void StateDict::get_rng(const std::string& key, std::mt19937_64& rng) const {
  std::istringstream is(get_meta(key));
  is >> rng;
  if (is.fail()) fail(Errc::state, "state: malformed generator state '" + key + "'");
}

void StateDict::put_params(const std::string& prefix, const std::vector<nn::Parameter*>& params) {
  for (const nn::Parameter* p : params) put(prefix + p->name, copy_of(p->value.data()));
}

void StateDict::get_params(const std::string& prefix, const std::vector<nn::Parameter*>& params) const {
  for (nn::Parameter* p : params) {
    const auto& v = get(prefix + p->name, p->value.size());
    std::copy(v.begin(), v.end(), p->value.data().begin());
  }
}

void StateDict::put_adam(const std::string& prefix, const nn::Adam& adam) {
  const auto& ps = adam.params();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    put(prefix + "m." + ps[k]->name, copy_of(adam.first_moments()[k].data()));
    put(prefix + "v." + ps[k]->name, copy_of(adam.second_moments()[k].data()));
  }
  put_meta(prefix + "steps", adam.steps());
}

void StateDict::get_adam(const std::string& prefix, nn::Adam& adam) const {
  const auto& ps = adam.params();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const auto& m = get(prefix + "m." + ps[k]->name, ps[k]->value.size());
    const auto& v = get(prefix + "v." + ps[k]->name, ps[k]->value.size());
    std::copy(m.begin(), m.end(), adam.first_moments()[k].data().begin());
    std::copy(v.begin(), v.end(), adam.second_moments()[k].data().begin());
  }
  adam.set_steps(get_meta_u64(prefix + "steps"));
}

}  // namespace tar2

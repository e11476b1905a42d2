#include "tar2/env/environment.hpp"

#include <array>
#include <random>
#include <string>

#include "tar2/common/error.hpp"

namespace tar2::env {

void Environment::reset(std::uint64_t seed) {
  t_ = 0;
  started_ = true;
  events_.clear();
  do_reset(seed);
}

StepResult Environment::step(std::span<const std::size_t> actions) {
  if (!started_) fail(Errc::state, std::string(name()) + ": step before reset");
  if (done()) fail(Errc::state, std::string(name()) + ": step after the episode ended");
  if (actions.size() != n_agents()) fail(Errc::invalid_argument,
          std::string(name()) + ": expected " + std::to_string(n_agents()) + " actions");
  for (std::size_t a : actions)
    if (a >= n_actions()) fail(Errc::invalid_argument,
            std::string(name()) + ": action index " + std::to_string(a) + " out of range");
  do_step(actions);
  ++t_;
  StepResult r;
  r.done = done();
  r.reward = r.done ? score() : 0.0;
  return r;
}

std::vector<std::uint8_t> Environment::active_mask() const {
  std::vector<std::uint8_t> m(n_agents());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = is_active(i) ? 1 : 0;
  return m;
}

std::vector<double> Environment::observations() const {
  std::vector<double> out;
  out.reserve(n_agents() * obs_dim());
  for (std::size_t i = 0; i < n_agents(); ++i) {
    auto o = observation(i);
    out.insert(out.end(), o.begin(), o.end());
  }
  return out;
}

std::vector<double> Environment::final_global_state() const {
  if (!done()) fail(Errc::state, std::string(name()) + ": final state requested before the episode ended");
  return global_state();
}

// --- KeyTreasure ---

void KeyTreasure::do_reset(std::uint64_t) {
  pos_[0] = 0;
  pos_[1] = 3;
  holder_ = 2;
  key_taken_ = door_open_ = treasure_ = false;
}

void KeyTreasure::do_step(std::span<const std::size_t> actions) {
  for (std::size_t i = 0; i < 2; ++i) {
    std::size_t& p = pos_[i];
    switch (actions[i]) {
      case left:
        if (p > 0) --p;
        break;
      case right:
        if (p + 1 < kLength && (p + 1 != kDoorCell || door_open_)) ++p;
        break;
      case interact:
        if (p == kKeyCell && !key_taken_) {
          key_taken_ = true;
          holder_ = i;
          emit(i, "key_picked");
        } else if (p == kDoorCell - 1 && holder_ == i && !door_open_) {
          door_open_ = true;
          emit(i, "door_opened");
        }
        break;
      default:
        break;
    }
    if (p == kTreasureCell && !treasure_) {
      treasure_ = true;
      emit(i, "treasure_reached");
    }
  }
}

std::vector<double> KeyTreasure::observation(std::size_t agent) const {
  require(agent < 2, Errc::invalid_argument, "key_treasure: agent index out of range");
  std::vector<double> o(obs_dim(), 0.0);
  o[pos_[agent]] = 1.0;
  o[kLength] = holder_ == agent ? 1.0 : 0.0;
  o[kLength + 1] = door_open_ ? 1.0 : 0.0;
  return o;
}

std::vector<double> KeyTreasure::global_state() const {
  std::vector<double> s(state_dim(), 0.0);
  s[pos_[0]] = 1.0;
  s[kLength + pos_[1]] = 1.0;
  s[2 * kLength] = holder_ == 0 ? 1.0 : 0.0;
  s[2 * kLength + 1] = holder_ == 1 ? 1.0 : 0.0;
  s[2 * kLength + 2] = door_open_ ? 1.0 : 0.0;
  s[2 * kLength + 3] = treasure_ ? 1.0 : 0.0;
  return s;
}

double KeyTreasure::score() const {
  if (treasure_) return 1.0;
  if (door_open_) return 0.6;
  if (key_taken_) return 0.3;
  return 0.0;
}

// --- Switches ---

namespace {

constexpr std::size_t cell(std::size_t r, std::size_t c) { return r * Switches::kSide + c; }

constexpr std::array<std::array<std::size_t, 3>, Switches::kAgents> kStarts = {{
    {cell(2, 0), cell(2, 1), cell(1, 0)},
    {cell(0, 0), cell(0, 1), cell(1, 1)},
    {cell(0, 2), cell(1, 2), cell(2, 2)},
}};
constexpr std::array<std::size_t, Switches::kAgents> kSwitchCells = {cell(0, 4), cell(4, 4), cell(4, 0)};

}  // namespace

std::size_t Switches::switch_cell(std::size_t agent) { return kSwitchCells.at(agent); }

std::span<const std::size_t> Switches::start_cells(std::size_t agent) { return kStarts.at(agent); }

void Switches::do_reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < kAgents; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, kStarts[i].size() - 1);
    pos_[i] = kStarts[i][pick(rng)];
    pressed_[i] = false;
  }
}

void Switches::do_step(std::span<const std::size_t> actions) {
  for (std::size_t i = 0; i < kAgents; ++i) {
    if (pressed_[i]) continue;  // left the episode
    std::size_t r = pos_[i] / kSide, c = pos_[i] % kSide;
    switch (actions[i]) {
      case up:
        if (r > 0) --r;
        break;
      case down:
        if (r + 1 < kSide) ++r;
        break;
      case left:
        if (c > 0) --c;
        break;
      case right:
        if (c + 1 < kSide) ++c;
        break;
      case interact: {
        bool ready = pos_[i] == kSwitchCells[i];
        for (std::size_t j = 0; j < i; ++j) ready = ready && pressed_[j];
        if (ready) {
          pressed_[i] = true;
          emit(i, "switch_pressed");
        }
        break;
      }
      default:
        break;
    }
    pos_[i] = cell(r, c);
  }
}

std::vector<double> Switches::observation(std::size_t agent) const {
  require(agent < kAgents, Errc::invalid_argument, "switches: agent index out of range");
  std::vector<double> o(obs_dim(), 0.0);
  o[pos_[agent]] = 1.0;
  for (std::size_t j = 0; j < kAgents; ++j) o[kSide * kSide + j] = pressed_[j] ? 1.0 : 0.0;
  return o;
}

std::vector<double> Switches::global_state() const {
  std::vector<double> s(state_dim(), 0.0);
  for (std::size_t i = 0; i < kAgents; ++i) {
    s[i * kSide * kSide + pos_[i]] = 1.0;
    s[kAgents * kSide * kSide + i] = pressed_[i] ? 1.0 : 0.0;
  }
  return s;
}

double Switches::score() const {
  std::size_t n = 0;
  for (bool p : pressed_) n += p ? 1 : 0;
  return n == kAgents ? 1.0 : 0.25 * static_cast<double>(n);
}

std::unique_ptr<Environment> make_environment(std::string_view name) {
  if (name == "key_treasure") return std::make_unique<KeyTreasure>();
  if (name == "switches") return std::make_unique<Switches>();
  fail(Errc::config, "unknown environment '" + std::string(name) + "'");
}

}  // namespace tar2::env

#pragma once

// Episodic cooperative environments with a single team reward paid at the
// final step. Every environment runs for exactly `horizon()` steps.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tar2::env {

// Dense event emitted for diagnostics. Never part of the training signal.
struct Event {
  std::size_t t = 0;
  std::size_t agent = 0;
  std::string kind;
};

struct StepResult {
  bool done = false;
  double reward = 0.0;  // nonzero only on the final step
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view name() const = 0;
  virtual std::size_t n_agents() const = 0;
  virtual std::size_t n_actions() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  void reset(std::uint64_t seed);
  StepResult step(std::span<const std::size_t> actions);

  virtual std::vector<double> observation(std::size_t agent) const = 0;
  virtual std::vector<double> global_state() const = 0;
  // Team reward the scoring rule assigns to the current state.
  virtual double score() const = 0;
  virtual bool is_active(std::size_t agent) const { return true; }

  std::vector<std::uint8_t> active_mask() const;
  // All observations, agent-major: n_agents * obs_dim values.
  std::vector<double> observations() const;
  std::vector<double> final_global_state() const;

  std::size_t t() const noexcept { return t_; }
  bool done() const noexcept { return t_ >= horizon(); }
  const std::vector<Event>& events() const noexcept { return events_; }

 protected:
  virtual void do_reset(std::uint64_t seed) = 0;
  virtual void do_step(std::span<const std::size_t> actions) = 0;
  void emit(std::size_t agent, std::string kind) { events_.push_back({t_, agent, std::move(kind)}); }

 private:
  std::size_t t_ = 0;
  bool started_ = false;
  std::vector<Event> events_;
};

// Two agents in a corridor: one fetches the key, the door opens for the key
// holder, the treasure sits behind the door.
class KeyTreasure final : public Environment {
 public:
  static constexpr std::size_t kLength = 7;
  static constexpr std::size_t kKeyCell = 1;
  static constexpr std::size_t kDoorCell = 5;
  static constexpr std::size_t kTreasureCell = 6;
  static constexpr std::size_t kHorizon = 20;
  enum Action : std::size_t { left = 0, right = 1, stay = 2, interact = 3 };

  std::string_view name() const override { return "key_treasure"; }
  std::size_t n_agents() const override { return 2; }
  std::size_t n_actions() const override { return 4; }
  std::size_t obs_dim() const override { return kLength + 2; }
  std::size_t state_dim() const override { return 2 * kLength + 4; }
  std::size_t horizon() const override { return kHorizon; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<KeyTreasure>(*this); }

  std::vector<double> observation(std::size_t agent) const override;
  std::vector<double> global_state() const override;
  double score() const override;

  std::size_t position(std::size_t agent) const { return pos_[agent]; }
  // Index of the agent holding the key, or n_agents() when nobody does.
  std::size_t key_holder() const { return holder_; }
  bool key_taken() const { return key_taken_; }
  bool door_open() const { return door_open_; }
  bool treasure_reached() const { return treasure_; }

 protected:
  void do_reset(std::uint64_t seed) override;
  void do_step(std::span<const std::size_t> actions) override;

 private:
  std::size_t pos_[2] = {0, 3};
  std::size_t holder_ = 2;
  bool key_taken_ = false;
  bool door_open_ = false;
  bool treasure_ = false;
};

// Three agents on a grid, each owning a switch that only counts when the
// lower-indexed switches are already on. An agent leaves the episode once its
// switch is pressed.
class Switches final : public Environment {
 public:
  static constexpr std::size_t kSide = 5;
  static constexpr std::size_t kAgents = 3;
  static constexpr std::size_t kHorizon = 25;
  enum Action : std::size_t { up = 0, down = 1, left = 2, right = 3, stay = 4, interact = 5 };

  std::string_view name() const override { return "switches"; }
  std::size_t n_agents() const override { return kAgents; }
  std::size_t n_actions() const override { return 6; }
  std::size_t obs_dim() const override { return kSide * kSide + kAgents; }
  std::size_t state_dim() const override { return kAgents * kSide * kSide + kAgents; }
  std::size_t horizon() const override { return kHorizon; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<Switches>(*this); }

  std::vector<double> observation(std::size_t agent) const override;
  std::vector<double> global_state() const override;
  double score() const override;
  bool is_active(std::size_t agent) const override { return !pressed_[agent]; }

  // Cells are row * kSide + col.
  static std::size_t switch_cell(std::size_t agent);
  static std::span<const std::size_t> start_cells(std::size_t agent);
  std::size_t position(std::size_t agent) const { return pos_[agent]; }
  bool pressed(std::size_t agent) const { return pressed_[agent]; }

 protected:
  void do_reset(std::uint64_t seed) override;
  void do_step(std::span<const std::size_t> actions) override;

 private:
  std::size_t pos_[kAgents] = {};
  bool pressed_[kAgents] = {};
};

// "key_treasure" or "switches".
std::unique_ptr<Environment> make_environment(std::string_view name);

// Sizes a model needs to know about an environment.
struct EnvSpec {
  std::size_t n_agents = 0;
  std::size_t horizon = 0;
  std::size_t obs_dim = 0;
  std::size_t state_dim = 0;
  std::size_t n_actions = 0;
  friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

inline EnvSpec spec_of(const Environment& env) {
  return {env.n_agents(), env.horizon(), env.obs_dim(), env.state_dim(), env.n_actions()};
}

}  // namespace tar2::env

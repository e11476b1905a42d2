#include <doctest.h>

#include <cmath>
#include <map>
#include <queue>
#include <random>
#include <set>

#include "tar2/common/error.hpp"
#include "tar2/env/environment.hpp"
#include "tar2/env/episode.hpp"

using namespace tar2;
using namespace tar2::env;

namespace {

// Corridor rules restated from the environment description, written without
// reference to the library.
struct CorridorOracle {
  int pos[2] = {0, 3};
  int holder = -1;
  bool door = false;
  bool treasure = false;

  void step(int a0, int a1) {
    const int acts[2] = {a0, a1};
    for (int i = 0; i < 2; ++i) {
      int& p = pos[i];
      if (acts[i] == 0 && p > 0) p -= 1;
      if (acts[i] == 1 && p < 6 && (p + 1 != 5 || door)) p += 1;
      if (acts[i] == 3) {
        if (p == 1 && holder < 0)
          holder = i;
        else if (p == 4 && holder == i)
          door = true;
      }
      if (p == 6) treasure = true;
    }
  }
  double reward() const { return treasure ? 1.0 : door ? 0.6 : holder >= 0 ? 0.3 : 0.0; }
  int code() const { return (((pos[0] * 7 + pos[1]) * 3 + (holder + 1)) * 2 + door) * 2 + treasure; }
};

std::vector<std::size_t> joint(std::size_t a, std::size_t b) { return {a, b}; }

double run_script(Environment& env, const std::vector<std::vector<std::size_t>>& script, std::uint64_t seed = 0) {
  env.reset(seed);
  StepResult r;
  std::vector<std::size_t> idle(env.n_agents(), env.n_actions() == 4 ? 2 : 4);
  for (std::size_t t = 0; t < env.horizon(); ++t) {
    r = env.step(t < script.size() ? script[t] : idle);
    if (!r.done) REQUIRE(r.reward == 0.0);
  }
  REQUIRE(r.done);
  return r.reward;
}

}  // namespace

TEST_CASE("key_treasure reset layout and observations") {
  KeyTreasure env;
  env.reset(0);
  const auto o0 = env.observation(0);
  const auto o1 = env.observation(1);
  REQUIRE(o0.size() == 9);
  const std::vector<double> e0{1, 0, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<double> e1{0, 0, 0, 1, 0, 0, 0, 0, 0};
  CHECK(o0 == e0);
  CHECK(o1 == e1);
  CHECK(env.active_mask() == std::vector<std::uint8_t>{1, 1});
  KeyTreasure again;
  again.reset(0);
  CHECK(again.observations() == env.observations());
}

TEST_CASE("key_treasure dynamics table") {
  KeyTreasure env;
  env.reset(0);
  env.step(joint(KeyTreasure::right, KeyTreasure::stay));
  CHECK(env.position(0) == 1);
  env.step(joint(KeyTreasure::interact, KeyTreasure::stay));
  CHECK(env.key_holder() == 0);
  CHECK(env.observation(0)[7] == 1.0);
  CHECK(env.events().back().kind == "key_picked");
  // The closed door blocks the corridor.
  env.step(joint(KeyTreasure::stay, KeyTreasure::right));
  CHECK(env.position(1) == 4);
  env.step(joint(KeyTreasure::stay, KeyTreasure::right));
  CHECK(env.position(1) == 4);
  // Only the key holder opens it.
  env.step(joint(KeyTreasure::stay, KeyTreasure::interact));
  CHECK_FALSE(env.door_open());
}

TEST_CASE("key_treasure scoring rule") {
  KeyTreasure env;
  using K = KeyTreasure;
  const std::vector<std::vector<std::size_t>> success = {
      joint(K::right, K::right),   joint(K::interact, K::stay), joint(K::right, K::stay), joint(K::right, K::stay),
      joint(K::right, K::stay),    joint(K::interact, K::stay), joint(K::stay, K::right), joint(K::stay, K::right)};
  CHECK(run_script(env, success) == 1.0);
  CHECK(env.treasure_reached());
  const std::vector<std::vector<std::size_t>> key_only = {joint(K::right, K::stay), joint(K::interact, K::stay)};
  CHECK(run_script(env, key_only) == 0.3);
  auto door_only = success;
  door_only.resize(6);
  CHECK(run_script(env, door_only) == 0.6);
  CHECK(run_script(env, {}) == 0.0);
}

TEST_CASE("key_treasure agrees with the rule oracle on every short script") {
  // All 4^7 scripts for agent 0 paired with a fixed agent-1 pattern.
  KeyTreasure env;
  std::set<double> seen;
  const std::size_t L = 7;
  std::size_t n = 1;
  for (std::size_t k = 0; k < L; ++k) n *= 4;
  for (std::size_t code = 0; code < n; ++code) {
    std::vector<std::vector<std::size_t>> script;
    CorridorOracle o;
    std::size_t c = code;
    for (std::size_t k = 0; k < L; ++k) {
      const std::size_t a0 = c % 4, a1 = (k * 7 + code) % 4;
      c /= 4;
      script.push_back(joint(a0, a1));
      o.step(int(a0), int(a1));
    }
    for (std::size_t k = L; k < KeyTreasure::kHorizon; ++k) o.step(2, 2);
    const double r = run_script(env, script);
    REQUIRE(r == o.reward());
    seen.insert(r);
  }
  CHECK(seen.count(0.0) == 1);
  CHECK(seen.count(0.3) == 1);
  CHECK(seen.count(0.6) == 1);
}

TEST_CASE("key_treasure: full return reachable within the horizon (breadth-first search)") {
  KeyTreasure root;
  root.reset(0);
  std::queue<KeyTreasure> frontier;
  std::set<std::vector<double>> visited{root.global_state()};
  frontier.push(root);
  std::size_t best = 0;
  while (!frontier.empty() && best == 0) {
    KeyTreasure cur = frontier.front();
    frontier.pop();
    for (std::size_t a = 0; a < 4 && best == 0; ++a)
      for (std::size_t b = 0; b < 4 && best == 0; ++b) {
        if (cur.done()) continue;
        KeyTreasure nxt = cur;
        nxt.step(joint(a, b));
        if (nxt.treasure_reached()) best = nxt.t();
        if (visited.insert(nxt.global_state()).second) frontier.push(nxt);
      }
  }
  CHECK(best > 0);
  CHECK(best <= KeyTreasure::kHorizon);
  CHECK(best == 7);  // agent 1 walks through in the step the door opens
}

TEST_CASE("key_treasure: random-policy return matches the exact distribution") {
  // Exact expected return of the uniform policy via forward propagation of
  // the oracle state distribution.
  std::map<int, std::pair<CorridorOracle, double>> dist{{CorridorOracle{}.code(), {CorridorOracle{}, 1.0}}};
  for (std::size_t t = 0; t < KeyTreasure::kHorizon; ++t) {
    std::map<int, std::pair<CorridorOracle, double>> next;
    for (const auto& [code, entry] : dist)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          CorridorOracle o = entry.first;
          o.step(a, b);
          auto& slot = next[o.code()];
          slot.first = o;
          slot.second += entry.second / 16.0;
        }
    dist = std::move(next);
  }
  double mean = 0.0, second = 0.0;
  for (const auto& [code, entry] : dist) {
    mean += entry.second * entry.first.reward();
    second += entry.second * entry.first.reward() * entry.first.reward();
  }
  const double sd = std::sqrt(second - mean * mean);

  KeyTreasure env;
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> act(0, 3);
  const int episodes = 20000;
  double acc = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(0);
    StepResult r;
    while (!env.done()) r = env.step(joint(act(rng), act(rng)));
    acc += r.reward;
  }
  const double mc = acc / episodes;
  CHECK(std::abs(mc - mean) <= 4.0 * sd / std::sqrt(double(episodes)));
}

TEST_CASE("observation locality: the other agent's key flag is not visible") {
  using K = KeyTreasure;
  KeyTreasure a, b;
  a.reset(0);
  b.reset(0);
  for (auto* env : {&a, &b}) {
    env->step(joint(K::stay, K::left));
    env->step(joint(K::stay, K::left));
  }
  a.step(joint(K::stay, K::interact));
  b.step(joint(K::stay, K::stay));
  CHECK(a.key_holder() == 1);
  CHECK(b.key_holder() == 2);
  CHECK(a.observation(0) == b.observation(0));
  CHECK(a.observation(1) != b.observation(1));
}

TEST_CASE("zero pre-terminal reward and rejection paths") {
  std::mt19937_64 rng(5);
  for (const char* name : {"key_treasure", "switches"}) {
    auto env = make_environment(name);
    std::uniform_int_distribution<std::size_t> act(0, env->n_actions() - 1);
    for (int e = 0; e < 300; ++e) {
      env->reset(rng());
      std::vector<std::size_t> a(env->n_agents());
      while (true) {
        for (auto& x : a) x = act(rng);
        const StepResult r = env->step(a);
        if (r.done) {
          CHECK(r.reward == env->score());
          break;
        }
        REQUIRE(r.reward == 0.0);
      }
    }
    std::vector<std::size_t> a(env->n_agents(), 0);
    CHECK_THROWS_AS(env->step(a), Error);
    env->reset(1);
    a[0] = env->n_actions();
    CHECK_THROWS_AS(env->step(a), Error);
    CHECK_THROWS_AS(env->step(std::vector<std::size_t>(env->n_agents() + 1, 0)), Error);
    CHECK_THROWS_AS(env->final_global_state(), Error);
  }
  CHECK_THROWS_AS(make_environment("nope"), Error);
}

TEST_CASE("final global state") {
  using K = KeyTreasure;
  KeyTreasure env;
  run_script(env, {});
  const auto fail_state = env.final_global_state();
  CHECK(fail_state.size() == env.state_dim());
  run_script(env, {});
  CHECK(env.final_global_state() == fail_state);
  run_script(env, {joint(K::right, K::stay), joint(K::interact, K::stay)});
  CHECK(env.final_global_state() != fail_state);
}

TEST_CASE("switches: layout, ordering, exit and scoring") {
  Switches env;
  std::set<std::size_t> starts0;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    env.reset(seed);
    Switches again;
    again.reset(seed);
    CHECK(again.observations() == env.observations());
    CHECK(env.active_mask() == std::vector<std::uint8_t>{1, 1, 1});
    for (std::size_t i = 0; i < 3; ++i) {
      const auto s = Switches::start_cells(i);
      CHECK(std::find(s.begin(), s.end(), env.position(i)) != s.end());
    }
    starts0.insert(env.position(0));
  }
  CHECK(starts0.size() == 3);

  // Greedy scripted walk: move toward the own switch, interact when there.
  auto scripted = [](Switches& e) {
    std::vector<std::size_t> a(3);
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t p = e.position(i), g = Switches::switch_cell(i);
      const std::size_t r = p / 5, c = p % 5, gr = g / 5, gc = g % 5;
      if (r < gr) a[i] = Switches::down;
      else if (r > gr) a[i] = Switches::up;
      else if (c < gc) a[i] = Switches::right;
      else if (c > gc) a[i] = Switches::left;
      else a[i] = Switches::interact;
    }
    return a;
  };
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    env.reset(seed);
    StepResult r;
    bool saw_order_block = false;
    while (!env.done()) {
      const auto a = scripted(env);
      const bool p1_before = env.pressed(1);
      if (a[1] == Switches::interact && !env.pressed(0)) saw_order_block = true;
      r = env.step(a);
      if (saw_order_block && !env.pressed(0)) CHECK(env.pressed(1) == p1_before);
    }
    CHECK(r.reward == 1.0);
    CHECK(env.active_mask() == std::vector<std::uint8_t>{0, 0, 0});
  }

  // Pressing out of order does nothing; partial credit is 0.25 per switch.
  env.reset(0);
  while (!env.done()) {
    auto a = scripted(env);
    a[1] = a[2] = Switches::stay;
    env.step(a);
  }
  CHECK(env.score() == 0.25);
  env.reset(0);
  while (!env.done()) {
    auto a = scripted(env);
    a[0] = Switches::stay;
    env.step(a);
  }
  CHECK(env.score() == 0.0);
  CHECK(env.active_mask() == std::vector<std::uint8_t>{1, 1, 1});
}

TEST_CASE("episode recorder captures aligned arrays") {
  auto env = make_environment("switches");
  EpisodeRecorder rec(*env, 17);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> act(0, 5);
  std::vector<double> probs(3 * 6, 1.0 / 6.0);
  while (!rec.done()) {
    std::vector<std::size_t> a{act(rng), act(rng), act(rng)};
    rec.step(a, probs);
  }
  const Episode ep = rec.finish();
  CHECK(ep.T == 25);
  CHECK(ep.N == 3);
  CHECK(ep.states.size() == 26 * env->state_dim());
  CHECK(ep.action_probs.size() == 25 * 3 * 6);
  CHECK(ep.team_reward == env->score());
  CHECK(std::vector<double>(ep.final_state().begin(), ep.final_state().end()) == env->final_global_state());
  CHECK(ep.seed == 17);
}

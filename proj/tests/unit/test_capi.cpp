#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tar2/tar2.h"

namespace fs = std::filesystem;

namespace {

std::string get(const tar2_config* c, const char* key) {
  size_t need = 0;
  REQUIRE(tar2_config_get(c, key, nullptr, 0, &need) == TAR2_OK);
  std::string s(need, '\0');
  REQUIRE(tar2_config_get(c, key, s.data(), s.size(), &need) == TAR2_OK);
  s.resize(need - 1);
  return s;
}

tar2_config* small_config() {
  tar2_config* c = nullptr;
  const char* text =
      "name = capi\n"
      "env.name = switches\n"
      "max_episodes = 30\n"
      "ppo_epochs = 2\n"
      "ppo_batch_size = 5\n"
      "policy_hidden_shape = 16\n"
      "v_hidden_shape = 16\n"
      "tar2.comp_dim = 8\n"
      "tar2.num_heads = 2\n"
      "tar2.depth = 1\n"
      "tar2.batch_size = 8\n"
      "tar2.model_upd_freq = 10\n"
      "tar2.model_upd_epochs = 2\n";
  REQUIRE(tar2_config_parse(text, &c) == TAR2_OK);
  return c;
}

}  // namespace

TEST_CASE("C redistribution matches the reference computation") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    const size_t T = 1 + rng() % 12, N = 1 + rng() % 4;
    std::vector<double> scores(T * N);
    std::vector<uint8_t> active(T * N);
    for (auto& s : scores) s = g(rng);
    for (auto& a : active) a = (rng() % 5) != 0;
    active[0] = 1;
    const double R = g(rng);
    std::vector<double> r(T * N), temporal(T), agent(T * N), delta(N);
    REQUIRE(tar2_redistribute(T, N, scores.data(), active.data(), R, 1e-12, r.data(), temporal.data(), agent.data()) ==
            TAR2_OK);
    REQUIRE(tar2_agent_shares(T, N, scores.data(), active.data(), 1e-12, delta.data()) == TAR2_OK);
    const auto o = tar2::oracle::redistribute(T, N, scores, active, R);
    double sum = 0.0;
    for (size_t k = 0; k < T * N; ++k) {
      CHECK(r[k] == doctest::Approx(static_cast<double>(o.rewards[k])).epsilon(1e-9).scale(std::fabs(R)));
      CHECK(agent[k] == doctest::Approx(static_cast<double>(o.agent[k])).epsilon(1e-9));
      sum += r[k];
    }
    CHECK(sum == doctest::Approx(R).epsilon(1e-9).scale(1.0));
    for (size_t t = 0; t < T; ++t) CHECK(temporal[t] == doctest::Approx(static_cast<double>(o.temporal[t])).epsilon(1e-9));
    for (size_t i = 0; i < N; ++i) {
      long double d = 0.0L;
      for (size_t t = 0; t < T; ++t) d += o.temporal[t] * o.agent[t * N + i];
      CHECK(delta[i] == doctest::Approx(static_cast<double>(d)).epsilon(1e-9));
    }
  }
  // NULL active means all active; optional outputs may be NULL.
  const double s[4] = {0.0, 1.0, 3.0, 2.0};
  double out[4];
  REQUIRE(tar2_redistribute(2, 2, s, nullptr, 1.0, 1e-12, out, nullptr, nullptr) == TAR2_OK);
  CHECK(out[0] + out[1] + out[2] + out[3] == doctest::Approx(1.0));
}

TEST_CASE("C redistribution reports errors through status codes") {
  const double s[2] = {1.0, 2.0};
  double out[2];
  CHECK(tar2_redistribute(1, 2, nullptr, nullptr, 1.0, 1e-8, out, nullptr, nullptr) == TAR2_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(tar2_last_error()) > 0);
  CHECK(tar2_redistribute(1, 2, s, nullptr, 1.0, 0.0, out, nullptr, nullptr) == TAR2_ERR_INVALID_ARGUMENT);
  CHECK(std::string(tar2_last_error()).find("epsilon") != std::string::npos);
  CHECK(tar2_redistribute(0, 2, s, nullptr, 1.0, 1e-8, out, nullptr, nullptr) != TAR2_OK);
  const double bad[2] = {NAN, 1.0};
  CHECK(tar2_redistribute(1, 2, bad, nullptr, 1.0, 1e-8, out, nullptr, nullptr) == TAR2_ERR_NON_FINITE);
  const uint8_t none[2] = {0, 0};
  CHECK(tar2_redistribute(1, 2, s, none, 1.0, 1e-8, out, nullptr, nullptr) != TAR2_OK);
  CHECK(std::string(tar2_status_name(TAR2_ERR_CONFIG)).size() > 0);
  CHECK(std::string(tar2_version()).size() > 0);
}

TEST_CASE("C config access") {
  tar2_config* c = nullptr;
  REQUIRE(tar2_config_default(&c) == TAR2_OK);
  CHECK(get(c, "gamma") == "0.99");
  CHECK(get(c, "tar2.num_heads") == "4");
  uint64_t h0 = 0, h1 = 0;
  REQUIRE(tar2_config_hash(c, &h0) == TAR2_OK);
  REQUIRE(tar2_config_override(c, "entropy_pen=5e-3") == TAR2_OK);
  CHECK(get(c, "entropy_pen") == "0.005");
  REQUIRE(tar2_config_hash(c, &h1) == TAR2_OK);
  CHECK(h0 != h1);
  REQUIRE(tar2_config_set(c, "threads", "3") == TAR2_OK);
  uint64_t h2 = 0;
  REQUIRE(tar2_config_hash(c, &h2) == TAR2_OK);
  CHECK(h2 == h1);
  CHECK(tar2_config_set(c, "bogus", "1") == TAR2_ERR_CONFIG);
  CHECK(std::string(tar2_last_error()).find("bogus") != std::string::npos);
  CHECK(tar2_config_validate(c) == TAR2_OK);

  // Truncation leaves a terminated prefix and reports the size needed.
  char small[4];
  size_t need = 0;
  REQUIRE(tar2_config_get(c, "gamma", small, sizeof small, &need) == TAR2_OK);
  CHECK(need == 5);
  CHECK(std::string(small) == "0.9");

  size_t n = 0;
  REQUIRE(tar2_config_text(c, nullptr, 0, &n) == TAR2_OK);
  std::string text(n, '\0');
  REQUIRE(tar2_config_text(c, text.data(), n, &n) == TAR2_OK);
  tar2_config* back = nullptr;
  REQUIRE(tar2_config_parse(text.c_str(), &back) == TAR2_OK);
  uint64_t hb = 0;
  REQUIRE(tar2_config_hash(back, &hb) == TAR2_OK);
  CHECK(hb == h1);
  tar2_config_free(back);
  tar2_config_free(c);

  tar2_config* bad = nullptr;
  CHECK(tar2_config_parse("gamma = 2\n", &bad) == TAR2_ERR_CONFIG);
  CHECK(bad == nullptr);
  CHECK(tar2_config_load("/no/such/file.cfg", &bad) == TAR2_ERR_CONFIG);
  CHECK(tar2_config_default(nullptr) == TAR2_ERR_INVALID_ARGUMENT);
  CHECK(tar2_config_hash(nullptr, &h0) == TAR2_ERR_INVALID_ARGUMENT);
  tar2_config_free(nullptr);
}

TEST_CASE("C trainer checkpoint continuation is bit-identical") {
  const fs::path dir = fs::temp_directory_path() / "tar2_capi_trainer";
  fs::remove_all(dir);
  fs::create_directories(dir);
  tar2_config* c = small_config();
  tar2_trainer* a = nullptr;
  REQUIRE(tar2_trainer_create(c, 4, &a) == TAR2_OK);
  tar2_metrics m{};
  REQUIRE(tar2_trainer_iterate(a, &m) == TAR2_OK);
  CHECK(m.iteration == 1);
  CHECK(m.episodes == 10);
  REQUIRE(tar2_trainer_iterate(a, &m) == TAR2_OK);
  const std::string path = (dir / "t.ckpt").string();
  REQUIRE(tar2_trainer_save(a, path.c_str()) == TAR2_OK);
  tar2_metrics ref{};
  REQUIRE(tar2_trainer_iterate(a, &ref) == TAR2_OK);

  tar2_trainer* b = nullptr;
  REQUIRE(tar2_trainer_load(path.c_str(), nullptr, 0, &b) == TAR2_OK);
  tar2_metrics got{};
  REQUIRE(tar2_trainer_iterate(b, &got) == TAR2_OK);
  CHECK(std::memcmp(&ref, &got, sizeof ref) == 0);

  int steps = 0;
  while (!tar2_trainer_finished(b) && steps < 100) {
    REQUIRE(tar2_trainer_iterate(b, &got) == TAR2_OK);
    ++steps;
  }
  CHECK(tar2_trainer_finished(b));
  CHECK(tar2_trainer_iterate(b, &got) == TAR2_ERR_STATE);

  tar2_config* other = small_config();
  REQUIRE(tar2_config_set(other, "gamma", "0.9") == TAR2_OK);
  tar2_trainer* d = nullptr;
  CHECK(tar2_trainer_load(path.c_str(), other, 0, &d) == TAR2_ERR_CONFIG);
  CHECK(d == nullptr);
  CHECK(tar2_trainer_load(path.c_str(), other, 1, &d) == TAR2_OK);
  tar2_trainer_free(d);
  CHECK(tar2_trainer_load((dir / "missing.ckpt").string().c_str(), nullptr, 0, &d) == TAR2_ERR_IO);

  tar2_trainer_free(a);
  tar2_trainer_free(b);
  tar2_trainer_free(nullptr);
  tar2_config_free(other);
  tar2_config_free(c);
}

TEST_CASE("C verify streams every check") {
  struct Seen {
    int count = 0;
    int failed = 0;
    std::string failed_name;
  } seen;
  auto cb = [](const tar2_check* ch, void* user) {
    auto* s = static_cast<Seen*>(user);
    ++s->count;
    if (!ch->passed) {
      ++s->failed;
      s->failed_name = ch->name;
    }
  };
  CHECK(tar2_run_verify(1, nullptr, cb, &seen) == TAR2_OK);
  CHECK(seen.count == 9);
  CHECK(seen.failed == 0);
  seen = {};
  CHECK(tar2_run_verify(1, "telescoping", cb, &seen) == TAR2_ERR_VERIFICATION);
  CHECK(seen.failed == 1);
  CHECK(seen.failed_name == "telescoping");
}

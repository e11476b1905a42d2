#include "tar2/harness/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "tar2/common/error.hpp"

namespace tar2::harness {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(std::string_view v) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) fail(Errc::config, "expected a number, got '" + std::string(v) + "'");
  return x;
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(Errc::config, "expected a non-negative integer, got '" + std::string(v) + "'");
  return x;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(Errc::config, "expected true or false, got '" + std::string(v) + "'");
}

std::string fmt(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}
std::string fmt(std::uint64_t x) { return std::to_string(x); }
std::string fmt(bool x) { return x ? "true" : "false"; }

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  while (true) {
    const auto c = v.find(',');
    const auto item = trim(v.substr(0, c));
    if (!item.empty()) out.emplace_back(item);
    if (c == std::string_view::npos) break;
    v.remove_prefix(c + 1);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool hashed = true;
};

template <class T>
Field num(std::string key, T marl::TrainerConfig::*m) {
  return {key,
          [m](ExperimentConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, double>) c.trainer.*m = to_double(v);
            else c.trainer.*m = static_cast<T>(to_u64(v));
          },
          [m](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt(c.trainer.*m);
            else return fmt(static_cast<std::uint64_t>(c.trainer.*m));
          }};
}

template <class T>
Field ppo(std::string key, T marl::PpoConfig::*m) {
  return {key,
          [m](ExperimentConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, double>) c.trainer.ppo.*m = to_double(v);
            else c.trainer.ppo.*m = static_cast<T>(to_u64(v));
          },
          [m](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt(c.trainer.ppo.*m);
            else return fmt(static_cast<std::uint64_t>(c.trainer.ppo.*m));
          }};
}

template <class T>
Field rm(std::string key, T rm::RewardModelConfig::*m) {
  return {"tar2." + key,
          [m](ExperimentConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, double>) c.trainer.reward_model.*m = to_double(v);
            else if constexpr (std::is_same_v<T, bool>) c.trainer.reward_model.*m = to_bool(v);
            else c.trainer.reward_model.*m = static_cast<T>(to_u64(v));
          },
          [m](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt(c.trainer.reward_model.*m);
            else if constexpr (std::is_same_v<T, bool>) return fmt(c.trainer.reward_model.*m);
            else return fmt(static_cast<std::uint64_t>(c.trainer.reward_model.*m));
          }};
}

const std::vector<Field>& fields() {
  using TC = marl::TrainerConfig;
  using PC = marl::PpoConfig;
  using RC = rm::RewardModelConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"name", [](ExperimentConfig& c, std::string_view v) { c.name = v; },
                 [](const ExperimentConfig& c) { return c.name; }, false});
    f.push_back({"env.name", [](ExperimentConfig& c, std::string_view v) { c.trainer.env = v; },
                 [](const ExperimentConfig& c) { return c.trainer.env; }});
    f.push_back({"mode",
                 [](ExperimentConfig& c, std::string_view v) {
                   const auto m = analysis::parse_mode(v);
                   if (!m) fail(Errc::config, "unknown mode '" + std::string(v) + "'");
                   c.trainer.mode = *m;
                 },
                 [](const ExperimentConfig& c) { return std::string(analysis::to_string(c.trainer.mode)); }});
    f.push_back({"seeds", [](ExperimentConfig& c, std::string_view v) { c.seeds = parse_seeds(v); },
                 [](const ExperimentConfig& c) {
                   std::string s;
                   for (std::size_t k = 0; k < c.seeds.size(); ++k) s += (k ? "," : "") + std::to_string(c.seeds[k]);
                   return s;
                 },
                 false});
    f.push_back({"output_dir", [](ExperimentConfig& c, std::string_view v) { c.output_dir = v; },
                 [](const ExperimentConfig& c) { return c.output_dir; }, false});
    f.push_back({"checkpoint_every",
                 [](ExperimentConfig& c, std::string_view v) { c.checkpoint_every = to_u64(v); },
                 [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.checkpoint_every)); }, false});
    f.push_back({"eval_episodes", [](ExperimentConfig& c, std::string_view v) { c.eval_episodes = to_u64(v); },
                 [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.eval_episodes)); }, false});
    f.push_back({"final_window", [](ExperimentConfig& c, std::string_view v) { c.final_window = to_u64(v); },
                 [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.final_window)); }, false});
    Field threads = num("threads", &TC::threads);
    threads.hashed = false;
    f.push_back(threads);
    f.push_back(num("max_episodes", &TC::episode_budget));
    f.push_back(num("episodes_per_iteration", &TC::episodes_per_iteration));
    f.push_back(num("gamma", &TC::gamma));
    f.push_back(num("gae_lambda", &TC::gae_lambda));
    f.push_back(ppo("ppo_epochs", &PC::epochs));
    f.push_back(ppo("ppo_batch_size", &PC::batch_episodes));
    f.push_back(ppo("policy_clip", &PC::policy_clip));
    f.push_back(ppo("value_clip", &PC::value_clip));
    f.push_back(ppo("entropy_pen", &PC::entropy_pen));
    f.push_back(ppo("policy_lr", &PC::policy_lr));
    f.push_back(ppo("policy_weight_decay", &PC::policy_weight_decay));
    f.push_back(ppo("grad_clip_actor", &PC::grad_clip_actor));
    f.push_back(ppo("v_value_lr", &PC::value_lr));
    f.push_back(ppo("v_weight_decay", &PC::value_weight_decay));
    f.push_back(ppo("grad_clip_critic_v", &PC::grad_clip_critic));
    f.push_back(num("policy_hidden_shape", &TC::actor_hidden));
    f.push_back(num("v_hidden_shape", &TC::critic_hidden));
    f.push_back(num("popart.beta", &TC::popart_beta));
    f.push_back({"popart.per_agent",
                 [](ExperimentConfig& c, std::string_view v) { c.trainer.popart_per_agent = to_bool(v); },
                 [](const ExperimentConfig& c) { return fmt(c.trainer.popart_per_agent); }});
    f.push_back({"normalize_advantages",
                 [](ExperimentConfig& c, std::string_view v) { c.trainer.normalize_advantages = to_bool(v); },
                 [](const ExperimentConfig& c) { return fmt(c.trainer.normalize_advantages); }});
    f.push_back(num("redistribution.epsilon", &TC::redistribution_epsilon));
    f.push_back(num("success_threshold", &TC::success_threshold));
    f.push_back(rm("num_heads", &RC::num_heads));
    f.push_back(rm("depth", &RC::depth));
    f.push_back(rm("dropout", &RC::dropout));
    f.push_back(rm("comp_dim", &RC::embed_dim));
    f.push_back(rm("batch_size", &RC::batch_size));
    f.push_back(rm("lr", &RC::lr));
    f.push_back(rm("weight_decay", &RC::weight_decay));
    f.push_back(rm("inv_dyn_loss_coef", &RC::lambda_id));
    f.push_back(rm("grad_clip_val", &RC::grad_clip));
    f.push_back(rm("model_upd_freq", &RC::update_freq));
    f.push_back(rm("model_upd_epochs", &RC::update_epochs));
    f.push_back(rm("buffer_capacity", &RC::buffer_capacity));
    f.push_back(rm("use_log_target", &RC::use_log_target));
    f.push_back(rm("condition_on_outcome", &RC::condition_on_outcome));
    f.push_back(rm("use_inverse_dynamics", &RC::use_inverse_dynamics));
    f.push_back(rm("soft_id_targets", &RC::soft_id_targets));
    f.push_back(rm("tie_agent_embeddings", &RC::tie_agent_embeddings));
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view key) {
  for (const Field& f : fields())
    if (f.key == key) return f;
  const Field* hit = nullptr;
  for (const Field& f : fields()) {
    const auto dot = f.key.rfind('.');
    if (dot != std::string::npos && std::string_view(f.key).substr(dot + 1) == key) {
      if (hit) fail(Errc::config, "ambiguous key '" + std::string(key) + "' (" + hit->key + ", " + f.key + ")");
      hit = &f;
    }
  }
  if (!hit) fail(Errc::config, "unknown key '" + std::string(key) + "'");
  return *hit;
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!name.empty(), Errc::config, "name must not be empty");
  require(!seeds.empty(), Errc::config, "seeds must not be empty");
  require(trainer.episode_budget > 0, Errc::config, "max_episodes must be positive");
  require(final_window > 0, Errc::config, "final_window must be positive");
  env::make_environment(trainer.env);
  trainer.validate();
  for (const auto& [key, values] : sweep) {
    const Field& f = find_field(key);
    require(f.hashed, Errc::config, "sweep." + key + ": only training keys can be swept");
    require(!values.empty(), Errc::config, "sweep." + key + ": empty grid");
    ExperimentConfig probe = *this;
    probe.sweep.clear();
    for (const auto& v : values) {
      try {
        f.set(probe, v);
        probe.trainer.validate();
      } catch (const Error& e) {
        fail(Errc::config, "sweep." + key + " value '" + v + "': " + e.what());
      }
    }
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key.starts_with("sweep.")) {
    const std::string target = find_field(key.substr(6)).key;
    auto values = split_list(value);
    if (values.empty()) fail(Errc::config, "sweep." + target + ": empty grid");
    cfg.sweep[target] = std::move(values);
    return;
  }
  const Field& f = find_field(key);
  try {
    f.set(cfg, value);
  } catch (const Error& e) {
    fail(Errc::config, f.key + ": " + e.what());
  }
}

std::string get_value(const ExperimentConfig& cfg, std::string_view key) { return find_field(trim(key)).get(cfg); }

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) fail(Errc::config, "override '" + std::string(assignment) + "' is not KEY=VAL");
  set_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::vector<std::uint64_t> parse_seeds(std::string_view text) {
  text = trim(text);
  std::vector<std::uint64_t> out;
  if (text.find(',') == std::string_view::npos) {
    const std::uint64_t n = to_u64(text);
    if (n == 0) fail(Errc::config, "seed count must be positive");
    for (std::uint64_t s = 1; s <= n; ++s) out.push_back(s);
    return out;
  }
  for (const auto& item : split_list(text)) out.push_back(to_u64(item));
  if (out.empty()) fail(Errc::config, "seed list is empty");
  return out;
}

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) fail(Errc::config, where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) fail(Errc::config, where + ": missing key");
    try {
      set_value(cfg, key, line.substr(eq + 1));
    } catch (const Error& e) {
      fail(Errc::config, where + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(Errc::config, origin + ": " + e.what());
  }
  return cfg;
}

std::filesystem::path resolve_config(const std::string& ref) {
  namespace fs = std::filesystem;
  std::vector<fs::path> candidates{ref, ref + ".cfg", fs::path("configs") / (ref + ".cfg")};
  if (const char* dir = std::getenv("TAR2_CONFIG_DIR")) {
    candidates.push_back(fs::path(dir) / ref);
    candidates.push_back(fs::path(dir) / (ref + ".cfg"));
  }
  for (const auto& p : candidates)
    if (fs::is_regular_file(p)) return p;
  fail(Errc::config, "config '" + ref + "' not found");
}

ExperimentConfig load_config(const std::string& ref) {
  const auto path = resolve_config(ref);
  std::ifstream in(path);
  require(in.good(), Errc::config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  for (const auto& [key, values] : cfg.sweep) {
    out += "sweep." + key + " = ";
    for (std::size_t k = 0; k < values.size(); ++k) out += (k ? ", " : "") + values[k];
    out += "\n";
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const Field& f : fields()) {
    if (!f.hashed) continue;
    mix(f.key);
    mix("=");
    mix(f.get(cfg));
    mix("\n");
  }
  return h;
}

std::filesystem::path output_directory(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("TAR2_OUTPUT_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / cfg.name;
}

}  // namespace tar2::harness

#include "tar2/harness/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "tar2/analysis/heatmap.hpp"
#include "tar2/analysis/shaping.hpp"
#include "tar2/common/error.hpp"
#include "tar2/common/rng.hpp"
#include "tar2/harness/checkpoint.hpp"
#include "tar2/marl/rollout.hpp"

namespace tar2::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void say(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

json metrics_json(std::uint64_t seed, const marl::IterationMetrics& m) {
  // NaN fields serialize as null.
  return {{"seed", seed},
          {"iteration", m.iteration},
          {"episodes", m.episodes},
          {"mean_return", m.mean_return},
          {"success_rate", m.success_rate},
          {"policy_loss", m.policy_loss},
          {"value_loss", m.value_loss},
          {"entropy", m.entropy},
          {"rm_regression_loss", m.rm_regression_loss},
          {"rm_id_loss", m.rm_id_loss},
          {"delta_mean", m.delta_mean},
          {"delta_min", m.delta_min},
          {"delta_max", m.delta_max},
          {"clip_fraction", m.clip_fraction},
          {"rm_rounds", m.rm_rounds},
          {"model_age", m.model_age},
          {"equivalence_violations", m.equivalence_violations},
          {"doubling_residual", m.doubling_residual},
          {"faults", m.faults}};
}

SeedResult summarize(std::uint64_t seed, const std::vector<json>& lines, std::size_t window) {
  SeedResult r;
  r.seed = seed;
  for (const json& j : lines) {
    r.success_curve.push_back(j.at("success_rate").get<double>());
    r.return_curve.push_back(j.at("mean_return").get<double>());
    r.episode_axis.push_back(j.at("episodes").get<std::size_t>());
    r.equivalence_violations += j.at("equivalence_violations").get<std::size_t>();
  }
  r.iterations = lines.size();
  r.episodes = r.episode_axis.empty() ? 0 : r.episode_axis.back();
  if (lines.empty()) {
    r.final_success_rate = r.final_mean_return = r.success_auc = r.return_auc = kNaN;
    return r;
  }
  auto mean = [](auto b, auto e) { return std::accumulate(b, e, 0.0) / static_cast<double>(e - b); };
  const std::size_t w = std::min(window, lines.size());
  r.final_success_rate = mean(r.success_curve.end() - w, r.success_curve.end());
  r.final_mean_return = mean(r.return_curve.end() - w, r.return_curve.end());
  r.success_auc = mean(r.success_curve.begin(), r.success_curve.end());
  r.return_auc = mean(r.return_curve.begin(), r.return_curve.end());
  return r;
}

std::vector<json> read_metrics(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

json aggregate_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"stddev", a.stddev}, {"ci95", {a.ci_lo, a.ci_hi}}, {"n", a.n}};
}

json seed_json(const SeedResult& s) {
  const double rate = s.episodes ? static_cast<double>(s.equivalence_violations) / static_cast<double>(s.episodes) : kNaN;
  return {{"seed", s.seed},
          {"iterations", s.iterations},
          {"episodes", s.episodes},
          {"final_success_rate", s.final_success_rate},
          {"final_mean_return", s.final_mean_return},
          {"success_auc", s.success_auc},
          {"return_auc", s.return_auc},
          {"equivalence_violations", s.equivalence_violations},
          {"violation_rate", rate}};
}

RunSummary finish_summary(const ExperimentConfig& cfg, std::vector<SeedResult> seeds) {
  RunSummary s;
  s.name = cfg.name;
  s.mode = analysis::to_string(cfg.trainer.mode);
  s.config_hash = config_hash(cfg);
  s.seeds = std::move(seeds);
  auto collect = [&](double SeedResult::*m) {
    std::vector<double> v;
    for (const auto& r : s.seeds) v.push_back(r.*m);
    return aggregate(v);
  };
  s.final_success_rate = collect(&SeedResult::final_success_rate);
  s.final_mean_return = collect(&SeedResult::final_mean_return);
  s.success_auc = collect(&SeedResult::success_auc);
  s.return_auc = collect(&SeedResult::return_auc);
  return s;
}

json summary_json(const ExperimentConfig& cfg, const RunSummary& s) {
  json seeds = json::array();
  for (const auto& r : s.seeds) seeds.push_back(seed_json(r));
  return {{"name", s.name},
          {"env", cfg.trainer.env},
          {"mode", s.mode},
          {"config_hash", hex(s.config_hash)},
          {"max_episodes", cfg.trainer.episode_budget},
          {"final_window", cfg.final_window},
          {"seeds", seeds},
          {"aggregate",
           {{"final_success_rate", aggregate_json(s.final_success_rate)},
            {"final_mean_return", aggregate_json(s.final_mean_return)},
            {"success_auc", aggregate_json(s.success_auc)},
            {"return_auc", aggregate_json(s.return_auc)}}}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io, "write failed for " + path.string());
}

fs::path metrics_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("metrics_seed" + std::to_string(seed) + ".jsonl");
}
fs::path checkpoint_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("checkpoint_seed" + std::to_string(seed) + ".ckpt");
}

// Drives `trainer` to the end of its budget, appending metrics to `out`.
std::vector<json> drive(marl::Trainer& trainer, const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
                        std::ofstream& out, const LogFn& log) {
  std::vector<json> lines;
  auto save = [&](const fs::path& path) {
    StateDict sd;
    trainer.save(sd);
    save_checkpoint(path, cfg, seed, sd);
  };
  trainer.run(
      [&](const marl::IterationMetrics& m) {
        json j = metrics_json(seed, m);
        out << j.dump() << "\n";
        out.flush();
        lines.push_back(std::move(j));
        if (cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0)
          save(checkpoint_path(dir, seed));
        if (m.iteration % 20 == 0 || trainer.finished()) {
          std::ostringstream s;
          s.precision(3);
          s << "seed " << seed << " iteration " << m.iteration << " episodes " << m.episodes << " return "
            << m.mean_return << " success " << m.success_rate;
          say(log, s.str());
        }
      },
      [&](std::size_t iteration) {
        const fs::path p = dir / ("fault_seed" + std::to_string(seed) + ".ckpt");
        say(log, "seed " + std::to_string(seed) + ": non-finite loss at iteration " + std::to_string(iteration) +
                     ", state saved to " + p.string());
        save(p);
      });
  save(checkpoint_path(dir, seed));
  return lines;
}

}  // namespace

Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  a.n = v.size();
  if (v.empty()) {
    a.mean = a.stddev = a.ci_lo = a.ci_hi = kNaN;
    return a;
  }
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) {
    a.stddev = kNaN;
    a.ci_lo = a.ci_hi = a.mean;
    return a;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - a.mean) * (x - a.mean);
  a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  const boost::math::students_t t(static_cast<double>(v.size() - 1));
  const double half = boost::math::quantile(boost::math::complement(t, 0.025)) * a.stddev /
                      std::sqrt(static_cast<double>(v.size()));
  a.ci_lo = a.mean - half;
  a.ci_hi = a.mean + half;
  return a;
}

SeedResult train_seed(marl::Trainer& trainer, const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
                      const LogFn& log) {
  fs::create_directories(dir);
  std::ofstream out(metrics_path(dir, seed), std::ios::trunc);
  require(out.good(), Errc::io, "cannot write " + metrics_path(dir, seed).string());
  return summarize(seed, drive(trainer, cfg, seed, dir, out, log), cfg.final_window);
}

RunSummary run_train(const ExperimentConfig& cfg, const LogFn& log) {
  cfg.validate();
  const fs::path dir = output_directory(cfg);
  fs::create_directories(dir);
  {
    std::ofstream c(dir / "config.cfg");
    c << to_text(cfg);
  }
  std::vector<SeedResult> results;
  for (std::uint64_t seed : cfg.seeds) {
    marl::TrainerConfig tc = cfg.trainer;
    tc.seed = seed;
    marl::Trainer trainer(tc);
    results.push_back(train_seed(trainer, cfg, seed, dir, log));
  }
  RunSummary s = finish_summary(cfg, std::move(results));
  write_json(dir / "summary.json", summary_json(cfg, s));
  say(log, "summary written to " + (dir / "summary.json").string());
  return s;
}

SeedResult resume_train(const fs::path& checkpoint, const ExperimentConfig& cfg, bool force, const LogFn& log) {
  cfg.validate();
  const Checkpoint ck = read_checkpoint(checkpoint, cfg, force);
  auto trainer = restore_trainer(ck, &cfg);
  const fs::path dir = output_directory(cfg);
  fs::create_directories(dir);
  // Drop metrics written after the checkpoint so the file stays one run.
  const fs::path mp = metrics_path(dir, ck.seed);
  std::vector<json> kept;
  for (json& j : read_metrics(mp))
    if (j.at("iteration").get<std::size_t>() <= trainer->iteration()) kept.push_back(std::move(j));
  std::ofstream out(mp, std::ios::trunc);
  require(out.good(), Errc::io, "cannot write " + mp.string());
  for (const json& j : kept) out << j.dump() << "\n";
  say(log, "resuming seed " + std::to_string(ck.seed) + " at iteration " + std::to_string(trainer->iteration()));
  auto lines = drive(*trainer, cfg, ck.seed, dir, out, log);
  kept.insert(kept.end(), lines.begin(), lines.end());
  return summarize(ck.seed, kept, cfg.final_window);
}

std::vector<std::string> default_ablation_arms() { return {"tar2", "no_outcome", "no_inverse_dynamics", "no_normalization"}; }

std::vector<ArmResult> run_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& arms, const LogFn& log) {
  cfg.validate();
  require(!arms.empty(), Errc::config, "ablate: no arms given");
  std::vector<analysis::RedistributionMode> modes;
  for (const auto& a : arms) {
    const auto m = analysis::parse_mode(a);
    require(m.has_value(), Errc::config, "ablate: unknown arm '" + a + "'");
    modes.push_back(*m);
  }
  const fs::path root = output_directory(cfg);
  fs::create_directories(root / "curves");
  std::vector<ArmResult> results;
  for (std::size_t k = 0; k < arms.size(); ++k) {
    ExperimentConfig arm = cfg;
    arm.trainer.mode = modes[k];
    arm.name = cfg.name + "/" + arms[k];
    arm.output_dir = (root / arms[k]).string();
    say(log, "arm " + arms[k]);
    RunSummary s = run_train(arm, log);
    // Mean curve across seeds; seeds share the iteration grid.
    std::ofstream curve(root / "curves" / (arms[k] + ".csv"));
    curve << "iteration,episodes,success_rate,mean_return\n";
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const auto& r : s.seeds) len = std::min(len, r.success_curve.size());
    for (std::size_t i = 0; i < len && !s.seeds.empty(); ++i) {
      double sr = 0.0, ret = 0.0;
      for (const auto& r : s.seeds) {
        sr += r.success_curve[i];
        ret += r.return_curve[i];
      }
      const double n = static_cast<double>(s.seeds.size());
      curve << i + 1 << ',' << s.seeds[0].episode_axis[i] << ',' << sr / n << ',' << ret / n << '\n';
    }
    results.push_back({arms[k], std::move(s)});
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const ArmResult& a, const ArmResult& b) { return a.summary.success_auc.mean > b.summary.success_auc.mean; });
  json ranking = json::array();
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& s = results[k].summary;
    ranking.push_back({{"rank", k + 1},
                       {"arm", results[k].arm},
                       {"success_auc", aggregate_json(s.success_auc)},
                       {"final_success_rate", aggregate_json(s.final_success_rate)},
                       {"final_mean_return", aggregate_json(s.final_mean_return)}});
  }
  json seeds = cfg.seeds;
  write_json(root / "ranking.json", {{"seeds", seeds}, {"ranking", ranking}});
  return results;
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const LogFn& log) {
  cfg.validate();
  require(!cfg.sweep.empty(), Errc::config, "sweep: the config defines no sweep.<key> grids");
  std::vector<std::pair<std::string, std::vector<std::string>>> grids(cfg.sweep.begin(), cfg.sweep.end());
  std::size_t total = 1;
  for (const auto& g : grids) total *= g.second.size();
  const fs::path root = output_directory(cfg);
  std::vector<SweepPoint> points;
  for (std::size_t p = 0; p < total; ++p) {
    ExperimentConfig point = cfg;
    point.sweep.clear();
    SweepPoint sp;
    std::size_t rest = p;
    for (const auto& [key, values] : grids) {
      const std::string& v = values[rest % values.size()];
      rest /= values.size();
      set_value(point, key, v);
      sp.assignment.emplace_back(key, v);
    }
    point.name = cfg.name + "/point_" + std::to_string(p);
    point.output_dir = (root / ("point_" + std::to_string(p))).string();
    std::string label;
    for (const auto& [k, v] : sp.assignment) label += (label.empty() ? "" : ", ") + k + "=" + v;
    say(log, "sweep point " + std::to_string(p) + ": " + label);
    sp.summary = run_train(point, log);
    points.push_back(std::move(sp));
  }
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return points[a].summary.success_auc.mean > points[b].summary.success_auc.mean;
  });
  json rows = json::array();
  std::vector<SweepPoint> sorted;
  for (std::size_t k : order) {
    json a = json::object();
    for (const auto& [key, v] : points[k].assignment) a[key] = v;
    rows.push_back({{"point", "point_" + std::to_string(k)},
                    {"assignment", a},
                    {"success_auc", aggregate_json(points[k].summary.success_auc)},
                    {"final_mean_return", aggregate_json(points[k].summary.final_mean_return)}});
    sorted.push_back(std::move(points[k]));
  }
  fs::create_directories(root);
  write_json(root / "sweep.json", {{"points", rows}});
  return sorted;
}

EvalResult run_eval(const fs::path& checkpoint, const EvalOptions& opt, const LogFn& log) {
  require(opt.episodes > 0, Errc::config, "eval: episode count must be positive");
  const Checkpoint ck = opt.expected ? read_checkpoint(checkpoint, *opt.expected, opt.force) : read_checkpoint(checkpoint);
  auto trainer = restore_trainer(ck);
  std::vector<std::uint64_t> seeds;
  // Evaluation seeds are kept apart from the training seed stream.
  for (std::size_t k = 0; k < opt.episodes; ++k) seeds.push_back(derive_seed(opt.seed ^ 0x6576616cULL, k));
  const auto batch = marl::collect_rollouts(trainer->policy(), trainer->environment(), seeds,
                                            {.threads = ck.config.trainer.threads, .greedy = opt.greedy});
  require(batch.faults.empty(), Errc::runtime, "eval: environment fault during rollouts");
  EvalResult r;
  r.episodes = batch.rollouts.size();
  double ret = 0.0;
  std::size_t wins = 0;
  for (const auto& ro : batch.rollouts) {
    ret += ro.episode.team_reward;
    if (ro.episode.team_reward >= ck.config.trainer.success_threshold) ++wins;
  }
  r.mean_return = ret / static_cast<double>(r.episodes);
  r.success_rate = static_cast<double>(wins) / static_cast<double>(r.episodes);

  const env::Episode& first = batch.rollouts.front().episode;
  const auto mode = ck.config.trainer.mode;
  rm::RewardModel* model = trainer->reward_model();
  std::optional<core::ScoreMatrix> scores;
  if (model && model->rounds_trained() > 0) scores = model->score(first);
  core::RedistributionWeights weights;
  if (mode == analysis::RedistributionMode::no_normalization && scores) {
    weights = core::compute_weights(*scores, ck.config.trainer.redistribution_epsilon);
  } else {
    const auto shaped = analysis::shape_episode(mode == analysis::RedistributionMode::no_normalization
                                                    ? analysis::RedistributionMode::uniform
                                                    : mode,
                                                scores ? &*scores : nullptr, first,
                                                ck.config.trainer.redistribution_epsilon);
    weights = *shaped.weights;
  }
  const fs::path dir = opt.output_dir.empty() ? checkpoint.parent_path() : opt.output_dir;
  if (!dir.empty()) fs::create_directories(dir);
  r.heatmap = dir / "heatmap.csv";
  r.report = dir / "eval.json";
  analysis::export_weight_heatmap(weights, r.heatmap);
  write_json(r.report, {{"checkpoint", checkpoint.string()},
                        {"config_hash", hex(ck.config_hash)},
                        {"seed", ck.seed},
                        {"iteration", trainer->iteration()},
                        {"episodes", r.episodes},
                        {"greedy", opt.greedy},
                        {"success_rate", r.success_rate},
                        {"mean_return", r.mean_return},
                        {"heatmap", r.heatmap.string()}});
  say(log, "eval: success rate " + std::to_string(r.success_rate) + ", mean return " + std::to_string(r.mean_return));
  return r;
}

}  // namespace tar2::harness

// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Exit status is non-zero when any criterion fails. Criterion numbers given
// as arguments restrict the run to those criteria.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "opere/config.hpp"
#include "opere/dataset.hpp"
#include "opere/metrics.hpp"
#include "opere/ope.hpp"
#include "opere/pipeline.hpp"
#include "opere/policies.hpp"
#include "opere/training.hpp"
#include "test_support.hpp"

using namespace opere;
using opere::testing::ChainMdp;
using opere::testing::one_hot_obs;
using opere::testing::sample_chain;
using opere::testing::tabular_arch;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string summary;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

void detail(const std::string& line) {
  std::printf("    %s\n", line.c_str());
  std::fflush(stdout);
}

std::map<int, Verdict> results;

void run(int id, const std::string& title, const std::function<Verdict()>& body) {
  std::printf("criterion %d: %s\n", id, title.c_str());
  std::fflush(stdout);
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  results[id] = v;
  std::printf("%s %d %s\n", v.pass ? "PASS" : "FAIL", id, v.summary.c_str());
  std::fflush(stdout);
}

PolicyProbs constant_policy(double p1) {
  return [p1](const Observation&) { return std::vector<double>{1.0 - p1, p1}; };
}

TrainConfig chain_sgd() {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.eta = 0.002;
  cfg.adapt_eta = 0.002;
  cfg.epochs = 20;
  cfg.n_v = 1;
  return cfg;
}

// ---------------------------------------------------------------------------

Verdict gradient_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto c = opere::testing::random_case(rng);
    worst = std::max(worst, opere::testing::max_fd_relative_error(c.net, NetInput(c.map, c.cam, c.extra)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          "max relative error " + fmt(worst, 3) + " over 100 nets (< 1e-4), " + fmt(secs, 3) + " s (< 10 s)"};
}

Verdict tabular_oracles() {
  const auto t0 = Clock::now();
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 200, 17);
  const auto dp = mdp.dp_values(0.5);

  ValueEnsemble mc;
  mc.members.emplace_back(tabular_arch(3));
  mc_pretrain(mc, data, chain_sgd());

  OpeConfig fqe_cfg;
  fqe_cfg.fqe_lr = 0.01;
  fqe_cfg.fqe_epochs = 100;
  const FqeResult fqe = fqe_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, 1.0, fqe_cfg);

  OpeConfig is_cfg;
  is_cfg.bc_lr = 0.01;
  const IsResult is = is_estimate(data, data, tabular_arch(3), 1.0, chain_sgd(), is_cfg);

  OpeConfig dice_cfg;
  dice_cfg.dice_lr = 0.01;
  dice_cfg.dice_epochs = 100;
  const DiceResult dice = dice_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, dice_cfg);

  double err_mc = 0.0, err_fqe = 0.0, err_is = 0.0, err_dice = 0.0;
  for (int s = 0; s < 3; ++s) {
    const Observation o = one_hot_obs(3, s);
    const double want = dp[static_cast<std::size_t>(s)];
    err_mc = std::max(err_mc, std::abs(mc.members[0].forward(o) - want));
    err_fqe = std::max(err_fqe, std::abs(fqe_value(fqe.q, o, {0.5, 0.5}) - want));
    err_is = std::max(err_is, std::abs(ensemble_predict(is.value, o) - want));
  }
  for (double z : dice.ratios) err_dice = std::max(err_dice, std::abs(z - 1.0));
  const double secs = seconds_since(t0);
  detail("DP values " + fmt(dp[0]) + ", " + fmt(dp[1]) + ", " + fmt(dp[2]));
  return {err_mc < 0.1 && err_fqe < 0.1 && err_is < 0.1 && err_dice < 0.2 && secs < 60.0,
          "max |error| MC " + fmt(err_mc, 3) + ", FQE " + fmt(err_fqe, 3) + ", IS " + fmt(err_is, 3) +
              " (< 0.1); max |DICE ratio - 1| " + fmt(err_dice, 3) + " (< 0.2); " + fmt(secs, 3) + " s (< 60 s)"};
}

Verdict literal_updates() {
  auto constant = [](double theta) {
    ValueNet net(tabular_arch(0));
    net.params()[0] = theta;
    return net;
  };
  // Monte-Carlo step: V = 0, G = 1, eta = 0.1
  ValueNet net = constant(0.0);
  OptimizerState opt = OptimizerState::for_net(net, OptimizerKind::Sgd, 0.1);
  sgd_like_update(net, opt, backward(net, NetInput()), 1.0 - net.forward(NetInput()));
  const double mc_theta = net.params()[0];

  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.eta = cfg.adapt_eta = 0.1;
  cfg.n_v = 1;
  auto td = [&](double theta, double reward, bool terminal) {
    ValueEnsemble e;
    e.members.push_back(constant(theta));
    OnlineEnsemble online = OnlineEnsemble::from_pretrained(e, cfg);
    const Observation o;
    td_adapt_step(online, o, reward, terminal ? nullptr : &o, cfg);
    return online.weights.members[0].params()[0];
  };
  const double td_a = td(0.0, 2.0, false);   // delta = r
  const double td_b = td(1.0, 0.5, true);    // delta = r - V
  const double td_c = td(3.0, 0.0, false);   // delta = 0
  const bool ok = mc_theta == 0.1 && td_a == 0.2 && td_b == 0.95 && td_c == 3.0;
  return {ok, "MC step theta " + fmt(mc_theta, 17) + " (0.1); TD steps " + fmt(td_a, 17) + " (0.2), " +
                  fmt(td_b, 17) + " (0.95), " + fmt(td_c, 17) + " (3)"};
}

Verdict telescoping() {
  LabConfig cfg = benchmark_setup(false).first;
  cfg.reward.dt = 1;
  int episodes = 0;
  double worst = 0.0;
  for (EnvKind env : kAllEnvKinds) {
    cfg.env.kind = env;
    const SensorModel sensors(cfg.sensor);
    for (PolicyKind policy : {PolicyKind::Frontier, PolicyKind::Random}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const WorldMap world = generate_world(cfg.env, mix_seed(seed, 40));
        const EpisodeResult r = run_episode(world, policy, cfg.episode_setup(false), seed);
        const CoverageCounts c0 = initial_state(world, sensors).counts(cfg.lidar_gain);
        const CoverageCounts c1 = r.final_state.counts(cfg.lidar_gain);
        const double want = cfg.reward.a * static_cast<double>(c1.camera - c0.camera) +
                            cfg.reward.b * static_cast<double>(c1.lidar - c0.lidar) +
                            cfg.reward.c * static_cast<double>(c1.objects - c0.objects);
        const double g0 = compute_returns(r.trajectory.rewards(), 1.0).front();
        worst = std::max(worst, std::abs(g0 - want) / std::max(1.0, std::abs(want)));
        ++episodes;
      }
    }
  }
  return {worst <= 1e-9, "max relative gap " + fmt(worst, 3) + " over " + std::to_string(episodes) +
                             " episodes (4 envs x frontier/random x 5 seeds, <= 1e-9)"};
}

Verdict metric_goldens() {
  bool ok = true;
  std::vector<std::string> bad;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      bad.push_back(what);
    }
  };
  check(nrmse({{1, 2, 3}, {1, 2, 5}}) == std::sqrt(4.0 / 3.0) / 2.0, "nrmse hand example");
  check(nrmse({{1, 2, 4}, {1, 2, 4}}) == 0.0, "nrmse perfect");
  check(r2_score({{1, 2, 3}, {1, 2, 5}}) == -1.0, "r2 hand example");
  check(r2_score({{1, 5, 2}, {1, 5, 2}}) == 1.0, "r2 perfect");
  {
    // offset case: 1 - T c^2 / sum (v_hat - mean)^2 = 1 - 4 * 0.25 / 5 = 0.8
    const PredictionSeries s{{0, 1, 2, 3}, {0.5, 1.5, 2.5, 3.5}};
    check(std::abs(r2_score(s) - 0.8) < 1e-15, "r2 offset closed form");
  }
  std::vector<DecisionPoint> d(5);
  for (auto& p : d) {
    p.candidates = {{0, 0}, {1, 1}, {2, 2}};
    p.oracle = 1;
    p.chosen = 1;
  }
  d[0].chosen = 0;
  d[3].chosen = 2;
  check(regret(d).raw == 2.0 && regret(d).normalized == 0.4, "regret 2 of 5");
  for (auto& p : d) p.chosen = 0;
  check(regret(d).normalized == 1.0, "regret never matching");

  // dataset bytes across two independent generation + save runs
  LabConfig cfg = benchmark_setup(true).first;
  cfg.env.kind = EnvKind::Mine;
  const fs::path base = fs::temp_directory_path() / ("opere_acceptance_bytes_" + std::to_string(::getpid()));
  fs::remove_all(base);
  for (const char* run : {"a", "b"}) {
    std::vector<std::pair<int, WorldMap>> worlds;
    const Dataset data = generate_dataset(cfg, PolicyKind::Frontier, 5, 3, nullptr, &worlds);
    save_dataset(data, base / run, worlds);
  }
  for (const char* f : {"episodes.jsonl", "manifest.json"})
    check(read_file(base / "a" / f) == read_file(base / "b" / f), std::string("bytes of ") + f);
  check(load_dataset(base / "a") == generate_dataset(cfg, PolicyKind::Frontier, 5, 3), "reload equals regenerated");
  fs::remove_all(base);
  std::string summary = "nrmse/r2/regret goldens exact, dataset bytes identical across two runs";
  if (!ok) {
    summary = "mismatch:";
    for (const auto& b : bad) summary += " [" + b + "]";
  }
  return {ok, summary};
}

// ---------------------------------------------------------------------------
// Benchmark bundle checks

std::vector<std::string> bundle_problems(const fs::path& out, const BenchmarkOptions& opt) {
  std::vector<std::string> problems;
  auto need = [&](const fs::path& p) {
    if (!fs::exists(p)) problems.push_back("missing " + fs::relative(p, out).generic_string());
  };
  for (const char* f : {"table.csv", "metrics.csv", "regret.csv", "coverage.csv", "run_manifest.json"}) need(out / f);
  if (!problems.empty()) return problems;
  const auto [th, trows] = parse_csv(read_file(out / "table.csv"));
  if (th.size() != 1 + 4 * table_methods().size()) problems.push_back("table.csv column count");
  if (trows.size() != opt.envs.size()) problems.push_back("table.csv row count");
  for (const auto& r : trows)
    for (std::size_t c = 1; c < r.size(); c += 2)
      if (r[c].empty()) problems.push_back("table.csv empty mean for " + r[0] + "/" + th[c]);
  if (parse_csv(read_file(out / "regret.csv")).second.size() != 3 * opt.envs.size())
    problems.push_back("regret.csv row count");
  if (parse_csv(read_file(out / "coverage.csv")).second.size() != 3 * opt.envs.size())
    problems.push_back("coverage.csv row count");
  parse_csv(read_file(out / "metrics.csv"));
  const auto manifest = nlohmann::json::parse(read_file(out / "run_manifest.json"));
  if (!manifest.contains("outputs") || !manifest.contains("config")) problems.push_back("run_manifest.json fields");
  for (EnvKind env : opt.envs) {
    need(out / "plots" / ("coverage_" + to_string(env) + ".svg"));
    need(out / "plots" / ("values_" + to_string(env) + ".svg"));
    for (int s = 0; s < opt.seeds; ++s) {
      const fs::path job = out / "jobs" / to_string(env) / ("seed" + std::to_string(s));
      need(job / "train_data" / "manifest.json");
      need(job / "train" / "member0.ckpt");
      need(job / "test_data" / "episodes.jsonl");
      need(job / "eval" / "scores.csv");
      for (const std::string& p : {"frontier", "value", "random"}) need(job / "explore" / p / "summary.csv");
    }
  }
  return problems;
}

struct TableCell {
  double nrmse = NAN;
  double r2 = NAN;
};

std::map<std::string, std::map<std::string, TableCell>> read_table(const fs::path& file) {
  const auto [h, rows] = parse_csv(read_file(file));
  std::map<std::string, std::map<std::string, TableCell>> out;
  for (const auto& r : rows)
    for (std::size_t m = 0; m < table_methods().size(); ++m) {
      auto num = [&](std::size_t c) { return r[c].empty() ? NAN : parse_double(r[c]); };
      out[r[0]][table_methods()[m]] = {num(1 + 4 * m), num(3 + 4 * m)};
    }
  return out;
}

// rows keyed by (env, policy)
std::map<std::pair<std::string, std::string>, std::vector<std::string>> read_keyed(const fs::path& file) {
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> out;
  for (auto& r : parse_csv(read_file(file)).second) out[{r[0], r[1]}] = r;
  return out;
}

struct FullRun {
  fs::path out;
  BenchmarkOptions opt;
  double seconds = 0.0;
  bool ok = false;
  std::string error;
};

FullRun full_run;

Verdict method_ranking() {
  if (!full_run.ok) return {false, "full benchmark failed: " + full_run.error};
  const auto table = read_table(full_run.out / "table.csv");
  int wins = 0;
  for (const auto& [env, cells] : table) {
    const TableCell ours = cells.at("ours");
    bool all = true;
    std::string line = env + ": ours nrmse " + fmt(ours.nrmse) + " r2 " + fmt(ours.r2);
    for (const char* m : {"is", "fqe", "dice"}) {
      const TableCell o = cells.at(m);
      const bool beat = ours.nrmse < o.nrmse && ours.r2 > o.r2;
      all = all && beat;
      line += std::string(" | ") + m + " nrmse " + fmt(o.nrmse) + " r2 " + fmt(o.r2) + (beat ? "" : " (not beaten)");
    }
    wins += all;
    detail(line);
  }
  const bool fast = full_run.seconds < 20 * 60;
  return {wins >= 3 && fast, "ours beats IS, FQE and DICE on both metrics in " + std::to_string(wins) +
                                 " of 4 envs (>= 3), " + std::to_string(full_run.opt.seeds) +
                                 " seeds; benchmark covering it took " + fmt(full_run.seconds / 60, 3) +
                                 " min (< 20 min)"};
}

Verdict regret_direction() {
  if (!full_run.ok) return {false, "full benchmark failed: " + full_run.error};
  const auto rows = read_keyed(full_run.out / "regret.csv");
  const auto cov = read_keyed(full_run.out / "coverage.csv");
  int value_ok = 0;
  std::map<std::string, double> pooled_sum;
  std::map<std::string, int> pooled_n;
  int min_episodes = 1 << 30;
  for (EnvKind kind : full_run.opt.envs) {
    const std::string env = to_string(kind);
    std::string line = env + ":";
    for (const std::string& p : {"frontier", "value", "random"}) {
      const auto& r = rows.at({env, p});
      const double reg = parse_double(r[2]);
      const int decisions = std::stoi(r[4]);
      min_episodes = std::min(min_episodes, std::stoi(cov.at({env, p})[6]));
      pooled_sum[p] += reg * decisions;
      pooled_n[p] += decisions;
      line += " " + p + " " + fmt(reg) + " (" + std::to_string(decisions) + " decisions)";
    }
    value_ok += parse_double(rows.at({env, "value"})[2]) <= parse_double(rows.at({env, "frontier"})[2]);
    detail(line);
  }
  std::map<std::string, double> overall;
  for (const auto& [p, s] : pooled_sum) overall[p] = s / pooled_n[p];
  const bool random_worst = overall["random"] > overall["frontier"] && overall["random"] > overall["value"];
  detail("overall: frontier " + fmt(overall["frontier"]) + ", value " + fmt(overall["value"]) + ", random " +
         fmt(overall["random"]));
  return {value_ok >= 3 && random_worst && min_episodes >= 20,
          "value <= frontier in " + std::to_string(value_ok) + " of 4 envs (>= 3); random worst overall: " +
              (random_worst ? "yes" : "no") + "; >= " + std::to_string(min_episodes) + " episodes per env and policy"};
}

Verdict coverage_direction() {
  if (!full_run.ok) return {false, "full benchmark failed: " + full_run.error};
  const auto cov = read_keyed(full_run.out / "coverage.csv");
  auto cam = [&](const char* p) { return parse_double(cov.at({"corridor", p})[2]); };
  const int n = std::stoi(cov.at({"corridor", "value"})[6]);
  const double v = cam("value"), f = cam("frontier"), r = cam("random");
  return {v >= f && v >= r && f >= r && n >= 10, "corridor camera coverage value " + fmt(v) + ", frontier " + fmt(f) +
                                                      ", random " + fmt(r) + " over " + std::to_string(n) +
                                                      " seeded episodes each"};
}

Verdict end_to_end() {
  auto [cfg, opt] = benchmark_setup(true);
  const fs::path out = resolve_output("acceptance_runs/quick");
  fs::remove_all(out);
  const auto t0 = Clock::now();
  run_benchmark(out, cfg, opt);
  const double quick_secs = seconds_since(t0);
  auto problems = bundle_problems(out, opt);
  if (full_run.ok) {
    for (auto& p : bundle_problems(full_run.out, full_run.opt)) problems.push_back("full: " + p);
  } else {
    problems.push_back("full run failed: " + full_run.error);
  }
  for (const auto& p : problems) detail(p);
  const bool ok = problems.empty() && quick_secs <= 180 && full_run.seconds <= 30 * 60;
  return {ok, "quick run " + fmt(quick_secs, 3) + " s (<= 180 s), full run " + fmt(full_run.seconds / 60, 3) +
                  " min with " + std::to_string(full_run.opt.seeds) + " seeds (<= 30 min), " +
                  std::to_string(problems.size()) + " schema problems"};
}

// ---------------------------------------------------------------------------
// Studies outside the benchmark bundle

double mean_finite(const std::vector<double>& xs) { return finite_mean_std(xs).mean; }

Verdict td_ablation() {
  const auto t0 = Clock::now();
  const int seeds = 5;
  const int test_episodes = BenchmarkOptions{}.test_episodes;
  int wins = 0;
  for (EnvKind env : kAllEnvKinds) {
    std::vector<double> on_per_seed, off_per_seed;
    for (int s = 0; s < seeds; ++s) {
      LabConfig cfg = benchmark_setup(false).first;
      cfg.env.kind = env;
      cfg.train.seed = cfg.ope.seed = static_cast<std::uint64_t>(s);
      const auto seed = static_cast<std::uint64_t>(s);
      // behaviour data and shifted test data come from disjoint world seeds
      const TrainedModel m =
          train_model(cfg, generate_dataset(cfg, PolicyKind::Frontier, mix_seed(seed, 1), cfg.episodes));
      const Dataset test = generate_dataset(cfg, PolicyKind::Value, mix_seed(seed, 2), test_episodes, &m.ensemble);
      std::vector<double> on, off;
      for (const EpisodeScore& e : score_runs(evaluate_method(cfg, "ours", true, &m.ensemble, test, nullptr)))
        on.push_back(e.nrmse);
      for (const EpisodeScore& e : score_runs(evaluate_method(cfg, "ours", false, &m.ensemble, test, nullptr)))
        off.push_back(e.nrmse);
      on_per_seed.push_back(mean_finite(on));
      off_per_seed.push_back(mean_finite(off));
    }
    const double on = mean_finite(on_per_seed), off = mean_finite(off_per_seed);
    wins += on < off;
    detail(to_string(env) + ": NRMSE with TD " + fmt(on) + ", without " + fmt(off));
  }
  const double secs = seconds_since(t0);
  return {wins >= 3 && secs < 600, "adapt-on NRMSE lower in " + std::to_string(wins) + " of 4 envs (>= 3), " +
                                       std::to_string(seeds) + " seeds, " + fmt(secs / 60, 3) + " min (< 10 min)"};
}

Verdict ensemble_effect() {
  const int seeds = 5;
  LabConfig cfg = benchmark_setup(false).first;
  cfg.env.kind = EnvKind::Corridor;
  const Dataset train = generate_dataset(cfg, PolicyKind::Frontier, mix_seed(60, 1), cfg.episodes);
  const Dataset held_out = generate_dataset(cfg, PolicyKind::Frontier, mix_seed(60, 2), 4);
  std::vector<const Observation*> obs;
  for (const Trajectory& t : held_out.trajectories)
    for (const StepRecord& s : t.steps) obs.push_back(&s.obs);

  // predictions[run][i]
  auto predictions = [&](int n_v) {
    std::vector<std::vector<double>> out;
    for (int s = 0; s < seeds; ++s) {
      LabConfig c = cfg;
      c.train.n_v = n_v;
      c.train.seed = static_cast<std::uint64_t>(100 + s);
      const TrainedModel m = train_model(c, train);
      std::vector<double> p;
      for (const Observation* o : obs) p.push_back(ensemble_predict(m.ensemble, *o, EnsembleCombine::Min));
      out.push_back(std::move(p));
    }
    return out;
  };
  auto across_run_variance = [&](const std::vector<std::vector<double>>& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      double mean = 0.0;
      for (const auto& run : p) mean += run[i] / seeds;
      double var = 0.0;
      for (const auto& run : p) var += (run[i] - mean) * (run[i] - mean) / (seeds - 1);
      total += var;
    }
    return total / static_cast<double>(obs.size());
  };
  auto grand_mean = [&](const std::vector<std::vector<double>>& p) {
    double m = 0.0;
    for (const auto& run : p)
      for (double x : run) m += x;
    return m / static_cast<double>(seeds * obs.size());
  };
  const auto single = predictions(1);
  const auto pair = predictions(2);
  const double v1 = across_run_variance(single), v2 = across_run_variance(pair);
  const double m1 = grand_mean(single), m2 = grand_mean(pair);
  return {v2 < v1 && m2 <= m1, "corridor, " + std::to_string(seeds) + " re-seeded runs, " +
                                   std::to_string(obs.size()) + " held-out states: variance N_V=2 min " + fmt(v2) +
                                   " vs single " + fmt(v1) + "; mean prediction " + fmt(m2) + " vs " + fmt(m1)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  auto maybe = [&](int id, const std::string& title, const std::function<Verdict()>& body) {
    if (wanted(id)) run(id, title, body);
  };
  const auto t_all = Clock::now();
  maybe(1, "gradient oracle", gradient_oracle);
  maybe(2, "tabular oracle equivalence", tabular_oracles);
  maybe(3, "literal update checks", literal_updates);
  maybe(4, "telescoping reward identity", telescoping);
  maybe(10, "metric goldens and dataset bytes", metric_goldens);

  // the full benchmark bundle feeds criteria 7, 8, 9 and 11
  if (wanted(7) || wanted(8) || wanted(9) || wanted(11)) {
    auto [cfg, opt] = benchmark_setup(false);
    full_run.opt = opt;
    full_run.out = resolve_output("acceptance_runs/full");
    fs::remove_all(full_run.out);
    std::printf("running the full benchmark (%d seeds) in %s\n", opt.seeds, full_run.out.string().c_str());
    std::fflush(stdout);
    const auto t0 = Clock::now();
    try {
      run_benchmark(full_run.out, cfg, opt);
      full_run.ok = true;
    } catch (const std::exception& e) {
      full_run.error = e.what();
    }
    full_run.seconds = seconds_since(t0);
  }
  maybe(7, "method ranking direction", method_ranking);
  maybe(8, "regret direction", regret_direction);
  maybe(9, "coverage direction", coverage_direction);
  maybe(11, "end to end", end_to_end);
  maybe(5, "TD ablation direction", td_ablation);
  maybe(6, "ensemble effect", ensemble_effect);

  std::printf("\nsummary (%.1f min)\n", seconds_since(t_all) / 60);
  int failed = 0;
  for (const auto& [id, v] : results) {
    std::printf("%s %d %s\n", v.pass ? "PASS" : "FAIL", id, v.summary.c_str());
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opere/config.hpp"
#include "opere/dataset.hpp"
#include "opere/metrics.hpp"
#include "opere/nn.hpp"
#include "opere/ope.hpp"
#include "opere/policies.hpp"
#include "opere/training.hpp"
#include "opere/world.hpp"

namespace opere {

namespace fs = std::filesystem;

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative output paths are placed under $OPERE_OUT_ROOT when it is set.
inline fs::path resolve_output(const std::string& out) {
  fs::path p(out);
  if (p.is_relative())
    if (const char* root = std::getenv("OPERE_OUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / p;
  return p;
}

/// splitmix64 over a pair, used to derive independent world seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PipelineError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw PipelineError("cannot write " + p.string());
}

inline constexpr const char* kRunManifestFile = "run_manifest.json";

/// Content hash of a file, or of a directory tree (relative names and
/// contents, sorted, ignoring run manifests).
inline std::string content_hash(const fs::path& p) {
  if (!fs::is_directory(p)) return fnv1a_hex(read_file(p));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && e.path().filename() != kRunManifestFile) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, p).generic_string() + '\0' + fnv1a_hex(read_file(f)) + '\n';
  return fnv1a_hex(acc);
}

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;  // path -> content hash
  std::vector<std::string> outputs;           // paths relative to the output directory
};

/// Lists the files present in `dir` as outputs and writes the manifest there.
inline void write_run_manifest(const fs::path& dir, RunManifest m) {
  m.outputs.clear();
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path() != dir / kRunManifestFile)
      m.outputs.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(m.outputs.begin(), m.outputs.end());
  nlohmann::json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seeds"] = m.seeds;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  write_file(dir / kRunManifestFile, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Data generation and training

/// Episodes on fresh worlds: world and episode seed for index i are
/// mix_seed(seed, i).
inline std::vector<EpisodeResult> run_seeded_episodes(const LabConfig& cfg, PolicyKind policy, std::uint64_t seed,
                                                      int episodes, const ValueEnsemble* ens, bool record_oracle,
                                                      std::vector<std::pair<int, WorldMap>>* worlds = nullptr) {
  std::vector<EpisodeResult> out;
  const EpisodeSetup setup = cfg.episode_setup(record_oracle);
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(e));
    WorldMap world = generate_world(cfg.env, s);
    EpisodeResult r = run_episode(world, policy, setup, s, ens);
    r.trajectory.episode = e;
    r.trajectory.env = to_string(cfg.env.kind);
    out.push_back(std::move(r));
    if (worlds) worlds->emplace_back(e, std::move(world));
  }
  return out;
}

inline Dataset generate_dataset(const LabConfig& cfg, PolicyKind policy, std::uint64_t seed, int episodes,
                                const ValueEnsemble* ens = nullptr,
                                std::vector<std::pair<int, WorldMap>>* worlds = nullptr) {
  Dataset d = make_dataset(cfg);
  for (EpisodeResult& r : run_seeded_episodes(cfg, policy, seed, episodes, ens, false, worlds))
    add_trajectory(d, std::move(r.trajectory));
  return d;
}

/// Mean |G_0| over trajectories, floored at 1: the network output scale.
inline double auto_value_scale(const std::vector<Trajectory>& data, double gamma) {
  double sum = 0.0;
  int n = 0;
  for (const Trajectory& t : data) {
    if (t.steps.empty()) continue;
    sum += std::abs(compute_returns(t.rewards(), gamma).front());
    ++n;
  }
  return n ? std::max(1.0, sum / n) : 1.0;
}

inline double value_scale_for(const LabConfig& cfg, const std::vector<Trajectory>& train) {
  return cfg.value_scale > 0.0 ? cfg.value_scale : auto_value_scale(train, cfg.train.gamma);
}

/// Trajectories usable for regression (at least two steps).
inline std::vector<Trajectory> trainable(const std::vector<Trajectory>& data) {
  std::vector<Trajectory> out;
  for (const Trajectory& t : data)
    if (t.steps.size() >= 2) out.push_back(t);
  if (out.empty()) throw EmptyDataset("no trajectory with at least 2 steps");
  return out;
}

struct TrainedModel {
  ValueEnsemble ensemble;
  TrainLog log;
  double output_scale = 1.0;
};

inline TrainedModel train_model(const LabConfig& cfg, const Dataset& data) {
  const std::vector<Trajectory> train = trainable(data.trajectories);
  TrainedModel m;
  m.output_scale = value_scale_for(cfg, train);
  m.ensemble = ValueEnsemble::create(cfg.arch(), cfg.train.n_v, cfg.train.seed, m.output_scale);
  m.log = mc_pretrain(m.ensemble, train, cfg.train);
  return m;
}

inline void save_ensemble(const ValueEnsemble& ens, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ens.members.size(); ++i)
    save_checkpoint((dir / ("member" + std::to_string(i) + ".ckpt")).string(), ens.members[i]);
}

inline ValueEnsemble load_ensemble(const fs::path& dir) {
  ValueEnsemble ens;
  for (int i = 0;; ++i) {
    const fs::path p = dir / ("member" + std::to_string(i) + ".ckpt");
    if (!fs::exists(p)) break;
    ens.members.push_back(load_checkpoint(p.string()));
  }
  if (ens.members.empty()) throw PipelineError("missing checkpoint: no member0.ckpt in " + dir.string());
  return ens;
}

// ---------------------------------------------------------------------------
// Evaluation

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"ours", "is", "fqe", "dice"};
  return m;
}

/// Column order of the metric table.
inline const std::vector<std::string>& table_methods() {
  static const std::vector<std::string> m{"ours", "ours-no-td", "is", "fqe", "dice"};
  return m;
}

namespace detail {

inline EvalRun eval_run_from(const std::string& method, const Trajectory& traj, double gamma,
                             const std::function<double(const Observation&)>& predict) {
  const auto returns = compute_returns(traj.rewards(), gamma);
  EvalRun run{method, traj.policy, traj.env, traj.episode, {}};
  for (std::size_t t = 0; t < traj.steps.size(); ++t)
    run.rows.push_back({traj.steps[t].t, predict(traj.steps[t].obs), returns[t], traj.steps[t].reward});
  return run;
}

}  // namespace detail

/// Value predictions along every test trajectory. `ours` replays the
/// pre-trained ensemble (with or without TD adaptation); the baselines learn
/// from the behaviour dataset `train`, with the target policy cloned from
/// the test trajectories.
inline std::vector<EvalRun> evaluate_method(const LabConfig& cfg, const std::string& method, bool adapt,
                                            const ValueEnsemble* ens, const Dataset& test, const Dataset* train) {
  std::vector<EvalRun> runs;
  if (test.trajectories.empty()) throw EmptyDataset("evaluate: empty test dataset");
  if (method == "ours") {
    if (!ens) throw PipelineError("evaluate: method ours needs checkpoints");
    for (const Trajectory& t : test.trajectories)
      if (!t.steps.empty()) runs.push_back(evaluate_offline(*ens, t, cfg.train, adapt));
    return runs;
  }
  if (std::find(known_methods().begin(), known_methods().end(), method) == known_methods().end())
    throw PipelineError("evaluate: unknown method '" + method + "'");
  if (!train) throw PipelineError("evaluate: method " + method + " needs a behaviour (training) dataset");
  const std::vector<Trajectory> behaviour = trainable(train->trajectories);
  const double scale = value_scale_for(cfg, behaviour);
  const double gamma = cfg.train.gamma;
  std::function<double(const Observation&)> predict;
  std::optional<IsResult> is;
  std::optional<BcPolicy> target;
  std::optional<FqeResult> fqe;
  if (method == "is") {
    is = is_estimate(behaviour, test.trajectories, cfg.arch(), scale, cfg.train, cfg.ope);
    predict = [&](const Observation& o) { return ensemble_predict(is->value, o, cfg.train.combine); };
  } else {
    target = fit_behavior_cloning(test.trajectories, cfg.arch(kNumActionBins), cfg.ope, cfg.ope.seed * 31 + 7);
    const PolicyProbs pi = [&](const Observation& o) { return target->probs(o); };
    const auto transitions = transitions_of(behaviour);
    if (method == "fqe") {
      fqe = fqe_train(transitions, pi, cfg.arch(kNumActionBins), scale, gamma, cfg.ope);
    } else {
      const DiceResult dice = dice_train(transitions, pi, cfg.arch(kNumActionBins), gamma, cfg.ope);
      fqe = fqe_train(transitions, pi, cfg.arch(kNumActionBins), scale, gamma, cfg.ope, &dice.ratios);
    }
    predict = [&](const Observation& o) { return fqe_value(fqe->q, o, target->probs(o)); };
  }
  for (const Trajectory& t : test.trajectories)
    if (!t.steps.empty()) runs.push_back(detail::eval_run_from(method, t, gamma, predict));
  return runs;
}

/// Metric value, or NaN when the prediction series is constant.
inline double guarded_metric(double (*f)(const PredictionSeries&), const EvalRun& run) {
  try {
    return f({run.v_hat(), run.v_true()});
  } catch (const DegenerateSeries&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

struct EpisodeScore {
  std::string method;
  int episode = 0;
  double nrmse = 0.0;
  double r2 = 0.0;
};

inline std::vector<EpisodeScore> score_runs(const std::vector<EvalRun>& runs) {
  std::vector<EpisodeScore> out;
  for (const EvalRun& r : runs) out.push_back({r.method, r.episode, guarded_metric(nrmse, r), guarded_metric(r2_score, r)});
  return out;
}

/// Mean over the finite entries; NaN when there are none.
inline MeanStd finite_mean_std(const std::vector<double>& xs) {
  std::vector<double> ok;
  for (double x : xs)
    if (std::isfinite(x)) ok.push_back(x);
  if (ok.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::nullopt, 0};
  return mean_std(ok);
}

inline void write_episode_scores_csv(std::ostream& os, const std::vector<EpisodeScore>& scores) {
  os << "method,episode,nrmse,r2\n";
  for (const EpisodeScore& s : scores)
    os << s.method << ',' << s.episode << ',' << format_double(s.nrmse) << ',' << format_double(s.r2) << '\n';
}

inline std::vector<EpisodeScore> read_episode_scores_csv(const std::string& text) {
  std::vector<EpisodeScore> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string m, e, n, r;
    std::getline(ss, m, ',');
    std::getline(ss, e, ',');
    std::getline(ss, n, ',');
    std::getline(ss, r, ',');
    out.push_back({m, std::stoi(e), parse_double(n), parse_double(r)});
  }
  return out;
}

/// One environment row of the metric table: method -> (NRMSE, R2).
struct TableRow {
  std::string env;
  std::map<std::string, std::pair<MeanStd, MeanStd>> cells;
};

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

/// Rows are environments; per method four columns: NRMSE mean/std, R2 mean/std.
/// Methods absent from every row are left out.
inline void write_table_csv(std::ostream& os, const std::vector<TableRow>& rows) {
  std::vector<std::string> methods;
  for (const std::string& m : table_methods())
    if (std::any_of(rows.begin(), rows.end(), [&](const TableRow& r) { return r.cells.count(m) > 0; }))
      methods.push_back(m);
  os << "env";
  for (const std::string& m : methods) os << ',' << m << "_nrmse_mean," << m << "_nrmse_std," << m << "_r2_mean," << m << "_r2_std";
  os << '\n';
  for (const TableRow& r : rows) {
    os << r.env;
    for (const std::string& m : methods) {
      const auto it = r.cells.find(m);
      if (it == r.cells.end()) {
        os << ",,,,";
        continue;
      }
      os << ',' << format_double(it->second.first.mean) << ',' << format_optional(it->second.first.std) << ','
         << format_double(it->second.second.mean) << ',' << format_optional(it->second.second.std);
    }
    os << '\n';
  }
}

/// Parses a metric table back into header names and rows of cells.
inline std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> parse_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw PipelineError("csv: empty file");
  auto header = split(line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      throw PipelineError("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(header.size()));
    rows.push_back(std::move(cells));
  }
  return {std::move(header), std::move(rows)};
}

// ---------------------------------------------------------------------------
// Exploration reports

struct ExploreSummary {
  std::string policy;
  CoverageStats coverage;
  Regret regret;
  int decisions = 0;
};

/// Pools the decision points of all episodes; regret is normalised by the
/// total decision count.
inline ExploreSummary summarize_explore(const std::string& policy, const std::vector<EpisodeResult>& results) {
  std::vector<CoverageCurve> curves;
  std::vector<DecisionPoint> decisions;
  for (const EpisodeResult& r : results) {
    curves.push_back(r.coverage);
    decisions.insert(decisions.end(), r.decisions.begin(), r.decisions.end());
  }
  ExploreSummary s{policy, coverage_summary(curves).at(policy), {}, static_cast<int>(decisions.size())};
  if (!decisions.empty()) s.regret = regret(decisions);
  return s;
}

inline void write_explore_outputs(const fs::path& dir, const std::string& policy,
                                  const std::vector<EpisodeResult>& results) {
  fs::create_directories(dir);
  std::vector<CoverageCurve> curves;
  for (const EpisodeResult& r : results) curves.push_back(r.coverage);
  std::ofstream cov(dir / "coverage_curves.csv", std::ios::binary);
  write_coverage_curves_csv(cov, curves);
  std::ofstream dec(dir / "decisions.csv", std::ios::binary);
  dec << "episode,t,candidates,chosen,oracle\n";
  for (std::size_t e = 0; e < results.size(); ++e) {
    std::ostringstream rows;
    write_decisions_csv(rows, results[e].decisions);
    std::istringstream lines(rows.str());
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) dec << e << ',' << line << '\n';
  }
  std::ofstream eps(dir / "episodes.csv", std::ios::binary);
  eps << "policy,episode,seed,steps,final_camera,final_lidar,decisions,mismatches\n";
  for (std::size_t e = 0; e < results.size(); ++e) {
    const EpisodeResult& r = results[e];
    int mismatches = 0;
    for (const DecisionPoint& d : r.decisions) mismatches += d.chosen != d.oracle;
    eps << policy << ',' << e << ',' << r.trajectory.seed << ',' << r.trajectory.steps.size() << ','
        << format_double(r.coverage.final_camera()) << ',' << format_double(r.coverage.final_lidar()) << ','
        << r.decisions.size() << ',' << mismatches << '\n';
  }
  const ExploreSummary s = summarize_explore(policy, results);
  std::ofstream sum(dir / "summary.csv", std::ios::binary);
  sum << "policy,episodes,camera_mean,camera_std,lidar_mean,lidar_std,decisions,regret_raw,regret_normalized\n";
  sum << policy << ',' << results.size() << ',' << format_double(s.coverage.camera.mean) << ','
      << format_optional(s.coverage.camera.std) << ',' << format_double(s.coverage.lidar.mean) << ','
      << format_optional(s.coverage.lidar.std) << ',' << s.decisions << ',';
  if (s.decisions > 0) sum << format_double(s.regret.raw) << ',' << format_double(s.regret.normalized);
  else sum << ',';
  sum << '\n';
}

// ---------------------------------------------------------------------------
// Static SVG line plots

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<PlotSeries>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const double W = 640, H = 400, L = 60, R = 150, T = 30, B = 45;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const PlotSeries& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\">" << svg_escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">" << svg_escape(xlabel) << "</text>\n";
  os << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 14 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">" << svg_escape(ylabel) << "</text>\n";
  for (double f : {0.0, 0.5, 1.0}) {
    os << "<text x=\"" << px(x0 + f * (x1 - x0)) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\">"
       << x0 + f * (x1 - x0) << "</text>\n";
    os << "<text x=\"" << L - 5 << "\" y=\"" << py(y0 + f * (y1 - y0)) + 4 << "\" text-anchor=\"end\">"
       << y0 + f * (y1 - y0) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const PlotSeries& s = series[k];
    const char* color = colors[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    const double ly = T + 15 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << svg_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkOptions {
  bool quick = false;
  int seeds = 3;
  int test_episodes = 4;
  int explore_episodes = 20;
  int workers = 0;  // 0 = hardware concurrency
  std::vector<EnvKind> envs{kAllEnvKinds.begin(), kAllEnvKinds.end()};
};

/// Sizes for the full and quick runs.
inline std::pair<LabConfig, BenchmarkOptions> benchmark_setup(bool quick) {
  LabConfig cfg;
  BenchmarkOptions opt;
  opt.quick = quick;
  if (quick) {
    cfg.env.width = cfg.env.height = 32;
    cfg.obs.crop = 8;
    cfg.obs.cam_rays = 16;
    cfg.map_layers = {32};
    cfg.cam_layers = {8};
    cfg.head_layers = {16};
    cfg.episode.step_limit = 120;
    cfg.episodes = 6;
    cfg.train.epochs = 10;
    cfg.ope.bc_epochs = 3;
    cfg.ope.fqe_epochs = 5;
    cfg.ope.dice_epochs = 5;
    opt.seeds = 1;
    opt.test_episodes = 3;
    opt.explore_episodes = 5;
  } else {
    cfg.env.width = cfg.env.height = 32;
    cfg.obs.crop = 16;
    cfg.episode.step_limit = 200;
  }
  return {cfg, opt};
}

enum class StageStatus { Ran, Skipped };

struct StageRecord {
  std::string name;
  StageStatus status = StageStatus::Ran;
};

/// Runs `body` unless `dir/stage.json` records the same key; the key file is
/// written only after the body succeeded, so interrupted stages rerun.
inline StageStatus run_stage(const fs::path& dir, const std::string& key, const std::function<void()>& body) {
  const fs::path marker = dir / "stage.json";
  if (fs::exists(marker)) {
    try {
      if (nlohmann::json::parse(read_file(marker)).at("key").get<std::string>() == key) return StageStatus::Skipped;
    } catch (const std::exception&) {
      // unreadable marker: rerun
    }
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
  body();
  write_file(marker, nlohmann::json{{"key", key}}.dump() + "\n");
  return StageStatus::Ran;
}

/// Runs jobs on a small thread pool; the first failure stops new jobs from
/// starting and is rethrown after all workers finished.
inline void run_jobs(std::size_t count, int workers, const std::function<void(std::size_t)>& job) {
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min<std::size_t>(count, workers > 0 ? static_cast<std::size_t>(workers)
                                                                        : std::max(1u, std::thread::hardware_concurrency())));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < count && !failed; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct BenchmarkReport {
  std::vector<StageRecord> stages;
  std::vector<TableRow> table;
};

namespace detail {

inline std::mutex& log_mutex() {
  static std::mutex mu;
  return mu;
}

inline void log_line(const std::string& msg) {
  std::lock_guard lock(log_mutex());
  std::cerr << msg << std::endl;
}

inline std::vector<std::string> policy_names() { return {"frontier", "value", "random"}; }

}  // namespace detail

/// One (environment, seed) job: generate behaviour data, train, generate
/// shifted test data with the value policy, evaluate every method and run
/// the three exploration policies.
inline std::vector<StageRecord> benchmark_job(const LabConfig& base, const BenchmarkOptions& opt, EnvKind env,
                                              int seed_index, const fs::path& dir) {
  LabConfig cfg = base;
  cfg.env.kind = env;
  cfg.train.seed = static_cast<std::uint64_t>(seed_index);
  cfg.ope.seed = static_cast<std::uint64_t>(seed_index);
  const std::string name = to_string(env) + "/seed" + std::to_string(seed_index);
  const std::string cfg_text = write_config(cfg);
  const auto seed = static_cast<std::uint64_t>(seed_index);
  std::vector<StageRecord> stages;
  auto stage = [&](const std::string& stage_name, const std::string& key, const std::function<void()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    const StageStatus st = run_stage(dir / stage_name, key, body);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::log_line("[" + name + "] " + stage_name +
                     (st == StageStatus::Skipped ? " (cached)" : " done in " + format_double(std::round(secs * 10) / 10) + " s"));
    stages.push_back({name + "/" + stage_name, st});
  };

  // data stages depend on the data-defining sections only, so changing a
  // training setting keeps the generated behaviour data
  const std::string k_train_data =
      fnv1a_hex("train_data\n" + data_config_hash(cfg) + std::to_string(cfg.episodes) + "/" + std::to_string(seed));
  stage("train_data", k_train_data, [&] {
    std::vector<std::pair<int, WorldMap>> worlds;
    const Dataset d = generate_dataset(cfg, PolicyKind::Frontier, mix_seed(seed, 1), cfg.episodes, nullptr, &worlds);
    save_dataset(d, dir / "train_data", worlds);
  });
  const std::string k_train = fnv1a_hex("train\n" + k_train_data + cfg_text);
  stage("train", k_train, [&] {
    const TrainedModel m = train_model(cfg, load_dataset(dir / "train_data"));
    save_ensemble(m.ensemble, dir / "train");
    std::ofstream log(dir / "train" / "loss.csv", std::ios::binary);
    m.log.write_csv(log);
  });
  const std::string k_test_data = fnv1a_hex("test_data\n" + k_train + std::to_string(opt.test_episodes));
  stage("test_data", k_test_data, [&] {
    const ValueEnsemble ens = load_ensemble(dir / "train");
    std::vector<std::pair<int, WorldMap>> worlds;
    const Dataset d = generate_dataset(cfg, PolicyKind::Value, mix_seed(seed, 2), opt.test_episodes, &ens, &worlds);
    save_dataset(d, dir / "test_data", worlds);
  });
  const std::string k_eval = fnv1a_hex("eval\n" + k_test_data);
  stage("eval", k_eval, [&] {
    const ValueEnsemble ens = load_ensemble(dir / "train");
    const Dataset train = load_dataset(dir / "train_data");
    const Dataset test = load_dataset(dir / "test_data");
    std::vector<EpisodeScore> scores;
    for (const std::string& label : table_methods()) {
      const bool adapt = label == "ours";
      const std::string method = label == "ours-no-td" ? "ours" : label;
      std::vector<EvalRun> runs;
      try {
        runs = evaluate_method(cfg, method, adapt, &ens, test, &train);
      } catch (const Diverged& e) {
        detail::log_line("[" + name + "] " + label + " diverged: " + e.what());
        for (const Trajectory& t : test.trajectories)
          scores.push_back({label, t.episode, std::numeric_limits<double>::quiet_NaN(),
                            std::numeric_limits<double>::quiet_NaN()});
        continue;
      }
      for (EvalRun& r : runs) {
        r.method = label;
        std::ofstream os(dir / "eval" / (label + "_episode" + std::to_string(r.episode) + ".csv"), std::ios::binary);
        r.write_csv(os);
      }
      const auto s = score_runs(runs);
      scores.insert(scores.end(), s.begin(), s.end());
    }
    std::ofstream os(dir / "eval" / "scores.csv", std::ios::binary);
    write_episode_scores_csv(os, scores);
  });
  const std::string k_explore = fnv1a_hex("explore\n" + k_train + std::to_string(opt.explore_episodes));
  stage("explore", k_explore, [&] {
    const ValueEnsemble ens = load_ensemble(dir / "train");
    for (const std::string& p : detail::policy_names()) {
      const auto results =
          run_seeded_episodes(cfg, parse_policy_kind(p), mix_seed(seed, 3), opt.explore_episodes, &ens, true);
      write_explore_outputs(dir / "explore" / p, p, results);
    }
  });
  return stages;
}

/// Aggregates per-job outputs into the top-level tables and plots.
inline std::vector<TableRow> benchmark_summarize(const fs::path& out, const BenchmarkOptions& opt) {
  std::vector<TableRow> table;
  std::vector<MetricRow> metrics;
  std::ostringstream regret_csv, coverage_csv;
  regret_csv << "env,policy,regret_mean,regret_std,decisions\n";
  coverage_csv << "env,policy,camera_mean,camera_std,lidar_mean,lidar_std,episodes\n";
  fs::create_directories(out / "plots");
  for (EnvKind env : opt.envs) {
    const std::string env_name = to_string(env);
    TableRow row{env_name, {}};
    for (const std::string& method : table_methods()) {
      std::vector<double> n_per_seed, r_per_seed;
      for (int s = 0; s < opt.seeds; ++s) {
        const fs::path job = out / "jobs" / env_name / ("seed" + std::to_string(s));
        std::vector<double> n, r;
        for (const EpisodeScore& e : read_episode_scores_csv(read_file(job / "eval" / "scores.csv")))
          if (e.method == method) {
            n.push_back(e.nrmse);
            r.push_back(e.r2);
          }
        const MeanStd mn = finite_mean_std(n), mr = finite_mean_std(r);
        n_per_seed.push_back(mn.mean);
        r_per_seed.push_back(mr.mean);
        metrics.push_back({env_name, "value", method, "nrmse", mn.mean, mn.std, std::to_string(s)});
        metrics.push_back({env_name, "value", method, "r2", mr.mean, mr.std, std::to_string(s)});
      }
      row.cells[method] = {finite_mean_std(n_per_seed), finite_mean_std(r_per_seed)};
      metrics.push_back({env_name, "value", method, "nrmse", row.cells[method].first.mean, row.cells[method].first.std, "all"});
      metrics.push_back({env_name, "value", method, "r2", row.cells[method].second.mean, row.cells[method].second.std, "all"});
    }
    table.push_back(std::move(row));

    std::vector<PlotSeries> cov_series;
    for (const std::string& p : detail::policy_names()) {
      std::vector<double> reg, cam, lid;
      int decisions = 0;
      std::vector<double> mean_curve;
      std::vector<int> curve_n;
      for (int s = 0; s < opt.seeds; ++s) {
        const fs::path dir = out / "jobs" / env_name / ("seed" + std::to_string(s)) / "explore" / p;
        const auto [h, rows] = parse_csv(read_file(dir / "summary.csv"));
        (void)h;
        decisions += std::stoi(rows.at(0).at(6));
        if (!rows.at(0).at(8).empty()) reg.push_back(parse_double(rows[0][8]));
        for (const auto& e : parse_csv(read_file(dir / "episodes.csv")).second) {
          cam.push_back(parse_double(e.at(4)));
          lid.push_back(parse_double(e.at(5)));
        }
        for (const auto& c : parse_csv(read_file(dir / "coverage_curves.csv")).second) {
          const auto t = static_cast<std::size_t>(std::stoi(c.at(2)));
          if (mean_curve.size() <= t) {
            mean_curve.resize(t + 1, 0.0);
            curve_n.resize(t + 1, 0);
          }
          mean_curve[t] += parse_double(c.at(3));
          ++curve_n[t];
        }
      }
      PlotSeries ps{p, {}, {}};
      for (std::size_t t = 0; t < mean_curve.size(); ++t) {
        ps.x.push_back(static_cast<double>(t));
        ps.y.push_back(mean_curve[t] / curve_n[t]);
      }
      cov_series.push_back(std::move(ps));
      const MeanStd mr = finite_mean_std(reg), mc = finite_mean_std(cam), ml = finite_mean_std(lid);
      regret_csv << env_name << ',' << p << ',' << format_double(mr.mean) << ',' << format_optional(mr.std) << ','
                 << decisions << '\n';
      coverage_csv << env_name << ',' << p << ',' << format_double(mc.mean) << ',' << format_optional(mc.std) << ','
                   << format_double(ml.mean) << ',' << format_optional(ml.std) << ',' << cam.size() << '\n';
      metrics.push_back({env_name, p, "explore", "regret_normalized", mr.mean, mr.std, "all"});
      metrics.push_back({env_name, p, "explore", "camera_coverage", mc.mean, mc.std, "all"});
      metrics.push_back({env_name, p, "explore", "lidar_coverage", ml.mean, ml.std, "all"});
    }
    write_file(out / "plots" / ("coverage_" + env_name + ".svg"),
               line_plot_svg("camera coverage, " + env_name, "step", "camera-observed fraction", cov_series));

    // value curves of the first test episode of seed 0
    std::vector<PlotSeries> value_series;
    const fs::path eval_dir = out / "jobs" / env_name / "seed0" / "eval";
    for (const std::string& method : table_methods()) {
      const fs::path f = eval_dir / (method + "_episode0.csv");
      if (!fs::exists(f)) continue;
      PlotSeries pred{method, {}, {}}, truth{"true", {}, {}};
      for (const auto& c : parse_csv(read_file(f)).second) {
        pred.x.push_back(std::stod(c.at(0)));
        pred.y.push_back(parse_double(c.at(1)));
        truth.x.push_back(pred.x.back());
        truth.y.push_back(parse_double(c.at(2)));
      }
      if (value_series.empty()) value_series.push_back(std::move(truth));
      value_series.push_back(std::move(pred));
    }
    write_file(out / "plots" / ("values_" + env_name + ".svg"),
               line_plot_svg("value estimates, " + env_name, "step", "value", value_series));
  }
  std::ostringstream table_csv, metrics_csv;
  write_table_csv(table_csv, table);
  write_metric_rows_csv(metrics_csv, metrics);
  write_file(out / "table.csv", table_csv.str());
  write_file(out / "metrics.csv", metrics_csv.str());
  write_file(out / "regret.csv", regret_csv.str());
  write_file(out / "coverage.csv", coverage_csv.str());
  return table;
}

/// Full reproduction bundle under `out`. Completed stages are skipped on a
/// rerun with the same configuration.
inline BenchmarkReport run_benchmark(const fs::path& out, const LabConfig& cfg, const BenchmarkOptions& opt) {
  validate(cfg);
  if (opt.seeds < 1 || opt.test_episodes < 1 || opt.explore_episodes < 1)
    throw PipelineError("benchmark: seeds and episode counts must be >= 1");
  fs::create_directories(out);
  std::vector<std::pair<EnvKind, int>> jobs;
  for (EnvKind env : opt.envs)
    for (int s = 0; s < opt.seeds; ++s) jobs.emplace_back(env, s);
  std::vector<std::vector<StageRecord>> job_stages(jobs.size());
  run_jobs(jobs.size(), opt.workers, [&](std::size_t i) {
    const auto [env, s] = jobs[i];
    job_stages[i] = benchmark_job(cfg, opt, env, s, out / "jobs" / to_string(env) / ("seed" + std::to_string(s)));
  });
  BenchmarkReport report;
  for (auto& st : job_stages) report.stages.insert(report.stages.end(), st.begin(), st.end());
  report.table = benchmark_summarize(out, opt);
  RunManifest m;
  m.command = opt.quick ? "benchmark --quick" : "benchmark";
  m.config = write_config(cfg);
  for (int s = 0; s < opt.seeds; ++s) m.seeds.push_back(static_cast<std::uint64_t>(s));
  write_run_manifest(out, m);
  return report;
}

}  // namespace opere

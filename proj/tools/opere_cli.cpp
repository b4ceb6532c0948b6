#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opere/config.hpp"
#include "opere/dataset.hpp"
#include "opere/pipeline.hpp"

namespace fs = std::filesystem;
using namespace opere;

namespace {

// With no --config, data-generating settings come from the dataset itself.
LabConfig config_for(const std::string& config_path, const Dataset* data) {
  if (!config_path.empty()) {
    LabConfig cfg = load_config(config_path);
    if (data) verify_manifest(*data, cfg);
    return cfg;
  }
  return data ? parse_config(data->manifest.config) : LabConfig{};
}

RunManifest manifest_for(const std::string& command, const LabConfig& cfg, std::vector<std::uint64_t> seeds) {
  RunManifest m;
  m.command = command;
  m.config = write_config(cfg);
  m.seeds = std::move(seeds);
  return m;
}

int cmd_gen_data(const std::string& env, int episodes, const std::string& policy, const std::string& checkpoints,
                 std::uint64_t seed, const std::string& out, const std::string& config_path) {
  LabConfig cfg = config_path.empty() ? LabConfig{} : load_config(config_path);
  cfg.env.kind = parse_env_kind(env);
  const PolicyKind kind = parse_policy_kind(policy);
  std::optional<ValueEnsemble> ens;
  if (!checkpoints.empty()) ens = load_ensemble(checkpoints);
  if (kind == PolicyKind::Value && !ens) throw PipelineError("gen-data: --policy value needs --checkpoints");
  std::vector<std::pair<int, WorldMap>> worlds;
  const Dataset d = generate_dataset(cfg, kind, seed, episodes, ens ? &*ens : nullptr, &worlds);
  const fs::path dir = resolve_output(out);
  save_dataset(d, dir, worlds);
  RunManifest m = manifest_for("gen-data", cfg, {seed});
  if (ens) m.inputs[checkpoints] = content_hash(checkpoints);
  write_run_manifest(dir, m);
  std::cout << "wrote " << d.trajectories.size() << " episodes to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const std::string& dataset, const std::string& config_path, const std::string& out, int nv,
              int epochs) {
  const Dataset d = load_dataset(dataset);
  LabConfig cfg = config_for(config_path, &d);
  if (nv > 0) cfg.train.n_v = nv;
  if (epochs > 0) cfg.train.epochs = epochs;
  validate(cfg);
  const TrainedModel model = train_model(cfg, d);
  const fs::path dir = resolve_output(out);
  save_ensemble(model.ensemble, dir);
  std::ofstream log(dir / "loss.csv", std::ios::binary);
  model.log.write_csv(log);
  log.close();
  RunManifest m = manifest_for("train", cfg, {cfg.train.seed});
  m.inputs[dataset] = content_hash(dataset);
  write_run_manifest(dir, m);
  const auto loss = model.log.mean_loss();
  std::cout << "trained " << model.ensemble.size() << " networks, loss " << loss.front() << " -> " << loss.back()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& dataset, const std::string& checkpoints, const std::string& method,
             const std::string& adapt, const std::string& out, const std::string& train_path,
             const std::string& config_path) {
  const Dataset test = load_dataset(dataset);
  const LabConfig cfg = config_for(config_path, &test);
  std::optional<ValueEnsemble> ens;
  if (method == "ours") {
    if (checkpoints.empty()) throw PipelineError("missing checkpoint: --method ours needs --checkpoints");
    ens = load_ensemble(checkpoints);
  }
  std::optional<Dataset> train;
  if (!train_path.empty()) train = load_dataset(train_path);
  const bool on = adapt == "on";
  auto runs = evaluate_method(cfg, method, on, ens ? &*ens : nullptr, test, train ? &*train : nullptr);

  const fs::path dir = resolve_output(out);
  fs::create_directories(dir / "episodes");
  for (const EvalRun& r : runs) {
    std::ofstream os(dir / "episodes" / (r.method + "_episode" + std::to_string(r.episode) + ".csv"),
                     std::ios::binary);
    r.write_csv(os);
  }
  const auto scores = score_runs(runs);
  {
    std::ofstream os(dir / "scores.csv", std::ios::binary);
    write_episode_scores_csv(os, scores);
  }
  std::vector<double> n, r2;
  for (const EpisodeScore& s : scores) {
    n.push_back(s.nrmse);
    r2.push_back(s.r2);
  }
  const std::string label = runs.empty() ? method : runs.front().method;
  TableRow row{test.trajectories.front().env, {}};
  row.cells[label] = {finite_mean_std(n), finite_mean_std(r2)};
  {
    std::ofstream os(dir / "table.csv", std::ios::binary);
    write_table_csv(os, {row});
  }
  RunManifest m = manifest_for("eval --method " + method + " --adapt " + adapt, cfg, {cfg.ope.seed});
  m.inputs[dataset] = content_hash(dataset);
  if (ens) m.inputs[checkpoints] = content_hash(checkpoints);
  if (train) m.inputs[train_path] = content_hash(train_path);
  write_run_manifest(dir, m);
  std::cout << label << ": nrmse " << row.cells[label].first.mean << ", r2 " << row.cells[label].second.mean << "\n";
  return 0;
}

int cmd_explore(const std::string& env, const std::string& policy, const std::string& checkpoints, int seeds,
                std::uint64_t seed, const std::string& out, const std::string& config_path) {
  LabConfig cfg = config_path.empty() ? LabConfig{} : load_config(config_path);
  cfg.env.kind = parse_env_kind(env);
  const PolicyKind kind = parse_policy_kind(policy);
  std::optional<ValueEnsemble> ens;
  if (!checkpoints.empty()) ens = load_ensemble(checkpoints);
  if (kind == PolicyKind::Value && !ens) throw PipelineError("explore: --policy value needs --checkpoints");
  const auto results = run_seeded_episodes(cfg, kind, seed, seeds, ens ? &*ens : nullptr, true);
  const fs::path dir = resolve_output(out);
  write_explore_outputs(dir, policy, results);
  RunManifest m = manifest_for("explore", cfg, {});
  for (const EpisodeResult& r : results) m.seeds.push_back(r.trajectory.seed);
  if (ens) m.inputs[checkpoints] = content_hash(checkpoints);
  write_run_manifest(dir, m);
  const ExploreSummary s = summarize_explore(policy, results);
  std::cout << policy << ": camera coverage " << s.coverage.camera.mean << ", regret "
            << (s.decisions ? std::to_string(s.regret.normalized) : std::string("n/a")) << "\n";
  return 0;
}

int cmd_benchmark(const std::string& out, bool quick, int seeds, int workers, const std::string& config_path) {
  auto [cfg, opt] = benchmark_setup(quick);
  if (!config_path.empty()) cfg = load_config(config_path);
  if (seeds > 0) opt.seeds = seeds;
  opt.workers = workers;
  const auto t0 = std::chrono::steady_clock::now();
  const BenchmarkReport report = run_benchmark(resolve_output(out), cfg, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  int skipped = 0;
  for (const StageRecord& s : report.stages) skipped += s.status == StageStatus::Skipped;
  std::cout << "benchmark finished in " << secs << " s (" << report.stages.size() << " stages, " << skipped
            << " cached)\n";
  std::ostringstream table;
  write_table_csv(table, report.table);
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy value estimation for exploration policies"};
  app.require_subcommand(1);

  std::string env = "corridor", policy = "frontier", checkpoints, out, config, dataset, method = "ours", adapt = "on",
              train_path;
  int episodes = 12, nv = 0, epochs = 0, seeds = 20, workers = 0;
  std::uint64_t seed = 1;
  bool quick = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a dataset by running a policy on seeded worlds");
  gen->add_option("--env", env, "corridor, room, mine or cave")->check(CLI::IsMember({"corridor", "room", "mine", "cave"}));
  gen->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
  gen->add_option("--policy", policy)->check(CLI::IsMember({"frontier", "value", "random"}));
  gen->add_option("--checkpoints", checkpoints, "Checkpoint directory (value policy)");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out)->required();
  gen->add_option("--config", config);

  auto* train = app.add_subcommand("train", "Monte-Carlo pre-training of the value ensemble");
  train->add_option("--dataset", dataset)->required();
  train->add_option("--config", config);
  train->add_option("--out", out)->required();
  train->add_option("--nv", nv, "Ensemble size")->check(CLI::PositiveNumber);
  train->add_option("--epochs", epochs)->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate value predictions on a dataset");
  eval->add_option("--dataset", dataset, "Test dataset")->required();
  eval->add_option("--checkpoints", checkpoints);
  eval->add_option("--method", method)->check(CLI::IsMember({"ours", "is", "fqe", "dice"}));
  eval->add_option("--adapt", adapt, "TD adaptation for ours")->check(CLI::IsMember({"on", "off"}));
  eval->add_option("--out", out)->required();
  eval->add_option("--train", train_path, "Behaviour dataset for is, fqe and dice");
  eval->add_option("--config", config);

  auto* explore = app.add_subcommand("explore", "Run exploration episodes with decision logging");
  explore->add_option("--env", env)->check(CLI::IsMember({"corridor", "room", "mine", "cave"}));
  explore->add_option("--policy", policy)->check(CLI::IsMember({"frontier", "value", "random"}));
  explore->add_option("--checkpoints", checkpoints);
  explore->add_option("--seeds", seeds, "Number of episodes")->check(CLI::PositiveNumber);
  explore->add_option("--seed", seed, "Base seed");
  explore->add_option("--out", out)->required();
  explore->add_option("--config", config);

  auto* bench = app.add_subcommand("benchmark", "Full pipeline over all environments");
  bench->add_option("--out", out)->required();
  bench->add_flag("--quick", quick, "Reduced sizes");
  bench->add_option("--seeds", seeds, "Seeds per environment");
  bench->add_option("--workers", workers, "Worker threads (0 = all cores)");
  bench->add_option("--config", config);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_data(env, episodes, policy, checkpoints, seed, out, config);
    if (*train) return cmd_train(dataset, config, out, nv, epochs);
    if (*eval) return cmd_eval(dataset, checkpoints, method, adapt, out, train_path, config);
    if (*explore) return cmd_explore(env, policy, checkpoints, seeds, seed, out, config);
    if (*bench) return cmd_benchmark(out, quick, bench->count("--seeds") ? seeds : 0, workers, config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "opere/metrics.hpp"
#include "opere/nn.hpp"
#include "opere/observation.hpp"
#include "opere/reward.hpp"
#include "opere/sim.hpp"
#include "opere/trajectory.hpp"
#include "opere/world.hpp"

namespace opere {

enum class PolicyKind : std::uint8_t { Frontier, Value, Random };

inline std::string to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::Frontier: return "frontier";
    case PolicyKind::Value: return "value";
    case PolicyKind::Random: return "random";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(std::string_view name) {
  for (PolicyKind p : {PolicyKind::Frontier, PolicyKind::Value, PolicyKind::Random})
    if (to_string(p) == name) return p;
  throw std::invalid_argument("unknown policy '" + std::string(name) + "' (expected frontier, value or random)");
}

struct EpisodeConfig {
  int step_limit = 300;
  int replan_interval = 20;
  int k = 4;
  int oracle_horizon = 30;
  double w1 = 1.0;  // frontier cluster size weight
  double w2 = 1.0;  // path distance weight
};

inline void validate(const EpisodeConfig& c) {
  if (c.step_limit < 1) throw std::invalid_argument("EpisodeConfig: step_limit must be >= 1");
  if (c.replan_interval < 1) throw std::invalid_argument("EpisodeConfig: replan_interval must be >= 1");
  if (c.k < 1) throw std::invalid_argument("EpisodeConfig: k must be >= 1");
  if (c.oracle_horizon < 1) throw std::invalid_argument("EpisodeConfig: oracle_horizon must be >= 1");
}

enum class Provenance : std::uint8_t { FrontierHeuristic, ValueNet, Oracle };

struct Viewpoint {
  Cell cell;
  double score = 0.0;
  Provenance provenance = Provenance::FrontierHeuristic;
  int cluster_size = 0;
};

class NoFrontier : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnreachableCandidates : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Action label of a move from `from` towards `goal`: the goal direction
/// rounded to one of eight compass bins (Heading order), or kStayAction.
inline int action_bin(Cell from, Cell goal) {
  if (from == goal) return kStayAction;
  const double angle = std::atan2(-static_cast<double>(goal.row - from.row), static_cast<double>(goal.col - from.col));
  const int bin = static_cast<int>(std::lround(angle / (std::numbers::pi / 4.0)));
  return ((bin % 8) + 8) % 8;
}

/// 4-connected components of the frontier, largest first; equal sizes keep
/// row-major order of their first cell.
inline std::vector<std::vector<Cell>> frontier_clusters(const ExplorationState& s) {
  Grid<int> label(s.height(), s.width(), -1);
  std::vector<std::vector<Cell>> clusters;
  for (std::size_t i = 0; i < s.frontier.size(); ++i) {
    if (!s.frontier.data()[i] || label.data()[i] >= 0) continue;
    const int id = static_cast<int>(clusters.size());
    std::vector<Cell> cells;
    std::vector<Cell> stack{s.frontier.cell_at(i)};
    label.data()[i] = id;
    while (!stack.empty()) {
      const Cell c = stack.back();
      stack.pop_back();
      cells.push_back(c);
      for (Cell d : kFourNeighbors) {
        const Cell n = c + d;
        if (s.is_frontier(n) && label[n] < 0) {
          label[n] = id;
          stack.push_back(n);
        }
      }
    }
    std::sort(cells.begin(), cells.end());
    clusters.push_back(std::move(cells));
  }
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return clusters;
}

/// Up to k cluster representatives, largest clusters first. The
/// representative is the cluster cell closest to the cluster centroid
/// (row-major on ties), so it is itself a frontier cell.
inline std::vector<Viewpoint> sample_viewpoints(const ExplorationState& s, int k) {
  if (k < 1) throw std::invalid_argument("sample_viewpoints: k must be >= 1");
  if (s.frontier_count == 0) throw NoFrontier("sample_viewpoints: frontier is empty");
  const auto clusters = frontier_clusters(s);
  std::vector<Viewpoint> out;
  for (const auto& cluster : clusters) {
    if (static_cast<int>(out.size()) == k) break;
    double mr = 0.0;
    double mc = 0.0;
    for (Cell c : cluster) {
      mr += c.row;
      mc += c.col;
    }
    mr /= static_cast<double>(cluster.size());
    mc /= static_cast<double>(cluster.size());
    Cell best = cluster.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (Cell c : cluster) {
      const double d = (c.row - mr) * (c.row - mr) + (c.col - mc) * (c.col - mc);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out.push_back({best, 0.0, Provenance::FrontierHeuristic, static_cast<int>(cluster.size())});
  }
  return out;
}

namespace detail {

/// Index of the highest score; equal scores resolve to the row-major first
/// cell. Entries with NaN scores are skipped.
inline std::size_t argmax_row_major(const std::vector<Viewpoint>& vps) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < vps.size(); ++i) {
    if (std::isnan(vps[i].score)) continue;
    if (!best || vps[i].score > vps[*best].score ||
        (vps[i].score == vps[*best].score && vps[i].cell < vps[*best].cell))
      best = i;
  }
  if (!best) throw UnreachableCandidates("no reachable candidate viewpoint");
  return *best;
}

inline Grid<int> known_free_distances(const ExplorationState& s) {
  return bfs_distances(s.height(), s.width(), s.pose.cell, [&](Cell c) { return s.is_known_free(c); });
}

}  // namespace detail

/// Handcrafted score w1 * cluster size - w2 * path distance. Unreachable
/// candidates are skipped. Returns the index into `candidates`.
inline std::size_t frontier_policy_choose(const ExplorationState& s, std::vector<Viewpoint>& candidates,
                                          const EpisodeConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("frontier_policy_choose: no candidates");
  const Grid<int> dist = detail::known_free_distances(s);
  for (Viewpoint& v : candidates) {
    v.provenance = Provenance::FrontierHeuristic;
    const int d = dist.in_bounds(v.cell) ? dist[v.cell] : -1;
    v.score = d < 0 ? std::numeric_limits<double>::quiet_NaN() : cfg.w1 * v.cluster_size - cfg.w2 * d;
  }
  return detail::argmax_row_major(candidates);
}

/// Scores each candidate by the ensemble's value of the observation rendered
/// there.
inline std::size_t value_policy_choose(const ExplorationState& s, std::vector<Viewpoint>& candidates,
                                       const ValueEnsemble& ens, const ObservationEncoder& encoder,
                                       EnsembleCombine combine = EnsembleCombine::Min) {
  if (candidates.empty()) throw std::invalid_argument("value_policy_choose: no candidates");
  const Grid<int> dist = detail::known_free_distances(s);
  for (Viewpoint& v : candidates) {
    v.provenance = Provenance::ValueNet;
    if (!dist.in_bounds(v.cell) || dist[v.cell] < 0) {
      v.score = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    v.score = ensemble_predict(ens, encoder.render_hypothetical(s, v.cell), combine);
  }
  return detail::argmax_row_major(candidates);
}

/// Uniform choice among reachable candidates.
inline std::size_t random_policy_choose(const ExplorationState& s, const std::vector<Viewpoint>& candidates,
                                        std::mt19937_64& rng) {
  const Grid<int> dist = detail::known_free_distances(s);
  std::vector<std::size_t> reachable;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (dist.in_bounds(candidates[i].cell) && dist[candidates[i].cell] >= 0) reachable.push_back(i);
  if (reachable.empty()) throw UnreachableCandidates("random_policy_choose: no reachable candidate");
  std::uniform_int_distribution<std::size_t> pick(0, reachable.size() - 1);
  return reachable[pick(rng)];
}

/// Ground-truth lookahead: drives a copy of the state towards each candidate
/// for at most `horizon` steps (stopping on arrival) and scores the true
/// reward a*dC + b*dL + c*dO collected on the way.
inline std::size_t oracle_expert_choose(const WorldMap& world, const SensorModel& sensors, const ExplorationState& s,
                                        std::vector<Viewpoint>& candidates, int horizon, const RewardWeights& w,
                                        LidarGainMode mode = LidarGainMode::KnownCells) {
  if (candidates.empty()) throw std::invalid_argument("oracle_expert_choose: no candidates");
  const CoverageCounts before = s.counts(mode);
  for (Viewpoint& v : candidates) {
    v.provenance = Provenance::Oracle;
    if (!s.is_known_free(v.cell) || (v.cell != s.pose.cell && plan_path(s, v.cell).empty())) {
      v.score = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    ExplorationState sim = s;
    for (int i = 0; i < horizon && sim.pose.cell != v.cell; ++i) step(world, sensors, sim, MoveToViewpoint{v.cell});
    v.score = compute_reward(sim.counts(mode), before, w, mode == LidarGainMode::FrontierCells);
  }
  return detail::argmax_row_major(candidates);
}

struct EpisodeSetup {
  SensorConfig sensors;
  ObsConfig obs;
  RewardWeights weights;
  LidarGainMode lidar_gain = LidarGainMode::KnownCells;
  EpisodeConfig episode;
  EnsembleCombine combine = EnsembleCombine::Min;
  bool record_oracle = true;
};

struct EpisodeResult {
  Trajectory trajectory;
  RewardTrace trace;
  std::vector<DecisionPoint> decisions;
  CoverageCurve coverage;
  ExplorationState final_state;
  bool exhausted = false;  // ended because no frontier remained
};

/// Closed-loop episode: plan a viewpoint on arrival or every replan_interval
/// steps, move one cell along the shortest known-free path per step, scan,
/// and log (observation, action, reward). Decision points with >= 2
/// candidates are annotated with the oracle's choice when requested.
inline EpisodeResult run_episode(const WorldMap& world, PolicyKind policy, const EpisodeSetup& setup,
                                 std::uint64_t seed, const ValueEnsemble* ens = nullptr) {
  validate(setup.episode);
  if (policy == PolicyKind::Value && (ens == nullptr || ens->members.empty()))
    throw std::invalid_argument("run_episode: value policy needs a trained ensemble");
  const SensorModel sensors(setup.sensors);
  const ObservationEncoder encoder(setup.obs, setup.sensors);
  std::mt19937_64 rng(seed);

  EpisodeResult res;
  ExplorationState s = initial_state(world, sensors);
  res.trace = RewardTrace(setup.weights, setup.lidar_gain);
  res.trace.start(s.counts(setup.lidar_gain));
  res.trajectory.policy = to_string(policy);
  res.trajectory.seed = seed;
  res.coverage.policy = to_string(policy);
  res.coverage.free_cells = world.free_cell_count;
  res.coverage.camera.push_back(s.seen_count);
  res.coverage.lidar.push_back(s.known_free_count);

  std::optional<Cell> goal;
  int since_plan = 0;
  while (s.step < setup.episode.step_limit) {
    if (!goal || s.pose.cell == *goal || since_plan >= setup.episode.replan_interval) {
      if (s.frontier_count == 0) {
        res.exhausted = true;
        break;
      }
      std::vector<Viewpoint> candidates = sample_viewpoints(s, setup.episode.k);
      std::erase_if(candidates, [&](const Viewpoint& v) { return v.cell == s.pose.cell; });
      if (candidates.empty()) {
        res.exhausted = true;
        break;
      }
      std::size_t chosen = 0;
      switch (policy) {
        case PolicyKind::Frontier: chosen = frontier_policy_choose(s, candidates, setup.episode); break;
        case PolicyKind::Value: chosen = value_policy_choose(s, candidates, *ens, encoder, setup.combine); break;
        case PolicyKind::Random: chosen = random_policy_choose(s, candidates, rng); break;
      }
      if (candidates.size() >= 2) {
        DecisionPoint dp;
        dp.t = s.step;
        for (const Viewpoint& v : candidates) dp.candidates.emplace_back(v.cell.row, v.cell.col);
        dp.chosen = static_cast<int>(chosen);
        if (setup.record_oracle) {
          std::vector<Viewpoint> scratch = candidates;
          dp.oracle = static_cast<int>(oracle_expert_choose(world, sensors, s, scratch, setup.episode.oracle_horizon,
                                                            setup.weights, setup.lidar_gain));
        }
        res.decisions.push_back(std::move(dp));
      }
      goal = candidates[chosen].cell;
      since_plan = 0;
    }
    StepRecord rec;
    rec.t = s.step;
    rec.obs = encoder.encode(s);
    rec.action = action_bin(s.pose.cell, *goal);
    step(world, sensors, s, MoveToViewpoint{*goal});
    rec.reward = res.trace.push(s.counts(setup.lidar_gain));
    res.trajectory.steps.push_back(std::move(rec));
    res.coverage.camera.push_back(s.seen_count);
    res.coverage.lidar.push_back(s.known_free_count);
    ++since_plan;
  }
  res.trajectory.truncated = !res.exhausted;
  res.final_state = std::move(s);
  return res;
}

}  // namespace opere

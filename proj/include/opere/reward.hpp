#pragma once

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opere/sim.hpp"
#include "opere/world.hpp"

namespace opere {

/// Weights of the coverage reward R = a*CG + b*LG + c*OG, gains taken over
/// `dt` simulator steps.
struct RewardWeights {
  double a = 1.0;
  double b = 0.5;
  double c = 10.0;
  int dt = 1;
};

inline void validate(const RewardWeights& w) {
  if (!(w.a >= 0.0 && w.b >= 0.0 && w.c >= 0.0)) throw std::invalid_argument("RewardWeights: weights must be >= 0");
  if (w.dt < 1) throw std::invalid_argument("RewardWeights: dt must be >= 1");
}

class NegativeGainError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Weighted coverage gain between two counter snapshots. A decreasing counter
/// means the simulator broke monotonicity, so it throws. `allow_lidar_loss`
/// relaxes the check for the frontier-count variant of L, which can shrink.
inline double compute_reward(const CoverageCounts& now, const CoverageCounts& prev, const RewardWeights& w,
                             bool allow_lidar_loss = false) {
  if (now.camera < prev.camera || now.objects < prev.objects || (!allow_lidar_loss && now.lidar < prev.lidar))
    throw NegativeGainError("compute_reward: coverage counter decreased");
  return w.a * static_cast<double>(now.camera - prev.camera) + w.b * static_cast<double>(now.lidar - prev.lidar) +
         w.c * static_cast<double>(now.objects - prev.objects);
}

/// Discounted returns by backward recursion G_t = r_t + gamma * G_{t+1}, where
/// r_t is the reward of the transition out of s_t.
inline std::vector<double> compute_returns(const std::vector<double>& rewards, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("compute_returns: gamma must lie in [0, 1]");
  if (rewards.empty()) throw std::invalid_argument("compute_returns: empty reward sequence");
  std::vector<double> returns(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    returns[i] = acc;
  }
  return returns;
}

/// Fraction of the world's free cells the camera has observed.
inline double exploration_fraction(const ExplorationState& s, const WorldMap& world) {
  if (world.free_cell_count <= 0) throw std::invalid_argument("exploration_fraction: world has no free cells");
  return static_cast<double>(s.seen_count) / static_cast<double>(world.free_cell_count);
}

struct RewardRecord {
  int t = 0;
  CoverageCounts counts;
  CoverageCounts gain;
  double reward = 0.0;
};

/// Per-step reward bookkeeping. Record t holds the counters after step t and
/// the reward of the transition into it; record 0 is the post-initial-scan
/// snapshot with zero reward.
class RewardTrace {
 public:
  RewardTrace() = default;
  RewardTrace(RewardWeights w, LidarGainMode mode) : weights_(w), mode_(mode) { validate(weights_); }

  void start(const CoverageCounts& initial) {
    records_.clear();
    records_.push_back({0, initial, {}, 0.0});
  }

  /// Appends the counters after the next step and returns that step's reward.
  double push(const CoverageCounts& now) {
    if (records_.empty()) throw std::logic_error("RewardTrace::push before start");
    const std::size_t back = records_.size() >= static_cast<std::size_t>(weights_.dt)
                                 ? records_.size() - static_cast<std::size_t>(weights_.dt)
                                 : 0;
    const CoverageCounts& prev = records_[back].counts;
    const double r = compute_reward(now, prev, weights_, mode_ == LidarGainMode::FrontierCells);
    records_.push_back({static_cast<int>(records_.size()), now,
                        {now.camera - prev.camera, now.lidar - prev.lidar, now.objects - prev.objects}, r});
    return r;
  }

  const std::vector<RewardRecord>& records() const { return records_; }
  const RewardWeights& weights() const { return weights_; }

  /// Rewards of the logged transitions (records 1..T).
  std::vector<double> rewards() const {
    std::vector<double> out;
    for (std::size_t i = 1; i < records_.size(); ++i) out.push_back(records_[i].reward);
    return out;
  }

  void write_csv(std::ostream& os) const {
    os << "t,C,L,O,CG,LG,OG,R\n";
    for (const auto& r : records_) {
      os << r.t << ',' << r.counts.camera << ',' << r.counts.lidar << ',' << r.counts.objects << ','
         << r.gain.camera << ',' << r.gain.lidar << ',' << r.gain.objects << ',' << r.reward << '\n';
    }
  }

 private:
  RewardWeights weights_;
  LidarGainMode mode_ = LidarGainMode::KnownCells;
  std::vector<RewardRecord> records_;
};

}  // namespace opere

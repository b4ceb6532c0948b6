#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opere/observation.hpp"

namespace opere {

/// Discrete action vocabulary shared by the behaviour-cloning baselines: the
/// direction of the active goal quantised to eight compass bins, plus "stay".
inline constexpr int kNumActionBins = 9;
inline constexpr int kStayAction = 8;

struct StepRecord {
  int t = 0;
  Observation obs;
  int action = kStayAction;
  double reward = 0.0;

  bool operator==(const StepRecord&) const = default;
};

/// One logged episode {o_0, a_0, r_0, ..., o_{T-1}, a_{T-1}, r_{T-1}}.
struct Trajectory {
  int episode = 0;
  std::string env;
  std::string policy;
  std::uint64_t seed = 0;
  bool truncated = false;
  std::vector<StepRecord> steps;

  std::vector<double> rewards() const {
    std::vector<double> r;
    r.reserve(steps.size());
    for (const auto& s : steps) r.push_back(s.reward);
    return r;
  }

  bool operator==(const Trajectory&) const = default;
};

}  // namespace opere

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opere/nn.hpp"
#include "opere/reward.hpp"
#include "opere/trajectory.hpp"

namespace opere {

struct TrainConfig {
  int epochs = 50;
  double eta = 1e-4;
  double adapt_eta = 1e-4;
  double gamma = 1.0;
  int n_v = 2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  EnsembleCombine combine = EnsembleCombine::Min;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw std::invalid_argument("TrainConfig: gamma must lie in [0, 1]");
  if (cfg.n_v < 1) throw std::invalid_argument("TrainConfig: n_v must be >= 1");
  if (!(cfg.eta > 0.0) || !(cfg.adapt_eta > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
}

class EmptyDataset : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-epoch mean squared error (before each update) for every member.
struct TrainLog {
  std::vector<std::vector<double>> member_loss;  // [member][epoch]

  std::vector<double> mean_loss() const {
    std::vector<double> out;
    if (member_loss.empty()) return out;
    out.assign(member_loss.front().size(), 0.0);
    for (const auto& m : member_loss)
      for (std::size_t e = 0; e < m.size(); ++e) out[e] += m[e] / static_cast<double>(member_loss.size());
    return out;
  }

  void write_csv(std::ostream& os) const {
    os << "epoch";
    for (std::size_t i = 0; i < member_loss.size(); ++i) os << ",member" << i;
    os << ",mean\n";
    const auto mean = mean_loss();
    for (std::size_t e = 0; e < mean.size(); ++e) {
      os << e;
      for (const auto& m : member_loss) os << ',' << m[e];
      os << ',' << mean[e] << '\n';
    }
  }
};

/// A regression sample: observation and its target value, with an optional
/// importance weight on the squared error.
struct RegressionSample {
  const Observation* obs = nullptr;
  double target = 0.0;
  double weight = 1.0;
};

/// Semi-gradient regression of every member onto the sample targets, in the
/// given order, once per epoch. Errors are measured in output-scale units, so
/// the step is theta += eta * w * (target - V) / s^2 * dV/dtheta, which is the
/// literal Monte-Carlo rule when s = 1.
inline TrainLog fit_targets(ValueEnsemble& ens, const std::vector<RegressionSample>& samples, const TrainConfig& cfg) {
  validate(cfg);
  if (samples.empty()) throw EmptyDataset("fit_targets: no samples");
  TrainLog log;
  for (ValueNet& net : ens.members) {
    OptimizerState opt = OptimizerState::for_net(net, cfg.optimizer, cfg.eta);
    std::vector<double> grad(net.num_params());
    std::vector<double> losses;
    const double s2 = net.output_scale() * net.output_scale();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      double sq = 0.0;
      double wsum = 0.0;
      for (const RegressionSample& sample : samples) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double v = net.forward_backward(*sample.obs, grad);
        const double err = sample.target - v;
        sq += sample.weight * err * err;
        wsum += sample.weight;
        sgd_like_update(net, opt, grad, sample.weight * err / s2);
      }
      const double loss = wsum > 0.0 ? sq / wsum : 0.0;
      if (!std::isfinite(loss)) throw NonFiniteUpdate("fit_targets: non-finite loss at epoch " + std::to_string(epoch));
      losses.push_back(loss);
    }
    log.member_loss.push_back(std::move(losses));
  }
  return log;
}

/// Offline Monte-Carlo pre-training: every member regresses onto the returns
/// G_t of each trajectory, trajectory by trajectory, step by step.
inline TrainLog mc_pretrain(ValueEnsemble& ens, const std::vector<Trajectory>& data, const TrainConfig& cfg) {
  if (data.empty()) throw EmptyDataset("mc_pretrain: empty dataset");
  std::vector<RegressionSample> samples;
  for (const Trajectory& traj : data) {
    if (traj.steps.size() < 2) throw std::invalid_argument("mc_pretrain: trajectories need at least 2 steps");
    const auto returns = compute_returns(traj.rewards(), cfg.gamma);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) samples.push_back({&traj.steps[t].obs, returns[t], 1.0});
  }
  return fit_targets(ens, samples, cfg);
}

/// Weights plus optimiser state used during online adaptation. Built by
/// copying the pre-trained ensemble, so the original is never touched.
struct OnlineEnsemble {
  ValueEnsemble weights;
  std::vector<OptimizerState> optim;

  static OnlineEnsemble from_pretrained(const ValueEnsemble& pretrained, const TrainConfig& cfg) {
    OnlineEnsemble o{pretrained, {}};
    for (const ValueNet& net : o.weights.members)
      o.optim.push_back(OptimizerState::for_net(net, cfg.optimizer, cfg.adapt_eta));
    return o;
  }
};

/// One semi-gradient TD(0) step on every member:
/// delta_i = r + gamma * V_i(o_{t+1}) - V_i(o_t), with no gradient through the
/// bootstrap term and V(o_{t+1}) = 0 when `next` is absent (terminal).
/// Returns the combined (minimum by default) prediction at o_t after the update.
inline double td_adapt_step(OnlineEnsemble& online, const Observation& obs, double reward, const Observation* next,
                            const TrainConfig& cfg) {
  for (std::size_t i = 0; i < online.weights.members.size(); ++i) {
    ValueNet& net = online.weights.members[i];
    const double bootstrap = next ? net.forward(*next) : 0.0;
    std::vector<double> grad(net.num_params(), 0.0);
    const double v = net.forward_backward(obs, grad);
    const double delta = reward + cfg.gamma * bootstrap - v;
    const double s = net.output_scale();
    sgd_like_update(net, online.optim[i], grad, delta / (s * s));
  }
  return ensemble_predict(online.weights, obs, cfg.combine);
}

struct EvalRow {
  int t = 0;
  double v_hat = 0.0;
  double v_true = 0.0;
  double reward = 0.0;
};

/// Predicted against true values along one trajectory.
struct EvalRun {
  std::string method;
  std::string policy;
  std::string env;
  int episode = 0;
  std::vector<EvalRow> rows;

  std::vector<double> v_hat() const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.v_hat);
    return out;
  }
  std::vector<double> v_true() const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.v_true);
    return out;
  }

  void write_csv(std::ostream& os) const {
    os << "t,v_hat,v_true,reward\n";
    for (const auto& r : rows)
      os << r.t << ',' << format_double(r.v_hat) << ',' << format_double(r.v_true) << ',' << format_double(r.reward)
         << '\n';
  }
};

/// Replays a complete trajectory. With `adapt`, a copy of the pre-trained
/// weights is updated online by TD(0) and the post-update prediction is
/// recorded at every step; otherwise the frozen ensemble predicts. True values
/// always come from the logged rewards.
inline EvalRun evaluate_offline(const ValueEnsemble& pretrained, const Trajectory& traj, const TrainConfig& cfg,
                                bool adapt) {
  if (traj.steps.empty()) throw std::invalid_argument("evaluate_offline: empty trajectory");
  const auto returns = compute_returns(traj.rewards(), cfg.gamma);
  EvalRun run;
  run.method = adapt ? "ours" : "ours-no-td";
  run.policy = traj.policy;
  run.env = traj.env;
  run.episode = traj.episode;
  std::optional<OnlineEnsemble> online;
  if (adapt) online = OnlineEnsemble::from_pretrained(pretrained, cfg);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const StepRecord& step = traj.steps[t];
    double v = 0.0;
    if (adapt) {
      const Observation* next = t + 1 < traj.steps.size() ? &traj.steps[t + 1].obs : nullptr;
      v = td_adapt_step(*online, step.obs, step.reward, next, cfg);
    } else {
      v = ensemble_predict(pretrained, step.obs, cfg.combine);
    }
    run.rows.push_back({step.t, v, returns[t], step.reward});
  }
  return run;
}

}  // namespace opere

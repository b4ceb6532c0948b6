#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "opere/nn.hpp"
#include "opere/reward.hpp"
#include "opere/training.hpp"
#include "opere/trajectory.hpp"

namespace opere {

struct OpeConfig {
  double rho_max = 10.0;
  int bc_epochs = 10;
  double bc_lr = 1e-3;
  int fqe_epochs = 50;
  double fqe_lr = 1e-4;
  int fqe_sync = 50;
  int dice_epochs = 50;
  double dice_lr = 1e-4;
  double dice_reg = 1.0;
  double divergence = 1e6;
  std::uint64_t seed = 0;
};

inline void validate(const OpeConfig& c) {
  if (!(c.rho_max >= 1.0)) throw std::invalid_argument("OpeConfig: rho_max must be >= 1");
  if (c.bc_epochs < 1 || c.fqe_epochs < 1 || c.dice_epochs < 1)
    throw std::invalid_argument("OpeConfig: epoch counts must be >= 1");
  if (!(c.bc_lr > 0.0) || !(c.fqe_lr > 0.0) || !(c.dice_lr > 0.0))
    throw std::invalid_argument("OpeConfig: learning rates must be > 0");
  if (c.fqe_sync < 1) throw std::invalid_argument("OpeConfig: fqe_sync must be >= 1");
  if (!(c.dice_reg > 0.0)) throw std::invalid_argument("OpeConfig: dice_reg must be > 0");
}

class Diverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A logged transition. `next` is null at episode end; `first` is the
/// initial observation of the transition's episode.
struct Transition {
  const Observation* obs = nullptr;
  int action = 0;
  double reward = 0.0;
  const Observation* next = nullptr;
  const Observation* first = nullptr;
};

inline std::vector<Transition> transitions_of(const std::vector<Trajectory>& data) {
  std::vector<Transition> out;
  for (const Trajectory& traj : data) {
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const Observation* next = t + 1 < traj.steps.size() ? &traj.steps[t + 1].obs : nullptr;
      out.push_back({&traj.steps[t].obs, traj.steps[t].action, traj.steps[t].reward, next, &traj.steps.front().obs});
    }
  }
  return out;
}

using PolicyProbs = std::function<std::vector<double>(const Observation&)>;

namespace detail {

inline std::vector<double> one_hot(int n, int a) {
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  v[static_cast<std::size_t>(a)] = 1.0;
  return v;
}

inline void check_action(int a, int n) {
  if (a < 0 || a >= n) throw std::invalid_argument("action " + std::to_string(a) + " outside the vocabulary");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Behaviour cloning

/// Softmax classifier over a discrete action vocabulary: logit_a is the
/// network output with the action one-hot as the extra input.
struct BcPolicy {
  ValueNet net;
  bool degenerate = false;  // training labels held a single class

  int num_actions() const { return net.extra_in(); }

  std::vector<double> probs(const Observation& obs) const {
    std::vector<double> logits = net.per_action(NetInput(obs.map_raster, obs.cam_raster));
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - top);
      z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
  }
};

/// Cross-entropy training with Adam, samples visited in dataset order.
inline BcPolicy fit_behavior_cloning(const std::vector<Trajectory>& data, NetArch arch, const OpeConfig& cfg,
                                     std::uint64_t seed) {
  if (data.empty()) throw EmptyDataset("fit_behavior_cloning: empty dataset");
  if (arch.extra_in < 2) throw std::invalid_argument("fit_behavior_cloning: need at least 2 actions");
  BcPolicy pol{ValueNet(arch), false};
  pol.net.initialize(seed);
  const int n = arch.extra_in;
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const Trajectory& traj : data)
    for (const StepRecord& s : traj.steps) {
      detail::check_action(s.action, n);
      seen[static_cast<std::size_t>(s.action)] = 1;
    }
  pol.degenerate = std::count(seen.begin(), seen.end(), 1) < 2;
  OptimizerState opt = OptimizerState::for_net(pol.net, OptimizerKind::Adam, cfg.bc_lr);
  std::vector<double> grad(pol.net.num_params());
  for (int epoch = 0; epoch < cfg.bc_epochs; ++epoch) {
    for (const Trajectory& traj : data) {
      for (const StepRecord& s : traj.steps) {
        std::vector<double> w = pol.probs(s.obs);
        w[static_cast<std::size_t>(s.action)] -= 1.0;  // d(cross-entropy)/d(logit)
        std::fill(grad.begin(), grad.end(), 0.0);
        pol.net.expected_backward(s.obs, w, grad);
        sgd_like_update(pol.net, opt, grad, -1.0);
      }
    }
  }
  return pol;
}

// ---------------------------------------------------------------------------
// Importance sampling

/// Per-decision importance-weighted returns
/// G_t = sum_k gamma^(k-t) * clip(prod_{j=t..k} rho_j) * r_k, with the
/// cumulative ratio clipped to [1/rho_max, rho_max].
inline std::vector<double> per_decision_is_returns(const std::vector<double>& rewards,
                                                   const std::vector<double>& ratios, double gamma, double rho_max) {
  if (rewards.size() != ratios.size()) throw std::invalid_argument("per_decision_is_returns: length mismatch");
  if (rewards.empty()) throw std::invalid_argument("per_decision_is_returns: empty sequence");
  if (!(rho_max >= 1.0)) throw std::invalid_argument("per_decision_is_returns: rho_max must be >= 1");
  const double lo = std::log(1.0 / rho_max);
  const double hi = std::log(rho_max);
  std::vector<double> out(rewards.size(), 0.0);
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    double log_w = 0.0;
    double disc = 1.0;
    double acc = 0.0;
    for (std::size_t k = t; k < rewards.size(); ++k) {
      if (!(ratios[k] > 0.0)) throw std::invalid_argument("per_decision_is_returns: ratios must be positive");
      log_w += std::log(ratios[k]);
      acc += disc * std::exp(std::clamp(log_w, lo, hi)) * rewards[k];
      disc *= gamma;
    }
    out[t] = acc;
  }
  return out;
}

struct IsResult {
  BcPolicy behavior;
  BcPolicy target;
  ValueEnsemble value;
  TrainLog log;
};

/// IS baseline: behaviour-cloned pi_B and pi, importance-weighted returns on
/// the behaviour data, and a value network regressed onto those returns so
/// the estimate can be queried at any observation.
inline IsResult is_estimate(const std::vector<Trajectory>& behavior, const std::vector<Trajectory>& target,
                            const NetArch& value_arch, double output_scale, const TrainConfig& train,
                            const OpeConfig& cfg) {
  validate(cfg);
  if (behavior.empty() || target.empty()) throw EmptyDataset("is_estimate: empty dataset");
  NetArch bc_arch = value_arch;
  bc_arch.extra_in = kNumActionBins;
  IsResult res{fit_behavior_cloning(behavior, bc_arch, cfg, cfg.seed * 31 + 1),
               fit_behavior_cloning(target, bc_arch, cfg, cfg.seed * 31 + 1), {}, {}};
  std::vector<std::vector<double>> targets;
  for (const Trajectory& traj : behavior) {
    std::vector<double> ratios;
    for (const StepRecord& s : traj.steps) {
      const auto a = static_cast<std::size_t>(s.action);
      const double pb = res.behavior.probs(s.obs)[a];
      const double pt = res.target.probs(s.obs)[a];
      ratios.push_back(std::max(pt, 1e-12) / std::max(pb, 1e-12));
    }
    targets.push_back(per_decision_is_returns(traj.rewards(), ratios, train.gamma, cfg.rho_max));
  }
  std::vector<RegressionSample> samples;
  for (std::size_t i = 0; i < behavior.size(); ++i)
    for (std::size_t t = 0; t < behavior[i].steps.size(); ++t)
      samples.push_back({&behavior[i].steps[t].obs, targets[i][t], 1.0});
  NetArch v_arch = value_arch;
  v_arch.extra_in = 0;
  res.value = ValueEnsemble::create(v_arch, 1, cfg.seed * 31 + 2, output_scale);
  res.log = fit_targets(res.value, samples, train);
  return res;
}

// ---------------------------------------------------------------------------
// Fitted Q evaluation

struct FqeResult {
  ValueNet q;
  std::vector<double> epoch_loss;
};

/// Q-function over (observation, action one-hot) regressed towards
/// r + gamma * sum_a' pi(a'|s') Q_target(s', a'), with the target copy synced
/// every `fqe_sync` updates and a zero bootstrap at episode end. Optional
/// per-transition `weights` scale each squared error.
inline FqeResult fqe_train(const std::vector<Transition>& data, const PolicyProbs& pi, const NetArch& q_arch,
                           double output_scale, double gamma, const OpeConfig& cfg,
                           const std::vector<double>* weights = nullptr) {
  validate(cfg);
  if (data.empty()) throw EmptyDataset("fqe_train: no transitions");
  if (q_arch.extra_in < 1) throw std::invalid_argument("fqe_train: Q-network needs an action input");
  if (weights && weights->size() != data.size()) throw std::invalid_argument("fqe_train: weight count mismatch");
  const int n = q_arch.extra_in;
  std::vector<std::vector<double>> next_pi(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::check_action(data[i].action, n);
    if (data[i].next) {
      next_pi[i] = pi(*data[i].next);
      if (static_cast<int>(next_pi[i].size()) != n) throw ShapeMismatch("fqe_train: policy returns wrong size");
    }
  }
  FqeResult res{ValueNet(q_arch, output_scale), {}};
  res.q.initialize(cfg.seed * 31 + 3);
  ValueNet target = res.q;
  OptimizerState opt = OptimizerState::for_net(res.q, OptimizerKind::Adam, cfg.fqe_lr);
  std::vector<double> grad(res.q.num_params());
  const double s2 = output_scale * output_scale;
  long long updates = 0;
  for (int epoch = 0; epoch < cfg.fqe_epochs; ++epoch) {
    double sq = 0.0;
    double wsum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Transition& tr = data[i];
      const double w = weights ? (*weights)[i] : 1.0;
      const double boot = tr.next ? target.expected(*tr.next, next_pi[i]) : 0.0;
      const double y = tr.reward + gamma * boot;
      std::fill(grad.begin(), grad.end(), 0.0);
      const double q = res.q.forward_backward(NetInput(*tr.obs, detail::one_hot(n, tr.action)), grad);
      const double err = y - q;
      sq += w * err * err;
      wsum += w;
      if (!std::isfinite(err) || err * err > cfg.divergence)
        throw Diverged("fqe_train: Bellman error " + std::to_string(err) + " exceeded the divergence limit at epoch " +
                       std::to_string(epoch));
      sgd_like_update(res.q, opt, grad, w * err / s2);
      if (++updates % cfg.fqe_sync == 0) target = res.q;
    }
    const double loss = wsum > 0.0 ? sq / wsum : 0.0;
    if (loss > cfg.divergence) throw Diverged("fqe_train: loss " + std::to_string(loss) + " diverged");
    res.epoch_loss.push_back(loss);
  }
  return res;
}

/// V(s) = sum_a pi(a|s) Q(s, a).
inline double fqe_value(const ValueNet& q, const Observation& obs, const std::vector<double>& pi_probs) {
  return q.expected(obs, pi_probs);
}

// ---------------------------------------------------------------------------
// DICE

struct DiceResult {
  ValueNet nu;
  ValueNet zeta;  // zeta(s, a) = softplus(net(s, a))
  double lambda = 0.0;
  double estimate = 0.0;  // sum zeta * r / sum zeta over the data
  std::vector<double> ratios;  // zeta per transition
  bool converged = true;
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Regularised Lagrangian for the stationary distribution ratio
///   L = (1-gamma) E0[nu(s0, pi)] + E_D[zeta * (gamma * nu(s', pi) - nu(s, a))]
///       - (reg/2) E_D[zeta^2] + lambda * (1 - E_D[zeta])
/// minimised over (nu, lambda) and maximised over zeta by alternating
/// stochastic steps. Episode ends restart at the episode's first observation,
/// which keeps the chain recurrent so gamma = 1 is usable.
inline DiceResult dice_train(const std::vector<Transition>& data, const PolicyProbs& pi, const NetArch& arch,
                             double gamma, const OpeConfig& cfg) {
  validate(cfg);
  if (data.empty()) throw EmptyDataset("dice_train: no transitions");
  if (arch.extra_in < 1) throw std::invalid_argument("dice_train: networks need an action input");
  const int n = arch.extra_in;
  std::vector<std::vector<double>> next_pi(data.size());
  std::vector<std::vector<double>> first_pi(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::check_action(data[i].action, n);
    next_pi[i] = pi(data[i].next ? *data[i].next : *data[i].first);
    first_pi[i] = pi(*data[i].first);
  }
  DiceResult res{ValueNet(arch), ValueNet(arch), 0.0, 0.0, {}, true};
  res.nu.initialize(cfg.seed * 31 + 4);
  res.zeta.initialize(cfg.seed * 31 + 5);
  // softplus(0.5413) = 1: start the ratios near one.
  res.zeta.params().back() = 0.5413248546129181;
  OptimizerState nu_opt = OptimizerState::for_net(res.nu, OptimizerKind::Adam, cfg.dice_lr);
  OptimizerState zeta_opt = OptimizerState::for_net(res.zeta, OptimizerKind::Adam, cfg.dice_lr);
  OptimizerState lambda_opt;
  lambda_opt.lr = cfg.dice_lr;
  double lambda_m = 0.0;
  double lambda_v = 0.0;
  std::vector<double> g_nu(res.nu.num_params());
  std::vector<double> g_zeta(res.zeta.num_params());
  std::mt19937_64 rng(cfg.seed * 31 + 6);
  std::uniform_int_distribution<std::size_t> pick_first(0, data.size() - 1);
  const double alpha = cfg.dice_reg;
  double last_gap = 0.0;
  // Descent-ascent orbits the saddle rather than settling on it; the
  // reported zeta is the average of the iterates over the second half.
  const int average_from = cfg.dice_epochs / 2;
  std::vector<double> zeta_avg(res.zeta.num_params(), 0.0);
  double lambda_avg = 0.0;
  long long averaged = 0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.dice_epochs; ++epoch) {
    double gap = 0.0;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const Transition& tr = data[i];
      const Observation& next = tr.next ? *tr.next : *tr.first;
      const std::size_t j = pick_first(rng);
      const auto sa = detail::one_hot(n, tr.action);
      const double z_raw = res.zeta.forward(NetInput(*tr.obs, sa));
      const double z = softplus(z_raw);

      // nu: gradient of L
      std::fill(g_nu.begin(), g_nu.end(), 0.0);
      if (gamma < 1.0) res.nu.expected_backward(*data[j].first, first_pi[j], g_nu, 1.0 - gamma);
      const double nu_next = res.nu.expected_backward(next, next_pi[i], g_nu, z * gamma);
      const double nu_sa = res.nu.forward_backward(NetInput(*tr.obs, sa), g_nu, -z);
      sgd_like_update(res.nu, nu_opt, g_nu, -1.0);

      // zeta: ascend L
      const double dl_dz = gamma * nu_next - nu_sa - alpha * z - res.lambda;
      std::fill(g_zeta.begin(), g_zeta.end(), 0.0);
      res.zeta.forward_backward(NetInput(*tr.obs, sa), g_zeta, dl_dz * sigmoid(z_raw));
      sgd_like_update(res.zeta, zeta_opt, g_zeta, 1.0);

      // lambda: descend L (dL/dlambda = 1 - zeta), Adam on the scalar
      const double g = 1.0 - z;
      ++lambda_opt.steps;
      lambda_m = lambda_opt.beta1 * lambda_m + (1.0 - lambda_opt.beta1) * g;
      lambda_v = lambda_opt.beta2 * lambda_v + (1.0 - lambda_opt.beta2) * g * g;
      const double mh = lambda_m / (1.0 - std::pow(lambda_opt.beta1, static_cast<double>(lambda_opt.steps)));
      const double vh = lambda_v / (1.0 - std::pow(lambda_opt.beta2, static_cast<double>(lambda_opt.steps)));
      res.lambda -= lambda_opt.lr * mh / (std::sqrt(vh) + lambda_opt.epsilon);
      gap += g;
      if (!std::isfinite(nu_next) || !std::isfinite(nu_sa) || std::abs(nu_sa) > cfg.divergence)
        throw Diverged("dice_train: nu diverged at epoch " + std::to_string(epoch));
      if (epoch >= average_from) {
        ++averaged;
        const double w = 1.0 / static_cast<double>(averaged);
        for (std::size_t k = 0; k < zeta_avg.size(); ++k) zeta_avg[k] += w * (res.zeta.params()[k] - zeta_avg[k]);
        lambda_avg += w * (res.lambda - lambda_avg);
      }
    }
    last_gap = gap / static_cast<double>(data.size());
  }
  res.zeta.params() = zeta_avg;
  res.lambda = lambda_avg;
  res.converged = std::abs(last_gap) < 0.1;
  double num = 0.0;
  double den = 0.0;
  for (const Transition& tr : data) {
    const double z = softplus(res.zeta.forward(NetInput(*tr.obs, detail::one_hot(n, tr.action))));
    res.ratios.push_back(z);
    num += z * tr.reward;
    den += z;
  }
  res.estimate = den > 0.0 ? num / den : 0.0;
  return res;
}

}  // namespace opere

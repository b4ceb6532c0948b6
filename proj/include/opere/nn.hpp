#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opere/numfmt.hpp"
#include "opere/observation.hpp"

namespace opere {

/// Layer widths of the value network. Each encoder maps its raster through
/// tanh layers (no layers = raw pass-through); the head consumes the
/// concatenated encoder features plus `extra_in` extra inputs (an action
/// one-hot for Q-functions) and ends in one linear unit.
struct NetArch {
  int map_in = 2048;
  std::vector<int> map_layers{64, 32};
  int cam_in = 32;
  std::vector<int> cam_layers{16};
  int extra_in = 0;
  std::vector<int> head_layers{32};

  bool operator==(const NetArch&) const = default;
};

/// Architecture sized for an observation configuration with default widths.
inline NetArch default_arch(const ObsConfig& obs, int extra_in = 0) {
  NetArch a;
  a.map_in = 2 * obs.crop * obs.crop;
  a.cam_in = obs.cam_rays;
  a.extra_in = extra_in;
  return a;
}

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteUpdate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw network inputs. Observations convert implicitly.
struct NetInput {
  std::span<const double> map;
  std::span<const double> cam;
  std::span<const double> extra;

  NetInput() = default;
  NetInput(std::span<const double> m, std::span<const double> c, std::span<const double> e = {})
      : map(m), cam(c), extra(e) {}
  NetInput(const Observation& obs, std::span<const double> e = {})  // NOLINT(google-explicit-constructor)
      : map(obs.map_raster), cam(obs.cam_raster), extra(e) {}
};

/// MLP value approximator V(phi(s); theta) with a fixed, non-trainable output
/// scale: V = output_scale * net(x). Parameters live in one flat vector so
/// gradients and optimiser moments share its layout.
class ValueNet {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t w = 0;  // input-major weights: w + i * out + j
    std::size_t b = 0;
    bool tanh = true;
  };

  ValueNet() = default;
  explicit ValueNet(NetArch arch, double output_scale = 1.0) : arch_(std::move(arch)), output_scale_(output_scale) {
    auto check = [](int v, const char* what) {
      if (v < 0) throw std::invalid_argument(std::string("NetArch: negative ") + what);
    };
    check(arch_.map_in, "map_in");
    check(arch_.cam_in, "cam_in");
    check(arch_.extra_in, "extra_in");
    std::size_t offset = 0;
    auto add = [&](std::vector<Layer>& layers, int in, const std::vector<int>& widths, bool last_linear) {
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (widths[k] < 1) throw std::invalid_argument("NetArch: layer widths must be >= 1");
        Layer l{in, widths[k], offset, offset + static_cast<std::size_t>(in) * widths[k], true};
        if (last_linear && k + 1 == widths.size()) l.tanh = false;
        offset = l.b + static_cast<std::size_t>(l.out);
        layers.push_back(l);
        in = widths[k];
      }
      return in;
    };
    map_feat_ = add(map_, arch_.map_in, arch_.map_layers, false);
    cam_feat_ = add(cam_, arch_.cam_in, arch_.cam_layers, false);
    std::vector<int> head = arch_.head_layers;
    head.push_back(1);
    add(head_, map_feat_ + cam_feat_ + arch_.extra_in, head, true);
    params_.assign(offset, 0.0);
  }

  const NetArch& arch() const { return arch_; }
  std::size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  double output_scale() const { return output_scale_; }
  void set_output_scale(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("ValueNet: output scale must be positive");
    output_scale_ = s;
  }
  int extra_in() const { return arch_.extra_in; }

  /// Symmetric uniform fan-in initialisation, biases zero.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const auto* layers : {&map_, &cam_, &head_}) {
      for (const Layer& l : *layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, l.in)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < static_cast<std::size_t>(l.in) * l.out; ++i) params_[l.w + i] = dist(rng);
        std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(l.b), l.out, 0.0);
      }
    }
  }

  double forward(const NetInput& x) const {
    Pass p = run_encoders(x);
    return output_scale_ * run_head(p, x.extra).value;
  }

  /// V(x) and, accumulated into `grad`, upstream * dV/dtheta.
  double forward_backward(const NetInput& x, std::span<double> grad, double upstream = 1.0) const {
    check_grad(grad);
    Pass p = run_encoders(x);
    HeadPass h = run_head(p, x.extra);
    std::vector<double> dfeat(p.features.size(), 0.0);
    backward_head(h, upstream * output_scale_, grad, dfeat);
    backward_encoders(p, x, dfeat, grad);
    return output_scale_ * h.value;
  }

  /// V(x, onehot(a)) for every action a; the encoders run once.
  std::vector<double> per_action(const NetInput& x) const {
    Pass p = run_encoders(x);
    std::vector<double> out(static_cast<std::size_t>(arch_.extra_in));
    std::vector<double> onehot(out.size(), 0.0);
    for (std::size_t a = 0; a < out.size(); ++a) {
      onehot.assign(onehot.size(), 0.0);
      onehot[a] = 1.0;
      out[a] = output_scale_ * run_head(p, onehot).value;
    }
    return out;
  }

  /// Sum over actions a of weights[a] * V(x, onehot(a)); the encoders run once.
  double expected(const NetInput& x, std::span<const double> weights) const {
    Pass p = run_encoders(x);
    double total = 0.0;
    std::vector<double> onehot(static_cast<std::size_t>(arch_.extra_in), 0.0);
    for (std::size_t a = 0; a < weights.size(); ++a) {
      if (weights[a] == 0.0) continue;
      onehot.assign(onehot.size(), 0.0);
      onehot[a] = 1.0;
      total += weights[a] * run_head(p, onehot).value;
    }
    return output_scale_ * total;
  }

  double expected_backward(const NetInput& x, std::span<const double> weights, std::span<double> grad,
                           double upstream = 1.0) const {
    check_grad(grad);
    Pass p = run_encoders(x);
    std::vector<double> dfeat(p.features.size(), 0.0);
    std::vector<double> onehot(static_cast<std::size_t>(arch_.extra_in), 0.0);
    double total = 0.0;
    for (std::size_t a = 0; a < weights.size(); ++a) {
      if (weights[a] == 0.0) continue;
      onehot.assign(onehot.size(), 0.0);
      onehot[a] = 1.0;
      HeadPass h = run_head(p, onehot);
      total += weights[a] * h.value;
      backward_head(h, upstream * output_scale_ * weights[a], grad, dfeat);
    }
    backward_encoders(p, x, dfeat, grad);
    return output_scale_ * total;
  }

  bool operator==(const ValueNet& o) const {
    return arch_ == o.arch_ && output_scale_ == o.output_scale_ && params_ == o.params_;
  }

 private:
  struct Pass {
    std::vector<std::vector<double>> map_acts;
    std::vector<std::vector<double>> cam_acts;
    std::vector<double> features;  // map features, cam features
  };
  struct HeadPass {
    std::vector<double> input;
    std::vector<std::vector<double>> acts;
    double value = 0.0;
  };

  void check_grad(std::span<double> grad) const {
    if (grad.size() != params_.size()) throw ShapeMismatch("ValueNet: gradient buffer has wrong size");
  }

  void dense(const Layer& l, std::span<const double> in, std::vector<double>& out) const {
    out.assign(params_.begin() + static_cast<std::ptrdiff_t>(l.b),
               params_.begin() + static_cast<std::ptrdiff_t>(l.b) + l.out);
    const double* w = params_.data() + l.w;
    double* y = out.data();
    for (int i = 0; i < l.in; ++i) {
      const double xi = in[static_cast<std::size_t>(i)];
      if (xi == 0.0) continue;
      const double* row = w + static_cast<std::size_t>(i) * l.out;
      for (int j = 0; j < l.out; ++j) y[j] += xi * row[j];
    }
    if (l.tanh)
      for (double& v : out) v = std::tanh(v);
  }

  // Backpropagates `delta` (dL/d pre-activation) through one layer; writes
  // dL/d input into `din` when non-null.
  void dense_backward(const Layer& l, std::span<const double> in, std::span<const double> delta,
                      std::span<double> grad, std::vector<double>* din) const {
    double* gw = grad.data() + l.w;
    double* gb = grad.data() + l.b;
    for (int j = 0; j < l.out; ++j) gb[j] += delta[static_cast<std::size_t>(j)];
    for (int i = 0; i < l.in; ++i) {
      const double xi = in[static_cast<std::size_t>(i)];
      if (xi == 0.0) continue;
      double* row = gw + static_cast<std::size_t>(i) * l.out;
      for (int j = 0; j < l.out; ++j) row[j] += xi * delta[static_cast<std::size_t>(j)];
    }
    if (din) {
      din->assign(static_cast<std::size_t>(l.in), 0.0);
      const double* w = params_.data() + l.w;
      for (int i = 0; i < l.in; ++i) {
        const double* row = w + static_cast<std::size_t>(i) * l.out;
        double s = 0.0;
        for (int j = 0; j < l.out; ++j) s += row[j] * delta[static_cast<std::size_t>(j)];
        (*din)[static_cast<std::size_t>(i)] = s;
      }
    }
  }

  static std::span<const double> layer_input(std::span<const double> raw, const std::vector<std::vector<double>>& acts,
                                             std::size_t k) {
    return k == 0 ? raw : std::span<const double>(acts[k - 1]);
  }

  Pass run_encoders(const NetInput& x) const {
    if (x.map.size() != static_cast<std::size_t>(arch_.map_in) || x.cam.size() != static_cast<std::size_t>(arch_.cam_in))
      throw ShapeMismatch("ValueNet: observation size " + std::to_string(x.map.size()) + "+" +
                          std::to_string(x.cam.size()) + " does not match architecture " +
                          std::to_string(arch_.map_in) + "+" + std::to_string(arch_.cam_in));
    Pass p;
    auto run = [&](const std::vector<Layer>& layers, std::span<const double> raw, std::vector<std::vector<double>>& acts) {
      acts.resize(layers.size());
      for (std::size_t k = 0; k < layers.size(); ++k) dense(layers[k], layer_input(raw, acts, k), acts[k]);
      const auto out = layers.empty() ? raw : std::span<const double>(acts.back());
      p.features.insert(p.features.end(), out.begin(), out.end());
    };
    run(map_, x.map, p.map_acts);
    run(cam_, x.cam, p.cam_acts);
    return p;
  }

  HeadPass run_head(const Pass& p, std::span<const double> extra) const {
    if (extra.size() != static_cast<std::size_t>(arch_.extra_in))
      throw ShapeMismatch("ValueNet: extra input has wrong size");
    HeadPass h;
    h.input = p.features;
    h.input.insert(h.input.end(), extra.begin(), extra.end());
    h.acts.resize(head_.size());
    for (std::size_t k = 0; k < head_.size(); ++k) dense(head_[k], layer_input(h.input, h.acts, k), h.acts[k]);
    h.value = h.acts.back()[0];
    return h;
  }

  void backward_head(const HeadPass& h, double upstream, std::span<double> grad, std::vector<double>& dfeat) const {
    std::vector<double> delta{upstream};
    std::vector<double> din;
    for (std::size_t k = head_.size(); k-- > 0;) {
      const Layer& l = head_[k];
      if (l.tanh)
        for (std::size_t j = 0; j < delta.size(); ++j) delta[j] *= 1.0 - h.acts[k][j] * h.acts[k][j];
      dense_backward(l, layer_input(h.input, h.acts, k), delta, grad, &din);
      delta.swap(din);
    }
    for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += delta[i];
  }

  void backward_encoders(const Pass& p, const NetInput& x, std::span<const double> dfeat, std::span<double> grad) const {
    auto run = [&](const std::vector<Layer>& layers, std::span<const double> raw,
                   const std::vector<std::vector<double>>& acts, std::span<const double> dout) {
      if (layers.empty()) return;
      std::vector<double> delta(dout.begin(), dout.end());
      std::vector<double> din;
      for (std::size_t k = layers.size(); k-- > 0;) {
        const Layer& l = layers[k];
        if (l.tanh)
          for (std::size_t j = 0; j < delta.size(); ++j) delta[j] *= 1.0 - acts[k][j] * acts[k][j];
        dense_backward(l, layer_input(raw, acts, k), delta, grad, k > 0 ? &din : nullptr);
        if (k > 0) delta.swap(din);
      }
    };
    run(map_, x.map, p.map_acts, dfeat.subspan(0, static_cast<std::size_t>(map_feat_)));
    run(cam_, x.cam, p.cam_acts, dfeat.subspan(static_cast<std::size_t>(map_feat_), static_cast<std::size_t>(cam_feat_)));
  }

  NetArch arch_;
  double output_scale_ = 1.0;
  std::vector<Layer> map_;
  std::vector<Layer> cam_;
  std::vector<Layer> head_;
  int map_feat_ = 0;
  int cam_feat_ = 0;
  std::vector<double> params_;
};

/// dV/dtheta at x.
inline std::vector<double> backward(const ValueNet& net, const NetInput& x) {
  std::vector<double> grad(net.num_params(), 0.0);
  net.forward_backward(x, grad);
  return grad;
}

enum class OptimizerKind : std::uint8_t { Adam, Sgd };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long steps = 0;
  std::vector<double> m;
  std::vector<double> v;

  static OptimizerState for_net(const ValueNet& net, OptimizerKind kind, double lr) {
    OptimizerState s;
    s.kind = kind;
    s.lr = lr;
    if (kind == OptimizerKind::Adam) {
      s.m.assign(net.num_params(), 0.0);
      s.v.assign(net.num_params(), 0.0);
    }
    return s;
  }
};

/// Moves theta along scale * grad: plain SGD applies theta += lr * scale * grad;
/// Adam treats -scale * grad as the loss gradient. With grad = dV/dtheta and
/// scale = (target - V) this is the semi-gradient regression step.
inline void sgd_like_update(ValueNet& net, OptimizerState& opt, std::span<const double> grad, double scale) {
  auto& theta = net.params();
  if (grad.size() != theta.size()) throw ShapeMismatch("sgd_like_update: gradient shape differs from parameters");
  if (!std::isfinite(scale)) throw NonFiniteUpdate("sgd_like_update: non-finite error signal");
  if (opt.kind == OptimizerKind::Sgd) {
    const double step = opt.lr * scale;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += step * grad[i];
  } else {
    if (opt.m.size() != theta.size() || opt.v.size() != theta.size())
      throw ShapeMismatch("sgd_like_update: optimiser moments shaped unlike parameters");
    ++opt.steps;
    const double b1 = opt.beta1;
    const double b2 = opt.beta2;
    const double c1 = 1.0 / (1.0 - std::pow(b1, static_cast<double>(opt.steps)));
    const double c2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(opt.steps)));
    double* __restrict m = opt.m.data();
    double* __restrict v = opt.v.data();
    double* __restrict p = theta.data();
    const double* __restrict g_in = grad.data();
    const double lr = opt.lr;
    const double eps = opt.epsilon;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = -scale * g_in[i];
      // Moments of long-idle inputs decay towards subnormals; flush them.
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      m[i] = std::abs(mi) < 1e-150 ? 0.0 : mi;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
  double poison = 0.0;
  for (double p : theta) poison += p * 0.0;
  if (poison != 0.0 || std::isnan(poison)) throw NonFiniteUpdate("sgd_like_update: parameters became non-finite");
}

enum class EnsembleCombine : std::uint8_t { Min, Mean };

/// N_V independently initialised value networks sharing one architecture.
struct ValueEnsemble {
  std::vector<ValueNet> members;

  static ValueEnsemble create(const NetArch& arch, int n_v, std::uint64_t seed, double output_scale = 1.0) {
    if (n_v < 1) throw std::invalid_argument("ValueEnsemble: N_V must be >= 1");
    ValueEnsemble e;
    for (int i = 0; i < n_v; ++i) {
      ValueNet net(arch, output_scale);
      net.initialize(seed * 1000003ULL + static_cast<std::uint64_t>(i) * 7919ULL + 17ULL);
      e.members.push_back(std::move(net));
    }
    return e;
  }

  std::size_t size() const { return members.size(); }
  bool operator==(const ValueEnsemble&) const = default;
};

/// Combines member predictions; the minimum counters overestimation.
inline double ensemble_predict(const ValueEnsemble& ens, const NetInput& x,
                               EnsembleCombine combine = EnsembleCombine::Min) {
  if (ens.members.empty()) throw std::invalid_argument("ensemble_predict: empty ensemble");
  double best = ens.members.front().forward(x);
  double sum = best;
  for (std::size_t i = 1; i < ens.members.size(); ++i) {
    const double v = ens.members[i].forward(x);
    best = std::min(best, v);
    sum += v;
  }
  return combine == EnsembleCombine::Min ? best : sum / static_cast<double>(ens.members.size());
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned text format with shape headers and one
// shortest-round-trip decimal per parameter, so save/load is bit-exact.

inline constexpr const char* kCheckpointMagic = "opere-valuenet";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ValueNet& net) {
  const NetArch& a = net.arch();
  auto widths = [&](const char* name, const std::vector<int>& w) {
    os << name << ' ' << w.size();
    for (int x : w) os << ' ' << x;
    os << '\n';
  };
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "map_in " << a.map_in << '\n';
  widths("map_layers", a.map_layers);
  os << "cam_in " << a.cam_in << '\n';
  widths("cam_layers", a.cam_layers);
  os << "extra_in " << a.extra_in << '\n';
  widths("head_layers", a.head_layers);
  os << "output_scale " << format_double(net.output_scale()) << '\n';
  os << "params " << net.num_params() << '\n';
  for (double p : net.params()) os << format_double(p) << '\n';
}

inline ValueNet read_checkpoint(std::istream& is) {
  auto expect = [&](const std::string& key) {
    std::string got;
    if (!(is >> got) || got != key) throw std::runtime_error("read_checkpoint: expected '" + key + "', got '" + got + "'");
  };
  auto read_int = [&]() {
    long long v = 0;
    if (!(is >> v)) throw std::runtime_error("read_checkpoint: truncated header");
    return static_cast<int>(v);
  };
  auto read_widths = [&]() {
    std::vector<int> w(static_cast<std::size_t>(read_int()));
    for (int& x : w) x = read_int();
    return w;
  };
  expect(kCheckpointMagic);
  if (const int version = read_int(); version != kCheckpointVersion)
    throw std::runtime_error("read_checkpoint: unsupported version " + std::to_string(version));
  NetArch a;
  expect("map_in");
  a.map_in = read_int();
  expect("map_layers");
  a.map_layers = read_widths();
  expect("cam_in");
  a.cam_in = read_int();
  expect("cam_layers");
  a.cam_layers = read_widths();
  expect("extra_in");
  a.extra_in = read_int();
  expect("head_layers");
  a.head_layers = read_widths();
  expect("output_scale");
  std::string token;
  is >> token;
  ValueNet net(a, parse_double(token));
  expect("params");
  std::size_t n = 0;
  is >> n;
  if (n != net.num_params()) throw std::runtime_error("read_checkpoint: parameter count does not match architecture");
  for (double& p : net.params()) {
    if (!(is >> token)) throw std::runtime_error("read_checkpoint: truncated parameter block");
    p = parse_double(token);
  }
  return net;
}

inline void save_checkpoint(const std::string& path, const ValueNet& net) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  write_checkpoint(os, net);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ValueNet load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace opere

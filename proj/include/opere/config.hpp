#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "opere/nn.hpp"
#include "opere/observation.hpp"
#include "opere/ope.hpp"
#include "opere/policies.hpp"
#include "opere/reward.hpp"
#include "opere/sim.hpp"
#include "opere/training.hpp"
#include "opere/world.hpp"

namespace opere {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every tunable of the pipeline. Written and read as flat
/// `section.key = value` lines with `#` comments.
struct LabConfig {
  EnvSpec env;
  SensorConfig sensor;
  ObsConfig obs;
  RewardWeights reward;
  LidarGainMode lidar_gain = LidarGainMode::KnownCells;
  std::vector<int> map_layers{64, 32};
  std::vector<int> cam_layers{16};
  std::vector<int> head_layers{32};
  TrainConfig train;
  double value_scale = 0.0;  // 0 = auto: mean |G_0| of the training data
  OpeConfig ope;
  EpisodeConfig episode;
  int episodes = 12;
  double split_fraction = 0.8;

  NetArch arch(int extra_in = 0) const {
    NetArch a = default_arch(obs, extra_in);
    a.map_layers = map_layers;
    a.cam_layers = cam_layers;
    a.head_layers = head_layers;
    return a;
  }

  EpisodeSetup episode_setup(bool record_oracle = true) const {
    return {sensor, obs, reward, lidar_gain, episode, train.combine, record_oracle};
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + v + "' for " + key);
  return out;
}

inline std::string join_ints(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

inline std::vector<int> parse_ints(const std::string& v, const std::string& key) {
  std::vector<int> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<int>(trim(item), key));
  return out;
}

struct ConfigEntry {
  std::string key;
  std::function<std::string(const LabConfig&)> get;
  std::function<void(LabConfig&, const std::string&)> set;
};

inline std::vector<ConfigEntry> config_entries() {
  std::vector<ConfigEntry> e;
  auto num = [&](std::string key, auto getter) {
    using Ref = decltype(getter(std::declval<LabConfig&>()));
    using T = std::remove_reference_t<Ref>;
    e.push_back({key,
                 [getter](const LabConfig& c) {
                   auto& v = getter(const_cast<LabConfig&>(c));
                   if constexpr (std::is_floating_point_v<T>) return format_double(v);
                   else return std::to_string(v);
                 },
                 [getter, key](LabConfig& c, const std::string& v) { getter(c) = parse_number<T>(v, key); }});
  };
  auto choice = [&](std::string key, auto getter, std::vector<std::string> names) {
    using T = std::remove_reference_t<decltype(getter(std::declval<LabConfig&>()))>;
    e.push_back({key,
                 [getter, names](const LabConfig& c) {
                   return names.at(static_cast<std::size_t>(getter(const_cast<LabConfig&>(c))));
                 },
                 [getter, names, key](LabConfig& c, const std::string& v) {
                   for (std::size_t i = 0; i < names.size(); ++i)
                     if (names[i] == v) {
                       getter(c) = static_cast<T>(i);
                       return;
                     }
                   throw ConfigError("config: bad value '" + v + "' for " + key);
                 }});
  };
  auto ints = [&](std::string key, auto getter) {
    e.push_back({key, [getter](const LabConfig& c) { return join_ints(getter(const_cast<LabConfig&>(c))); },
                 [getter, key](LabConfig& c, const std::string& v) { getter(c) = parse_ints(v, key); }});
  };

  choice("env.kind", [](LabConfig& c) -> EnvKind& { return c.env.kind; }, {"corridor", "room", "mine", "cave"});
  num("env.width", [](LabConfig& c) -> int& { return c.env.width; });
  num("env.height", [](LabConfig& c) -> int& { return c.env.height; });
  num("env.object_count", [](LabConfig& c) -> int& { return c.env.object_count; });
  num("sensor.lidar_range", [](LabConfig& c) -> int& { return c.sensor.lidar_range; });
  num("sensor.camera_range", [](LabConfig& c) -> int& { return c.sensor.camera_range; });
  num("sensor.camera_fov_deg", [](LabConfig& c) -> double& { return c.sensor.camera_fov_deg; });
  num("sensor.rays_per_scan", [](LabConfig& c) -> int& { return c.sensor.rays_per_scan; });
  num("obs.crop", [](LabConfig& c) -> int& { return c.obs.crop; });
  num("obs.cam_rays", [](LabConfig& c) -> int& { return c.obs.cam_rays; });
  num("reward.a", [](LabConfig& c) -> double& { return c.reward.a; });
  num("reward.b", [](LabConfig& c) -> double& { return c.reward.b; });
  num("reward.c", [](LabConfig& c) -> double& { return c.reward.c; });
  num("reward.dt", [](LabConfig& c) -> int& { return c.reward.dt; });
  choice("reward.lidar_gain", [](LabConfig& c) -> LidarGainMode& { return c.lidar_gain; },
         {"known_cells", "frontier_cells"});
  ints("net.map_layers", [](LabConfig& c) -> std::vector<int>& { return c.map_layers; });
  ints("net.cam_layers", [](LabConfig& c) -> std::vector<int>& { return c.cam_layers; });
  ints("net.head_layers", [](LabConfig& c) -> std::vector<int>& { return c.head_layers; });
  num("train.epochs", [](LabConfig& c) -> int& { return c.train.epochs; });
  num("train.eta", [](LabConfig& c) -> double& { return c.train.eta; });
  num("train.adapt_eta", [](LabConfig& c) -> double& { return c.train.adapt_eta; });
  num("train.gamma", [](LabConfig& c) -> double& { return c.train.gamma; });
  num("train.n_v", [](LabConfig& c) -> int& { return c.train.n_v; });
  choice("train.optimizer", [](LabConfig& c) -> OptimizerKind& { return c.train.optimizer; }, {"adam", "sgd"});
  choice("train.combine", [](LabConfig& c) -> EnsembleCombine& { return c.train.combine; }, {"min", "mean"});
  num("train.seed", [](LabConfig& c) -> std::uint64_t& { return c.train.seed; });
  num("train.value_scale", [](LabConfig& c) -> double& { return c.value_scale; });
  num("ope.rho_max", [](LabConfig& c) -> double& { return c.ope.rho_max; });
  num("ope.bc_epochs", [](LabConfig& c) -> int& { return c.ope.bc_epochs; });
  num("ope.bc_lr", [](LabConfig& c) -> double& { return c.ope.bc_lr; });
  num("ope.fqe_epochs", [](LabConfig& c) -> int& { return c.ope.fqe_epochs; });
  num("ope.fqe_lr", [](LabConfig& c) -> double& { return c.ope.fqe_lr; });
  num("ope.fqe_sync", [](LabConfig& c) -> int& { return c.ope.fqe_sync; });
  num("ope.dice_epochs", [](LabConfig& c) -> int& { return c.ope.dice_epochs; });
  num("ope.dice_lr", [](LabConfig& c) -> double& { return c.ope.dice_lr; });
  num("ope.dice_reg", [](LabConfig& c) -> double& { return c.ope.dice_reg; });
  num("ope.divergence", [](LabConfig& c) -> double& { return c.ope.divergence; });
  num("ope.seed", [](LabConfig& c) -> std::uint64_t& { return c.ope.seed; });
  num("episode.step_limit", [](LabConfig& c) -> int& { return c.episode.step_limit; });
  num("episode.replan_interval", [](LabConfig& c) -> int& { return c.episode.replan_interval; });
  num("episode.k", [](LabConfig& c) -> int& { return c.episode.k; });
  num("episode.oracle_horizon", [](LabConfig& c) -> int& { return c.episode.oracle_horizon; });
  num("episode.w1", [](LabConfig& c) -> double& { return c.episode.w1; });
  num("episode.w2", [](LabConfig& c) -> double& { return c.episode.w2; });
  num("data.episodes", [](LabConfig& c) -> int& { return c.episodes; });
  num("data.split_fraction", [](LabConfig& c) -> double& { return c.split_fraction; });
  return e;
}

}  // namespace detail

inline void validate(const LabConfig& c) {
  validate(c.env);
  validate(c.sensor);
  validate(c.reward);
  validate(c.train);
  validate(c.ope);
  validate(c.episode);
  if (c.obs.crop < 1 || c.obs.cam_rays < 1) throw ConfigError("config: obs sizes must be >= 1");
  if (c.episodes < 1) throw ConfigError("config: data.episodes must be >= 1");
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) throw ConfigError("config: split_fraction outside (0, 1)");
  if (c.value_scale < 0.0) throw ConfigError("config: train.value_scale must be >= 0");
}

/// Serialises every key. `sections` restricts output to keys whose section
/// is listed (used for hashing the data-generating subset).
inline std::string write_config(const LabConfig& c, const std::vector<std::string>& sections = {}) {
  std::string out;
  for (const auto& entry : detail::config_entries()) {
    const std::string section = entry.key.substr(0, entry.key.find('.'));
    if (!sections.empty() && std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
    out += entry.key + " = " + entry.get(c) + "\n";
  }
  return out;
}

inline LabConfig parse_config(std::string_view text, LabConfig base = {}) {
  const auto entries = detail::config_entries();
  std::istringstream in{std::string(text)};
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.key == key; });
    if (it == entries.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->set(base, value);
    } catch (const ConfigError& err) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + err.what());
    }
  }
  validate(base);
  return base;
}

inline LabConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Hash of the settings that determine generated data.
inline std::string data_config_hash(const LabConfig& c) {
  return fnv1a_hex(write_config(c, {"env", "sensor", "obs", "reward", "episode"}));
}

}  // namespace opere

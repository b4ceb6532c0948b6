#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opere/config.hpp"
#include "opere/trajectory.hpp"
#include "opere/world.hpp"

namespace opere {

inline constexpr int kDatasetSchemaVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpisodeInfo {
  int episode = 0;
  std::string env;
  std::string policy;
  std::uint64_t seed = 0;
  bool truncated = false;
  int steps = 0;

  bool operator==(const EpisodeInfo&) const = default;
};

/// Settings the data was generated with, plus a hash of them for drift checks.
struct DatasetManifest {
  int schema_version = kDatasetSchemaVersion;
  std::string config_hash;
  std::string config;  // data-generating config subset, key = value text
  int crop = 0;
  int cam_rays = 0;
  std::vector<EpisodeInfo> episodes;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Trajectory> trajectories;

  bool operator==(const Dataset&) const = default;
};

/// Empty dataset stamped with the data-generating part of `cfg`.
inline Dataset make_dataset(const LabConfig& cfg) {
  Dataset d;
  d.manifest.config_hash = data_config_hash(cfg);
  d.manifest.config = write_config(cfg, {"env", "sensor", "obs", "reward", "episode"});
  d.manifest.crop = cfg.obs.crop;
  d.manifest.cam_rays = cfg.obs.cam_rays;
  return d;
}

inline void add_trajectory(Dataset& d, Trajectory traj) {
  d.manifest.episodes.push_back(
      {traj.episode, traj.env, traj.policy, traj.seed, traj.truncated, static_cast<int>(traj.steps.size())});
  d.trajectories.push_back(std::move(traj));
}

/// Throws when the dataset was generated with different settings.
inline void verify_manifest(const Dataset& d, const LabConfig& cfg) {
  if (d.manifest.config_hash != data_config_hash(cfg))
    throw DatasetError("dataset manifest hash " + d.manifest.config_hash +
                       " does not match the configuration (" + data_config_hash(cfg) + ")");
}

// Zero runs inside rasters are written as one negative integer -n.
inline nlohmann::json rle_encode(const std::vector<double>& v) {
  nlohmann::json out = nlohmann::json::array();
  std::int64_t zeros = 0;
  for (double x : v) {
    if (x == 0.0) {
      ++zeros;
      continue;
    }
    if (zeros) out.push_back(-zeros);
    zeros = 0;
    out.push_back(x);
  }
  if (zeros) out.push_back(-zeros);
  return out;
}

inline std::vector<double> rle_decode(const nlohmann::json& j) {
  if (!j.is_array()) throw DatasetError("raster is not an array");
  std::vector<double> out;
  for (const auto& x : j) {
    if (x.is_number_integer()) {
      const auto n = x.get<std::int64_t>();
      if (n < 0) {
        out.insert(out.end(), static_cast<std::size_t>(-n), 0.0);
        continue;
      }
    }
    if (!x.is_number()) throw DatasetError("raster entry is not a number");
    out.push_back(x.get<double>());
  }
  return out;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  j["config_hash"] = m.config_hash;
  j["config"] = m.config;
  j["crop"] = m.crop;
  j["cam_rays"] = m.cam_rays;
  j["episodes"] = nlohmann::json::array();
  for (const EpisodeInfo& e : m.episodes)
    j["episodes"].push_back({{"episode", e.episode},
                             {"env", e.env},
                             {"policy", e.policy},
                             {"seed", e.seed},
                             {"truncated", e.truncated},
                             {"steps", e.steps}});
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kDatasetSchemaVersion)
    throw DatasetError("dataset schema version " + std::to_string(m.schema_version) + " is not supported (expected " +
                       std::to_string(kDatasetSchemaVersion) + ")");
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config = j.at("config").get<std::string>();
  m.crop = j.at("crop").get<int>();
  m.cam_rays = j.at("cam_rays").get<int>();
  for (const auto& e : j.at("episodes"))
    m.episodes.push_back({e.at("episode").get<int>(), e.at("env").get<std::string>(),
                          e.at("policy").get<std::string>(), e.at("seed").get<std::uint64_t>(),
                          e.at("truncated").get<bool>(), e.at("steps").get<int>()});
  return m;
}

/// Writes `manifest.json`, `episodes.jsonl` (one step per line) and, when
/// given, `worlds/<episode>.txt` grid exports into `dir`.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir,
                         const std::vector<std::pair<int, WorldMap>>& worlds = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DatasetError("cannot write " + (dir / "manifest.json").string());
    out << manifest_to_json(d.manifest).dump(2) << '\n';
  }
  std::ofstream out(dir / "episodes.jsonl", std::ios::binary);
  if (!out) throw DatasetError("cannot write " + (dir / "episodes.jsonl").string());
  for (const Trajectory& traj : d.trajectories) {
    for (const StepRecord& s : traj.steps) {
      nlohmann::json j;
      j["episode"] = traj.episode;
      j["t"] = s.t;
      j["map_raster"] = rle_encode(s.obs.map_raster);
      j["cam_raster"] = s.obs.cam_raster;
      j["action"] = s.action;
      j["reward"] = s.reward;
      out << j.dump() << '\n';
    }
  }
  out.close();
  if (!out) throw DatasetError("failed writing episodes.jsonl");
  if (!worlds.empty()) {
    std::filesystem::create_directories(dir / "worlds");
    for (const auto& [id, world] : worlds) {
      std::ofstream w(dir / "worlds" / (std::to_string(id) + ".txt"), std::ios::binary);
      w << export_world_text(world);
    }
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw DatasetError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("manifest.json: " + std::string(e.what()));
    }
    try {
      d.manifest = manifest_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("manifest.json: " + std::string(e.what()));
    }
  }
  const std::size_t map_size = static_cast<std::size_t>(2 * d.manifest.crop * d.manifest.crop);
  const std::size_t cam_size = static_cast<std::size_t>(d.manifest.cam_rays);
  for (const EpisodeInfo& e : d.manifest.episodes) {
    Trajectory t;
    t.episode = e.episode;
    t.env = e.env;
    t.policy = e.policy;
    t.seed = e.seed;
    t.truncated = e.truncated;
    d.trajectories.push_back(std::move(t));
  }

  std::ifstream in(dir / "episodes.jsonl", std::ios::binary);
  if (!in) throw DatasetError("cannot read " + (dir / "episodes.jsonl").string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (!text.empty() && text.back() != '\n') {
    const auto lines = std::count(text.begin(), text.end(), '\n') + 1;
    throw DatasetError("episodes.jsonl line " + std::to_string(lines) + ": truncated record (missing newline)");
  }
  std::size_t traj_index = 0;
  std::istringstream lines(text);
  int lineno = 0;
  for (std::string line; std::getline(lines, line);) {
    ++lineno;
    const std::string where = "episodes.jsonl line " + std::to_string(lineno) + ": ";
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      const int episode = j.at("episode").get<int>();
      while (traj_index < d.trajectories.size() &&
             (d.trajectories[traj_index].episode != episode ||
              d.trajectories[traj_index].steps.size() >= static_cast<std::size_t>(d.manifest.episodes[traj_index].steps)))
        ++traj_index;
      if (traj_index == d.trajectories.size()) throw DatasetError("episode " + std::to_string(episode) + " not in manifest");
      Trajectory& traj = d.trajectories[traj_index];
      StepRecord s;
      s.t = j.at("t").get<int>();
      if (s.t != static_cast<int>(traj.steps.size())) throw DatasetError("non-dense time index");
      s.obs.crop = d.manifest.crop;
      s.obs.step = s.t;
      s.obs.map_raster = rle_decode(j.at("map_raster"));
      s.obs.cam_raster = j.at("cam_raster").get<std::vector<double>>();
      if (s.obs.map_raster.size() != map_size || s.obs.cam_raster.size() != cam_size)
        throw DatasetError("raster size does not match the manifest");
      s.action = j.at("action").get<int>();
      s.reward = j.at("reward").get<double>();
      if (!std::isfinite(s.reward)) throw DatasetError("non-finite reward");
      traj.steps.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(where + e.what());
    } catch (const DatasetError& e) {
      throw DatasetError(where + e.what());
    }
  }
  for (std::size_t i = 0; i < d.trajectories.size(); ++i)
    if (d.trajectories[i].steps.size() != static_cast<std::size_t>(d.manifest.episodes[i].steps))
      throw DatasetError("episodes.jsonl: truncated file, episode " + std::to_string(d.manifest.episodes[i].episode) +
                         " has " + std::to_string(d.trajectories[i].steps.size()) + " of " +
                         std::to_string(d.manifest.episodes[i].steps) + " steps");
  return d;
}

/// Trajectory-level split; `fraction` of the trajectories (rounded, at least
/// one on each side) go to the first dataset. Original order is kept.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split_dataset: fraction must lie in (0, 1)");
  const std::size_t n = d.trajectories.size();
  if (n < 2) throw std::invalid_argument("split_dataset: need at least 2 trajectories");
  std::size_t n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto build = [&](const std::vector<std::size_t>& which) {
    Dataset out;
    out.manifest = d.manifest;
    out.manifest.episodes.clear();
    for (std::size_t i : which) {
      out.manifest.episodes.push_back(d.manifest.episodes[i]);
      out.trajectories.push_back(d.trajectories[i]);
    }
    return out;
  };
  return {build(a), build(b)};
}

}  // namespace opere

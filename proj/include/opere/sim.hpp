#pragma once

#include <algorithm>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "opere/grid.hpp"
#include "opere/raycast.hpp"
#include "opere/world.hpp"

namespace opere {

struct SensorConfig {
  int lidar_range = 8;
  int camera_range = 5;
  double camera_fov_deg = 90.0;
  int rays_per_scan = 360;
};

inline void validate(const SensorConfig& cfg) {
  if (cfg.lidar_range < 1) throw std::invalid_argument("SensorConfig: lidar_range must be >= 1");
  if (cfg.camera_range < 1 || cfg.camera_range > cfg.lidar_range)
    throw std::invalid_argument("SensorConfig: camera_range must lie in [1, lidar_range]");
  if (!(cfg.camera_fov_deg > 0.0) || cfg.camera_fov_deg > 360.0)
    throw std::invalid_argument("SensorConfig: camera_fov_deg must lie in (0, 360]");
  if (cfg.rays_per_scan < 8) throw std::invalid_argument("SensorConfig: rays_per_scan must be >= 8");
}

/// Precomputed ray fans for a sensor configuration. The camera reuses the
/// LiDAR rays truncated to camera range, so every cell the camera can see
/// lies on a LiDAR ray from the same pose.
class SensorModel {
 public:
  explicit SensorModel(SensorConfig cfg = {}) : cfg_(cfg) {
    validate(cfg_);
    fan_ = make_ray_fan(cfg_.rays_per_scan, cfg_.lidar_range);
    const double half_fov = cfg_.camera_fov_deg * std::numbers::pi / 360.0;
    for (int h = 0; h < kNumHeadings; ++h) {
      const double heading = heading_angle(static_cast<Heading>(h));
      for (std::size_t i = 0; i < fan_.size(); ++i) {
        if (angle_between(fan_[i].angle, heading) <= half_fov + 1e-9) camera_rays_[h].push_back(i);
      }
    }
  }

  const SensorConfig& config() const { return cfg_; }
  const std::vector<Ray>& fan() const { return fan_; }
  const std::vector<std::size_t>& camera_rays(Heading h) const { return camera_rays_[static_cast<std::size_t>(h)]; }

 private:
  SensorConfig cfg_;
  std::vector<Ray> fan_;
  std::array<std::vector<std::size_t>, kNumHeadings> camera_rays_;
};

enum class Knowledge : std::uint8_t { Unknown, KnownFree, KnownWall };

struct RobotPose {
  Cell cell;
  Heading heading = Heading::East;

  bool operator==(const RobotPose&) const = default;
};

/// The three counters the reward is built from: camera-seen cells C,
/// LiDAR-known cells L and detected objects O.
struct CoverageCounts {
  long long camera = 0;
  long long lidar = 0;
  long long objects = 0;

  bool operator==(const CoverageCounts&) const = default;
};

/// Which quantity the LiDAR counter tracks.
enum class LidarGainMode : std::uint8_t { KnownCells, FrontierCells };

/// Robot belief: LiDAR occupancy knowledge, frontier, camera coverage and
/// detected objects. Owned by one episode at a time.
struct ExplorationState {
  RobotPose pose;
  Grid<Knowledge> lidar_map;
  Grid<std::uint8_t> frontier;
  Grid<std::uint8_t> camera_map;
  std::vector<Cell> detected_objects;  // sorted
  int step = 0;
  int known_count = 0;
  int known_free_count = 0;
  int frontier_count = 0;
  int seen_count = 0;

  int height() const { return lidar_map.height(); }
  int width() const { return lidar_map.width(); }

  bool is_known_free(Cell c) const { return lidar_map.in_bounds(c) && lidar_map[c] == Knowledge::KnownFree; }
  bool is_unknown(Cell c) const { return lidar_map.in_bounds(c) && lidar_map[c] == Knowledge::Unknown; }
  bool is_frontier(Cell c) const { return frontier.in_bounds(c) && frontier[c] != 0; }
  bool is_seen(Cell c) const { return camera_map.in_bounds(c) && camera_map[c] != 0; }

  std::vector<Cell> frontier_cells() const {
    std::vector<Cell> out;
    out.reserve(static_cast<std::size_t>(frontier_count));
    for (std::size_t i = 0; i < frontier.size(); ++i)
      if (frontier.data()[i]) out.push_back(frontier.cell_at(i));
    return out;
  }

  CoverageCounts counts(LidarGainMode mode = LidarGainMode::KnownCells) const {
    return {seen_count, mode == LidarGainMode::KnownCells ? known_count : frontier_count,
            static_cast<long long>(detected_objects.size())};
  }

  bool operator==(const ExplorationState&) const = default;
};

class InvalidAction : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct PrimitiveStep {
  Heading direction = Heading::East;
};

struct MoveToViewpoint {
  Cell target;
};

using Action = std::variant<MoveToViewpoint, PrimitiveStep>;

/// True when a frontier check on `c` from scratch holds: known free with an
/// unknown 4-neighbour.
inline bool frontier_rule(const ExplorationState& s, Cell c) {
  if (!s.is_known_free(c)) return false;
  for (Cell d : kFourNeighbors)
    if (s.is_unknown(c + d)) return true;
  return false;
}

/// State before any sensing: everything unknown, robot at `pose`.
inline ExplorationState blank_state(const WorldMap& world, RobotPose pose) {
  if (!world.is_free(pose.cell)) throw std::invalid_argument("blank_state: pose is not a free cell");
  ExplorationState s;
  s.pose = pose;
  s.lidar_map = Grid<Knowledge>(world.height(), world.width(), Knowledge::Unknown);
  s.frontier = Grid<std::uint8_t>(world.height(), world.width(), 0);
  s.camera_map = Grid<std::uint8_t>(world.height(), world.width(), 0);
  return s;
}

namespace detail {

inline void mark_known(const WorldMap& world, ExplorationState& s, Cell c, std::vector<Cell>& touched) {
  if (s.lidar_map[c] != Knowledge::Unknown) return;
  const bool free = world.cells[c] == Terrain::Free;
  s.lidar_map[c] = free ? Knowledge::KnownFree : Knowledge::KnownWall;
  ++s.known_count;
  if (free) ++s.known_free_count;
  touched.push_back(c);
}

inline void refresh_frontier(ExplorationState& s, const std::vector<Cell>& touched) {
  auto refresh = [&](Cell c) {
    if (!s.frontier.in_bounds(c)) return;
    const std::uint8_t now = frontier_rule(s, c) ? 1 : 0;
    std::uint8_t& flag = s.frontier[c];
    if (flag != now) {
      s.frontier_count += now ? 1 : -1;
      flag = now;
    }
  };
  for (Cell c : touched) {
    refresh(c);
    for (Cell d : kFourNeighbors) refresh(c + d);
  }
}

}  // namespace detail

/// Casts the LiDAR fan from the robot pose. Cells along each ray become known
/// up to and including the first wall; the frontier is updated incrementally.
inline void lidar_scan(const WorldMap& world, const SensorModel& sensors, ExplorationState& s) {
  std::vector<Cell> touched;
  detail::mark_known(world, s, s.pose.cell, touched);
  for (const Ray& ray : sensors.fan()) {
    march(ray, s.pose.cell, world.height(), world.width(), [&](Cell c, double) {
      detail::mark_known(world, s, c, touched);
      return world.cells[c] == Terrain::Free;
    });
  }
  detail::refresh_frontier(s, touched);
}

/// Marks unoccluded free cells inside the camera frustum as seen and records
/// any objects on them.
inline void camera_scan(const WorldMap& world, const SensorModel& sensors, ExplorationState& s) {
  const double range = static_cast<double>(sensors.config().camera_range) + 1e-9;
  auto see = [&](Cell c) {
    if (s.camera_map[c]) return;
    s.camera_map[c] = 1;
    ++s.seen_count;
    if (world.has_object(c)) {
      auto it = std::lower_bound(s.detected_objects.begin(), s.detected_objects.end(), c);
      if (it == s.detected_objects.end() || *it != c) s.detected_objects.insert(it, c);
    }
  };
  see(s.pose.cell);
  for (std::size_t idx : sensors.camera_rays(s.pose.heading)) {
    march(sensors.fan()[idx], s.pose.cell, world.height(), world.width(), [&](Cell c, double d) {
      if (d > range || world.cells[c] == Terrain::Wall) return false;
      see(c);
      return true;
    });
  }
}

inline void scan(const WorldMap& world, const SensorModel& sensors, ExplorationState& s) {
  lidar_scan(world, sensors, s);
  camera_scan(world, sensors, s);
}

/// State at the world's start cell, facing East, after the first scan.
inline ExplorationState initial_state(const WorldMap& world, const SensorModel& sensors) {
  ExplorationState s = blank_state(world, {world.start, Heading::East});
  scan(world, sensors, s);
  return s;
}

/// Physical move legality against the ground truth: target free and no
/// diagonal corner cutting.
inline bool can_move(const WorldMap& world, Cell from, Heading dir) {
  const Cell d = delta(dir);
  if (!world.is_free(from + d)) return false;
  if (d.row != 0 && d.col != 0)
    return world.is_free(Cell{from.row + d.row, from.col}) && world.is_free(Cell{from.row, from.col + d.col});
  return true;
}

/// Shortest path over known-free cells from the robot to `target`.
inline std::vector<Cell> plan_path(const ExplorationState& s, Cell target) {
  return shortest_path(s.height(), s.width(), s.pose.cell, target,
                       [&](Cell c) { return s.is_known_free(c); });
}

/// Advances the simulation by one primitive move followed by a LiDAR and a
/// camera scan. MoveToViewpoint executes the first move of the shortest
/// known-free path to its target.
inline void step(const WorldMap& world, const SensorModel& sensors, ExplorationState& s, const Action& action) {
  std::optional<Heading> dir;
  if (const auto* move = std::get_if<MoveToViewpoint>(&action)) {
    if (!s.is_known_free(move->target))
      throw InvalidAction("step: viewpoint target is not a known free cell");
    if (move->target != s.pose.cell) {
      const auto path = plan_path(s, move->target);
      if (path.size() < 2) throw InvalidAction("step: viewpoint target unreachable over known free cells");
      dir = heading_towards(path[0], path[1]);
    }
  } else {
    dir = std::get<PrimitiveStep>(action).direction;
  }
  if (dir) {
    s.pose.heading = *dir;
    if (can_move(world, s.pose.cell, *dir)) s.pose.cell = s.pose.cell + delta(*dir);
  }
  scan(world, sensors, s);
  ++s.step;
}

}  // namespace opere

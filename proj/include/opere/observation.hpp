#pragma once

#include <algorithm>
#include <array>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "opere/raycast.hpp"
#include "opere/sim.hpp"

namespace opere {

struct ObsConfig {
  int crop = 32;
  int cam_rays = 32;
};

/// Two-part state representation. `map_raster` is channel-major
/// [channel][row][col] over a robot-centred crop (channel 0 frontier,
/// channel 1 camera-seen); `cam_raster` holds normalised first-hit depths
/// across the camera frustum.
struct Observation {
  int crop = 0;
  std::vector<double> map_raster;
  std::vector<double> cam_raster;
  int step = 0;

  bool operator==(const Observation&) const = default;
};

class UnknownViewpoint : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Builds observations for one sensor/observation configuration.
class ObservationEncoder {
 public:
  ObservationEncoder(ObsConfig cfg, SensorConfig sensors) : cfg_(cfg), camera_range_(sensors.camera_range) {
    validate(sensors);
    if (cfg_.crop < 1) throw std::invalid_argument("ObsConfig: crop must be >= 1");
    if (cfg_.cam_rays < 1) throw std::invalid_argument("ObsConfig: cam_rays must be >= 1");
    const double fov = sensors.camera_fov_deg * std::numbers::pi / 180.0;
    for (int h = 0; h < kNumHeadings; ++h) {
      const double heading = heading_angle(static_cast<Heading>(h));
      for (int k = 0; k < cfg_.cam_rays; ++k) {
        const double angle = heading - fov / 2.0 + (k + 0.5) * fov / cfg_.cam_rays;
        depth_rays_[static_cast<std::size_t>(h)].push_back(make_ray(angle, camera_range_));
      }
    }
  }

  const ObsConfig& config() const { return cfg_; }
  std::size_t map_size() const { return static_cast<std::size_t>(2 * cfg_.crop * cfg_.crop); }
  std::size_t cam_size() const { return static_cast<std::size_t>(cfg_.cam_rays); }

  /// Observation at the robot's current pose.
  Observation encode(const ExplorationState& s) const { return render(s, s.pose); }

  /// Observation the robot would have at `viewpoint` with the current maps and
  /// no new sensing. The heading points from the robot towards the viewpoint.
  Observation render_hypothetical(const ExplorationState& s, Cell viewpoint) const {
    if (!s.is_known_free(viewpoint))
      throw UnknownViewpoint("render_hypothetical: viewpoint is not a known free cell");
    RobotPose pose{viewpoint, s.pose.heading};
    if (auto h = heading_towards(s.pose.cell, viewpoint)) pose.heading = *h;
    return render(s, pose);
  }

 private:
  Observation render(const ExplorationState& s, RobotPose pose) const {
    Observation obs;
    obs.crop = cfg_.crop;
    obs.step = s.step;
    obs.map_raster.assign(map_size(), 0.0);
    const int n = cfg_.crop;
    const int half = n / 2;
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const Cell cell{pose.cell.row - half + r, pose.cell.col - half + c};
        if (!s.lidar_map.in_bounds(cell)) continue;
        const std::size_t i = static_cast<std::size_t>(r) * n + c;
        if (s.frontier[cell]) obs.map_raster[i] = 1.0;
        if (s.camera_map[cell]) obs.map_raster[plane + i] = 1.0;
      }
    }
    // Depth is ray-marched against LiDAR-known walls; unknown cells are
    // transparent.
    obs.cam_raster.assign(cam_size(), 1.0);
    const auto& rays = depth_rays_[static_cast<std::size_t>(pose.heading)];
    for (std::size_t k = 0; k < rays.size(); ++k) {
      march(rays[k], pose.cell, s.height(), s.width(), [&](Cell c, double d) {
        if (s.lidar_map[c] == Knowledge::KnownWall) {
          obs.cam_raster[k] = std::clamp(d / camera_range_, 0.0, 1.0);
          return false;
        }
        return true;
      });
    }
    return obs;
  }

  ObsConfig cfg_;
  int camera_range_;
  std::array<std::vector<Ray>, kNumHeadings> depth_rays_;
};

}  // namespace opere

#pragma once

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <vector>

#include "opere/grid.hpp"

namespace opere {

/// Integer supercover line from (0,0) to `end`: every cell the segment
/// between the two cell centres touches, in travel order. When the segment
/// passes exactly through a cell corner both side cells are emitted.
inline std::vector<Cell> supercover_line(Cell end) {
  std::vector<Cell> cells;
  int y = 0;
  int x = 0;
  int dy = end.row;
  int dx = end.col;
  const int ystep = dy < 0 ? -1 : 1;
  const int xstep = dx < 0 ? -1 : 1;
  dy = std::abs(dy);
  dx = std::abs(dx);
  const int ddy = 2 * dy;
  const int ddx = 2 * dx;
  cells.push_back({0, 0});
  if (ddx >= ddy) {
    int errorprev = dx;
    int error = dx;
    for (int i = 0; i < dx; ++i) {
      x += xstep;
      error += ddy;
      if (error > ddx) {
        y += ystep;
        error -= ddx;
        if (error + errorprev < ddx) {
          cells.push_back({y - ystep, x});
        } else if (error + errorprev > ddx) {
          cells.push_back({y, x - xstep});
        } else {
          cells.push_back({y - ystep, x});
          cells.push_back({y, x - xstep});
        }
      }
      cells.push_back({y, x});
      errorprev = error;
    }
  } else {
    int errorprev = dy;
    int error = dy;
    for (int i = 0; i < dy; ++i) {
      y += ystep;
      error += ddx;
      if (error > ddy) {
        x += xstep;
        error -= ddy;
        if (error + errorprev < ddy) {
          cells.push_back({y, x - xstep});
        } else if (error + errorprev > ddy) {
          cells.push_back({y - ystep, x});
        } else {
          cells.push_back({y, x - xstep});
          cells.push_back({y - ystep, x});
        }
      }
      cells.push_back({y, x});
      errorprev = error;
    }
  }
  return cells;
}

/// One precomputed ray: relative cell offsets (origin excluded) whose centres
/// lie within range, in travel order, plus the centre distance of each.
struct Ray {
  double angle = 0.0;
  std::vector<Cell> offsets;
  std::vector<double> distances;
};

/// Ray cast at `angle` (radians, counter-clockwise from East). The line is
/// drawn to a rounded endpoint just past `range` and truncated at the first
/// cell whose centre is farther than `range`.
inline Ray make_ray(double angle, int range) {
  Ray ray;
  ray.angle = angle;
  const double reach = static_cast<double>(range) + 1.0;
  const Cell end{static_cast<int>(std::lround(-reach * std::sin(angle))),
                 static_cast<int>(std::lround(reach * std::cos(angle)))};
  const auto line = supercover_line(end);
  for (std::size_t i = 1; i < line.size(); ++i) {
    const double d = std::hypot(static_cast<double>(line[i].row), static_cast<double>(line[i].col));
    if (d > static_cast<double>(range) + 1e-9) break;
    ray.offsets.push_back(line[i]);
    ray.distances.push_back(d);
  }
  return ray;
}

/// `count` rays at uniform angles 2*pi*k/count.
inline std::vector<Ray> make_ray_fan(int count, int range) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    rays.push_back(make_ray(2.0 * std::numbers::pi * k / count, range));
  }
  return rays;
}

/// Smallest absolute difference between two angles, in radians.
inline double angle_between(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
  return d > std::numbers::pi ? 2.0 * std::numbers::pi - d : d;
}

/// Walks `ray` from `origin`, calling visit(cell, distance) for each cell until
/// a cell is out of bounds or visit returns false (the blocking cell is still
/// visited first).
template <typename Visit>
void march(const Ray& ray, Cell origin, int height, int width, Visit&& visit) {
  for (std::size_t i = 0; i < ray.offsets.size(); ++i) {
    const Cell c = origin + ray.offsets[i];
    if (c.row < 0 || c.row >= height || c.col < 0 || c.col >= width) return;
    if (!visit(c, ray.distances[i])) return;
  }
}

}  // namespace opere

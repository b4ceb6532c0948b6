#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace opere {

struct Cell {
  int row = 0;
  int col = 0;

  auto operator<=>(const Cell&) const = default;
};

/// Eight compass headings, counter-clockwise from East in 45 degree steps.
/// Rows grow downward, so North is row - 1.
enum class Heading : std::uint8_t { East, NorthEast, North, NorthWest, West, SouthWest, South, SouthEast };

inline constexpr int kNumHeadings = 8;

inline constexpr std::array<Cell, kNumHeadings> kHeadingDelta = {{
    {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1},
}};

inline Cell operator+(Cell a, Cell b) { return {a.row + b.row, a.col + b.col}; }
inline Cell operator-(Cell a, Cell b) { return {a.row - b.row, a.col - b.col}; }

inline Cell delta(Heading h) { return kHeadingDelta[static_cast<std::size_t>(h)]; }

inline double heading_angle(Heading h) {
  return static_cast<double>(static_cast<int>(h)) * std::numbers::pi / 4.0;
}

/// Heading whose 45 degree sector contains the vector from `from` to `to`.
/// Returns nullopt when the cells coincide.
inline std::optional<Heading> heading_towards(Cell from, Cell to) {
  const int dr = to.row - from.row;
  const int dc = to.col - from.col;
  if (dr == 0 && dc == 0) return std::nullopt;
  double angle = std::atan2(static_cast<double>(-dr), static_cast<double>(dc));
  if (angle < 0) angle += 2.0 * std::numbers::pi;
  int bin = static_cast<int>(std::lround(angle / (std::numbers::pi / 4.0))) % kNumHeadings;
  return static_cast<Heading>(bin);
}

inline std::string to_string(Heading h) {
  static constexpr std::array<const char*, kNumHeadings> names = {"E", "NE", "N", "NW", "W", "SW", "S", "SE"};
  return names[static_cast<std::size_t>(h)];
}

inline double euclidean(Cell a, Cell b) {
  return std::hypot(static_cast<double>(a.row - b.row), static_cast<double>(a.col - b.col));
}

/// Dense row-major 2D grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    if (height < 0 || width < 0) throw std::invalid_argument("Grid: negative dimensions");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  bool in_bounds(Cell c) const { return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_; }

  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row) * width_ + c.col; }
  Cell cell_at(std::size_t i) const {
    return {static_cast<int>(i / width_), static_cast<int>(i % width_)};
  }

  T& operator[](Cell c) { return data_[index(c)]; }
  const T& operator[](Cell c) const { return data_[index(c)]; }

  T& at(Cell c) {
    if (!in_bounds(c)) throw std::out_of_range("Grid::at: cell out of bounds");
    return data_[index(c)];
  }
  const T& at(Cell c) const {
    if (!in_bounds(c)) throw std::out_of_range("Grid::at: cell out of bounds");
    return data_[index(c)];
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

inline constexpr std::array<Cell, 4> kFourNeighbors = {{{-1, 0}, {0, -1}, {0, 1}, {1, 0}}};

/// Breadth-first search over 8-connected moves. Diagonal moves need both
/// orthogonal cells passable (no corner cutting). Returns distances in steps,
/// -1 for unreachable cells.
template <typename Passable>
Grid<int> bfs_distances(int height, int width, Cell source, Passable&& passable) {
  Grid<int> dist(height, width, -1);
  if (!dist.in_bounds(source) || !passable(source)) return dist;
  std::deque<Cell> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const Cell cur = queue.front();
    queue.pop_front();
    for (int h = 0; h < kNumHeadings; ++h) {
      const Cell d = kHeadingDelta[h];
      const Cell next = cur + d;
      if (!dist.in_bounds(next) || dist[next] >= 0 || !passable(next)) continue;
      if (d.row != 0 && d.col != 0) {
        if (!passable(Cell{cur.row + d.row, cur.col}) || !passable(Cell{cur.row, cur.col + d.col})) continue;
      }
      dist[next] = dist[cur] + 1;
      queue.push_back(next);
    }
  }
  return dist;
}

/// Shortest 8-connected path from source to target (both inclusive), empty
/// when unreachable. Ties resolve by heading order, so paths are deterministic.
template <typename Passable>
std::vector<Cell> shortest_path(int height, int width, Cell source, Cell target, Passable&& passable) {
  // Distances from the target let us walk greedily from the source.
  const Grid<int> dist = bfs_distances(height, width, target, passable);
  if (!dist.in_bounds(source) || dist[source] < 0) return {};
  std::vector<Cell> path{source};
  Cell cur = source;
  while (cur != target) {
    bool advanced = false;
    for (int h = 0; h < kNumHeadings && !advanced; ++h) {
      const Cell d = kHeadingDelta[h];
      const Cell next = cur + d;
      if (!dist.in_bounds(next) || dist[next] != dist[cur] - 1) continue;
      if (d.row != 0 && d.col != 0) {
        if (!passable(Cell{cur.row + d.row, cur.col}) || !passable(Cell{cur.row, cur.col + d.col})) continue;
      }
      cur = next;
      path.push_back(cur);
      advanced = true;
    }
    if (!advanced) return {};
  }
  return path;
}

}  // namespace opere

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "opere/grid.hpp"

namespace opere {

enum class Terrain : std::uint8_t { Free, Wall };

/// The four procedural environment classes.
enum class EnvKind : std::uint8_t { Corridor, Room, Mine, Cave };

inline constexpr std::array<EnvKind, 4> kAllEnvKinds = {EnvKind::Corridor, EnvKind::Room, EnvKind::Mine,
                                                       EnvKind::Cave};

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::Corridor: return "corridor";
    case EnvKind::Room: return "room";
    case EnvKind::Mine: return "mine";
    case EnvKind::Cave: return "cave";
  }
  return "?";
}

inline EnvKind parse_env_kind(std::string_view name) {
  for (EnvKind k : kAllEnvKinds) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown environment '" + std::string(name) + "' (expected corridor, room, mine or cave)");
}

struct EnvSpec {
  EnvKind kind = EnvKind::Corridor;
  int width = 48;
  int height = 48;
  int object_count = 4;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ground-truth map. Immutable once generated.
struct WorldMap {
  Grid<Terrain> cells;
  Grid<std::uint8_t> object_mask;
  std::vector<Cell> objects;
  int free_cell_count = 0;
  Cell start;

  int width() const { return cells.width(); }
  int height() const { return cells.height(); }
  bool is_free(Cell c) const { return cells.in_bounds(c) && cells[c] == Terrain::Free; }
  bool has_object(Cell c) const { return object_mask.in_bounds(c) && object_mask[c] != 0; }

  bool operator==(const WorldMap&) const = default;
};

namespace detail {

inline void carve_rect(Grid<Terrain>& g, int r0, int c0, int r1, int c1) {
  r0 = std::max(r0, 1);
  c0 = std::max(c0, 1);
  r1 = std::min(r1, g.height() - 2);
  c1 = std::min(c1, g.width() - 2);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) g[Cell{r, c}] = Terrain::Free;
}

inline void fill_rect(Grid<Terrain>& g, int r0, int c0, int r1, int c1) {
  r0 = std::max(r0, 0);
  c0 = std::max(c0, 0);
  r1 = std::min(r1, g.height() - 1);
  c1 = std::min(c1, g.width() - 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) g[Cell{r, c}] = Terrain::Wall;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Branching hallways of width 2-3 with small rooms at some ends.
inline Grid<Terrain> generate_corridor(int h, int w, std::mt19937_64& rng) {
  Grid<Terrain> g(h, w, Terrain::Wall);
  const int mid = h / 2;
  carve_rect(g, mid - 1, 1, mid, w - 2);
  struct Segment { int r0, c0, r1, c1; bool horizontal; };
  std::vector<Segment> segments{{mid - 1, 1, mid, w - 2, true}};
  const int branches = std::max(3, (h * w) / 260);
  for (int i = 0; i < branches; ++i) {
    const Segment s = segments[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(segments.size()) - 1))];
    const int width = uniform_int(rng, 2, 3);
    const int length = uniform_int(rng, std::max(6, std::min(h, w) / 5), std::max(8, std::min(h, w) / 2));
    const bool up = uniform_int(rng, 0, 1) == 0;
    Segment next{};
    if (s.horizontal) {
      const int c = uniform_int(rng, s.c0, std::max(s.c0, s.c1 - width + 1));
      next = up ? Segment{s.r0 - length, c, s.r0 - 1, c + width - 1, false}
                : Segment{s.r1 + 1, c, s.r1 + length, c + width - 1, false};
    } else {
      const int r = uniform_int(rng, s.r0, std::max(s.r0, s.r1 - width + 1));
      next = up ? Segment{r, s.c0 - length, r + width - 1, s.c0 - 1, true}
                : Segment{r, s.c1 + 1, r + width - 1, s.c1 + length, true};
    }
    next.r0 = std::clamp(next.r0, 1, h - 2);
    next.r1 = std::clamp(next.r1, 1, h - 2);
    next.c0 = std::clamp(next.c0, 1, w - 2);
    next.c1 = std::clamp(next.c1, 1, w - 2);
    if (next.r1 < next.r0 || next.c1 < next.c0) continue;
    carve_rect(g, next.r0, next.c0, next.r1, next.c1);
    segments.push_back(next);
    if (uniform_int(rng, 0, 2) == 0) {
      const int rh = uniform_int(rng, 3, 5);
      const int rw = uniform_int(rng, 3, 5);
      const int er = next.horizontal ? next.r0 : (up ? next.r0 : next.r1);
      const int ec = next.horizontal ? (up ? next.c0 : next.c1) : next.c0;
      carve_rect(g, er - rh / 2, ec - rw / 2, er + rh / 2, ec + rw / 2);
    }
  }
  return g;
}

// One large open hall with pillars and a few partial interior walls.
inline Grid<Terrain> generate_room(int h, int w, std::mt19937_64& rng) {
  Grid<Terrain> g(h, w, Terrain::Wall);
  carve_rect(g, 1, 1, h - 2, w - 2);
  const int pillars = std::max(2, (h * w) / 160);
  for (int i = 0; i < pillars; ++i) {
    const int r = uniform_int(rng, 3, h - 5);
    const int c = uniform_int(rng, 3, w - 5);
    const int s = uniform_int(rng, 1, 2);
    fill_rect(g, r, c, r + s - 1, c + s - 1);
  }
  const int partitions = std::max(1, std::min(h, w) / 12);
  for (int i = 0; i < partitions; ++i) {
    const bool horizontal = uniform_int(rng, 0, 1) == 0;
    const int len = uniform_int(rng, std::min(h, w) / 4, std::min(h, w) / 2);
    if (horizontal) {
      const int r = uniform_int(rng, 4, h - 5);
      const int c = uniform_int(rng, 1, std::max(1, w - 2 - len));
      fill_rect(g, r, c, r, c + len - 1);
    } else {
      const int r = uniform_int(rng, 1, std::max(1, h - 2 - len));
      const int c = uniform_int(rng, 4, w - 5);
      fill_rect(g, r, c, r + len - 1, c);
    }
  }
  return g;
}

// Room-and-pillar mine: wide tunnels around a lattice of large pillars, with
// some pillars mined out and an irregular outer extent.
inline Grid<Terrain> generate_mine(int h, int w, std::mt19937_64& rng) {
  Grid<Terrain> g(h, w, Terrain::Wall);
  const int tunnel = uniform_int(rng, 3, 4);
  const int pillar = uniform_int(rng, 4, 6);
  const int pitch = tunnel + pillar;
  const int extent_r = uniform_int(rng, (h * 2) / 3, h - 2);
  const int extent_c = uniform_int(rng, (w * 2) / 3, w - 2);
  carve_rect(g, 1, 1, extent_r, extent_c);
  for (int r = 1 + tunnel; r + pillar <= extent_r; r += pitch) {
    for (int c = 1 + tunnel; c + pillar <= extent_c; c += pitch) {
      if (uniform_int(rng, 0, 6) == 0) continue;
      fill_rect(g, r, c, r + pillar - 1, c + pillar - 1);
    }
  }
  // Collapsed sections along the outer rim.
  const int collapses = std::max(1, (h + w) / 24);
  for (int i = 0; i < collapses; ++i) {
    const int r = uniform_int(rng, 1, h - 4);
    const int c = uniform_int(rng, 1, w - 4);
    if (r > 2 * pitch && c > 2 * pitch) fill_rect(g, r, c, r + tunnel, c + tunnel);
  }
  return g;
}

// Cellular-automaton cave: narrow, irregular passages.
inline Grid<Terrain> generate_cave(int h, int w, std::mt19937_64& rng) {
  Grid<Terrain> g(h, w, Terrain::Wall);
  std::bernoulli_distribution wall(0.45);
  for (int r = 1; r < h - 1; ++r)
    for (int c = 1; c < w - 1; ++c) g[Cell{r, c}] = wall(rng) ? Terrain::Wall : Terrain::Free;
  for (int iter = 0; iter < 4; ++iter) {
    Grid<Terrain> next = g;
    for (int r = 1; r < h - 1; ++r) {
      for (int c = 1; c < w - 1; ++c) {
        int walls = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc)
            if ((dr != 0 || dc != 0) && g[Cell{r + dr, c + dc}] == Terrain::Wall) ++walls;
        next[Cell{r, c}] = walls >= 5 ? Terrain::Wall : (walls <= 3 ? Terrain::Free : g[Cell{r, c}]);
      }
    }
    g = std::move(next);
  }
  return g;
}

// Keeps only the largest 4-connected free component; returns its size.
inline int keep_largest_component(Grid<Terrain>& g) {
  Grid<int> label(g.height(), g.width(), -1);
  std::vector<int> sizes;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Cell seed = g.cell_at(i);
    if (g[seed] != Terrain::Free || label[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    int count = 0;
    std::vector<Cell> stack{seed};
    label[seed] = id;
    while (!stack.empty()) {
      const Cell cur = stack.back();
      stack.pop_back();
      ++count;
      for (Cell d : kFourNeighbors) {
        const Cell n = cur + d;
        if (g.in_bounds(n) && g[n] == Terrain::Free && label[n] < 0) {
          label[n] = id;
          stack.push_back(n);
        }
      }
    }
    sizes.push_back(count);
  }
  if (sizes.empty()) return 0;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (label.data()[i] != best) g.data()[i] = Terrain::Wall;
  return sizes[static_cast<std::size_t>(best)];
}

inline void seal_boundary(Grid<Terrain>& g) {
  for (int r = 0; r < g.height(); ++r) {
    g[Cell{r, 0}] = Terrain::Wall;
    g[Cell{r, g.width() - 1}] = Terrain::Wall;
  }
  for (int c = 0; c < g.width(); ++c) {
    g[Cell{0, c}] = Terrain::Wall;
    g[Cell{g.height() - 1, c}] = Terrain::Wall;
  }
}

// Free cell closest to the left-middle anchor, ties by row-major order.
inline Cell pick_start(const Grid<Terrain>& g) {
  const Cell anchor{g.height() / 2, 2};
  Cell best{-1, -1};
  double best_d = 1e300;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Cell c = g.cell_at(i);
    if (g[c] != Terrain::Free) continue;
    const double d = euclidean(c, anchor);
    if (d < best_d - 1e-12) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline WorldMap finalize_world(Grid<Terrain> cells, std::vector<Cell> objects) {
  WorldMap world;
  world.cells = std::move(cells);
  world.object_mask = Grid<std::uint8_t>(world.cells.height(), world.cells.width(), 0);
  std::sort(objects.begin(), objects.end());
  for (Cell o : objects) world.object_mask[o] = 1;
  world.objects = std::move(objects);
  world.free_cell_count =
      static_cast<int>(std::count(world.cells.data().begin(), world.cells.data().end(), Terrain::Free));
  world.start = pick_start(world.cells);
  return world;
}

}  // namespace detail

inline void validate(const EnvSpec& spec) {
  if (spec.width < 16 || spec.width > 256 || spec.height < 16 || spec.height > 256)
    throw std::invalid_argument("EnvSpec: dimensions must lie in [16, 256]");
  if (spec.object_count < 0) throw std::invalid_argument("EnvSpec: negative object count");
}

/// Procedurally generates a world. Identical (spec, seed) pairs give identical
/// maps. Throws GenerationError when the requested objects cannot be placed
/// within a bounded number of attempts.
inline WorldMap generate_world(const EnvSpec& spec, std::uint64_t seed) {
  validate(spec);
  constexpr int kMaxAttempts = 16;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(spec.kind), static_cast<std::uint32_t>(spec.width),
                    static_cast<std::uint32_t>(spec.height)};
  std::mt19937_64 rng(seq);
  const int min_free = (spec.width * spec.height) / 8;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Grid<Terrain> g;
    switch (spec.kind) {
      case EnvKind::Corridor: g = detail::generate_corridor(spec.height, spec.width, rng); break;
      case EnvKind::Room: g = detail::generate_room(spec.height, spec.width, rng); break;
      case EnvKind::Mine: g = detail::generate_mine(spec.height, spec.width, rng); break;
      case EnvKind::Cave: g = detail::generate_cave(spec.height, spec.width, rng); break;
    }
    detail::seal_boundary(g);
    const int free_cells = detail::keep_largest_component(g);
    if (free_cells < min_free || free_cells < spec.object_count + 1) continue;
    const Cell start = detail::pick_start(g);
    std::vector<Cell> candidates;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Cell c = g.cell_at(i);
      if (g[c] == Terrain::Free && c != start) candidates.push_back(c);
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(static_cast<std::size_t>(spec.object_count));
    return detail::finalize_world(std::move(g), std::move(candidates));
  }
  throw GenerationError("generate_world: could not build a " + to_string(spec.kind) + " map with " +
                        std::to_string(spec.object_count) + " objects after " + std::to_string(kMaxAttempts) +
                        " attempts");
}

/// One character per cell: '#' wall, '.' free, 'O' object; one line per row.
inline std::string export_world_text(const WorldMap& world) {
  std::string out;
  out.reserve(static_cast<std::size_t>(world.height()) * (world.width() + 1));
  for (int r = 0; r < world.height(); ++r) {
    for (int c = 0; c < world.width(); ++c) {
      const Cell cell{r, c};
      out += world.cells[cell] == Terrain::Wall ? '#' : (world.has_object(cell) ? 'O' : '.');
    }
    out += '\n';
  }
  return out;
}

inline WorldMap parse_world_text(std::string_view text) {
  std::vector<std::string> rows;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw std::invalid_argument("parse_world_text: empty grid");
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size());
  Grid<Terrain> g(h, w, Terrain::Wall);
  std::vector<Cell> objects;
  for (int r = 0; r < h; ++r) {
    if (static_cast<int>(rows[r].size()) != w) throw std::invalid_argument("parse_world_text: ragged rows");
    for (int c = 0; c < w; ++c) {
      const char ch = rows[r][static_cast<std::size_t>(c)];
      if (ch == '#') continue;
      if (ch != '.' && ch != 'O') throw std::invalid_argument(std::string("parse_world_text: bad cell '") + ch + "'");
      g[Cell{r, c}] = Terrain::Free;
      if (ch == 'O') objects.push_back({r, c});
    }
  }
  return detail::finalize_world(std::move(g), std::move(objects));
}

}  // namespace opere

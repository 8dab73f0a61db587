#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mapf {

struct Coord {
  int row = 0;
  int col = 0;

  friend bool operator==(const Coord&, const Coord&) = default;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

/// Fixed action order; this order defines the Q-vector layout everywhere.
enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };

inline constexpr int kNumActions = 5;
inline constexpr Coord kActionDelta[kNumActions] = {
    {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {0, 0}};

inline Coord apply(Coord c, Action a) {
  const Coord d = kActionDelta[static_cast<int>(a)];
  return {c.row + d.row, c.col + d.col};
}

/// Static obstacle grid. Cells are Free or Obstacle; all movement is
/// 4-neighbor.
class GridMap {
 public:
  GridMap() = default;
  GridMap(int height, int width, bool fill_obstacle = false);

  int height() const { return height_; }
  int width() const { return width_; }
  int size() const { return height_ * width_; }

  bool in_bounds(Coord c) const {
    return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_;
  }
  bool is_obstacle(Coord c) const { return cells_[index(c)]; }
  /// Out-of-bounds counts as blocked.
  bool is_free(Coord c) const { return in_bounds(c) && !cells_[index(c)]; }

  void set_obstacle(Coord c, bool v) { cells_[index(c)] = v; }

  int index(Coord c) const { return c.row * width_ + c.col; }
  Coord coord(int idx) const { return {idx / width_, idx % width_}; }

  std::vector<Coord> free_cells() const;

  /// Connected-component label per cell (-1 on obstacles). Labels are
  /// stable for a given map; two Free cells are mutually reachable iff
  /// their labels match.
  const std::vector<int>& components() const;

  bool connected(Coord a, Coord b) const {
    const auto& comp = components();
    return is_free(a) && is_free(b) && comp[index(a)] == comp[index(b)];
  }

  friend bool operator==(const GridMap& a, const GridMap& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.cells_ == b.cells_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<uint8_t> cells_;
  mutable std::vector<int> components_;  // lazily computed, map is immutable after setup
  mutable bool components_valid_ = false;
};

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

/// 4-neighbor BFS distances from `goal` to every cell; kUnreachable where
/// no path exists.
std::vector<int> bfs_distance(const GridMap& map, Coord goal);

/// Shortest path (A*, Manhattan heuristic) from `start` to `goal`,
/// inclusive of both endpoints. Empty optional when unreachable.
std::optional<std::vector<Coord>> astar_path(const GridMap& map, Coord start,
                                             Coord goal);

}  // namespace mapf

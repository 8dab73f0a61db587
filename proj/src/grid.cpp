#include "mapf/grid.hpp"

#include <algorithm>
#include <deque>
#include <queue>

namespace mapf {

GridMap::GridMap(int height, int width, bool fill_obstacle)
    : height_(height),
      width_(width),
      cells_(static_cast<size_t>(height) * width, fill_obstacle ? 1 : 0) {}

std::vector<Coord> GridMap::free_cells() const {
  std::vector<Coord> out;
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c)
      if (!cells_[r * width_ + c]) out.push_back({r, c});
  return out;
}

const std::vector<int>& GridMap::components() const {
  if (components_valid_) return components_;
  components_.assign(cells_.size(), -1);
  int label = 0;
  std::deque<Coord> frontier;
  for (int start = 0; start < size(); ++start) {
    if (cells_[start] || components_[start] >= 0) continue;
    components_[start] = label;
    frontier.push_back(coord(start));
    while (!frontier.empty()) {
      Coord cur = frontier.front();
      frontier.pop_front();
      for (int a = 0; a < 4; ++a) {
        Coord nxt = apply(cur, static_cast<Action>(a));
        if (!is_free(nxt)) continue;
        int ni = index(nxt);
        if (components_[ni] >= 0) continue;
        components_[ni] = label;
        frontier.push_back(nxt);
      }
    }
    ++label;
  }
  components_valid_ = true;
  return components_;
}

std::vector<int> bfs_distance(const GridMap& map, Coord goal) {
  std::vector<int> dist(map.size(), kUnreachable);
  if (!map.is_free(goal)) return dist;
  dist[map.index(goal)] = 0;
  std::deque<Coord> frontier{goal};
  while (!frontier.empty()) {
    Coord cur = frontier.front();
    frontier.pop_front();
    int d = dist[map.index(cur)];
    for (int a = 0; a < 4; ++a) {
      Coord nxt = apply(cur, static_cast<Action>(a));
      if (!map.is_free(nxt)) continue;
      int ni = map.index(nxt);
      if (dist[ni] != kUnreachable) continue;
      dist[ni] = d + 1;
      frontier.push_back(nxt);
    }
  }
  return dist;
}

std::optional<std::vector<Coord>> astar_path(const GridMap& map, Coord start,
                                             Coord goal) {
  if (!map.is_free(start) || !map.is_free(goal)) return std::nullopt;
  auto h = [&](Coord c) {
    return std::abs(c.row - goal.row) + std::abs(c.col - goal.col);
  };
  struct Entry {
    int f;
    int g;
    int idx;
    bool operator>(const Entry& o) const {
      return f > o.f || (f == o.f && g < o.g);
    }
  };
  std::vector<int> best_g(map.size(), kUnreachable);
  std::vector<int> parent(map.size(), -1);
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  best_g[map.index(start)] = 0;
  open.push({h(start), 0, map.index(start)});
  while (!open.empty()) {
    auto [f, g, idx] = open.top();
    open.pop();
    if (g > best_g[idx]) continue;
    Coord cur = map.coord(idx);
    if (cur == goal) {
      std::vector<Coord> path;
      for (int i = idx; i != -1; i = parent[i]) path.push_back(map.coord(i));
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (int a = 0; a < 4; ++a) {
      Coord nxt = apply(cur, static_cast<Action>(a));
      if (!map.is_free(nxt)) continue;
      int ni = map.index(nxt);
      if (g + 1 >= best_g[ni]) continue;
      best_g[ni] = g + 1;
      parent[ni] = idx;
      open.push({g + 1 + h(nxt), g + 1, ni});
    }
  }
  return std::nullopt;
}

}  // namespace mapf

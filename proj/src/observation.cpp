#include "mapf/observation.hpp"

#include <algorithm>

namespace mapf {

namespace {

// Agent count inside the 5x5 window around `cell`.
int window_agents(const GridMap& map, const std::vector<AgentState>& agents,
                  Coord cell) {
  const int h = kCrowdWindow / 2;
  int count = 0;
  for (const AgentState& a : agents)
    if (std::abs(a.pos.row - cell.row) <= h &&
        std::abs(a.pos.col - cell.col) <= h)
      ++count;
  return count;
}

int window_obstacles(const GridMap& map, Coord cell) {
  const int h = kCrowdWindow / 2;
  int count = 0;
  for (int dr = -h; dr <= h; ++dr)
    for (int dc = -h; dc <= h; ++dc) {
      Coord c{cell.row + dr, cell.col + dc};
      if (!map.in_bounds(c) || map.is_obstacle(c)) ++count;
    }
  return count;
}

}  // namespace

double static_congestion(const GridMap& map, Coord cell) {
  constexpr double n = kCrowdWindow * kCrowdWindow;
  return window_obstacles(map, cell) / n;
}

double dynamic_congestion(const GridMap& map,
                          const std::vector<AgentState>& agents, Coord cell) {
  constexpr int n = kCrowdWindow * kCrowdWindow;
  const int a = window_agents(map, agents, cell);
  if (a == 0) return 0.0;
  const int denom = n - a - window_obstacles(map, cell);
  if (denom <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(a) / denom);
}

double combined_congestion_at(const GridMap& map,
                              const std::vector<AgentState>& agents, Coord cell,
                              double alpha) {
  return combined_congestion(static_congestion(map, cell),
                             dynamic_congestion(map, agents, cell), alpha);
}

ObservationBuilder::ObservationBuilder(const GridMap& map,
                                       std::vector<Coord> goals, int fov,
                                       double alpha)
    : map_(map), goals_(std::move(goals)), fov_(fov), alpha_(alpha) {
  distance_fields_.reserve(goals_.size());
  for (Coord g : goals_) distance_fields_.push_back(bfs_distance(map_, g));
}

std::vector<float> ObservationBuilder::crowd_channels(
    const std::vector<AgentState>& agents, int agent_id) const {
  const int half = fov_ / 2;
  const Coord center = agents[agent_id].pos;
  std::vector<float> planes(4 * fov_ * fov_, 0.0f);

  // Congestion over the FOV plus a one-cell rim, so each in-FOV move has
  // both endpoints available.
  const int side = fov_ + 2;
  std::vector<double> rho(side * side, 0.0);
  std::vector<bool> rho_valid(side * side, false);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      Coord cell{center.row - half - 1 + r, center.col - half - 1 + c};
      if (!map_.in_bounds(cell)) continue;
      rho[r * side + c] = combined_congestion_at(map_, agents, cell, alpha_);
      rho_valid[r * side + c] = true;
    }

  for (int r = 0; r < fov_; ++r)
    for (int c = 0; c < fov_; ++c) {
      const int rr = r + 1, cc = c + 1;
      if (!rho_valid[rr * side + cc]) continue;
      for (int d = 0; d < 4; ++d) {
        const Coord delta = kActionDelta[d];
        Coord target{center.row - half + r + delta.row,
                     center.col - half + c + delta.col};
        if (!map_.is_free(target)) continue;
        const int tr = rr + delta.row, tc = cc + delta.col;
        if (rho[tr * side + tc] < rho[rr * side + cc])
          planes[(d * fov_ + r) * fov_ + c] = 1.0f;
      }
    }
  return planes;
}

ObservationTensor ObservationBuilder::build(
    const std::vector<AgentState>& agents, int agent_id,
    std::optional<int> masked_agent) const {
  ObservationTensor obs;
  obs.fov = fov_;
  obs.data.assign(kObsChannels * fov_ * fov_, 0.0f);
  const int half = fov_ / 2;
  const Coord center = agents[agent_id].pos;
  const auto& dist = distance_fields_[agent_id];

  for (int r = 0; r < fov_; ++r)
    for (int c = 0; c < fov_; ++c) {
      Coord cell{center.row - half + r, center.col - half + c};
      if (!map_.in_bounds(cell) || map_.is_obstacle(cell)) {
        obs.at(kChObstacle, r, c) = 1.0f;
        continue;
      }
      const int d = dist[map_.index(cell)];
      if (d == kUnreachable) continue;
      for (int dir = 0; dir < 4; ++dir) {
        Coord nxt = apply(cell, static_cast<Action>(dir));
        if (map_.is_free(nxt) && dist[map_.index(nxt)] < d)
          obs.at(kChHeurUp + dir, r, c) = 1.0f;
      }
    }

  for (const AgentState& a : agents) {
    if (masked_agent && a.id == *masked_agent) continue;
    const int r = a.pos.row - center.row + half;
    const int c = a.pos.col - center.col + half;
    if (r >= 0 && r < fov_ && c >= 0 && c < fov_) obs.at(kChAgents, r, c) = 1.0f;
  }

  if (crowd_enabled_) {
    auto crowd = crowd_channels(agents, agent_id);
    std::copy(crowd.begin(), crowd.end(),
              obs.data.begin() + kChCrowdUp * fov_ * fov_);
  }
  return obs;
}

}  // namespace mapf

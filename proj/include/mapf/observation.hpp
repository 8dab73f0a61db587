#pragma once

#include <optional>
#include <vector>

#include "mapf/env.hpp"
#include "mapf/grid.hpp"

namespace mapf {

inline constexpr int kObsChannels = 10;
inline constexpr int kCrowdWindow = 5;  // congestion window side
inline constexpr double kDefaultCongestionAlpha = 0.7;

// Channel layout of the observation tensor.
enum ObsChannel {
  kChObstacle = 0,
  kChAgents = 1,
  kChHeurUp = 2,
  kChHeurDown = 3,
  kChHeurLeft = 4,
  kChHeurRight = 5,
  kChCrowdUp = 6,
  kChCrowdDown = 7,
  kChCrowdLeft = 8,
  kChCrowdRight = 9,
};

/// l x l x 10 binary stack, flat layout [channel][row][col].
struct ObservationTensor {
  int fov = 0;
  std::vector<float> data;

  float& at(int ch, int r, int c) { return data[(ch * fov + r) * fov + c]; }
  float at(int ch, int r, int c) const { return data[(ch * fov + r) * fov + c]; }
};

/// Obstacle-density ratio over the 5x5 window around (x, y). Out-of-map
/// window cells count as obstacles; the denominator is always 25.
double static_congestion(const GridMap& map, Coord cell);

/// Agent-occupancy ratio A / (N - A - O) over the same window, clamped to
/// 1 when the denominator is non-positive, 0 when no agents are present.
double dynamic_congestion(const GridMap& map,
                          const std::vector<AgentState>& agents, Coord cell);

inline double combined_congestion(double stat, double dyn, double alpha) {
  return alpha * stat + (1.0 - alpha) * dyn;
}

double combined_congestion_at(const GridMap& map,
                              const std::vector<AgentState>& agents, Coord cell,
                              double alpha);

/// Per-episode observation builder; caches one BFS distance field per goal.
class ObservationBuilder {
 public:
  ObservationBuilder(const GridMap& map, std::vector<Coord> goals, int fov = 9,
                     double alpha = kDefaultCongestionAlpha);

  int fov() const { return fov_; }

  /// Ablation switch: when disabled the four crowd planes stay zero.
  void set_crowd_enabled(bool v) { crowd_enabled_ = v; }

  const std::vector<int>& distance_field(int agent_id) const {
    return distance_fields_[agent_id];
  }

  /// Assembles the full tensor for one agent. `masked_agent`, when set,
  /// removes that agent's bit from the agents channel (decision-causal
  /// partner probing); the congestion channels are left untouched.
  ObservationTensor build(const std::vector<AgentState>& agents, int agent_id,
                          std::optional<int> masked_agent = std::nullopt) const;

  /// The four directional congestion-relief planes alone.
  std::vector<float> crowd_channels(const std::vector<AgentState>& agents,
                                    int agent_id) const;

 private:
  const GridMap& map_;
  std::vector<Coord> goals_;
  int fov_;
  double alpha_;
  bool crowd_enabled_ = true;
  std::vector<std::vector<int>> distance_fields_;
};

}  // namespace mapf

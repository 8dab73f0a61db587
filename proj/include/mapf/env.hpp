#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include "mapf/grid.hpp"

namespace mapf {

// Table-driven reward values.
inline constexpr double kRewardMove = -0.075;
inline constexpr double kRewardStayOnGoal = 0.0;
inline constexpr double kRewardStayOffGoal = -0.075;
inline constexpr double kRewardCollision = -0.5;
inline constexpr double kRewardFinish = 3.0;

enum class StepEvent { Moved, StayedOnGoal, StayedOffGoal, Collision, Finished };

inline double reward_for(StepEvent e) {
  switch (e) {
    case StepEvent::Moved: return kRewardMove;
    case StepEvent::StayedOnGoal: return kRewardStayOnGoal;
    case StepEvent::StayedOffGoal: return kRewardStayOffGoal;
    case StepEvent::Collision: return kRewardCollision;
    case StepEvent::Finished: return kRewardFinish;
  }
  return 0.0;
}

struct AgentState {
  int id = 0;
  Coord pos;
  Coord goal;
  /// Most-recent-first positions v^{t-1}..v^{t-4}; shorter than 4 early in
  /// an episode.
  std::vector<Coord> history;
  bool active = true;  // pos != goal

  void push_history(Coord prev) {
    history.insert(history.begin(), prev);
    if (history.size() > 4) history.resize(4);
  }
};

struct StepOutcome {
  std::vector<double> rewards;
  std::vector<StepEvent> events;
  bool done = false;
};

class InstanceInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Instance {
  GridMap map;
  std::vector<Coord> starts;
  std::vector<Coord> goals;
};

/// Random instance: Bernoulli(density) obstacles, distinct starts/goals,
/// each start connected to its goal. Deterministic per seed. Throws
/// InstanceInfeasible when placement keeps failing.
Instance generate_instance(int height, int width, double obstacle_density,
                           int num_agents, uint64_t seed);

/// Start/goal placement on an existing map (distinct starts, distinct
/// goals, per-agent connectivity). Used for benchmark maps loaded from
/// files.
Instance place_agents(const GridMap& map, int num_agents, uint64_t seed);

/// Obstacle density draw for curriculum training: triangular on [0, 0.5]
/// with mode 0.33.
double sample_triangular_density(std::mt19937_64& rng);

class Environment {
 public:
  Environment(GridMap map, std::vector<Coord> starts, std::vector<Coord> goals);
  explicit Environment(Instance inst)
      : Environment(std::move(inst.map), std::move(inst.starts),
                    std::move(inst.goals)) {}

  const GridMap& map() const { return map_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  int num_agents() const { return static_cast<int>(agents_.size()); }
  int timestep() const { return timestep_; }
  bool all_finished() const;

  /// Applies one joint action. Invalid moves (off-map / obstacle) and
  /// vertex/edge conflicts revert the offending agents in place with the
  /// collision reward; everything else follows the reward table.
  StepOutcome step(const std::vector<Action>& joint_actions);

  void clear_history(const std::vector<int>& agent_ids);

 private:
  GridMap map_;
  std::vector<AgentState> agents_;
  int timestep_ = 0;
};

/// Conflict-aware greedy decode of per-agent Q-vectors: argmax first, the
/// second-highest Q for agents caught in a conflict (the lowest-id agent of
/// each conflict keeps its argmax), then forced Stay by descending id until
/// the joint action is clean. The result produces no collision events under
/// Environment::step.
std::vector<Action> resolve_with_fallback(
    const std::vector<std::vector<double>>& q_vectors, const GridMap& map,
    const std::vector<AgentState>& agents);

/// Ids of agents whose intended joint move is invalid or conflicting
/// (helper shared by step and the fallback decode).
std::vector<int> find_conflicting(const GridMap& map,
                                  const std::vector<AgentState>& agents,
                                  const std::vector<Action>& actions);

}  // namespace mapf

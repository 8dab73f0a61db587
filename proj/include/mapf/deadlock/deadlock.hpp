#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mapf/env.hpp"
#include "mapf/grid.hpp"

namespace mapf::deadlock {

struct DeadlockConfig {
  int fov = 9;          // neighborhood used for B_i
  int margin = 2;       // local-map inflation around the member bounding box
  int max_members = 8;  // expert size cap
  int max_side = 15;    // expert area cap (per side)
  int horizon = 64;     // plan-length bound
  int cooldown = 4;     // steps before a repaired agent can re-trigger
  int window = 4;       // oscillation history length
  int cbs_node_limit = 20000;
};

/// Oscillation predicate: active agents with v^{t-1} = v^{t-3} and
/// v^{t-2} = v^{t-4}. Agents with shorter histories are excluded.
std::vector<int> detect_deadlocked(const std::vector<AgentState>& agents);

struct DeadlockGroup {
  std::vector<int> members;  // i plus B_i, merged across overlaps
};

/// Groups {i, B_i} where i is deadlocked and every FOV neighbor is inactive
/// or deadlocked; overlapping groups are merged (union-find).
std::vector<DeadlockGroup> form_groups(const std::vector<int>& deadlocked,
                                       const std::vector<AgentState>& agents,
                                       int fov);

struct LocalMapTask {
  GridMap local;                 // clipped submap; non-member agents frozen in
  Coord origin;                  // offset of the submap in the global map
  std::vector<int> member_ids;
  std::vector<Coord> starts;     // local coordinates
  std::vector<Coord> subgoals;   // local coordinates
};

/// Bounding box of the group inflated by `margin`; subgoal is the member's
/// goal when inside the box, otherwise the last A*-path cell inside the box
/// (own position when the goal is unreachable).
LocalMapTask build_local_task(const DeadlockGroup& group, const GridMap& map,
                              const std::vector<AgentState>& agents,
                              const DeadlockConfig& cfg);

struct LocalPlan {
  std::vector<std::vector<Action>> actions;  // [member][t]
  int makespan = 0;
};

enum class SolveStatus { Solved, NoSolution, Timeout, TooLarge };

struct SolveResult {
  SolveStatus status = SolveStatus::NoSolution;
  LocalPlan plan;
};

/// Makespan-optimal conflict-based search on the local task.
SolveResult solve_local(const LocalMapTask& task, const DeadlockConfig& cfg);

struct DeadlockEvent {
  int step = 0;
  std::vector<int> members;
  Coord bounds_min, bounds_max;
  int makespan = 0;
  std::string outcome;  // solved / no_solution / timeout / too_large
};

/// Detection cadence, plan bookkeeping and handoff. Drives the expert for
/// group members while everyone else stays under the learned policy.
class Controller {
 public:
  explicit Controller(DeadlockConfig cfg, uint64_t seed = 0)
      : cfg_(cfg), rng_(seed) {}

  /// Runs detection on the current snapshot and installs plans for any new
  /// groups. Returns events for diagnostics.
  std::vector<DeadlockEvent> maybe_trigger(const Environment& env);

  /// Expert override for this step, if any.
  std::optional<Action> planned_action(int agent) const;

  bool agent_under_plan(int agent) const;

  /// Advances installed plans after an env step; completed plans clear the
  /// members' histories and start their cooldown. A reverted member aborts
  /// its plan.
  void after_step(Environment& env, const StepOutcome& outcome);

  int events_seen() const { return events_seen_; }

 private:
  struct ActivePlan {
    std::vector<int> members;
    LocalPlan plan;
    int cursor = 0;
  };

  DeadlockConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<ActivePlan> plans_;
  std::vector<int> cooldown_until_;  // per agent, env timestep
  int events_seen_ = 0;
};

/// Joint decode that keeps expert members' actions fixed and resolves
/// everyone else around them.
std::vector<Action> resolve_with_fixed(
    const std::vector<std::vector<double>>& q_vectors, const GridMap& map,
    const std::vector<AgentState>& agents,
    const std::vector<std::optional<Action>>& fixed);

}  // namespace mapf::deadlock

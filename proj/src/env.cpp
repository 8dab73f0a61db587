#include "mapf/env.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>

namespace mapf {
namespace {

// Revert fixpoint shared by step() and the fallback decode. Returns, per
// agent, whether its intended move must be reverted.
std::vector<bool> simulate_reverts(const GridMap& map,
                                   const std::vector<Coord>& positions,
                                   const std::vector<Action>& actions) {
  const int n = static_cast<int>(positions.size());
  std::vector<Coord> intended(n);
  std::vector<bool> moving(n), reverted(n, false);
  for (int i = 0; i < n; ++i) {
    intended[i] = apply(positions[i], actions[i]);
    moving[i] = actions[i] != Action::Stay;
    if (moving[i] && !map.is_free(intended[i])) reverted[i] = true;
  }
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<int, std::vector<int>> occupancy;
    for (int i = 0; i < n; ++i) {
      Coord final_pos = (reverted[i] || !moving[i]) ? positions[i] : intended[i];
      occupancy[map.index(final_pos)].push_back(i);
    }
    for (auto& [cell, ids] : occupancy) {
      if (ids.size() < 2) continue;
      for (int i : ids) {
        if (moving[i] && !reverted[i]) {
          reverted[i] = true;
          changed = true;
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!moving[i] || reverted[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!moving[j] || reverted[j]) continue;
        if (intended[i] == positions[j] && intended[j] == positions[i]) {
          reverted[i] = reverted[j] = true;
          changed = true;
        }
      }
    }
  }
  return reverted;
}

}  // namespace

Environment::Environment(GridMap map, std::vector<Coord> starts,
                         std::vector<Coord> goals)
    : map_(std::move(map)) {
  agents_.resize(starts.size());
  for (size_t i = 0; i < starts.size(); ++i) {
    agents_[i].id = static_cast<int>(i);
    agents_[i].pos = starts[i];
    agents_[i].goal = goals[i];
    agents_[i].active = starts[i] != goals[i];
  }
}

bool Environment::all_finished() const {
  return std::all_of(agents_.begin(), agents_.end(),
                     [](const AgentState& a) { return a.pos == a.goal; });
}

StepOutcome Environment::step(const std::vector<Action>& joint_actions) {
  const int n = num_agents();
  std::vector<Coord> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = agents_[i].pos;

  auto reverted = simulate_reverts(map_, positions, joint_actions);

  StepOutcome out;
  out.rewards.resize(n);
  out.events.resize(n);
  for (int i = 0; i < n; ++i) {
    AgentState& a = agents_[i];
    const Coord prev = a.pos;
    const bool moving = joint_actions[i] != Action::Stay;
    if (!moving) {
      out.events[i] =
          prev == a.goal ? StepEvent::StayedOnGoal : StepEvent::StayedOffGoal;
    } else if (reverted[i]) {
      out.events[i] = StepEvent::Collision;
    } else {
      a.pos = apply(prev, joint_actions[i]);
      out.events[i] =
          a.pos == a.goal ? StepEvent::Finished : StepEvent::Moved;
    }
    out.rewards[i] = reward_for(out.events[i]);
    a.push_history(prev);
    a.active = a.pos != a.goal;
  }
  ++timestep_;
  out.done = all_finished();
  return out;
}

void Environment::clear_history(const std::vector<int>& agent_ids) {
  for (int id : agent_ids) agents_[id].history.clear();
}

std::vector<int> find_conflicting(const GridMap& map,
                                  const std::vector<AgentState>& agents,
                                  const std::vector<Action>& actions) {
  std::vector<Coord> positions(agents.size());
  for (size_t i = 0; i < agents.size(); ++i) positions[i] = agents[i].pos;
  auto reverted = simulate_reverts(map, positions, actions);
  std::vector<int> out;
  for (size_t i = 0; i < agents.size(); ++i)
    if (reverted[i]) out.push_back(static_cast<int>(i));
  return out;
}

namespace {

Action nth_best(const std::vector<double>& q, int n) {
  std::vector<int> order(kNumActions);
  for (int i = 0; i < kNumActions; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return q[a] > q[b]; });
  return static_cast<Action>(order[n]);
}

}  // namespace

std::vector<Action> resolve_with_fallback(
    const std::vector<std::vector<double>>& q_vectors, const GridMap& map,
    const std::vector<AgentState>& agents) {
  const int n = static_cast<int>(agents.size());
  std::vector<Action> actions(n);
  for (int i = 0; i < n; ++i) actions[i] = nth_best(q_vectors[i], 0);

  auto first = find_conflicting(map, agents, actions);
  std::vector<bool> in_conflict(n, false);
  for (int i : first) in_conflict[i] = true;
  for (int i : first) {
    // Lowest-id member of a shared-target or swap pair keeps its argmax.
    Coord intended = apply(agents[i].pos, actions[i]);
    bool keeps = map.is_free(intended);
    if (keeps) {
      for (int j : first) {
        if (j >= i) break;
        Coord other = apply(agents[j].pos, actions[j]);
        const bool shared_target = other == intended;
        const bool swap = intended == agents[j].pos && other == agents[i].pos;
        if (shared_target || swap) {
          keeps = false;
          break;
        }
      }
    }
    if (!keeps) actions[i] = nth_best(q_vectors[i], 1);
  }

  // Residual conflicts: force Stay by descending id until clean.
  auto residual = find_conflicting(map, agents, actions);
  while (!residual.empty()) {
    actions[residual.back()] = Action::Stay;
    residual = find_conflicting(map, agents, actions);
  }
  return actions;
}

double sample_triangular_density(std::mt19937_64& rng) {
  // Triangular on [0, 0.5], mode 0.33, by inverse transform.
  constexpr double lo = 0.0, mode = 0.33, hi = 0.5;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  const double fc = (mode - lo) / (hi - lo);
  if (u < fc) return lo + std::sqrt(u * (hi - lo) * (mode - lo));
  return hi - std::sqrt((1.0 - u) * (hi - lo) * (hi - mode));
}

namespace {

// One placement attempt; empty optional when it dead-ends.
std::optional<Instance> try_place(const GridMap& map, int num_agents,
                                  std::mt19937_64& rng) {
    auto free = map.free_cells();
    if (static_cast<int>(free.size()) < num_agents) return std::nullopt;

    std::shuffle(free.begin(), free.end(), rng);
    std::vector<Coord> starts(free.begin(), free.begin() + num_agents);

    std::vector<Coord> goals;
    std::vector<bool> goal_used(map.size(), false);
    for (int i = 0; i < num_agents; ++i) {
      std::vector<Coord> candidates;
      for (Coord c : free)
        if (!goal_used[map.index(c)] && !(c == starts[i]) &&
            map.connected(starts[i], c))
          candidates.push_back(c);
      if (candidates.empty()) return std::nullopt;
      Coord g = candidates[std::uniform_int_distribution<size_t>(
          0, candidates.size() - 1)(rng)];
      goal_used[map.index(g)] = true;
      goals.push_back(g);
    }
    return Instance{map, std::move(starts), std::move(goals)};
}

}  // namespace

Instance place_agents(const GridMap& map, int num_agents, uint64_t seed) {
  std::mt19937_64 rng(seed);
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt)
    if (auto inst = try_place(map, num_agents, rng)) return *inst;
  throw InstanceInfeasible("could not place agents after bounded retries");
}

Instance generate_instance(int height, int width, double obstacle_density,
                           int num_agents, uint64_t seed) {
  if (obstacle_density < 0.0 || obstacle_density >= 1.0)
    throw InstanceInfeasible("obstacle density must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  constexpr int kMapAttempts = 64;
  for (int attempt = 0; attempt < kMapAttempts; ++attempt) {
    GridMap map(height, width);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        if (unit(rng) < obstacle_density) map.set_obstacle({r, c}, true);

    if (auto inst = try_place(map, num_agents, rng)) return *inst;
  }
  throw InstanceInfeasible("could not place agents after bounded retries");
}

}  // namespace mapf

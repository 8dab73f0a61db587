#include "mapf/deadlock/deadlock.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>

#include "mapf/net/policy.hpp"

namespace mapf::deadlock {

std::vector<int> detect_deadlocked(const std::vector<AgentState>& agents) {
  std::vector<int> out;
  for (const AgentState& a : agents) {
    if (!a.active || a.history.size() < 4) continue;
    if (a.history[0] == a.history[2] && a.history[1] == a.history[3])
      out.push_back(a.id);
  }
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<DeadlockGroup> form_groups(const std::vector<int>& deadlocked,
                                       const std::vector<AgentState>& agents,
                                       int fov) {
  std::vector<bool> is_deadlocked(agents.size(), false);
  for (int i : deadlocked) is_deadlocked[i] = true;

  const int n = static_cast<int>(agents.size());
  UnionFind uf(n);
  std::vector<bool> grouped(n, false);
  for (int i : deadlocked) {
    auto neighbors = net::fov_neighbors(agents, i, fov);
    const bool eligible =
        std::all_of(neighbors.begin(), neighbors.end(), [&](int j) {
          return !agents[j].active || is_deadlocked[j];
        });
    if (!eligible) continue;
    grouped[i] = true;
    for (int j : neighbors) {
      grouped[j] = true;
      uf.unite(i, j);
    }
  }

  std::map<int, DeadlockGroup> by_root;
  for (int i = 0; i < n; ++i)
    if (grouped[i]) by_root[uf.find(i)].members.push_back(i);
  std::vector<DeadlockGroup> out;
  for (auto& [root, g] : by_root) out.push_back(std::move(g));
  return out;
}

LocalMapTask build_local_task(const DeadlockGroup& group, const GridMap& map,
                              const std::vector<AgentState>& agents,
                              const DeadlockConfig& cfg) {
  int rmin = map.height(), rmax = -1, cmin = map.width(), cmax = -1;
  for (int id : group.members) {
    rmin = std::min(rmin, agents[id].pos.row);
    rmax = std::max(rmax, agents[id].pos.row);
    cmin = std::min(cmin, agents[id].pos.col);
    cmax = std::max(cmax, agents[id].pos.col);
  }
  rmin = std::max(0, rmin - cfg.margin);
  cmin = std::max(0, cmin - cfg.margin);
  rmax = std::min(map.height() - 1, rmax + cfg.margin);
  cmax = std::min(map.width() - 1, cmax + cfg.margin);

  LocalMapTask task;
  task.origin = {rmin, cmin};
  task.member_ids = group.members;
  task.local = GridMap(rmax - rmin + 1, cmax - cmin + 1);
  for (int r = rmin; r <= rmax; ++r)
    for (int c = cmin; c <= cmax; ++c)
      if (map.is_obstacle({r, c}))
        task.local.set_obstacle({r - rmin, c - cmin}, true);

  // Non-members inside the box are frozen as obstacles for the local plan.
  std::set<int> member_set(group.members.begin(), group.members.end());
  for (const AgentState& a : agents) {
    if (member_set.count(a.id)) continue;
    if (a.pos.row >= rmin && a.pos.row <= rmax && a.pos.col >= cmin &&
        a.pos.col <= cmax)
      task.local.set_obstacle({a.pos.row - rmin, a.pos.col - cmin}, true);
  }

  auto inside = [&](Coord c) {
    return c.row >= rmin && c.row <= rmax && c.col >= cmin && c.col <= cmax;
  };
  auto to_local = [&](Coord c) { return Coord{c.row - rmin, c.col - cmin}; };

  std::set<Coord> used;
  for (int id : group.members) {
    const AgentState& a = agents[id];
    task.starts.push_back(to_local(a.pos));
    Coord subgoal = a.pos;
    if (inside(a.goal)) {
      subgoal = a.goal;
    } else if (auto path = astar_path(map, a.pos, a.goal)) {
      for (Coord c : *path)
        if (inside(c)) subgoal = c;  // last path cell inside the box
    }
    if (used.count(subgoal)) subgoal = a.pos;  // duplicate exits fall back
    used.insert(subgoal);
    task.subgoals.push_back(to_local(subgoal));
  }
  return task;
}

// ---- conflict-based search -------------------------------------------------

namespace {

struct Constraints {
  // (t, cell): the agent may not occupy cell at time t.
  std::set<std::pair<int, int>> vertex;
  // (t, from, to): the agent may not traverse from->to between t and t+1.
  std::set<std::tuple<int, int, int>> edge;
};

using Path = std::vector<Coord>;  // positions at t = 0..len

// Time-expanded A*; minimizes arrival time under the constraint set.
std::optional<Path> low_level(const GridMap& map, Coord start, Coord goal,
                              const Constraints& cons, int horizon) {
  auto dist = bfs_distance(map, goal);
  if (dist[map.index(start)] == kUnreachable) return std::nullopt;
  int goal_hold_from = 0;  // arrival must be after the last goal-cell ban
  for (const auto& [t, cell] : cons.vertex)
    if (cell == map.index(goal)) goal_hold_from = std::max(goal_hold_from, t + 1);

  struct Entry {
    int f, t, cell;
    bool operator>(const Entry& o) const {
      return f > o.f || (f == o.f && t > o.t);
    }
  };
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  std::set<std::pair<int, int>> closed;  // (t, cell)
  std::map<std::pair<int, int>, std::pair<int, int>> parent;
  open.push({dist[map.index(start)], 0, map.index(start)});
  while (!open.empty()) {
    auto [f, t, cell] = open.top();
    open.pop();
    if (!closed.insert({t, cell}).second) continue;
    Coord cur = map.coord(cell);
    if (cur == goal && t >= goal_hold_from) {
      Path path(t + 1);
      std::pair<int, int> key{t, cell};
      for (int k = t; k >= 0; --k) {
        path[k] = map.coord(key.second);
        if (k > 0) key = parent.at(key);
      }
      return path;
    }
    if (t >= horizon) continue;
    for (int a = 0; a < kNumActions; ++a) {
      Coord nxt = apply(cur, static_cast<Action>(a));
      if (!map.is_free(nxt)) continue;
      const int ni = map.index(nxt);
      if (cons.vertex.count({t + 1, ni})) continue;
      if (cons.edge.count({t, cell, ni})) continue;
      if (closed.count({t + 1, ni})) continue;
      if (parent.emplace(std::pair{t + 1, ni}, std::pair{t, cell}).second)
        open.push({t + 1 + dist[ni], t + 1, ni});
    }
  }
  return std::nullopt;
}

struct Conflict {
  enum Kind { None, Vertex, Edge } kind = None;
  int a = 0, b = 0, t = 0;
  Coord cell_a, cell_b;  // Vertex: cell_a only; Edge: a moves cell_a->cell_b
};

Coord padded(const Path& p, int t) {
  return t < static_cast<int>(p.size()) ? p[t] : p.back();
}

Conflict first_conflict(const std::vector<Path>& paths, int makespan) {
  const int n = static_cast<int>(paths.size());
  for (int t = 0; t <= makespan; ++t)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (padded(paths[i], t) == padded(paths[j], t))
          return {Conflict::Vertex, i, j, t, padded(paths[i], t), {}};
        if (t < makespan && padded(paths[i], t + 1) == padded(paths[j], t) &&
            padded(paths[j], t + 1) == padded(paths[i], t))
          return {Conflict::Edge, i, j, t, padded(paths[i], t),
                  padded(paths[i], t + 1)};
      }
  return {};
}

struct CbsNode {
  std::vector<Constraints> cons;
  std::vector<Path> paths;
  int makespan = 0;
  int soc = 0;
};

void refresh_cost(CbsNode& n) {
  n.makespan = 0;
  n.soc = 0;
  for (const Path& p : n.paths) {
    n.makespan = std::max(n.makespan, static_cast<int>(p.size()) - 1);
    n.soc += static_cast<int>(p.size()) - 1;
  }
}

}  // namespace

SolveResult solve_local(const LocalMapTask& task, const DeadlockConfig& cfg) {
  const int n = static_cast<int>(task.member_ids.size());
  if (n > cfg.max_members || task.local.height() > cfg.max_side ||
      task.local.width() > cfg.max_side)
    return {SolveStatus::TooLarge, {}};

  auto plan_from = [&](const std::vector<Path>& paths, int makespan) {
    LocalPlan plan;
    plan.makespan = makespan;
    plan.actions.resize(n);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < makespan; ++t) {
        Coord from = padded(paths[i], t), to = padded(paths[i], t + 1);
        Action act = Action::Stay;
        for (int a = 0; a < kNumActions; ++a)
          if (apply(from, static_cast<Action>(a)) == to)
            act = static_cast<Action>(a);
        plan.actions[i].push_back(act);
      }
    return plan;
  };

  CbsNode root;
  root.cons.resize(n);
  for (int i = 0; i < n; ++i) {
    auto p = low_level(task.local, task.starts[i], task.subgoals[i],
                       root.cons[i], cfg.horizon);
    if (!p) return {SolveStatus::NoSolution, {}};
    root.paths.push_back(std::move(*p));
  }
  refresh_cost(root);

  auto cmp = [](const CbsNode& a, const CbsNode& b) {
    return a.makespan > b.makespan ||
           (a.makespan == b.makespan && a.soc > b.soc);
  };
  std::priority_queue<CbsNode, std::vector<CbsNode>, decltype(cmp)> open(cmp);
  open.push(std::move(root));
  int expanded = 0;
  while (!open.empty()) {
    if (++expanded > cfg.cbs_node_limit) return {SolveStatus::Timeout, {}};
    CbsNode node = open.top();
    open.pop();
    Conflict c = first_conflict(node.paths, node.makespan);
    if (c.kind == Conflict::None)
      return {SolveStatus::Solved, plan_from(node.paths, node.makespan)};
    for (int side = 0; side < 2; ++side) {
      const int agent = side == 0 ? c.a : c.b;
      CbsNode child = node;
      if (c.kind == Conflict::Vertex) {
        child.cons[agent].vertex.insert({c.t, task.local.index(c.cell_a)});
      } else {
        Coord from = side == 0 ? c.cell_a : c.cell_b;
        Coord to = side == 0 ? c.cell_b : c.cell_a;
        child.cons[agent].edge.insert(
            {c.t, task.local.index(from), task.local.index(to)});
      }
      auto p = low_level(task.local, task.starts[agent], task.subgoals[agent],
                         child.cons[agent], cfg.horizon);
      if (!p) continue;
      child.paths[agent] = std::move(*p);
      refresh_cost(child);
      open.push(std::move(child));
    }
  }
  return {SolveStatus::NoSolution, {}};
}

// ---- controller ------------------------------------------------------------

std::vector<DeadlockEvent> Controller::maybe_trigger(const Environment& env) {
  const auto& agents = env.agents();
  cooldown_until_.resize(agents.size(), 0);

  auto deadlocked = detect_deadlocked(agents);
  std::erase_if(deadlocked, [&](int id) {
    return env.timestep() < cooldown_until_[id] || agent_under_plan(id);
  });
  if (deadlocked.empty()) return {};

  std::vector<DeadlockEvent> events;
  for (const DeadlockGroup& group :
       form_groups(deadlocked, agents, cfg_.fov)) {
    const bool busy = std::any_of(group.members.begin(), group.members.end(),
                                  [&](int id) { return agent_under_plan(id); });
    if (busy) continue;

    LocalMapTask task = build_local_task(group, env.map(), agents, cfg_);
    SolveResult res = solve_local(task, cfg_);

    DeadlockEvent ev;
    ev.step = env.timestep();
    ev.members = group.members;
    ev.bounds_min = task.origin;
    ev.bounds_max = {task.origin.row + task.local.height() - 1,
                     task.origin.col + task.local.width() - 1};
    switch (res.status) {
      case SolveStatus::Solved: ev.outcome = "solved"; break;
      case SolveStatus::NoSolution: ev.outcome = "no_solution"; break;
      case SolveStatus::Timeout: ev.outcome = "timeout"; break;
      case SolveStatus::TooLarge: ev.outcome = "too_large"; break;
    }

    ActivePlan active;
    active.members = group.members;
    if (res.status == SolveStatus::Solved) {
      active.plan = std::move(res.plan);
    } else {
      // Fallback: one step of random non-colliding member moves.
      active.plan.makespan = 1;
      active.plan.actions.resize(group.members.size());
      std::set<Coord> taken;
      for (const AgentState& a : agents) taken.insert(a.pos);
      for (size_t k = 0; k < group.members.size(); ++k) {
        const AgentState& a = agents[group.members[k]];
        std::vector<int> order{0, 1, 2, 3};
        std::shuffle(order.begin(), order.end(), rng_);
        Action pick = Action::Stay;
        for (int d : order) {
          Coord nxt = apply(a.pos, static_cast<Action>(d));
          if (env.map().is_free(nxt) && !taken.count(nxt)) {
            pick = static_cast<Action>(d);
            break;
          }
        }
        taken.insert(apply(a.pos, pick));
        active.plan.actions[k].push_back(pick);
      }
    }
    ev.makespan = active.plan.makespan;
    if (active.plan.makespan > 0) plans_.push_back(std::move(active));
    ++events_seen_;
    events.push_back(std::move(ev));
  }
  return events;
}

std::optional<Action> Controller::planned_action(int agent) const {
  for (const ActivePlan& p : plans_)
    for (size_t k = 0; k < p.members.size(); ++k)
      if (p.members[k] == agent && p.cursor < p.plan.makespan)
        return p.plan.actions[k][p.cursor];
  return std::nullopt;
}

bool Controller::agent_under_plan(int agent) const {
  for (const ActivePlan& p : plans_)
    for (int m : p.members)
      if (m == agent) return true;
  return false;
}

void Controller::after_step(Environment& env, const StepOutcome& outcome) {
  cooldown_until_.resize(env.agents().size(), 0);
  for (auto it = plans_.begin(); it != plans_.end();) {
    ActivePlan& p = *it;
    const bool aborted =
        std::any_of(p.members.begin(), p.members.end(), [&](int m) {
          return outcome.events[m] == StepEvent::Collision;
        });
    ++p.cursor;
    if (aborted || p.cursor >= p.plan.makespan) {
      env.clear_history(p.members);
      for (int m : p.members)
        cooldown_until_[m] = env.timestep() + cfg_.cooldown;
      it = plans_.erase(it);
    } else {
      ++it;
    }
  }
}

std::vector<Action> resolve_with_fixed(
    const std::vector<std::vector<double>>& q_vectors, const GridMap& map,
    const std::vector<AgentState>& agents,
    const std::vector<std::optional<Action>>& fixed) {
  const int n = static_cast<int>(agents.size());
  auto nth_best = [&](int i, int k) {
    std::vector<int> order(kNumActions);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return q_vectors[i][a] > q_vectors[i][b];
    });
    return static_cast<Action>(order[k]);
  };

  std::vector<Action> actions(n);
  for (int i = 0; i < n; ++i)
    actions[i] = fixed[i] ? *fixed[i] : nth_best(i, 0);

  auto conflicting = find_conflicting(map, agents, actions);
  for (int i : conflicting)
    if (!fixed[i]) actions[i] = nth_best(i, 1);

  auto residual = find_conflicting(map, agents, actions);
  while (!residual.empty()) {
    int victim = -1;
    for (int i : residual)
      if (!fixed[i]) victim = i;  // highest non-fixed id
    if (victim < 0) break;        // conflict purely among expert moves
    actions[victim] = Action::Stay;
    residual = find_conflicting(map, agents, actions);
  }
  return actions;
}

}  // namespace mapf::deadlock

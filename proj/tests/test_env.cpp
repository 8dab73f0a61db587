#include <random>

#include "doctest.h"
#include "mapf/env.hpp"

using namespace mapf;

namespace {

Environment make_env(int h, int w, std::vector<Coord> starts,
                     std::vector<Coord> goals,
                     std::vector<Coord> obstacles = {}) {
  GridMap m(h, w);
  for (Coord c : obstacles) m.set_obstacle(c, true);
  return Environment(std::move(m), std::move(starts), std::move(goals));
}

}  // namespace

TEST_CASE("reward table values") {
  CHECK(reward_for(StepEvent::Moved) == -0.075);
  CHECK(reward_for(StepEvent::StayedOnGoal) == 0.0);
  CHECK(reward_for(StepEvent::StayedOffGoal) == -0.075);
  CHECK(reward_for(StepEvent::Collision) == -0.5);
  CHECK(reward_for(StepEvent::Finished) == 3.0);
}

TEST_CASE("single agent movement, goal arrival and staying") {
  auto env = make_env(4, 4, {{0, 0}}, {{0, 2}});
  auto out = env.step({Action::Right});
  CHECK(out.events[0] == StepEvent::Moved);
  CHECK(out.rewards[0] == -0.075);
  CHECK(!out.done);
  out = env.step({Action::Right});
  CHECK(out.events[0] == StepEvent::Finished);
  CHECK(out.rewards[0] == 3.0);
  CHECK(out.done);
  out = env.step({Action::Stay});
  CHECK(out.events[0] == StepEvent::StayedOnGoal);
  CHECK(out.rewards[0] == 0.0);
  // stepping off the goal re-activates the agent
  out = env.step({Action::Left});
  CHECK(out.events[0] == StepEvent::Moved);
  CHECK(!out.done);
  out = env.step({Action::Stay});
  CHECK(out.events[0] == StepEvent::StayedOffGoal);
  CHECK(out.rewards[0] == -0.075);
}

TEST_CASE("invalid moves revert with the collision penalty") {
  auto env = make_env(3, 3, {{0, 0}}, {{2, 2}}, {{0, 1}});
  auto out = env.step({Action::Up});  // off-map
  CHECK(out.events[0] == StepEvent::Collision);
  CHECK(env.agents()[0].pos == Coord{0, 0});
  out = env.step({Action::Right});  // into obstacle
  CHECK(out.events[0] == StepEvent::Collision);
  CHECK(out.rewards[0] == -0.5);
}

TEST_CASE("vertex conflict reverts all movers into the cell") {
  auto env = make_env(3, 3, {{0, 0}, {0, 2}}, {{2, 0}, {2, 2}});
  auto out = env.step({Action::Right, Action::Left});  // both into (0,1)
  CHECK(out.events[0] == StepEvent::Collision);
  CHECK(out.events[1] == StepEvent::Collision);
  CHECK(env.agents()[0].pos == Coord{0, 0});
  CHECK(env.agents()[1].pos == Coord{0, 2});
}

TEST_CASE("mover into a stayer reverts only the mover") {
  auto env = make_env(3, 3, {{0, 0}, {0, 1}}, {{2, 0}, {2, 2}});
  auto out = env.step({Action::Right, Action::Stay});
  CHECK(out.events[0] == StepEvent::Collision);
  CHECK(out.events[1] == StepEvent::StayedOffGoal);
}

TEST_CASE("edge conflict reverts both swappers") {
  auto env = make_env(1, 3, {{0, 0}, {0, 1}}, {{0, 2}, {0, 0}});
  auto out = env.step({Action::Right, Action::Left});
  CHECK(out.events[0] == StepEvent::Collision);
  CHECK(out.events[1] == StepEvent::Collision);
  CHECK(env.agents()[0].pos == Coord{0, 0});
  CHECK(env.agents()[1].pos == Coord{0, 1});
}

TEST_CASE("chain following in one step is allowed") {
  auto env = make_env(1, 4, {{0, 0}, {0, 1}}, {{0, 2}, {0, 3}});
  auto out = env.step({Action::Right, Action::Right});
  CHECK(out.events[0] == StepEvent::Moved);
  CHECK(out.events[1] == StepEvent::Moved);
}

TEST_CASE("rotation cycle has no vertex or edge conflict") {
  auto env = make_env(2, 2, {{0, 0}, {0, 1}, {1, 1}, {1, 0}},
                      {{0, 1}, {1, 1}, {1, 0}, {0, 0}});
  auto out =
      env.step({Action::Right, Action::Down, Action::Left, Action::Up});
  for (auto e : out.events) CHECK(e == StepEvent::Finished);
  CHECK(out.done);
}

TEST_CASE("revert cascade: follower crashes into a reverted leader") {
  // leader blocked by obstacle, follower moving into the leader's cell
  auto env = make_env(1, 4, {{0, 1}, {0, 0}}, {{0, 3}, {0, 3}}, {{0, 2}});
  auto out = env.step({Action::Right, Action::Right});
  CHECK(out.events[0] == StepEvent::Collision);  // into obstacle
  CHECK(out.events[1] == StepEvent::Collision);  // into reverted leader
}

TEST_CASE("history is most-recent-first and capped at four") {
  auto env = make_env(1, 8, {{0, 0}}, {{0, 7}});
  for (int i = 0; i < 6; ++i) env.step({Action::Right});
  const auto& h = env.agents()[0].history;
  REQUIRE(h.size() == 4);
  CHECK(h[0] == Coord{0, 5});
  CHECK(h[1] == Coord{0, 4});
  CHECK(h[2] == Coord{0, 3});
  CHECK(h[3] == Coord{0, 2});
  env.clear_history({0});
  CHECK(env.agents()[0].history.empty());
}

TEST_CASE("find_conflicting matches the step collision set") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Instance inst;
    try {
      inst = generate_instance(6, 6, 0.25, 4, rng());
    } catch (const InstanceInfeasible&) {
      continue;
    }
    Environment env(inst);
    std::vector<Action> acts;
    for (int i = 0; i < 4; ++i)
      acts.push_back(static_cast<Action>(rng() % kNumActions));
    auto conf = find_conflicting(env.map(), env.agents(), acts);
    auto out = env.step(acts);
    std::vector<int> collided;
    for (int i = 0; i < 4; ++i)
      if (out.events[i] == StepEvent::Collision) collided.push_back(i);
    CHECK(conf == collided);
  }
}

TEST_CASE("fallback decode: lowest id of a shared-target pair keeps argmax") {
  GridMap m(3, 3);
  std::vector<AgentState> agents(2);
  agents[0] = {0, {0, 0}, {2, 2}, {}, true};
  agents[1] = {1, {0, 2}, {2, 0}, {}, true};
  // both argmax into (0,1); agent 1's second-best is Down
  std::vector<std::vector<double>> q = {
      {0.0, 0.1, 0.0, 0.9, 0.2},   // agent 0: Right best
      {0.0, 0.5, 0.9, 0.0, 0.2}};  // agent 1: Left best, Down second
  auto acts = resolve_with_fallback(q, m, agents);
  CHECK(acts[0] == Action::Right);
  CHECK(acts[1] == Action::Down);
}

TEST_CASE("fallback decode: swap pair keeps the lower id on its argmax") {
  GridMap m(1, 3);
  std::vector<AgentState> agents(2);
  agents[0] = {0, {0, 0}, {0, 2}, {}, true};
  agents[1] = {1, {0, 1}, {0, 0}, {}, true};
  std::vector<std::vector<double>> q = {
      {0.0, 0.0, 0.1, 0.9, 0.2},   // Right (swap attempt)
      {0.0, 0.0, 0.9, 0.5, 0.1}};  // Left; second best Right, which vacates
  auto acts = resolve_with_fallback(q, m, agents);
  CHECK(acts[0] == Action::Right);
  CHECK(acts[1] == Action::Right);
  CHECK(find_conflicting(m, agents, acts).empty());
}

TEST_CASE("fallback decode never leaves a conflict (fuzz)") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    Instance inst;
    try {
      inst = generate_instance(7, 7, 0.3, 5, rng());
    } catch (const InstanceInfeasible&) {
      continue;
    }
    Environment env(inst);
    for (int t = 0; t < 5; ++t) {
      std::vector<std::vector<double>> q(5, std::vector<double>(kNumActions));
      for (auto& qi : q)
        for (auto& v : qi) v = unit(rng);
      auto acts = resolve_with_fallback(q, env.map(), env.agents());
      auto out = env.step(acts);
      for (auto e : out.events) CHECK(e != StepEvent::Collision);
    }
  }
}

TEST_CASE("generated instances satisfy the placement contract") {
  std::mt19937_64 seed_rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const uint64_t seed = seed_rng();
    Instance a = generate_instance(10, 10, 0.3, 6, seed);
    Instance b = generate_instance(10, 10, 0.3, 6, seed);
    CHECK(a.map == b.map);
    CHECK(a.starts == b.starts);
    CHECK(a.goals == b.goals);
    for (int i = 0; i < 6; ++i) {
      CHECK(a.map.is_free(a.starts[i]));
      CHECK(a.map.is_free(a.goals[i]));
      CHECK(a.starts[i] != a.goals[i]);
      CHECK(a.map.connected(a.starts[i], a.goals[i]));
      for (int j = i + 1; j < 6; ++j) {
        CHECK(a.starts[i] != a.starts[j]);
        CHECK(a.goals[i] != a.goals[j]);
      }
    }
  }
}

TEST_CASE("infeasible placements throw") {
  CHECK_THROWS_AS(generate_instance(2, 2, 0.0, 5, 1), InstanceInfeasible);
  CHECK_THROWS_AS(generate_instance(5, 5, 1.0, 1, 1), InstanceInfeasible);
  CHECK_THROWS_AS(generate_instance(5, 5, -0.1, 1, 1), InstanceInfeasible);
}

TEST_CASE("place_agents works on a provided map") {
  GridMap m(6, 6);
  m.set_obstacle({3, 3}, true);
  Instance inst = place_agents(m, 4, 123);
  CHECK(inst.map == m);
  for (int i = 0; i < 4; ++i) {
    CHECK(m.is_free(inst.starts[i]));
    CHECK(m.connected(inst.starts[i], inst.goals[i]));
  }
}

TEST_CASE("triangular density stays in range with the right mean") {
  std::mt19937_64 rng(17);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double d = sample_triangular_density(rng);
    CHECK(d >= 0.0);
    CHECK(d <= 0.5);
    sum += d;
  }
  // triangular mean = (lo + mode + hi) / 3
  CHECK(sum / n == doctest::Approx((0.0 + 0.33 + 0.5) / 3).epsilon(0.01));
}

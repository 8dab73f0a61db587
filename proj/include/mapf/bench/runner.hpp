#pragma once

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mapf/bench/map_io.hpp"
#include "mapf/deadlock/deadlock.hpp"
#include "mapf/env.hpp"
#include "mapf/net/policy.hpp"
#include "mapf/observation.hpp"

namespace mapf::bench {

struct Scenario {
  std::optional<std::string> map_file;  // MovingAI map; random map otherwise
  int height = 10;
  int width = 10;
  double density = 0.2;
  int num_agents = 1;
  int max_steps = 256;
  std::vector<uint64_t> seeds;

  void validate() const {
    if (max_steps <= 0) throw std::runtime_error("max_steps must be positive");
    for (size_t i = 0; i < seeds.size(); ++i)
      for (size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j])
          throw std::runtime_error("scenario seeds must be distinct");
  }
};

struct RunFlags {
  bool deadlock = true;
  bool comm = true;
  bool crowd = true;
  double alpha = kDefaultCongestionAlpha;
  int fov = 9;
  int threads = 1;
  bool deterministic = false;  // zero wall-time fields for byte-stable output
};

struct InstanceResult {
  int instance_id = 0;
  uint64_t seed = 0;
  bool success = false;
  int episode_length = 0;  // max_steps on failure
  int collisions = 0;
  int deadlock_events = 0;
  double wall_time_ms = 0.0;
};

struct RunReport {
  std::vector<InstanceResult> rows;
  double sr = 0.0;
  double mean_el = 0.0;

  void finalize() {
    int succ = 0;
    double el = 0.0;
    for (const auto& r : rows) {
      succ += r.success ? 1 : 0;
      el += r.episode_length;
    }
    sr = rows.empty() ? 0.0 : double(succ) / rows.size();
    mean_el = rows.empty() ? 0.0 : el / rows.size();
  }
};

/// One full-stack episode: observation -> communication -> Q -> fallback
/// conflict resolution, with the deadlock breaker layered on when enabled.
template <class S>
InstanceResult run_episode(const net::Policy<S>& policy,
                           ad::ParameterStore<S>& store, Instance inst,
                           int max_steps, const RunFlags& flags,
                           uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Environment env(std::move(inst));
  const int n = env.num_agents();
  ObservationBuilder builder(env.map(),
                             [&] {
                               std::vector<Coord> goals;
                               for (const auto& a : env.agents())
                                 goals.push_back(a.goal);
                               return goals;
                             }(),
                             flags.fov, flags.alpha);
  builder.set_crowd_enabled(flags.crowd);
  deadlock::Controller breaker({.fov = flags.fov}, seed);

  std::vector<ad::ArrayX<S>> prev_comm(
      n, ad::ArrayX<S>::Zero(policy.config().hidden));

  InstanceResult res;
  res.seed = seed;
  res.episode_length = max_steps;
  for (int t = 0; t < max_steps; ++t) {
    if (flags.deadlock) res.deadlock_events +=
        static_cast<int>(breaker.maybe_trigger(env).size());

    ad::Graph<S> g(store);
    auto decision =
        policy.act(g, env.map(), env.agents(), builder, prev_comm, flags.comm);
    prev_comm = decision.comm_state;

    std::vector<Action> actions;
    if (flags.deadlock) {
      std::vector<std::optional<Action>> fixed(n);
      for (int i = 0; i < n; ++i) fixed[i] = breaker.planned_action(i);
      actions = deadlock::resolve_with_fixed(decision.q, env.map(),
                                             env.agents(), fixed);
    } else {
      actions = resolve_with_fallback(decision.q, env.map(), env.agents());
    }

    StepOutcome outcome = env.step(actions);
    for (StepEvent e : outcome.events)
      if (e == StepEvent::Collision) ++res.collisions;
    if (flags.deadlock) breaker.after_step(env, outcome);
    if (outcome.done) {
      res.success = true;
      res.episode_length = t + 1;
      break;
    }
  }
  if (!flags.deterministic)
    res.wall_time_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
  return res;
}

/// Executes every (seed) instance of the scenario; rows are ordered by
/// instance id regardless of worker scheduling.
template <class S>
RunReport run_batch(const Scenario& scenario, const net::Policy<S>& policy,
                    ad::ParameterStore<S>& store, const RunFlags& flags) {
  scenario.validate();
  std::optional<GridMap> file_map;
  if (scenario.map_file) file_map = load_movingai_map(*scenario.map_file);

  RunReport report;
  report.rows.resize(scenario.seeds.size());
  auto run_one = [&](int idx) {
    const uint64_t seed = scenario.seeds[idx];
    Instance inst =
        file_map ? place_agents(*file_map, scenario.num_agents, seed)
                 : generate_instance(scenario.height, scenario.width,
                                     scenario.density, scenario.num_agents,
                                     seed);
    report.rows[idx] = run_episode(policy, store, std::move(inst),
                                   scenario.max_steps, flags, seed);
    report.rows[idx].instance_id = idx;
  };

  const int workers = std::max(1, flags.threads);
  if (workers == 1) {
    for (size_t i = 0; i < scenario.seeds.size(); ++i)
      run_one(static_cast<int>(i));
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int i = next++; i < static_cast<int>(scenario.seeds.size());
             i = next++)
          run_one(i);
      });
    for (auto& th : pool) th.join();
  }
  report.finalize();
  return report;
}

}  // namespace mapf::bench

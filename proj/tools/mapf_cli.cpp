#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mapf/bench/report.hpp"
#include "mapf/bench/runner.hpp"
#include "mapf/train/trainer.hpp"

namespace {

using Scalar = float;

std::vector<uint64_t> parse_seeds(const std::string& spec) {
  std::vector<uint64_t> seeds;
  if (spec.find(',') != std::string::npos) {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
  } else {
    // a bare number is a count: seeds 0..N-1
    const uint64_t n = std::stoull(spec);
    for (uint64_t s = 0; s < n; ++s) seeds.push_back(s);
  }
  return seeds;
}

std::vector<int> parse_int_list(const std::string& spec) {
  std::vector<int> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

struct BenchArgs {
  std::string map_file;
  std::string agents = "1";
  double density = 0.2;
  int size = 10;
  std::string seeds = "50";
  int max_steps = 256;
  std::string checkpoint;
  int fov = 0;  // 0 -> from checkpoint manifest
  double alpha = mapf::kDefaultCongestionAlpha;
  bool no_deadlock = false, no_comm = false, no_crowd = false;
  std::string out = "-";
  std::string format = "csv";
  int threads = 1;
  bool deterministic = false;
};

void add_common_flags(CLI::App* cmd, BenchArgs& a) {
  cmd->add_option("--map", a.map_file, "MovingAI .map file (random map if absent)");
  cmd->add_option("--agents", a.agents, "agent count, or comma list for plot mode");
  cmd->add_option("--density", a.density, "obstacle density for random maps");
  cmd->add_option("--size", a.size, "side length of random square maps");
  cmd->add_option("--seeds", a.seeds, "seed count N (runs 0..N-1) or comma list");
  cmd->add_option("--max-steps", a.max_steps, "episode step limit");
  cmd->add_option("--checkpoint", a.checkpoint, "policy checkpoint")->required();
  cmd->add_option("--fov", a.fov, "field-of-view override");
  cmd->add_option("--alpha", a.alpha, "congestion mixing weight");
  cmd->add_flag("--no-deadlock", a.no_deadlock, "disable the deadlock breaker");
  cmd->add_flag("--no-comm", a.no_comm, "disable communication");
  cmd->add_flag("--no-crowd", a.no_crowd, "zero the congestion channels");
  cmd->add_option("--out", a.out, "output path ('-' for stdout)");
  cmd->add_option("--format", a.format, "csv | json | plot")
      ->check(CLI::IsMember({"csv", "json", "plot"}));
  cmd->add_option("--threads", a.threads, "parallel instances");
  cmd->add_flag("--deterministic", a.deterministic,
                "single thread, zeroed wall times (byte-stable reports)");
}

mapf::bench::RunFlags make_flags(const BenchArgs& a, int fov) {
  mapf::bench::RunFlags f;
  f.deadlock = !a.no_deadlock;
  f.comm = !a.no_comm;
  f.crowd = !a.no_crowd;
  f.alpha = a.alpha;
  f.fov = fov;
  f.threads = a.deterministic ? 1 : a.threads;
  f.deterministic = a.deterministic;
  return f;
}

int run_bench(const BenchArgs& a) {
  mapf::ad::ParameterStore<Scalar> store;
  mapf::net::NetworkConfig net_cfg =
      mapf::train::load_policy_checkpoint(a.checkpoint, store);
  if (a.fov > 0) net_cfg.fov = a.fov;
  mapf::net::Policy<Scalar> policy(net_cfg);

  mapf::bench::Scenario sc;
  if (!a.map_file.empty()) sc.map_file = a.map_file;
  sc.height = sc.width = a.size;
  sc.density = a.density;
  sc.max_steps = a.max_steps;
  sc.seeds = parse_seeds(a.seeds);
  const auto flags = make_flags(a, net_cfg.fov);

  if (a.format == "plot") {
    std::vector<mapf::bench::PlotPoint> points;
    for (int agents : parse_int_list(a.agents)) {
      sc.num_agents = agents;
      auto report = mapf::bench::run_batch(sc, policy, store, flags);
      points.push_back({agents, report.sr, report.mean_el});
      std::cerr << "agents=" << agents << " sr=" << report.sr
                << " mean_el=" << report.mean_el << "\n";
    }
    const std::string base = a.out == "-" ? "bench" : a.out;
    mapf::bench::write_file(base + "_sr.svg", mapf::bench::plot_sr_svg(points));
    mapf::bench::write_file(base + "_el.svg", mapf::bench::plot_el_svg(points));
    return 0;
  }

  sc.num_agents = std::stoi(a.agents);
  auto report = mapf::bench::run_batch(sc, policy, store, flags);
  mapf::bench::emit_report(report, a.format, a.out);
  return 0;
}

int run_solve(const BenchArgs& a, uint64_t seed) {
  mapf::ad::ParameterStore<Scalar> store;
  mapf::net::NetworkConfig net_cfg =
      mapf::train::load_policy_checkpoint(a.checkpoint, store);
  if (a.fov > 0) net_cfg.fov = a.fov;
  mapf::net::Policy<Scalar> policy(net_cfg);

  mapf::Instance inst =
      a.map_file.empty()
          ? mapf::generate_instance(a.size, a.size, a.density,
                                    std::stoi(a.agents), seed)
          : mapf::place_agents(mapf::bench::load_movingai_map(a.map_file),
                               std::stoi(a.agents), seed);

  mapf::Environment env(inst);
  const int n = env.num_agents();
  std::vector<mapf::Coord> goals;
  for (const auto& ag : env.agents()) goals.push_back(ag.goal);
  mapf::ObservationBuilder builder(env.map(), goals, net_cfg.fov, a.alpha);
  builder.set_crowd_enabled(!a.no_crowd);
  mapf::deadlock::Controller breaker({.fov = net_cfg.fov}, seed);
  std::vector<mapf::ad::ArrayX<Scalar>> prev_comm(
      n, mapf::ad::ArrayX<Scalar>::Zero(net_cfg.hidden));

  const char* action_names[] = {"U", "D", "L", "R", "S"};
  for (int t = 0; t < a.max_steps; ++t) {
    if (!a.no_deadlock) breaker.maybe_trigger(env);
    mapf::ad::Graph<Scalar> g(store);
    auto decision =
        policy.act(g, env.map(), env.agents(), builder, prev_comm, !a.no_comm);
    prev_comm = decision.comm_state;
    std::vector<mapf::Action> actions;
    if (!a.no_deadlock) {
      std::vector<std::optional<mapf::Action>> fixed(n);
      for (int i = 0; i < n; ++i) fixed[i] = breaker.planned_action(i);
      actions = mapf::deadlock::resolve_with_fixed(decision.q, env.map(),
                                                   env.agents(), fixed);
    } else {
      actions =
          mapf::resolve_with_fallback(decision.q, env.map(), env.agents());
    }
    std::cout << "t=" << t;
    for (int i = 0; i < n; ++i)
      std::cout << "  a" << i << ":(" << env.agents()[i].pos.row << ","
                << env.agents()[i].pos.col << ")"
                << action_names[int(actions[i])];
    std::cout << "\n";
    auto out = env.step(actions);
    if (!a.no_deadlock) breaker.after_step(env, out);
    if (out.done) {
      std::cout << "solved in " << t + 1 << " steps\n";
      return 0;
    }
  }
  std::cout << "unsolved after " << a.max_steps << " steps\n";
  return 1;
}

int run_inspect(const std::string& path) {
  mapf::GridMap map = mapf::bench::load_movingai_map(path);
  int free_cells = 0;
  for (int r = 0; r < map.height(); ++r)
    for (int c = 0; c < map.width(); ++c)
      if (map.is_free({r, c})) ++free_cells;
  std::cout << "height " << map.height() << "\nwidth " << map.width()
            << "\nfree " << free_cells << "\nobstacles "
            << map.size() - free_cells << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grid multi-agent pathfinding toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run the training loop");
  std::string config_path, train_out;
  uint64_t train_seed = 0;
  bool has_seed = false;
  train->add_option("--config", config_path, "key=value training config");
  train->add_option("--out", train_out, "checkpoint output path");
  train->add_option("--seed", train_seed, "seed override")
      ->each([&](const std::string&) { has_seed = true; });

  // bench / solve
  BenchArgs bench_args, solve_args;
  auto* bench = app.add_subcommand("bench", "run scenario batches");
  add_common_flags(bench, bench_args);
  auto* solve =
      app.add_subcommand("solve", "run one instance and print the trajectory");
  add_common_flags(solve, solve_args);
  uint64_t solve_seed = 0;
  solve->add_option("--seed", solve_seed, "instance seed");

  // inspect-map
  auto* inspect = app.add_subcommand("inspect-map", "parse and summarize a map");
  std::string inspect_path;
  inspect->add_option("--map", inspect_path, "MovingAI .map file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      mapf::train::TrainConfig cfg =
          config_path.empty() ? mapf::train::TrainConfig{}
                              : mapf::train::TrainConfig::from_file(config_path);
      if (!train_out.empty()) cfg.checkpoint_path = train_out;
      if (has_seed) cfg.seed = train_seed;
      mapf::train::Trainer<Scalar> trainer(cfg);
      trainer.run();
      std::cout << "trained " << trainer.learner_steps() << " steps, "
                << trainer.episodes() << " episodes, final stage "
                << trainer.curriculum().stage() << "\n";
      return 0;
    }
    if (bench->parsed()) return run_bench(bench_args);
    if (solve->parsed()) return run_solve(solve_args, solve_seed);
    if (inspect->parsed()) return run_inspect(inspect_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

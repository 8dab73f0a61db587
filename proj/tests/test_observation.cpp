#include <random>

#include "doctest.h"
#include "mapf/observation.hpp"

using namespace mapf;

namespace {

GridMap random_map(int h, int w, double density, std::mt19937_64& rng) {
  GridMap m(h, w);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (unit(rng) < density) m.set_obstacle({r, c}, true);
  return m;
}

std::vector<AgentState> random_agents(const GridMap& m, int n,
                                      std::mt19937_64& rng) {
  auto free = m.free_cells();
  std::shuffle(free.begin(), free.end(), rng);
  std::vector<AgentState> agents(n);
  for (int i = 0; i < n; ++i) {
    agents[i].id = i;
    agents[i].pos = free[i];
    agents[i].goal = free[(i + n) % free.size()];
    agents[i].active = true;
  }
  return agents;
}

// brute-force recount, written against the window definition directly
void brute_counts(const GridMap& m, const std::vector<AgentState>& agents,
                  Coord cell, int& obstacles, int& agent_count) {
  obstacles = 0;
  agent_count = 0;
  for (int dr = -2; dr <= 2; ++dr)
    for (int dc = -2; dc <= 2; ++dc) {
      Coord c{cell.row + dr, cell.col + dc};
      if (!m.in_bounds(c) || m.is_obstacle(c)) ++obstacles;
    }
  for (const auto& a : agents)
    if (std::abs(a.pos.row - cell.row) <= 2 &&
        std::abs(a.pos.col - cell.col) <= 2)
      ++agent_count;
}

}  // namespace

TEST_CASE("congestion matches brute-force recounts") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    GridMap m = random_map(10, 10, 0.3, rng);
    if (m.free_cells().size() < 8) continue;
    auto agents = random_agents(m, 5, rng);
    Coord cell{int(rng() % 10), int(rng() % 10)};
    int o, a;
    brute_counts(m, agents, cell, o, a);
    CHECK(static_congestion(m, cell) == o / 25.0);  // exact at 64-bit
    const int denom = 25 - a - o;
    double expect_dyn =
        a == 0 ? 0.0 : (denom <= 0 ? 1.0 : std::min(1.0, double(a) / denom));
    CHECK(dynamic_congestion(m, agents, cell) == expect_dyn);
    CHECK(combined_congestion_at(m, agents, cell, 0.7) ==
          doctest::Approx(0.7 * (o / 25.0) + 0.3 * expect_dyn)
              .epsilon(1e-12));
  }
}

TEST_CASE("dynamic congestion edge cases") {
  GridMap m(9, 9);
  std::vector<AgentState> none;
  CHECK(dynamic_congestion(m, none, {4, 4}) == 0.0);

  // pack the window full of agents: denominator goes non-positive
  std::vector<AgentState> crowd;
  for (int dr = -2; dr <= 2; ++dr)
    for (int dc = -2; dc <= 2; ++dc)
      crowd.push_back({int(crowd.size()), {4 + dr, 4 + dc}, {0, 0}, {}, true});
  CHECK(dynamic_congestion(m, crowd, {4, 4}) == 1.0);
}

TEST_CASE("combined congestion is the alpha mix") {
  CHECK(combined_congestion(0.4, 0.8, 0.7) ==
        doctest::Approx(0.7 * 0.4 + 0.3 * 0.8).epsilon(1e-15));
  CHECK(combined_congestion(0.4, 0.8, 1.0) == doctest::Approx(0.4));
  CHECK(combined_congestion(0.4, 0.8, 0.0) == doctest::Approx(0.8));
}

TEST_CASE("out-of-map FOV cells read as obstacles") {
  GridMap m(10, 10);
  std::vector<AgentState> agents(1);
  agents[0] = {0, {0, 0}, {9, 9}, {}, true};
  ObservationBuilder b(m, {{9, 9}});
  auto obs = b.build(agents, 0);
  // agent at the corner: rows/cols < 4 of the 9x9 window are outside
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) {
      const bool outside = r < 4 || c < 4;
      CHECK(obs.at(kChObstacle, r, c) == (outside ? 1.0f : 0.0f));
    }
  CHECK(obs.at(kChAgents, 4, 4) == 1.0f);  // self at the center
}

TEST_CASE("heuristic channels flag exactly the distance-decreasing moves") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    GridMap m = random_map(9, 9, 0.25, rng);
    if (m.free_cells().size() < 4) continue;
    auto agents = random_agents(m, 2, rng);
    std::vector<Coord> goals = {agents[0].goal, agents[1].goal};
    ObservationBuilder b(m, goals);
    auto obs = b.build(agents, 0);
    const auto& dist = b.distance_field(0);
    const Coord center = agents[0].pos;
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c) {
        Coord cell{center.row - 4 + r, center.col - 4 + c};
        for (int dir = 0; dir < 4; ++dir) {
          bool expect = false;
          if (m.is_free(cell) && dist[m.index(cell)] != kUnreachable) {
            Coord nxt = apply(cell, static_cast<Action>(dir));
            expect = m.is_free(nxt) &&
                     dist[m.index(nxt)] < dist[m.index(cell)];
          }
          CHECK(obs.at(kChHeurUp + dir, r, c) == (expect ? 1.0f : 0.0f));
        }
      }
  }
}

TEST_CASE("masking removes only the masked agent's occupancy bit") {
  GridMap m(11, 11);
  std::vector<AgentState> agents(3);
  agents[0] = {0, {5, 5}, {0, 0}, {}, true};
  agents[1] = {1, {5, 7}, {0, 1}, {}, true};
  agents[2] = {2, {4, 5}, {0, 2}, {}, true};
  ObservationBuilder b(m, {{0, 0}, {0, 1}, {0, 2}});
  auto plain = b.build(agents, 0);
  auto masked = b.build(agents, 0, 1);
  int diffs = 0;
  for (size_t i = 0; i < plain.data.size(); ++i)
    if (plain.data[i] != masked.data[i]) ++diffs;
  CHECK(diffs == 1);
  CHECK(plain.at(kChAgents, 4, 6) == 1.0f);   // agent 1 at offset (+0,+2)
  CHECK(masked.at(kChAgents, 4, 6) == 0.0f);
  // crowd channels untouched by masking
  for (int ch = kChCrowdUp; ch <= kChCrowdRight; ++ch)
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c)
        CHECK(plain.at(ch, r, c) == masked.at(ch, r, c));
}

TEST_CASE("crowd planes mark strictly congestion-decreasing moves") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    GridMap m = random_map(12, 12, 0.2, rng);
    if (m.free_cells().size() < 10) continue;
    auto agents = random_agents(m, 6, rng);
    std::vector<Coord> goals;
    for (auto& a : agents) goals.push_back(a.goal);
    ObservationBuilder b(m, goals);
    auto obs = b.build(agents, 0);
    const Coord center = agents[0].pos;
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c) {
        Coord cell{center.row - 4 + r, center.col - 4 + c};
        for (int d = 0; d < 4; ++d) {
          Coord tgt = apply(cell, static_cast<Action>(d));
          bool expect = false;
          if (m.in_bounds(cell) && m.is_free(tgt))
            expect = combined_congestion_at(m, agents, tgt, 0.7) <
                     combined_congestion_at(m, agents, cell, 0.7);
          CHECK(obs.at(kChCrowdUp + d, r, c) == (expect ? 1.0f : 0.0f));
        }
      }
  }
}

TEST_CASE("disabling crowd channels zeroes them and nothing else") {
  std::mt19937_64 rng(13);
  GridMap m = random_map(10, 10, 0.2, rng);
  auto agents = random_agents(m, 4, rng);
  std::vector<Coord> goals;
  for (auto& a : agents) goals.push_back(a.goal);
  ObservationBuilder on(m, goals), off(m, goals);
  off.set_crowd_enabled(false);
  auto a = on.build(agents, 0), b = off.build(agents, 0);
  const int plane = 9 * 9;
  for (int i = 0; i < kChCrowdUp * plane; ++i) CHECK(a.data[i] == b.data[i]);
  for (size_t i = kChCrowdUp * plane; i < b.data.size(); ++i)
    CHECK(b.data[i] == 0.0f);
}

TEST_CASE("alpha weighting reaches the crowd planes") {
  // one crowded corner: static-only (alpha=1) and dynamic-only (alpha=0)
  // disagree somewhere over many layouts
  std::mt19937_64 rng(55);
  bool differs = false;
  for (int trial = 0; trial < 20 && !differs; ++trial) {
    GridMap m = random_map(10, 10, 0.25, rng);
    if (m.free_cells().size() < 8) continue;
    auto agents = random_agents(m, 6, rng);
    std::vector<Coord> goals;
    for (auto& a : agents) goals.push_back(a.goal);
    ObservationBuilder s(m, goals, 9, 1.0), d(m, goals, 9, 0.0);
    if (s.build(agents, 0).data != d.build(agents, 0).data) differs = true;
  }
  CHECK(differs);
}

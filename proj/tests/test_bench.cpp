#include <random>

#include "doctest.h"
#include "mapf/bench/report.hpp"
#include "mapf/bench/runner.hpp"

using namespace mapf;
using namespace mapf::bench;

namespace {

net::NetworkConfig tiny_net() {
  net::NetworkConfig cfg;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.pos_dim = 4;
  cfg.q_hidden = 8;
  cfg.conv_channels = {4};
  return cfg;
}

}  // namespace

TEST_CASE("map parser handles the documented glyph alphabet") {
  GridMap m = parse_movingai_map("type octile\nheight 2\nwidth 2\nmap\n..\n.@\n");
  CHECK(m.height() == 2);
  CHECK(m.width() == 2);
  CHECK(m.free_cells().size() == 3);
  CHECK(m.is_obstacle({1, 1}));

  GridMap g = parse_movingai_map(
      "type octile\nheight 1\nwidth 6\nmap\n.G@OTW\n");
  CHECK(g.is_free({0, 0}));
  CHECK(g.is_free({0, 1}));  // G is passable
  for (int c = 2; c < 6; ++c) CHECK(g.is_obstacle({0, c}));
}

TEST_CASE("map parser trusts the file header for dimensions") {
  // headers declare 3 rows x 2 cols regardless of how prose lists the map
  GridMap m = parse_movingai_map("type octile\nheight 3\nwidth 2\nmap\n..\n..\n..\n");
  CHECK(m.height() == 3);
  CHECK(m.width() == 2);
}

TEST_CASE("map parser reports malformed input with line and column") {
  // short row
  try {
    parse_movingai_map("type octile\nheight 2\nwidth 3\nmap\n...\n..\n");
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(e.line == 6);
  }
  // unknown glyph
  try {
    parse_movingai_map("type octile\nheight 1\nwidth 3\nmap\n.x.\n");
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(e.line == 5);
    CHECK(e.column == 2);
  }
  CHECK_THROWS_AS(parse_movingai_map("height 2\nwidth 2\nmap\n..\n..\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_movingai_map("type octile\nheight 0\nwidth 2\nmap\n"),
                  ParseError);
  CHECK_THROWS_AS(
      parse_movingai_map("type octile\nheight 4\nwidth 2\nmap\n..\n..\n"),
      ParseError);  // truncated
}

TEST_CASE("serialize(parse(text)) reproduces canonical maps glyph-for-glyph") {
  const std::string canonical =
      "type octile\nheight 3\nwidth 4\nmap\n..@.\n.@..\n....\n";
  CHECK(serialize_movingai_map(parse_movingai_map(canonical)) == canonical);
  // windows line endings parse to the same grid
  std::string crlf = canonical;
  std::string with_cr;
  for (char ch : crlf) {
    if (ch == '\n') with_cr += '\r';
    with_cr += ch;
  }
  CHECK(parse_movingai_map(with_cr) == parse_movingai_map(canonical));
}

TEST_CASE("empty report emits a header-only CSV") {
  RunReport empty;
  empty.finalize();
  CHECK(to_csv(empty) ==
        "instance_id,seed,success,episode_length,collisions,deadlock_events,"
        "wall_time_ms\n");
}

TEST_CASE("CSV aggregate line matches a recomputation from the rows") {
  RunReport r;
  r.rows = {{0, 7, true, 12, 0, 1, 0.0}, {1, 8, false, 64, 3, 0, 0.0}};
  r.finalize();
  CHECK(r.sr == doctest::Approx(0.5));
  CHECK(r.mean_el == doctest::Approx(38.0));
  const std::string csv = to_csv(r);
  CHECK(csv.find("# sr=0.500000 mean_el=38.000000") != std::string::npos);
}

TEST_CASE("JSON round-trip preserves every field") {
  RunReport r;
  r.rows = {{0, 17, true, 12, 2, 1, 3.25}, {1, 99, false, 64, 0, 4, 0.5}};
  r.finalize();
  RunReport back = report_from_json(to_json(r));
  REQUIRE(back.rows.size() == r.rows.size());
  for (size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(back.rows[i].instance_id == r.rows[i].instance_id);
    CHECK(back.rows[i].seed == r.rows[i].seed);
    CHECK(back.rows[i].success == r.rows[i].success);
    CHECK(back.rows[i].episode_length == r.rows[i].episode_length);
    CHECK(back.rows[i].collisions == r.rows[i].collisions);
    CHECK(back.rows[i].deadlock_events == r.rows[i].deadlock_events);
    CHECK(back.rows[i].wall_time_ms == r.rows[i].wall_time_ms);
  }
  CHECK(back.sr == r.sr);
  CHECK(back.mean_el == r.mean_el);
}

TEST_CASE("plots contain a data polyline for each metric") {
  std::vector<PlotPoint> pts = {{1, 0.98, 14.0}, {4, 0.91, 33.5}, {8, 0.72, 60.0}};
  for (const std::string& svg : {plot_sr_svg(pts), plot_el_svg(pts)}) {
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
  }
}

TEST_CASE("scenario validation rejects bad configurations") {
  Scenario sc;
  sc.max_steps = 0;
  CHECK_THROWS(sc.validate());
  sc.max_steps = 10;
  sc.seeds = {1, 2, 1};
  CHECK_THROWS(sc.validate());
}

TEST_CASE("bench runs are deterministic and failures report EL = max_steps") {
  net::Policy<float> policy(tiny_net());
  ad::ParameterStore<float> store;
  policy.build(store, 42);

  Scenario sc;
  sc.height = sc.width = 8;
  sc.density = 0.15;
  sc.num_agents = 3;
  sc.max_steps = 20;
  sc.seeds = {0, 1, 2, 3, 4, 5};
  RunFlags flags;
  flags.deterministic = true;
  flags.fov = tiny_net().fov;

  RunReport a = run_batch(sc, policy, store, flags);
  RunReport b = run_batch(sc, policy, store, flags);
  CHECK(to_csv(a) == to_csv(b));

  CHECK(a.sr >= 0.0);
  CHECK(a.sr <= 1.0);
  for (const auto& row : a.rows) {
    if (!row.success) CHECK(row.episode_length == sc.max_steps);
    CHECK(row.episode_length >= 1);
    CHECK(row.episode_length <= sc.max_steps);
    CHECK(row.wall_time_ms == 0.0);  // deterministic mode zeroes timing
  }
}

TEST_CASE("deadlock module is inert on runs that never trigger it") {
  net::Policy<float> policy(tiny_net());
  ad::ParameterStore<float> store;
  policy.build(store, 77);

  Scenario sc;
  sc.height = sc.width = 7;
  sc.density = 0.1;
  sc.num_agents = 2;
  sc.max_steps = 30;
  for (uint64_t s = 0; s < 12; ++s) sc.seeds.push_back(s);
  RunFlags with, without;
  with.deterministic = without.deterministic = true;
  with.fov = without.fov = tiny_net().fov;
  without.deadlock = false;

  RunReport on = run_batch(sc, policy, store, with);
  RunReport off = run_batch(sc, policy, store, without);
  for (size_t i = 0; i < on.rows.size(); ++i) {
    if (on.rows[i].deadlock_events == 0 && on.rows[i].success) {
      CHECK(off.rows[i].success == on.rows[i].success);
      CHECK(off.rows[i].episode_length == on.rows[i].episode_length);
    }
  }
}

TEST_CASE("run_batch loads MovingAI maps from disk") {
  const std::string path = "bench_test.map";
  {
    std::ofstream f(path);
    f << "type octile\nheight 6\nwidth 6\nmap\n......\n......\n..@@..\n"
         "..@@..\n......\n......\n";
  }
  net::Policy<float> policy(tiny_net());
  ad::ParameterStore<float> store;
  policy.build(store, 9);
  Scenario sc;
  sc.map_file = path;
  sc.num_agents = 2;
  sc.max_steps = 40;
  sc.seeds = {3, 4};
  RunFlags flags;
  flags.deterministic = true;
  flags.fov = tiny_net().fov;
  RunReport r = run_batch(sc, policy, store, flags);
  CHECK(r.rows.size() == 2);
  std::remove(path.c_str());
}

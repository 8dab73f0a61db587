#include "mapf/bench/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mapf::bench {

namespace {

std::string fmt_ms(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string to_csv(const RunReport& report) {
  std::ostringstream out;
  out << "instance_id,seed,success,episode_length,collisions,deadlock_events,"
         "wall_time_ms\n";
  for (const auto& r : report.rows)
    out << r.instance_id << ',' << r.seed << ',' << (r.success ? 1 : 0) << ','
        << r.episode_length << ',' << r.collisions << ',' << r.deadlock_events
        << ',' << fmt_ms(r.wall_time_ms) << '\n';
  if (!report.rows.empty()) {
    char agg[64];
    std::snprintf(agg, sizeof(agg), "# sr=%.6f mean_el=%.6f", report.sr,
                  report.mean_el);
    out << agg << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const RunReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"instance_id", r.instance_id},
                    {"seed", r.seed},
                    {"success", r.success},
                    {"episode_length", r.episode_length},
                    {"collisions", r.collisions},
                    {"deadlock_events", r.deadlock_events},
                    {"wall_time_ms", r.wall_time_ms}});
  return {{"rows", rows}, {"sr", report.sr}, {"mean_el", report.mean_el}};
}

RunReport report_from_json(const nlohmann::json& j) {
  RunReport report;
  for (const auto& jr : j.at("rows")) {
    InstanceResult r;
    r.instance_id = jr.at("instance_id").get<int>();
    r.seed = jr.at("seed").get<uint64_t>();
    r.success = jr.at("success").get<bool>();
    r.episode_length = jr.at("episode_length").get<int>();
    r.collisions = jr.at("collisions").get<int>();
    r.deadlock_events = jr.at("deadlock_events").get<int>();
    r.wall_time_ms = jr.at("wall_time_ms").get<double>();
    report.rows.push_back(r);
  }
  report.sr = j.at("sr").get<double>();
  report.mean_el = j.at("mean_el").get<double>();
  return report;
}

namespace {

// Minimal line chart; one polyline over agent count.
std::string svg_chart(const std::vector<PlotPoint>& points,
                      const std::string& title, const std::string& ylabel,
                      double PlotPoint::* field, double y_min, double y_max) {
  constexpr int w = 640, h = 420, ml = 70, mr = 30, mt = 50, mb = 60;
  const int pw = w - ml - mr, ph = h - mt - mb;

  auto pts = points;
  std::sort(pts.begin(), pts.end(),
            [](const PlotPoint& a, const PlotPoint& b) {
              return a.agents < b.agents;
            });
  double x_min = pts.empty() ? 0 : pts.front().agents;
  double x_max = pts.empty() ? 1 : pts.back().agents;
  if (x_max <= x_min) x_max = x_min + 1;
  if (y_max <= y_min) y_max = y_min + 1;

  auto px = [&](double x) { return ml + pw * (x - x_min) / (x_max - x_min); };
  auto py = [&](double y) {
    return mt + ph - ph * (y - y_min) / (y_max - y_min);
  };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
    << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"28\" text-anchor=\"middle\" "
       "font-size=\"16\">"
    << title << "</text>\n"
    << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
    << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
    << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 15
    << "\" text-anchor=\"middle\" font-size=\"13\">agents</text>\n"
    << "<text x=\"20\" y=\"" << mt + ph / 2
    << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 20 "
    << mt + ph / 2 << ")\">" << ylabel << "</text>\n";

  for (int k = 0; k <= 4; ++k) {
    const double y = y_min + (y_max - y_min) * k / 4.0;
    char lab[32];
    std::snprintf(lab, sizeof(lab), "%.2f", y);
    s << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << lab << "</text>\n";
  }
  for (const auto& p : pts)
    s << "<text x=\"" << px(p.agents) << "\" y=\"" << mt + ph + 18
      << "\" text-anchor=\"middle\" font-size=\"11\">" << p.agents
      << "</text>\n";

  if (!pts.empty()) {
    s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" "
         "points=\"";
    for (const auto& p : pts) s << px(p.agents) << ',' << py(p.*field) << ' ';
    s << "\"/>\n";
    for (const auto& p : pts)
      s << "<circle cx=\"" << px(p.agents) << "\" cy=\"" << py(p.*field)
        << "\" r=\"3.5\" fill=\"#1f77b4\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::string plot_sr_svg(const std::vector<PlotPoint>& points) {
  return svg_chart(points, "Success rate vs agent count", "success rate",
                   &PlotPoint::sr, 0.0, 1.0);
}

std::string plot_el_svg(const std::vector<PlotPoint>& points) {
  double top = 1.0;
  for (const auto& p : points) top = std::max(top, p.mean_el);
  return svg_chart(points, "Episode length vs agent count",
                   "mean episode length", &PlotPoint::mean_el, 0.0, top);
}

void write_file(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << content;
  if (!f) throw IoError("write failed: " + path);
}

void emit_report(const RunReport& report, const std::string& format,
                 const std::string& path) {
  if (format == "csv") {
    write_file(path, to_csv(report));
  } else if (format == "json") {
    write_file(path, to_json(report).dump(2) + "\n");
  } else {
    throw IoError("unknown report format: " + format);
  }
}

}  // namespace mapf::bench

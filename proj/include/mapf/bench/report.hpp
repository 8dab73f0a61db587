#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mapf/bench/runner.hpp"

namespace mapf::bench {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-row CSV plus a trailing aggregate comment line. Empty reports emit
/// the header only.
std::string to_csv(const RunReport& report);

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// One summary point per agent count, for the scaling plots.
struct PlotPoint {
  int agents = 0;
  double sr = 0.0;
  double mean_el = 0.0;
};

/// Line charts of success rate / mean episode length against agent count.
std::string plot_sr_svg(const std::vector<PlotPoint>& points);
std::string plot_el_svg(const std::vector<PlotPoint>& points);

/// format "csv" or "json"; writes to `path` ("-" for stdout). Plot output
/// goes through the plot_* functions since it spans several reports.
void emit_report(const RunReport& report, const std::string& format,
                 const std::string& path);

void write_file(const std::string& path, const std::string& content);

}  // namespace mapf::bench

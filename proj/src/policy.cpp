#include "mapf/net/policy.hpp"

#include <cmath>

namespace mapf::net {

std::vector<int> fov_neighbors(const std::vector<AgentState>& agents, int i,
                               int fov) {
  const int half = fov / 2;
  std::vector<int> out;
  for (const AgentState& a : agents) {
    if (a.id == i) continue;
    if (std::abs(a.pos.row - agents[i].pos.row) <= half &&
        std::abs(a.pos.col - agents[i].pos.col) <= half)
      out.push_back(a.id);
  }
  return out;
}

}  // namespace mapf::net

#pragma once

#include <stdexcept>
#include <string>

#include "mapf/grid.hpp"

namespace mapf::bench {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line, int col)
      : std::runtime_error(what + " (line " + std::to_string(line) +
                           ", column " + std::to_string(col) + ")"),
        line(line),
        column(col) {}
  int line;
  int column;
};

/// MovingAI grid format: `type octile`, `height H`, `width W`, `map`, then
/// H rows of W glyphs. `.`/`G` are passable; `@`/`O`/`T`/`W` are blocked.
GridMap parse_movingai_map(const std::string& text);

GridMap load_movingai_map(const std::string& path);

/// Canonical re-serialization (passable -> `.`, blocked -> `@`).
std::string serialize_movingai_map(const GridMap& map);

}  // namespace mapf::bench

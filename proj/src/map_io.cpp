#include "mapf/bench/map_io.hpp"

#include <fstream>
#include <sstream>

namespace mapf::bench {

namespace {

std::string next_line(std::istringstream& in, int& line_no) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("unexpected end of input", line_no, 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  ++line_no;
  return line;
}

int header_value(const std::string& line, const std::string& key, int line_no) {
  if (line.rfind(key + " ", 0) != 0)
    throw ParseError("expected '" + key + " <n>'", line_no, 1);
  try {
    return std::stoi(line.substr(key.size() + 1));
  } catch (const std::exception&) {
    throw ParseError("bad integer in '" + key + "' header", line_no,
                     static_cast<int>(key.size()) + 2);
  }
}

}  // namespace

GridMap parse_movingai_map(const std::string& text) {
  std::istringstream in(text);
  int line_no = 0;

  std::string type_line = next_line(in, line_no);
  if (type_line.rfind("type", 0) != 0)
    throw ParseError("expected 'type' header", line_no, 1);
  const int height = header_value(next_line(in, line_no), "height", line_no);
  const int width = header_value(next_line(in, line_no), "width", line_no);
  if (height < 1 || width < 1)
    throw ParseError("map dimensions must be positive", line_no, 1);
  if (next_line(in, line_no) != "map")
    throw ParseError("expected 'map' header", line_no, 1);

  GridMap map(height, width);
  for (int r = 0; r < height; ++r) {
    std::string row = next_line(in, line_no);
    if (static_cast<int>(row.size()) != width)
      throw ParseError("row length " + std::to_string(row.size()) +
                           " does not match declared width " +
                           std::to_string(width),
                       line_no, static_cast<int>(row.size()) + 1);
    for (int c = 0; c < width; ++c) {
      switch (row[c]) {
        case '.':
        case 'G':
          break;
        case '@':
        case 'O':
        case 'T':
        case 'W':
          map.set_obstacle({r, c}, true);
          break;
        default:
          throw ParseError(std::string("unknown glyph '") + row[c] + "'",
                           line_no, c + 1);
      }
    }
  }
  return map;
}

GridMap load_movingai_map(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open map file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_movingai_map(buf.str());
}

std::string serialize_movingai_map(const GridMap& map) {
  std::ostringstream out;
  out << "type octile\n"
      << "height " << map.height() << "\n"
      << "width " << map.width() << "\n"
      << "map\n";
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c)
      out << (map.is_obstacle({r, c}) ? '@' : '.');
    out << '\n';
  }
  return out.str();
}

}  // namespace mapf::bench

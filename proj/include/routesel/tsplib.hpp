#pragma once

// TSPLIB / CVRPLIB keyword format (EUC_2D only).
//
// Benchmark files keep their raw coordinates and are evaluated with the TSPLIB
// nint() metric. Files written by serialize_instance() for synthetic data carry
// a "routesel-synthetic" COMMENT marker and are evaluated with exact Euclidean
// distances on the unit-square coordinates.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "routesel/errors.hpp"
#include "routesel/instance.hpp"

namespace routesel {

inline constexpr std::string_view kSyntheticMarker = "routesel-synthetic";

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline RoutingInstance parse_instance(std::string_view text, const std::string& path = "") {
  std::vector<std::string> lines;
  {
    std::string cur;
    std::istringstream in{std::string(text)};
    while (std::getline(in, cur)) lines.push_back(cur);
  }

  RoutingInstance inst;
  inst.provenance.synthetic = false;
  inst.provenance.path = path;
  std::string type;
  std::string edge_type;
  std::size_t dimension = 0;
  double capacity = 0.0;
  bool synthetic = false;
  std::vector<Point> raw;
  std::vector<double> raw_dem;
  std::vector<long> depots;
  bool have_coords = false;

  auto need_dimension = [&](std::size_t line_no) {
    if (dimension == 0) throw ParseError("section appears before DIMENSION", line_no);
  };

  std::size_t i = 0;
  while (i < lines.size()) {
    const std::string line = detail::trim(lines[i]);
    const std::size_t line_no = i + 1;
    ++i;
    if (line.empty()) continue;
    if (line == "EOF") break;

    if (line.rfind("NODE_COORD_SECTION", 0) == 0) {
      need_dimension(line_no);
      raw.assign(dimension, Point{});
      std::vector<bool> seen(dimension, false);
      for (std::size_t k = 0; k < dimension; ++k, ++i) {
        if (i >= lines.size()) throw ParseError("expected coordinate line " + std::to_string(k + 1) + " of " + std::to_string(dimension) + ", found end of input", i + 1);
        std::istringstream ls(lines[i]);
        long id = 0;
        double x = 0, y = 0;
        if (!(ls >> id >> x >> y)) {
          throw ParseError("expected coordinate line " + std::to_string(k + 1) + " of " + std::to_string(dimension) + ", found '" + detail::trim(lines[i]) + "'", i + 1);
        }
        if (id < 1 || static_cast<std::size_t>(id) > dimension || seen[static_cast<std::size_t>(id - 1)]) {
          throw ParseError("node id " + std::to_string(id) + " invalid or repeated", i + 1);
        }
        seen[static_cast<std::size_t>(id - 1)] = true;
        raw[static_cast<std::size_t>(id - 1)] = {x, y};
      }
      have_coords = true;
      continue;
    }
    if (line.rfind("DEMAND_SECTION", 0) == 0) {
      need_dimension(line_no);
      raw_dem.assign(dimension, 0.0);
      for (std::size_t k = 0; k < dimension; ++k, ++i) {
        if (i >= lines.size()) throw ParseError("expected demand line " + std::to_string(k + 1) + " of " + std::to_string(dimension) + ", found end of input", i + 1);
        std::istringstream ls(lines[i]);
        long id = 0;
        double d = 0;
        if (!(ls >> id >> d)) {
          throw ParseError("expected demand line " + std::to_string(k + 1) + " of " + std::to_string(dimension) + ", found '" + detail::trim(lines[i]) + "'", i + 1);
        }
        if (id < 1 || static_cast<std::size_t>(id) > dimension) throw ParseError("node id " + std::to_string(id) + " out of range", i + 1);
        raw_dem[static_cast<std::size_t>(id - 1)] = d;
      }
      continue;
    }
    if (line.rfind("DEPOT_SECTION", 0) == 0) {
      for (; i < lines.size(); ++i) {
        const std::string t = detail::trim(lines[i]);
        if (t.empty()) continue;
        long id = 0;
        std::istringstream ls(t);
        if (!(ls >> id)) throw ParseError("expected depot id, found '" + t + "'", i + 1);
        if (id == -1) {
          ++i;
          break;
        }
        depots.push_back(id);
      }
      continue;
    }

    const auto colon = line.find(':');
    std::string key = detail::trim(colon == std::string::npos ? line : line.substr(0, colon));
    std::string value = colon == std::string::npos ? "" : detail::trim(line.substr(colon + 1));
    if (colon == std::string::npos) {
      // "KEY VALUE" without a colon.
      const auto sp = line.find_first_of(" \t");
      if (sp != std::string::npos) {
        key = detail::trim(line.substr(0, sp));
        value = detail::trim(line.substr(sp));
      }
    }
    if (key == "NAME") {
      inst.id = value;
    } else if (key == "TYPE") {
      type = value;
    } else if (key == "COMMENT") {
      if (value.find(kSyntheticMarker) != std::string::npos) {
        synthetic = true;
        const auto sp = value.find("seed=");
        if (sp != std::string::npos) inst.provenance.seed = std::stoull(value.substr(sp + 5));
        const auto pp = value.find("params=");
        if (pp != std::string::npos) inst.provenance.generator_params = value.substr(pp + 7);
      }
    } else if (key == "DIMENSION") {
      try {
        dimension = static_cast<std::size_t>(std::stoul(value));
      } catch (const std::exception&) {
        throw ParseError("invalid DIMENSION '" + value + "'", line_no);
      }
    } else if (key == "EDGE_WEIGHT_TYPE") {
      edge_type = value;
      if (edge_type != "EUC_2D") throw UnsupportedFormatError("unsupported EDGE_WEIGHT_TYPE " + edge_type);
    } else if (key == "CAPACITY") {
      try {
        capacity = std::stod(value);
      } catch (const std::exception&) {
        throw ParseError("invalid CAPACITY '" + value + "'", line_no);
      }
    } else if (key == "EDGE_WEIGHT_FORMAT" || key == "EDGE_WEIGHT_SECTION") {
      throw UnsupportedFormatError("explicit edge weights are not supported");
    }
    // Other keywords (DISPLAY_DATA_TYPE, ...) are ignored.
  }

  if (type.empty()) throw ParseError("missing TYPE", lines.size());
  if (type != "TSP" && type != "CVRP") throw UnsupportedFormatError("unsupported TYPE " + type);
  if (edge_type.empty()) throw ParseError("missing EDGE_WEIGHT_TYPE", lines.size());
  if (!have_coords) throw ParseError("missing NODE_COORD_SECTION", lines.size());
  if (dimension < 2) throw ParseError("DIMENSION must be at least 2", lines.size());

  inst.kind = type == "TSP" ? ProblemKind::kTsp : ProblemKind::kCvrp;
  if (inst.kind == ProblemKind::kCvrp) {
    if (capacity <= 0.0) throw ParseError("CVRP file without positive CAPACITY", lines.size());
    if (raw_dem.empty()) throw ParseError("CVRP file without DEMAND_SECTION", lines.size());
    if (depots.size() > 1) throw UnsupportedFormatError("multiple depots are not supported");
    const std::size_t depot = depots.empty() ? 0 : static_cast<std::size_t>(depots[0] - 1);
    if (depot >= dimension) throw ParseError("depot id out of range", lines.size());
    if (depot != 0) {
      std::swap(raw[0], raw[depot]);
      std::swap(raw_dem[0], raw_dem[depot]);
    }
    raw_dem[0] = 0.0;
    inst.raw_capacity = capacity;
    inst.raw_demands = raw_dem;
    inst.demands.resize(dimension);
    for (std::size_t k = 0; k < dimension; ++k) {
      if (raw_dem[k] < 0.0 || raw_dem[k] > capacity) {
        throw ParseError("demand of node " + std::to_string(k + 1) + " exceeds capacity", lines.size());
      }
      inst.demands[k] = raw_dem[k] / capacity;
    }
    inst.capacity = 1.0;
  }

  if (synthetic) {
    inst.provenance.synthetic = true;
    inst.coords = raw;
    inst.rounded_metric = false;
  } else {
    // Uniform scaling keeps the geometry; raw coordinates drive the cost.
    double x0 = raw[0].x, x1 = raw[0].x, y0 = raw[0].y, y1 = raw[0].y;
    for (const auto& p : raw) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    const double range = std::max(x1 - x0, y1 - y0);
    inst.coords.resize(dimension);
    for (std::size_t k = 0; k < dimension; ++k) {
      inst.coords[k] = range > 0.0 ? Point{(raw[k].x - x0) / range, (raw[k].y - y0) / range}
                                   : Point{0.5, 0.5};
    }
    inst.raw_coords = std::move(raw);
    inst.rounded_metric = true;
  }
  return inst;
}

inline std::string serialize_instance(const RoutingInstance& inst) {
  std::ostringstream out;
  const bool cvrp = inst.is_cvrp();
  out << "NAME : " << inst.id << "\n";
  if (inst.provenance.synthetic) {
    out << "COMMENT : " << kSyntheticMarker << " seed=" << inst.provenance.seed;
    if (!inst.provenance.generator_params.empty()) out << " params=" << inst.provenance.generator_params;
    out << "\n";
  }
  out << "TYPE : " << (cvrp ? "CVRP" : "TSP") << "\n";
  out << "DIMENSION : " << inst.size() << "\n";
  out << "EDGE_WEIGHT_TYPE : EUC_2D\n";
  double cap = inst.raw_capacity;
  if (cvrp) {
    if (cap <= 0.0) cap = 1.0;
    out << "CAPACITY : " << detail::format_double(cap) << "\n";
  }
  out << "NODE_COORD_SECTION\n";
  const auto& pts = inst.raw_coords.empty() ? inst.coords : inst.raw_coords;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    out << (k + 1) << " " << detail::format_double(pts[k].x) << " " << detail::format_double(pts[k].y) << "\n";
  }
  if (cvrp) {
    out << "DEMAND_SECTION\n";
    for (std::size_t k = 0; k < inst.size(); ++k) {
      const double d = inst.raw_demands.empty() ? inst.demands[k] * cap : inst.raw_demands[k];
      out << (k + 1) << " " << detail::format_double(d) << "\n";
    }
    out << "DEPOT_SECTION\n1\n-1\n";
  }
  out << "EOF\n";
  return out.str();
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline RoutingInstance load_instance_file(const std::string& path) {
  RoutingInstance inst = parse_instance(read_text_file(path), path);
  return inst;
}

}  // namespace routesel

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "routesel/errors.hpp"
#include "routesel/rng.hpp"

namespace routesel {

enum class ProblemKind { kTsp, kCvrp };

inline std::string to_string(ProblemKind k) { return k == ProblemKind::kTsp ? "tsp" : "cvrp"; }

inline ProblemKind parse_problem_kind(const std::string& s) {
  if (s == "tsp" || s == "TSP") return ProblemKind::kTsp;
  if (s == "cvrp" || s == "CVRP") return ProblemKind::kCvrp;
  throw ConfigError("unknown problem kind: " + s);
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Provenance {
  bool synthetic = true;
  std::uint64_t seed = 0;
  std::string generator_params;
  std::string path;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// One TSP or CVRP problem. `coords` live in the unit square and feed the
// encoders; distances for cost evaluation come from `distance()`, which uses
// the raw file coordinates with TSPLIB nearest-integer rounding when the
// instance was loaded from a benchmark file.
struct RoutingInstance {
  std::string id;
  ProblemKind kind = ProblemKind::kTsp;
  std::vector<Point> coords;
  std::vector<double> demands;  // CVRP only, normalised by capacity; depot (node 0) is 0
  double capacity = 1.0;

  std::vector<Point> raw_coords;    // empty for synthetic instances
  std::vector<double> raw_demands;  // integer demands before normalisation (CVRP)
  double raw_capacity = 0.0;
  bool rounded_metric = false;

  Provenance provenance;

  std::size_t size() const { return coords.size(); }
  bool is_cvrp() const { return kind == ProblemKind::kCvrp; }

  double distance(std::size_t i, std::size_t j) const {
    if (rounded_metric) {
      const double dx = raw_coords[i].x - raw_coords[j].x;
      const double dy = raw_coords[i].y - raw_coords[j].y;
      return std::nearbyint(std::sqrt(dx * dx + dy * dy));
    }
    const double dx = coords[i].x - coords[j].x;
    const double dy = coords[i].y - coords[j].y;
    return std::sqrt(dx * dx + dy * dy);
  }

  friend bool operator==(const RoutingInstance&, const RoutingInstance&) = default;
};

// Dense symmetric distance matrix, built once per solver call.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(const RoutingInstance& inst) : n_(inst.size()), d_(n_ * n_, 0.0) {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double v = inst.distance(i, j);
        d_[i * n_ + j] = v;
        d_[j * n_ + i] = v;
      }
    }
  }
  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }

 private:
  std::size_t n_;
  std::vector<double> d_;
};

inline void check_invariants(const RoutingInstance& inst) {
  const std::size_t n = inst.size();
  if (n < 2) throw DomainError("instance " + inst.id + " has fewer than 2 nodes");
  if (inst.provenance.synthetic) {
    for (const auto& p : inst.coords) {
      if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
        throw DomainError("instance " + inst.id + " has coordinates outside the unit square");
      }
    }
  }
  if (inst.is_cvrp()) {
    if (inst.demands.size() != n) throw DomainError("instance " + inst.id + ": demand count != node count");
    if (inst.demands[0] != 0.0) throw DomainError("instance " + inst.id + ": depot demand must be 0");
    for (std::size_t i = 1; i < n; ++i) {
      if (!(inst.demands[i] >= 0.0 && inst.demands[i] <= 1.0)) {
        throw DomainError("instance " + inst.id + ": normalised demand out of [0,1] at node " +
                          std::to_string(i));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generation: Gaussian mixtures with random covariances, uniform when
// no components are drawn, and two capacity distributions for CVRP.

enum class CapacityMode { kScaleRelated, kTriangular, kMixed };

inline std::string to_string(CapacityMode m) {
  switch (m) {
    case CapacityMode::kScaleRelated: return "scale_related";
    case CapacityMode::kTriangular: return "triangular";
    case CapacityMode::kMixed: return "mixed";
  }
  return "mixed";
}

inline CapacityMode parse_capacity_mode(const std::string& s) {
  if (s == "scale_related") return CapacityMode::kScaleRelated;
  if (s == "triangular") return CapacityMode::kTriangular;
  if (s == "mixed") return CapacityMode::kMixed;
  throw ConfigError("unknown capacity mode: " + s);
}

struct GeneratorConfig {
  ProblemKind kind = ProblemKind::kTsp;
  std::size_t n_min = 50;
  std::size_t n_max = 150;
  int max_components = 15;
  CapacityMode capacity_mode = CapacityMode::kMixed;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_min < 2 || n_min > n_max) {
      throw ConfigError("generator n_range [" + std::to_string(n_min) + ", " +
                        std::to_string(n_max) + "] is invalid (need 2 <= n_min <= n_max)");
    }
    if (max_components < 0) throw ConfigError("generator max_components must be >= 0");
  }

  std::string describe() const {
    return to_string(kind) + " n=[" + std::to_string(n_min) + "," + std::to_string(n_max) +
           "] c<=" + std::to_string(max_components) + " cap=" + to_string(capacity_mode);
  }
};

inline int scale_related_capacity(std::size_t n) {
  return 30 + static_cast<int>((n + 4) / 5);
}

// Inverse-CDF sample of the triangular distribution T(lb, mode, ub).
inline double sample_triangular(double lb, double mode, double ub, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (ub <= lb) return lb;
  const double f = (mode - lb) / (ub - lb);
  if (u < f) return lb + std::sqrt(u * (ub - lb) * (mode - lb));
  return ub - std::sqrt((1.0 - u) * (ub - lb) * (ub - mode));
}

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) {
  if (hi < lo) std::swap(lo, hi);
  if (hi == lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline void minmax_scale(std::vector<Point>& pts) {
  auto [xlo, xhi] = std::minmax_element(pts.begin(), pts.end(),
                                        [](const Point& a, const Point& b) { return a.x < b.x; });
  auto [ylo, yhi] = std::minmax_element(pts.begin(), pts.end(),
                                        [](const Point& a, const Point& b) { return a.y < b.y; });
  const double x0 = xlo->x, xr = xhi->x - xlo->x;
  const double y0 = ylo->y, yr = yhi->y - ylo->y;
  for (auto& p : pts) {
    p.x = xr > 0.0 ? std::clamp((p.x - x0) / xr, 0.0, 1.0) : 0.5;
    p.y = yr > 0.0 ? std::clamp((p.y - y0) / yr, 0.0, 1.0) : 0.5;
  }
}

}  // namespace detail

inline std::vector<Point> sample_coordinates(std::size_t n, int max_components, Rng& rng) {
  std::vector<Point> pts(n);
  const int c = std::uniform_int_distribution<int>(0, max_components)(rng);
  if (c == 0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& p : pts) {
      p.x = u(rng);
      p.y = u(rng);
    }
    return pts;
  }
  struct Component {
    double mx, my, l11, l21, l22;
  };
  std::vector<Component> comps;
  for (int k = 0; k < c; ++k) {
    Component g{};
    g.mx = detail::uniform(rng, 0.0, 1.0);
    g.my = detail::uniform(rng, 0.0, 1.0);
    const double vx = detail::uniform(rng, 1.0, 100.0);
    const double vy = detail::uniform(rng, 1.0, 100.0);
    const double bound = std::sqrt(vx * vy);
    const double cov = detail::uniform(rng, -bound, bound);
    // Cholesky factor of [[vx, cov], [cov, vy]].
    g.l11 = std::sqrt(vx);
    g.l21 = cov / g.l11;
    g.l22 = std::sqrt(std::max(0.0, vy - g.l21 * g.l21));
    comps.push_back(g);
  }
  std::uniform_int_distribution<int> pick(0, c - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : pts) {
    const Component& g = comps[static_cast<std::size_t>(pick(rng))];
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    p.x = g.mx + g.l11 * z1;
    p.y = g.my + g.l21 * z1 + g.l22 * z2;
  }
  detail::minmax_scale(pts);
  return pts;
}

inline RoutingInstance generate_instance(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  RoutingInstance inst;
  inst.kind = cfg.kind;
  const std::size_t n = std::uniform_int_distribution<std::size_t>(cfg.n_min, cfg.n_max)(rng);
  inst.coords = sample_coordinates(n, cfg.max_components, rng);
  inst.provenance.synthetic = true;
  inst.provenance.seed = cfg.seed;
  inst.provenance.generator_params = cfg.describe();
  if (cfg.kind == ProblemKind::kCvrp) {
    bool triangular = cfg.capacity_mode == CapacityMode::kTriangular;
    if (cfg.capacity_mode == CapacityMode::kMixed) {
      triangular = std::bernoulli_distribution(0.5)(rng);
    }
    double q = 0.0;
    if (triangular) {
      const double ub = detail::uniform(rng, 20.0, static_cast<double>(n) / 2.0);
      const double mode = detail::uniform(rng, 5.0, ub);
      const double lb = detail::uniform(rng, 3.0, mode);
      // Small N can invert the nominal ordering; the three draws are sorted.
      std::array<double, 3> abc{lb, mode, ub};
      std::sort(abc.begin(), abc.end());
      q = std::max(1.0, std::round(sample_triangular(abc[0], abc[1], abc[2], rng)));
    } else {
      q = static_cast<double>(scale_related_capacity(n));
    }
    std::uniform_int_distribution<int> dem(1, 10);
    inst.raw_capacity = q;
    inst.raw_demands.assign(n, 0.0);
    inst.demands.assign(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
      inst.raw_demands[i] = std::min(static_cast<double>(dem(rng)), q);
      inst.demands[i] = inst.raw_demands[i] / q;
    }
    inst.capacity = 1.0;
  }
  return inst;
}

// Deterministic dataset: instance i uses a seed derived from (root, i).
inline std::vector<RoutingInstance> generate_dataset(const GeneratorConfig& cfg, std::size_t count,
                                                     const std::string& prefix) {
  std::vector<RoutingInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    GeneratorConfig c = cfg;
    c.seed = derive_seed(cfg.seed, streams::kGenerator, i);
    Rng rng(c.seed);
    RoutingInstance inst = generate_instance(c, rng);
    inst.id = prefix + "-" + std::to_string(i);
    out.push_back(std::move(inst));
  }
  return out;
}

// ---------------------------------------------------------------------------
// The eight symmetries of the unit square.

inline Point dihedral(Point p, int k) {
  switch (k) {
    case 0: return {p.x, p.y};
    case 1: return {p.y, p.x};
    case 2: return {p.x, 1.0 - p.y};
    case 3: return {p.y, 1.0 - p.x};
    case 4: return {1.0 - p.x, p.y};
    case 5: return {1.0 - p.y, p.x};
    case 6: return {1.0 - p.x, 1.0 - p.y};
    case 7: return {1.0 - p.y, 1.0 - p.x};
    default: throw ParameterError("dihedral index must be in [0, 8)");
  }
}

// Same symmetry on a w x h box anchored at the origin.
inline Point dihedral_in_box(Point p, int k, double w, double h) {
  switch (k) {
    case 0: return {p.x, p.y};
    case 1: return {p.y, p.x};
    case 2: return {p.x, h - p.y};
    case 3: return {p.y, w - p.x};
    case 4: return {w - p.x, p.y};
    case 5: return {h - p.y, p.x};
    case 6: return {w - p.x, h - p.y};
    case 7: return {h - p.y, w - p.x};
    default: throw ParameterError("dihedral index must be in [0, 8)");
  }
}

// Symmetry k in [0, 8) of an instance; k = 0 is the identity. The id is kept.
inline RoutingInstance augment_view(const RoutingInstance& inst, int k) {
  if (k < 0 || k > 7) throw ParameterError("symmetry index must lie in [0, 8)");
  for (const auto& p : inst.coords) {
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
      throw DomainError("augment: instance " + inst.id + " has coordinates outside the unit square");
    }
  }
  RoutingInstance v = inst;
  if (k == 0) return v;
  for (auto& p : v.coords) p = dihedral(p, k);
  if (!inst.raw_coords.empty()) {
    // Raw coordinates are mapped within their bounding box so that the
    // rounded metric of file instances is preserved as well.
    double x0 = inst.raw_coords[0].x, x1 = x0, y0 = inst.raw_coords[0].y, y1 = y0;
    for (const auto& p : inst.raw_coords) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    for (auto& p : v.raw_coords) p = dihedral_in_box(Point{p.x - x0, p.y - y0}, k, x1 - x0, y1 - y0);
  }
  return v;
}

inline std::vector<RoutingInstance> augment_8fold(const RoutingInstance& inst) {
  std::vector<RoutingInstance> out;
  out.reserve(8);
  for (int k = 0; k < 8; ++k) out.push_back(augment_view(inst, k));
  return out;
}

// ---------------------------------------------------------------------------
// Solutions, validation and cost.

struct Solution {
  std::vector<std::size_t> tour;                 // TSP: permutation of [N]
  std::vector<std::vector<std::size_t>> routes;  // CVRP: customer sequences, depot implicit
  double objective = 0.0;
  double wall_time = 0.0;  // seconds
  std::uint64_t work = 0;  // deterministic effort count (move evaluations)
};

inline void validate_solution(const RoutingInstance& inst, const Solution& sol) {
  const std::size_t n = inst.size();
  if (inst.kind == ProblemKind::kTsp) {
    if (sol.tour.size() != n) {
      throw ValidationError("tour is not a permutation: length " + std::to_string(sol.tour.size()) +
                            " for " + std::to_string(n) + " nodes");
    }
    std::vector<bool> seen(n, false);
    for (std::size_t v : sol.tour) {
      if (v >= n) throw ValidationError("tour is not a permutation: node " + std::to_string(v) + " out of range");
      if (seen[v]) throw ValidationError("tour is not a permutation: node " + std::to_string(v) + " repeated");
      seen[v] = true;
    }
    return;
  }
  std::vector<bool> seen(n, false);
  std::size_t visited = 0;
  for (std::size_t r = 0; r < sol.routes.size(); ++r) {
    const auto& route = sol.routes[r];
    if (route.empty()) throw ValidationError("route " + std::to_string(r) + " is empty");
    double load = 0.0;
    for (std::size_t v : route) {
      if (v == 0 || v >= n) throw ValidationError("route " + std::to_string(r) + " visits invalid customer " + std::to_string(v));
      if (seen[v]) throw ValidationError("customer " + std::to_string(v) + " visited twice");
      seen[v] = true;
      ++visited;
      load += inst.demands[v];
    }
    if (load > inst.capacity + 1e-9) {
      throw ValidationError("capacity violation on route " + std::to_string(r) + ": load " +
                            std::to_string(load) + " > " + std::to_string(inst.capacity));
    }
  }
  if (visited != n - 1) {
    for (std::size_t v = 1; v < n; ++v) {
      if (!seen[v]) throw ValidationError("missing customer " + std::to_string(v));
    }
  }
}

inline double tour_length(const RoutingInstance& inst, const std::vector<std::size_t>& tour) {
  double c = 0.0;
  for (std::size_t i = 0; i < tour.size(); ++i) {
    c += inst.distance(tour[i], tour[(i + 1) % tour.size()]);
  }
  return c;
}

inline double route_length(const RoutingInstance& inst, const std::vector<std::size_t>& route) {
  double c = 0.0;
  std::size_t prev = 0;
  for (std::size_t v : route) {
    c += inst.distance(prev, v);
    prev = v;
  }
  return c + inst.distance(prev, 0);
}

inline double tour_cost(const RoutingInstance& inst, const Solution& sol) {
  validate_solution(inst, sol);
  if (inst.kind == ProblemKind::kTsp) return tour_length(inst, sol.tour);
  double c = 0.0;
  for (const auto& r : sol.routes) c += route_length(inst, r);
  return c;
}

inline double optimality_gap(double cost, double reference_cost) {
  if (!(reference_cost > 0.0)) {
    throw DomainError("optimality_gap: reference cost must be positive, got " + std::to_string(reference_cost));
  }
  if (cost < reference_cost - 1e-9 * std::max(1.0, reference_cost)) {
    throw ContractViolation("optimality_gap: cost " + std::to_string(cost) + " below reference " +
                            std::to_string(reference_cost));
  }
  return 100.0 * (cost - reference_cost) / reference_cost;
}

}  // namespace routesel

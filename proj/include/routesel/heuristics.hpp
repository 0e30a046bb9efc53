#pragma once

// Classical TSP and CVRP heuristics used as the built-in solver zoo.
//
// All routines work on a precomputed DistanceMatrix and increment a work
// counter by the number of distance-based move evaluations they perform; the
// counter gives a machine-independent running-time proxy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "routesel/instance.hpp"
#include "routesel/rng.hpp"

namespace routesel::heuristics {

using Tour = std::vector<std::size_t>;
using Routes = std::vector<std::vector<std::size_t>>;

inline constexpr double kImprovementEps = 1e-12;
inline constexpr std::uint64_t kUnlimited = std::numeric_limits<std::uint64_t>::max();

inline double tour_length(const Tour& t, const DistanceMatrix& d) {
  double c = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) c += d(t[i], t[(i + 1) % t.size()]);
  return c;
}

inline double routes_length(const Routes& rs, const DistanceMatrix& d) {
  double c = 0.0;
  for (const auto& r : rs) {
    std::size_t prev = 0;
    for (std::size_t v : r) {
      c += d(prev, v);
      prev = v;
    }
    c += d(prev, 0);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Improvement

// First-improvement 2-opt until a local optimum or until `budget` move
// evaluations have been spent. Returns true if a local optimum was reached.
inline bool two_opt(Tour& t, const DistanceMatrix& d, std::uint64_t& work,
                    std::uint64_t budget = kUnlimited) {
  const std::size_t n = t.size();
  if (n < 4) return true;
  std::uint64_t spent = 0;
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i + 2 < n; ++i) {
      for (std::size_t j = i + 2; j < n; ++j) {
        if (i == 0 && j == n - 1) continue;
        if (spent >= budget) {
          work += spent;
          return false;
        }
        ++spent;
        const std::size_t a = t[i], b = t[i + 1], c = t[j], e = t[(j + 1) % n];
        const double delta = d(a, c) + d(b, e) - d(a, b) - d(c, e);
        if (delta < -kImprovementEps) {
          std::reverse(t.begin() + static_cast<std::ptrdiff_t>(i + 1),
                       t.begin() + static_cast<std::ptrdiff_t>(j + 1));
          improved = true;
        }
      }
    }
  }
  work += spent;
  return true;
}

// 2-opt on one CVRP route (depot closes the cycle).
inline void route_two_opt(std::vector<std::size_t>& route, const DistanceMatrix& d,
                          std::uint64_t& work) {
  if (route.size() < 3) return;
  Tour t;
  t.reserve(route.size() + 1);
  t.push_back(0);
  t.insert(t.end(), route.begin(), route.end());
  two_opt(t, d, work);
  const auto depot = std::find(t.begin(), t.end(), std::size_t{0});
  std::rotate(t.begin(), depot, t.end());
  route.assign(t.begin() + 1, t.end());
}

// Or-opt: relocate segments of 1..3 customers within or between routes, in
// either orientation, first improvement until no move helps or the budget is
// exhausted.
inline void or_opt(Routes& routes, const RoutingInstance& inst, const DistanceMatrix& d,
                   std::uint64_t& work, std::uint64_t budget = kUnlimited) {
  std::vector<double> load(routes.size(), 0.0);
  for (std::size_t r = 0; r < routes.size(); ++r) {
    for (std::size_t v : routes[r]) load[r] += inst.demands[v];
  }
  std::uint64_t spent = 0;
  bool improved = true;
  while (improved && spent < budget) {
    improved = false;
    for (std::size_t r = 0; r < routes.size() && !improved; ++r) {
      for (std::size_t len = 1; len <= 3 && !improved; ++len) {
        if (routes[r].size() < len) continue;
        for (std::size_t s = 0; s + len <= routes[r].size() && !improved; ++s) {
          const auto& src = routes[r];
          const std::size_t prev = s == 0 ? 0 : src[s - 1];
          const std::size_t next = s + len == src.size() ? 0 : src[s + len];
          const std::size_t first = src[s], last = src[s + len - 1];
          const double gain = d(prev, first) + d(last, next) - d(prev, next);
          double seg_load = 0.0;
          for (std::size_t k = s; k < s + len; ++k) seg_load += inst.demands[src[k]];

          for (std::size_t t = 0; t < routes.size() && !improved; ++t) {
            if (t != r && load[t] + seg_load > inst.capacity + 1e-9) continue;
            std::vector<std::size_t> reduced;
            const std::vector<std::size_t>* target = &routes[t];
            if (t == r) {
              reduced = src;
              reduced.erase(reduced.begin() + static_cast<std::ptrdiff_t>(s),
                            reduced.begin() + static_cast<std::ptrdiff_t>(s + len));
              target = &reduced;
            }
            for (std::size_t p = 0; p <= target->size(); ++p) {
              if (t == r && p == s) continue;  // original position
              if (spent >= budget) break;
              ++spent;
              const std::size_t a = p == 0 ? 0 : (*target)[p - 1];
              const std::size_t b = p == target->size() ? 0 : (*target)[p];
              const double base = d(a, b);
              const double fwd = d(a, first) + d(last, b) - base;
              const double rev = d(a, last) + d(first, b) - base;
              const bool reversed = rev < fwd;
              if (std::min(fwd, rev) - gain < -kImprovementEps) {
                std::vector<std::size_t> seg(src.begin() + static_cast<std::ptrdiff_t>(s),
                                             src.begin() + static_cast<std::ptrdiff_t>(s + len));
                if (reversed) std::reverse(seg.begin(), seg.end());
                if (t == r) {
                  reduced.insert(reduced.begin() + static_cast<std::ptrdiff_t>(p), seg.begin(), seg.end());
                  routes[r] = std::move(reduced);
                } else {
                  routes[t].insert(routes[t].begin() + static_cast<std::ptrdiff_t>(p), seg.begin(), seg.end());
                  routes[r].erase(routes[r].begin() + static_cast<std::ptrdiff_t>(s),
                                  routes[r].begin() + static_cast<std::ptrdiff_t>(s + len));
                  load[t] += seg_load;
                  load[r] -= seg_load;
                  if (routes[r].empty()) {
                    routes.erase(routes.begin() + static_cast<std::ptrdiff_t>(r));
                    load.erase(load.begin() + static_cast<std::ptrdiff_t>(r));
                  }
                }
                improved = true;
                break;
              }
            }
          }
        }
      }
    }
  }
  work += spent;
}

// ---------------------------------------------------------------------------
// TSP construction

inline Tour nearest_neighbor(const DistanceMatrix& d, std::size_t start, std::uint64_t& work) {
  const std::size_t n = d.size();
  Tour t{start};
  std::vector<bool> used(n, false);
  used[start] = true;
  std::size_t cur = start;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t best = n;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < n; ++v) {
      if (used[v]) continue;
      if (d(cur, v) < bd) {
        bd = d(cur, v);
        best = v;
      }
    }
    work += n;
    used[best] = true;
    t.push_back(best);
    cur = best;
  }
  return t;
}

inline Tour greedy_edge(const DistanceMatrix& d, std::uint64_t& work) {
  const std::size_t n = d.size();
  if (n <= 3) {
    Tour t(n);
    std::iota(t.begin(), t.end(), 0);
    return t;
  }
  struct Edge {
    double w;
    std::size_t i, j;
  };
  std::vector<Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({d(i, j), i, j});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.w != b.w) return a.w < b.w;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  work += edges.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<int> degree(n, 0);
  std::vector<std::vector<std::size_t>> adj(n);
  std::size_t added = 0;
  for (const Edge& e : edges) {
    if (added == n - 1) break;
    if (degree[e.i] >= 2 || degree[e.j] >= 2) continue;
    const std::size_t ri = find(e.i), rj = find(e.j);
    if (ri == rj) continue;
    parent[ri] = rj;
    ++degree[e.i];
    ++degree[e.j];
    adj[e.i].push_back(e.j);
    adj[e.j].push_back(e.i);
    ++added;
  }
  // The edges form a Hamiltonian path; walk it from one end.
  std::size_t startv = 0;
  for (std::size_t v = 0; v < n; ++v) {
    if (degree[v] == 1) {
      startv = v;
      break;
    }
  }
  Tour t{startv};
  std::size_t prev = n, cur = startv;
  while (t.size() < n) {
    const std::size_t nxt = adj[cur][0] != prev ? adj[cur][0] : adj[cur][1];
    prev = cur;
    cur = nxt;
    t.push_back(cur);
  }
  return t;
}

namespace detail {

// Cheapest place to insert `v` into the cyclic tour stored as a successor array.
inline std::pair<double, std::size_t> best_insertion(std::size_t v, std::size_t head,
                                                     const std::vector<std::size_t>& next,
                                                     const DistanceMatrix& d, std::uint64_t& work) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t at = head;
  std::size_t u = head;
  do {
    const std::size_t w = next[u];
    const double c = d(u, v) + d(v, w) - (u == w ? 0.0 : d(u, w));
    ++work;
    if (c < best) {
      best = c;
      at = u;
    }
    u = w;
  } while (u != head);
  return {best, at};
}

inline Tour successor_to_tour(std::size_t head, const std::vector<std::size_t>& next, std::size_t n) {
  Tour t;
  t.reserve(n);
  std::size_t u = head;
  do {
    t.push_back(u);
    u = next[u];
  } while (u != head);
  return t;
}

}  // namespace detail

inline Tour farthest_insertion(const DistanceMatrix& d, std::uint64_t& work) {
  const std::size_t n = d.size();
  std::vector<std::size_t> next(n, n);
  std::vector<bool> in(n, false);
  std::size_t far = 0;
  for (std::size_t v = 1; v < n; ++v) {
    if (d(0, v) > d(0, far)) far = v;
  }
  if (far == 0) far = 1;
  next[0] = far;
  next[far] = 0;
  in[0] = in[far] = true;
  std::vector<double> mind(n);
  for (std::size_t v = 0; v < n; ++v) mind[v] = std::min(d(0, v), d(far, v));
  for (std::size_t step = 2; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in[v] && (pick == n || mind[v] > mind[pick])) pick = v;
    }
    auto [cost, at] = detail::best_insertion(pick, 0, next, d, work);
    (void)cost;
    next[pick] = next[at];
    next[at] = pick;
    in[pick] = true;
    for (std::size_t v = 0; v < n; ++v) mind[v] = std::min(mind[v], d(pick, v));
    work += n;
  }
  return detail::successor_to_tour(0, next, n);
}

inline std::vector<std::size_t> convex_hull(const std::vector<Point>& pts) {
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].x != pts[b].x) return pts[a].x < pts[b].x;
    if (pts[a].y != pts[b].y) return pts[a].y < pts[b].y;
    return a < b;
  });
  auto cross = [&](std::size_t o, std::size_t a, std::size_t b) {
    return (pts[a].x - pts[o].x) * (pts[b].y - pts[o].y) - (pts[a].y - pts[o].y) * (pts[b].x - pts[o].x);
  };
  if (idx.size() < 3) return idx;
  std::vector<std::size_t> hull(2 * idx.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], idx[i]) <= 0) --k;
    hull[k++] = idx[i];
  }
  for (std::size_t i = idx.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], idx[i]) <= 0) --k;
    hull[k++] = idx[i];
  }
  hull.resize(k - 1);
  // Coincident points can collapse the hull; keep distinct ids only.
  std::vector<std::size_t> out;
  for (std::size_t v : hull) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

inline Tour cheapest_insertion_from_hull(const RoutingInstance& inst, const DistanceMatrix& d,
                                         std::uint64_t& work) {
  const std::size_t n = d.size();
  std::vector<std::size_t> hull = convex_hull(inst.coords);
  if (hull.empty()) hull.push_back(0);
  std::vector<std::size_t> next(n, n);
  std::vector<bool> in(n, false);
  for (std::size_t k = 0; k < hull.size(); ++k) {
    next[hull[k]] = hull[(k + 1) % hull.size()];
    in[hull[k]] = true;
  }
  const std::size_t head = hull[0];
  std::vector<double> cost(n, 0.0);
  std::vector<std::size_t> at(n, n);
  for (std::size_t v = 0; v < n; ++v) {
    if (!in[v]) std::tie(cost[v], at[v]) = detail::best_insertion(v, head, next, d, work);
  }
  for (std::size_t step = hull.size(); step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in[v] && (pick == n || cost[v] < cost[pick])) pick = v;
    }
    const std::size_t u = at[pick];
    const std::size_t w = next[u];
    next[pick] = w;
    next[u] = pick;
    in[pick] = true;
    for (std::size_t v = 0; v < n; ++v) {
      if (in[v]) continue;
      if (at[v] == u) {
        std::tie(cost[v], at[v]) = detail::best_insertion(v, head, next, d, work);
        continue;
      }
      const double c1 = d(u, v) + d(v, pick) - d(u, pick);
      const double c2 = d(pick, v) + d(v, w) - d(pick, w);
      work += 2;
      if (c1 < cost[v]) cost[v] = c1, at[v] = u;
      if (c2 < cost[v]) cost[v] = c2, at[v] = pick;
    }
  }
  return detail::successor_to_tour(head, next, n);
}

// Position along a Hilbert curve of order 16 over the unit square.
inline std::uint64_t hilbert_index(double x, double y) {
  constexpr std::uint32_t side = 1u << 16;
  auto xi = static_cast<std::uint32_t>(std::clamp(x, 0.0, 1.0) * (side - 1));
  auto yi = static_cast<std::uint32_t>(std::clamp(y, 0.0, 1.0) * (side - 1));
  std::uint64_t d = 0;
  for (std::uint32_t s = side / 2; s > 0; s /= 2) {
    const std::uint32_t rx = (xi & s) ? 1 : 0;
    const std::uint32_t ry = (yi & s) ? 1 : 0;
    d += static_cast<std::uint64_t>(s) * s * ((3 * rx) ^ ry);
    if (ry == 0) {
      if (rx == 1) {
        xi = side - 1 - xi;
        yi = side - 1 - yi;
      }
      std::swap(xi, yi);
    }
  }
  return d;
}

inline Tour space_filling_curve(const RoutingInstance& inst, std::uint64_t& work) {
  const std::size_t n = inst.size();
  std::vector<std::pair<std::uint64_t, std::size_t>> keys(n);
  for (std::size_t v = 0; v < n; ++v) keys[v] = {hilbert_index(inst.coords[v].x, inst.coords[v].y), v};
  std::sort(keys.begin(), keys.end());
  work += n;
  Tour t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = keys[k].second;
  return t;
}

// Random restarts of 2-opt sharing one evaluation budget; keeps the best tour.
inline Tour multistart_two_opt(const DistanceMatrix& d, std::size_t starts, std::uint64_t budget,
                               Rng& rng, std::uint64_t& work) {
  const std::size_t n = d.size();
  Tour best(n);
  std::iota(best.begin(), best.end(), 0);
  double best_len = std::numeric_limits<double>::infinity();
  std::uint64_t used = 0;
  for (std::size_t s = 0; s < std::max<std::size_t>(1, starts); ++s) {
    Tour t(n);
    std::iota(t.begin(), t.end(), 0);
    std::shuffle(t.begin(), t.end(), rng);
    std::uint64_t w = 0;
    const std::uint64_t left = budget > used ? budget - used : 0;
    if (s > 0 && left == 0) break;
    two_opt(t, d, w, left);
    used += w;
    const double len = tour_length(t, d);
    if (len < best_len) {
      best_len = len;
      best = t;
    }
  }
  work += used;
  return best;
}

// ---------------------------------------------------------------------------
// CVRP construction

// Parallel Clarke-Wright savings; `shape` weights the connecting edge in
// s_ij = d(0,i) + d(0,j) - shape * d(i,j).
inline Routes clarke_wright(const RoutingInstance& inst, const DistanceMatrix& d, std::uint64_t& work,
                            double shape = 1.0) {
  const std::size_t n = inst.size();
  Routes routes;
  std::vector<std::size_t> route_of(n, n);
  std::vector<double> load;
  for (std::size_t v = 1; v < n; ++v) {
    route_of[v] = routes.size();
    routes.push_back({v});
    load.push_back(inst.demands[v]);
  }
  struct Saving {
    double s;
    std::size_t i, j;
  };
  std::vector<Saving> sav;
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sav.push_back({d(0, i) + d(0, j) - shape * d(i, j), i, j});
  }
  std::sort(sav.begin(), sav.end(), [](const Saving& a, const Saving& b) {
    if (a.s != b.s) return a.s > b.s;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  work += sav.size();
  for (const Saving& s : sav) {
    if (s.s <= 0.0) break;
    const std::size_t ri = route_of[s.i], rj = route_of[s.j];
    if (ri == rj) continue;
    if (load[ri] + load[rj] > inst.capacity + 1e-9) continue;
    auto& a = routes[ri];
    auto& b = routes[rj];
    const bool i_front = a.front() == s.i, i_back = a.back() == s.i;
    const bool j_front = b.front() == s.j, j_back = b.back() == s.j;
    if (!(i_front || i_back) || !(j_front || j_back)) continue;
    // Orient so that a ends with i and b starts with j, then append.
    if (!i_back) std::reverse(a.begin(), a.end());
    if (!j_front) std::reverse(b.begin(), b.end());
    a.insert(a.end(), b.begin(), b.end());
    load[ri] += load[rj];
    for (std::size_t v : b) route_of[v] = ri;
    b.clear();
    load[rj] = 0.0;
  }
  Routes out;
  for (auto& r : routes) {
    if (!r.empty()) out.push_back(std::move(r));
  }
  return out;
}

inline Routes sweep(const RoutingInstance& inst, const DistanceMatrix& d, std::size_t offset,
                    std::uint64_t& work) {
  const std::size_t n = inst.size();
  std::vector<std::pair<double, std::size_t>> ang;
  for (std::size_t v = 1; v < n; ++v) {
    ang.push_back({std::atan2(inst.coords[v].y - inst.coords[0].y, inst.coords[v].x - inst.coords[0].x), v});
  }
  std::sort(ang.begin(), ang.end());
  std::rotate(ang.begin(), ang.begin() + static_cast<std::ptrdiff_t>(offset % std::max<std::size_t>(1, ang.size())), ang.end());
  Routes routes;
  std::vector<std::size_t> cur;
  double load = 0.0;
  for (const auto& [a, v] : ang) {
    if (load + inst.demands[v] > inst.capacity + 1e-9) {
      routes.push_back(std::move(cur));
      cur.clear();
      load = 0.0;
    }
    cur.push_back(v);
    load += inst.demands[v];
  }
  if (!cur.empty()) routes.push_back(std::move(cur));
  for (auto& r : routes) route_two_opt(r, d, work);
  work += n;
  return routes;
}

inline Routes nearest_neighbor_routes(const RoutingInstance& inst, const DistanceMatrix& d,
                                      std::uint64_t& work) {
  const std::size_t n = inst.size();
  std::vector<bool> done(n, false);
  done[0] = true;
  std::size_t left = n - 1;
  Routes routes;
  while (left > 0) {
    std::vector<std::size_t> r;
    double load = 0.0;
    std::size_t cur = 0;
    while (true) {
      std::size_t best = n;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t v = 1; v < n; ++v) {
        if (done[v] || load + inst.demands[v] > inst.capacity + 1e-9) continue;
        if (d(cur, v) < bd) {
          bd = d(cur, v);
          best = v;
        }
      }
      work += n;
      if (best == n) break;
      done[best] = true;
      --left;
      load += inst.demands[best];
      r.push_back(best);
      cur = best;
    }
    routes.push_back(std::move(r));
  }
  for (auto& r : routes) route_two_opt(r, d, work);
  return routes;
}

}  // namespace routesel::heuristics

#pragma once

// Hand-crafted instance features for the baseline selection models.
//
// Column order (CSV header below):
//   std_dist, centroid_x, centroid_y, radius, frac_distinct, nnd_var, nnd_cv,
//   cluster_ratio, outlier_ratio, mean_cluster_radius, n
//   [, demand_mean, demand_std]   (CVRP)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "routesel/errors.hpp"
#include "routesel/instance.hpp"

namespace routesel {

inline constexpr std::size_t kTspFeatureCount = 11;
inline constexpr std::size_t kCvrpFeatureCount = 13;

inline const std::vector<std::string>& manual_feature_names(ProblemKind kind) {
  static const std::vector<std::string> tsp = {
      "std_dist",     "centroid_x",    "centroid_y",          "radius", "frac_distinct", "nnd_var",
      "nnd_cv",       "cluster_ratio", "outlier_ratio",       "mean_cluster_radius",   "n"};
  static const std::vector<std::string> cvrp = [] {
    auto v = tsp;
    v.push_back("demand_mean");
    v.push_back("demand_std");
    return v;
  }();
  return kind == ProblemKind::kTsp ? tsp : cvrp;
}

struct ManualFeatureVector {
  ProblemKind kind = ProblemKind::kTsp;
  std::vector<double> values;

  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }
};

namespace detail {

inline double euclid(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// DBSCAN with the neighbourhood including the point itself. Returns a cluster
// label per point, -1 for noise.
inline std::vector<int> dbscan(const std::vector<Point>& pts, double eps, std::size_t min_pts) {
  const std::size_t n = pts.size();
  std::vector<std::vector<std::size_t>> nbr(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (euclid(pts[i], pts[j]) <= eps) nbr[i].push_back(j);
    }
  }
  std::vector<int> label(n, -2);  // -2 unvisited
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    if (nbr[i].size() < min_pts) {
      label[i] = -1;
      continue;
    }
    label[i] = cluster;
    std::vector<std::size_t> queue(nbr[i].begin(), nbr[i].end());
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const std::size_t j = queue[q];
      if (label[j] == -1) label[j] = cluster;  // border point
      if (label[j] != -2) continue;
      label[j] = cluster;
      if (nbr[j].size() >= min_pts) queue.insert(queue.end(), nbr[j].begin(), nbr[j].end());
    }
    ++cluster;
  }
  return label;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline ManualFeatureVector manual_features(const RoutingInstance& inst) {
  const auto& pts = inst.coords;
  const std::size_t n = pts.size();
  if (n < 2) throw DomainError("manual_features needs at least 2 nodes, got " + std::to_string(n));

  std::vector<double> pair;
  pair.reserve(n * (n - 1) / 2);
  std::vector<double> nn(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = detail::euclid(pts[i], pts[j]);
      pair.push_back(d);
      nn[i] = std::min(nn[i], d);
      nn[j] = std::min(nn[j], d);
    }
  }
  const double std_dist = std::sqrt(detail::variance_of(pair));

  std::vector<std::int64_t> keys;
  keys.reserve(pair.size());
  for (double d : pair) keys.push_back(std::llround(d * 1e6));
  std::sort(keys.begin(), keys.end());
  const auto distinct = static_cast<double>(std::unique(keys.begin(), keys.end()) - keys.begin());
  const double frac_distinct = distinct / static_cast<double>(pair.size());

  Point c{0.0, 0.0};
  for (const auto& p : pts) c.x += p.x, c.y += p.y;
  c.x /= static_cast<double>(n);
  c.y /= static_cast<double>(n);
  double radius = 0.0;
  for (const auto& p : pts) radius = std::max(radius, detail::euclid(p, c));

  const double mean_nn = detail::mean_of(nn);
  double nnd_var = 0.0;
  double nnd_cv = 0.0;
  if (mean_nn > 0.0) {
    std::vector<double> nnd(n);
    for (std::size_t i = 0; i < n; ++i) nnd[i] = nn[i] / mean_nn;
    nnd_var = detail::variance_of(nnd);
    nnd_cv = std::sqrt(nnd_var) / detail::mean_of(nnd);
  }

  const auto label = detail::dbscan(pts, 2.0 * mean_nn, 4);
  const int clusters = label.empty() ? 0 : *std::max_element(label.begin(), label.end()) + 1;
  const auto outliers = static_cast<double>(std::count(label.begin(), label.end(), -1));
  double radius_sum = 0.0;
  for (int k = 0; k < clusters; ++k) {
    Point cc{0.0, 0.0};
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == k) cc.x += pts[i].x, cc.y += pts[i].y, ++cnt;
    }
    cc.x /= static_cast<double>(cnt);
    cc.y /= static_cast<double>(cnt);
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] == k) r = std::max(r, detail::euclid(pts[i], cc));
    }
    radius_sum += r;
  }

  ManualFeatureVector f;
  f.kind = inst.kind;
  f.values = {std_dist,
              c.x,
              c.y,
              radius,
              frac_distinct,
              nnd_var,
              nnd_cv,
              static_cast<double>(clusters) / static_cast<double>(n),
              outliers / static_cast<double>(n),
              clusters > 0 ? radius_sum / clusters : 0.0,
              static_cast<double>(n)};
  if (inst.is_cvrp()) {
    std::vector<double> dem(inst.demands.begin() + 1, inst.demands.end());
    f.values.push_back(detail::mean_of(dem));
    f.values.push_back(std::sqrt(detail::variance_of(dem)));
  }
  return f;
}

inline std::string manual_features_csv(const std::vector<RoutingInstance>& dataset) {
  if (dataset.empty()) return {};
  std::ostringstream out;
  out.precision(17);
  out << "instance_id";
  for (const auto& name : manual_feature_names(dataset[0].kind)) out << "," << name;
  out << "\n";
  for (const auto& inst : dataset) {
    if (inst.kind != dataset[0].kind) throw DomainError("mixed problem kinds in feature export");
    out << inst.id;
    for (double v : manual_features(inst).values) out << "," << v;
    out << "\n";
  }
  return out.str();
}

}  // namespace routesel

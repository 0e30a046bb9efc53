#pragma once

// Solver handles, the built-in zoo, performance tables and zoo elimination.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "routesel/errors.hpp"
#include "routesel/external_solver.hpp"
#include "routesel/heuristics.hpp"
#include "routesel/instance.hpp"
#include "routesel/rng.hpp"

namespace routesel {

enum class SupportedKind { kTsp, kCvrp, kBoth };

inline bool supports(SupportedKind s, ProblemKind k) {
  return s == SupportedKind::kBoth || (s == SupportedKind::kTsp) == (k == ProblemKind::kTsp);
}

struct BuiltinSolver {
  std::string name;
  std::map<std::string, double> params;
};

struct ExternalSolver {
  std::string command;
  double timeout_s = 60.0;
};

struct SolverHandle {
  std::string id;
  std::variant<BuiltinSolver, ExternalSolver> kind;
  SupportedKind supported = SupportedKind::kBoth;

  bool is_external() const { return std::holds_alternative<ExternalSolver>(kind); }
};

using Zoo = std::vector<SolverHandle>;

namespace detail {

inline double param(const BuiltinSolver& b, const std::string& key, double fallback) {
  const auto it = b.params.find(key);
  return it == b.params.end() ? fallback : it->second;
}

inline Solution run_builtin(const BuiltinSolver& b, const RoutingInstance& inst, Rng& rng) {
  namespace h = heuristics;
  const DistanceMatrix d(inst);
  Solution sol;
  std::uint64_t work = inst.size() * inst.size();  // distance matrix
  const std::string& name = b.name;
  if (name == "nn_2opt") {
    sol.tour = h::nearest_neighbor(d, 0, work);
    h::two_opt(sol.tour, d, work);
  } else if (name == "greedy_edge") {
    sol.tour = h::greedy_edge(d, work);
  } else if (name == "farthest_insertion") {
    sol.tour = h::farthest_insertion(d, work);
  } else if (name == "cheapest_insertion_hull") {
    sol.tour = h::cheapest_insertion_from_hull(inst, d, work);
  } else if (name == "space_filling_curve") {
    sol.tour = h::space_filling_curve(inst, work);
  } else if (name == "multistart_2opt") {
    const auto starts = static_cast<std::size_t>(param(b, "starts", 8));
    const double budget = param(b, "budget", 2.0e5);
    sol.tour = h::multistart_two_opt(d, starts, static_cast<std::uint64_t>(budget), rng, work);
  } else if (name == "savings") {
    sol.routes = h::clarke_wright(inst, d, work, param(b, "shape", 1.0));
  } else if (name == "sweep_2opt") {
    const auto starts = std::max<std::size_t>(1, static_cast<std::size_t>(param(b, "starts", 1)));
    const std::size_t m = inst.size() - 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < std::min(starts, m); ++s) {
      h::Routes r = h::sweep(inst, d, s * m / std::min(starts, m), work);
      const double len = h::routes_length(r, d);
      if (len < best) {
        best = len;
        sol.routes = std::move(r);
      }
    }
  } else if (name == "nn_routes_2opt") {
    sol.routes = h::nearest_neighbor_routes(inst, d, work);
  } else if (name == "savings_oropt") {
    const double budget = param(b, "budget", std::numeric_limits<double>::infinity());
    sol.routes = h::clarke_wright(inst, d, work, param(b, "shape", 1.0));
    const std::uint64_t cap = std::isfinite(budget) ? static_cast<std::uint64_t>(budget) : h::kUnlimited;
    h::or_opt(sol.routes, inst, d, work, cap);
    for (auto& r : sol.routes) h::route_two_opt(r, d, work);
  } else {
    throw ConfigError("unknown built-in solver: " + name);
  }
  sol.work = work;
  return sol;
}

}  // namespace detail

inline const std::vector<std::string>& builtin_solver_names() {
  static const std::vector<std::string> names = {
      "nn_2opt", "greedy_edge", "farthest_insertion", "cheapest_insertion_hull", "space_filling_curve",
      "multistart_2opt", "savings", "sweep_2opt", "nn_routes_2opt", "savings_oropt"};
  return names;
}

inline SupportedKind builtin_support(const std::string& name) {
  static const std::vector<std::string> cvrp = {"savings", "sweep_2opt", "nn_routes_2opt", "savings_oropt"};
  return std::find(cvrp.begin(), cvrp.end(), name) != cvrp.end() ? SupportedKind::kCvrp : SupportedKind::kTsp;
}

inline SolverHandle builtin(std::string name, std::map<std::string, double> params = {}) {
  SolverHandle h;
  h.id = name;
  h.supported = builtin_support(name);
  h.kind = BuiltinSolver{std::move(name), std::move(params)};
  return h;
}

inline Zoo default_tsp_zoo() {
  return {builtin("nn_2opt"),
          builtin("greedy_edge"),
          builtin("farthest_insertion"),
          builtin("cheapest_insertion_hull"),
          builtin("space_filling_curve"),
          builtin("multistart_2opt", {{"starts", 8}, {"budget", 6.0e4}})};
}

inline Zoo default_cvrp_zoo() {
  return {builtin("savings"), builtin("sweep_2opt"), builtin("nn_routes_2opt"), builtin("savings_oropt", {{"shape", 1.4}})};
}

inline Zoo default_zoo(ProblemKind k) { return k == ProblemKind::kTsp ? default_tsp_zoo() : default_cvrp_zoo(); }

// Runs one solver. Built-ins are deterministic given the rng state; external
// failures surface as SolverFailure.
inline Solution solve(const SolverHandle& handle, const RoutingInstance& inst, Rng& rng) {
  if (!supports(handle.supported, inst.kind)) {
    throw ContractViolation("solver " + handle.id + " does not support " + to_string(inst.kind));
  }
  const auto start = Clock::now();
  Solution sol;
  if (const auto* ext = std::get_if<ExternalSolver>(&handle.kind)) {
    sol = external_solve(ext->command, inst, ext->timeout_s);
  } else {
    sol = detail::run_builtin(std::get<BuiltinSolver>(handle.kind), inst, rng);
    try {
      sol.objective = tour_cost(inst, sol);
    } catch (const ValidationError& e) {
      throw SolverFailure(SolverFailure::Kind::kInvalidSolution, handle.id + ": " + e.what());
    }
  }
  sol.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
  return sol;
}

// Zoo files are JSON arrays of
//   {"id": ..., "builtin": name, "params": {...}}  or
//   {"id": ..., "command": "...", "timeout": seconds, "problem": "tsp"|"cvrp"|"both"}
inline Zoo parse_zoo(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("zoo file must be a JSON array");
  Zoo zoo;
  for (const auto& e : j) {
    SolverHandle h;
    if (e.contains("builtin")) {
      std::map<std::string, double> params;
      if (e.contains("params")) params = e["params"].get<std::map<std::string, double>>();
      h = builtin(e["builtin"].get<std::string>(), std::move(params));
      const auto& names = builtin_solver_names();
      if (std::find(names.begin(), names.end(), std::get<BuiltinSolver>(h.kind).name) == names.end()) {
        throw ConfigError("unknown built-in solver: " + std::get<BuiltinSolver>(h.kind).name);
      }
    } else if (e.contains("command")) {
      ExternalSolver x{e["command"].get<std::string>(), e.value("timeout", 60.0)};
      if (!(x.timeout_s > 0.0)) throw ConfigError("external solver timeout must be > 0");
      h.kind = x;
      const std::string p = e.value("problem", std::string("both"));
      h.supported = p == "tsp" ? SupportedKind::kTsp : p == "cvrp" ? SupportedKind::kCvrp : SupportedKind::kBoth;
    } else {
      throw ConfigError("zoo entry needs 'builtin' or 'command'");
    }
    if (e.contains("id")) h.id = e["id"].get<std::string>();
    for (const auto& other : zoo) {
      if (other.id == h.id) throw ConfigError("duplicate solver id in zoo: " + h.id);
    }
    zoo.push_back(std::move(h));
  }
  return zoo;
}

inline nlohmann::json zoo_to_json(const Zoo& zoo) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : zoo) {
    nlohmann::json e;
    e["id"] = h.id;
    if (const auto* b = std::get_if<BuiltinSolver>(&h.kind)) {
      e["builtin"] = b->name;
      if (!b->params.empty()) e["params"] = b->params;
    } else {
      const auto& x = std::get<ExternalSolver>(h.kind);
      e["command"] = x.command;
      e["timeout"] = x.timeout_s;
      e["problem"] = h.supported == SupportedKind::kTsp ? "tsp" : h.supported == SupportedKind::kCvrp ? "cvrp" : "both";
    }
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Performance table

// How reported running times are obtained: measured wall clock, or a
// deterministic proxy derived from work counts (byte-reproducible reports).
enum class TimingMode { kWall, kWork };

inline constexpr double kSecondsPerWorkUnit = 2e-9;

struct PerformanceTable {
  std::vector<std::string> instance_ids;
  std::vector<std::string> solver_ids;
  std::vector<std::vector<double>> objective;  // +inf marks a failed run
  std::vector<std::vector<double>> time_ms;
  std::vector<std::vector<std::uint64_t>> work;
  std::vector<std::vector<bool>> failed;
  std::vector<double> reference;
  std::vector<std::string> failures;  // one message per failed cell

  std::size_t rows() const { return instance_ids.size(); }
  std::size_t cols() const { return solver_ids.size(); }

  // Gap of solver s on row i in percent; +inf for failed runs.
  double gap(std::size_t i, std::size_t s) const {
    if (!std::isfinite(objective[i][s])) return std::numeric_limits<double>::infinity();
    return optimality_gap(objective[i][s], reference[i]);
  }

  double seconds(std::size_t i, std::size_t s, TimingMode mode) const {
    if (mode == TimingMode::kWork) return static_cast<double>(work[i][s]) * kSecondsPerWorkUnit;
    return time_ms[i][s] / 1000.0;
  }

  // Row has at least one finite objective (usable for labels and gaps).
  bool usable(std::size_t i) const {
    return std::any_of(objective[i].begin(), objective[i].end(), [](double v) { return std::isfinite(v); });
  }

  // Reference = row minimum, or the external best-known value when lower.
  void recompute_reference(const std::map<std::string, double>& best_known = {}) {
    reference.assign(rows(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < rows(); ++i) {
      for (double v : objective[i]) reference[i] = std::min(reference[i], v);
      const auto it = best_known.find(instance_ids[i]);
      if (it != best_known.end()) reference[i] = std::min(reference[i], it->second);
    }
  }

  PerformanceTable select_rows(const std::vector<std::size_t>& idx) const {
    PerformanceTable t;
    t.solver_ids = solver_ids;
    t.failures = failures;
    for (std::size_t i : idx) {
      t.instance_ids.push_back(instance_ids[i]);
      t.objective.push_back(objective[i]);
      t.time_ms.push_back(time_ms[i]);
      t.work.push_back(work[i]);
      t.failed.push_back(failed[i]);
      t.reference.push_back(reference[i]);
    }
    return t;
  }

  // Column subset; references are kept from the full table.
  PerformanceTable select_solvers(const std::vector<std::size_t>& idx) const {
    PerformanceTable t;
    t.instance_ids = instance_ids;
    t.reference = reference;
    t.failures = failures;
    for (std::size_t s : idx) t.solver_ids.push_back(solver_ids[s]);
    for (std::size_t i = 0; i < rows(); ++i) {
      std::vector<double> o, tm;
      std::vector<std::uint64_t> w;
      std::vector<bool> f;
      for (std::size_t s : idx) {
        o.push_back(objective[i][s]);
        tm.push_back(time_ms[i][s]);
        w.push_back(work[i][s]);
        f.push_back(failed[i][s]);
      }
      t.objective.push_back(std::move(o));
      t.time_ms.push_back(std::move(tm));
      t.work.push_back(std::move(w));
      t.failed.push_back(std::move(f));
    }
    return t;
  }

  std::size_t row_of(const std::string& instance_id) const {
    for (std::size_t i = 0; i < rows(); ++i) {
      if (instance_ids[i] == instance_id) return i;
    }
    throw DomainError("instance " + instance_id + " not in performance table");
  }

  std::size_t col_of(const std::string& solver_id) const {
    for (std::size_t s = 0; s < cols(); ++s) {
      if (solver_ids[s] == solver_id) return s;
    }
    throw DomainError("solver " + solver_id + " not in performance table");
  }

  // Gap matrix (rows x solvers), +inf for failures.
  std::vector<std::vector<double>> gaps() const {
    std::vector<std::vector<double>> g(rows(), std::vector<double>(cols()));
    for (std::size_t i = 0; i < rows(); ++i) {
      for (std::size_t s = 0; s < cols(); ++s) g[i][s] = usable(i) ? gap(i, s) : std::numeric_limits<double>::infinity();
    }
    return g;
  }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Seed of one (instance, solver) cell: independent of row order and threads.
inline std::uint64_t cell_seed(std::uint64_t root, const std::string& instance_id, const std::string& solver_id) {
  return derive_seed(root, streams::kSolver, detail::fnv1a(instance_id) ^ splitmix64(detail::fnv1a(solver_id)));
}

inline PerformanceTable build_performance_table(const Zoo& zoo, const std::vector<RoutingInstance>& dataset,
                                                std::size_t parallelism = 1, std::uint64_t root_seed = 0,
                                                const std::map<std::string, double>& best_known = {}) {
  PerformanceTable t;
  for (const auto& h : zoo) t.solver_ids.push_back(h.id);
  for (const auto& inst : dataset) {
    for (const auto& h : zoo) {
      if (!supports(h.supported, inst.kind)) {
        throw ContractViolation("solver " + h.id + " cannot solve " + to_string(inst.kind) + " instance " + inst.id);
      }
    }
    t.instance_ids.push_back(inst.id);
  }
  const std::size_t n = dataset.size(), m = zoo.size();
  t.objective.assign(n, std::vector<double>(m, 0.0));
  t.time_ms.assign(n, std::vector<double>(m, 0.0));
  t.work.assign(n, std::vector<std::uint64_t>(m, 0));
  t.failed.assign(n, std::vector<bool>(m, false));
  std::vector<std::string> messages(n * m);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t cell = next.fetch_add(1);
      if (cell >= n * m) return;
      const std::size_t i = cell / m, s = cell % m;
      Rng rng(cell_seed(root_seed, dataset[i].id, zoo[s].id));
      try {
        const Solution sol = solve(zoo[s], dataset[i], rng);
        t.objective[i][s] = sol.objective;
        t.time_ms[i][s] = sol.wall_time * 1000.0;
        t.work[i][s] = sol.work;
      } catch (const SolverFailure& e) {
        t.objective[i][s] = std::numeric_limits<double>::infinity();
        t.failed[i][s] = true;
        messages[cell] = dataset[i].id + "/" + zoo[s].id + ": " + e.what();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(parallelism, n * m));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& msg : messages) {
    if (!msg.empty()) t.failures.push_back(std::move(msg));
  }
  t.recompute_reference(best_known);
  return t;
}

// JSON-lines: one {instance_id, solver_id, objective, time_ms, work, failed}
// record per cell, rows in table order. Failed objectives are written as null.
inline std::string table_to_jsonl(const PerformanceTable& t) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t s = 0; s < t.cols(); ++s) {
      nlohmann::ordered_json r;
      r["instance_id"] = t.instance_ids[i];
      r["solver_id"] = t.solver_ids[s];
      if (std::isfinite(t.objective[i][s])) {
        r["objective"] = t.objective[i][s];
      } else {
        r["objective"] = nullptr;
      }
      r["time_ms"] = t.time_ms[i][s];
      r["work"] = t.work[i][s];
      r["failed"] = static_cast<bool>(t.failed[i][s]);
      out << r.dump() << "\n";
    }
  }
  return out.str();
}

inline PerformanceTable table_from_jsonl(const std::string& text,
                                         const std::map<std::string, double>& best_known = {}) {
  PerformanceTable t;
  std::map<std::string, std::size_t> row, col;
  struct Cell {
    std::size_t i, s;
    double obj, ms;
    std::uint64_t work;
    bool failed;
  };
  std::vector<Cell> cells;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid performance record: ") + e.what(), line_no);
    }
    for (const char* key : {"instance_id", "solver_id", "objective", "time_ms", "failed"}) {
      if (!r.contains(key)) throw ParseError(std::string("performance record lacks '") + key + "'", line_no);
    }
    const std::string iid = r["instance_id"].get<std::string>();
    const std::string sid = r["solver_id"].get<std::string>();
    if (!row.count(iid)) {
      row[iid] = t.instance_ids.size();
      t.instance_ids.push_back(iid);
    }
    if (!col.count(sid)) {
      col[sid] = t.solver_ids.size();
      t.solver_ids.push_back(sid);
    }
    const bool failed = r["failed"].get<bool>();
    const double obj = (failed || r["objective"].is_null()) ? std::numeric_limits<double>::infinity()
                                                             : r["objective"].get<double>();
    cells.push_back({row[iid], col[sid], obj, r["time_ms"].get<double>(), r.value("work", std::uint64_t{0}), failed});
  }
  const std::size_t n = t.instance_ids.size(), m = t.solver_ids.size();
  t.objective.assign(n, std::vector<double>(m, std::numeric_limits<double>::quiet_NaN()));
  t.time_ms.assign(n, std::vector<double>(m, 0.0));
  t.work.assign(n, std::vector<std::uint64_t>(m, 0));
  t.failed.assign(n, std::vector<bool>(m, false));
  for (const Cell& c : cells) {
    t.objective[c.i][c.s] = c.obj;
    t.time_ms[c.i][c.s] = c.ms;
    t.work[c.i][c.s] = c.work;
    t.failed[c.i][c.s] = c.failed;
    if (c.failed) t.failures.push_back(t.instance_ids[c.i] + "/" + t.solver_ids[c.s] + ": recorded failure");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < m; ++s) {
      if (std::isnan(t.objective[i][s])) {
        throw ParseError("performance table has a hole at " + t.instance_ids[i] + "/" + t.solver_ids[s], line_no);
      }
    }
  }
  t.recompute_reference(best_known);
  return t;
}

// ---------------------------------------------------------------------------
// Statistics over gap matrices (rows x solvers, percent).

using GapMatrix = std::vector<std::vector<double>>;

// Mean over rows of the best gap within `subset`.
inline double subset_mean_gap(const GapMatrix& g, const std::vector<std::size_t>& subset) {
  if (g.empty()) throw DomainError("empty gap matrix");
  double total = 0.0;
  for (const auto& row : g) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s : subset) best = std::min(best, row[s]);
    total += best;
  }
  return total / static_cast<double>(g.size());
}

struct ZooStatistics {
  std::vector<double> mean_gap;
  double oracle_gap = 0.0;
  std::size_t single_best = 0;
  std::vector<std::size_t> wins;
};

inline ZooStatistics zoo_statistics(const GapMatrix& g) {
  if (g.empty() || g[0].empty()) throw DomainError("zoo_statistics: empty table");
  const std::size_t m = g[0].size();
  ZooStatistics st;
  st.mean_gap.assign(m, 0.0);
  st.wins.assign(m, 0);
  double oracle = 0.0;
  for (const auto& row : g) {
    const double best = *std::min_element(row.begin(), row.end());
    oracle += best;
    for (std::size_t s = 0; s < m; ++s) {
      st.mean_gap[s] += row[s];
      if (row[s] <= best) ++st.wins[s];
    }
  }
  for (auto& v : st.mean_gap) v /= static_cast<double>(g.size());
  st.oracle_gap = oracle / static_cast<double>(g.size());
  st.single_best = static_cast<std::size_t>(std::min_element(st.mean_gap.begin(), st.mean_gap.end()) - st.mean_gap.begin());
  return st;
}

inline ZooStatistics zoo_statistics(const PerformanceTable& t) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (t.usable(i)) keep.push_back(i);
  }
  return zoo_statistics(t.select_rows(keep).gaps());
}

// ---------------------------------------------------------------------------
// Contribution-based zoo elimination.

struct ZooEliminationReport {
  struct Removal {
    std::size_t solver;  // column in the original table
    double contribution;
  };
  std::vector<Removal> removed;
  std::vector<std::size_t> final_zoo;
  double delta = 0.0;
  std::vector<std::vector<double>> contributions_per_step;  // A(s) for the zoo at each step
};

// A(s) = meanGap(S \ s) - meanGap(S): the degradation caused by removing s.
inline double contribution(const GapMatrix& g, const std::vector<std::size_t>& zoo, std::size_t s) {
  std::vector<std::size_t> without;
  for (std::size_t k : zoo) {
    if (k != s) without.push_back(k);
  }
  return subset_mean_gap(g, without) - subset_mean_gap(g, zoo);
}

inline ZooEliminationReport eliminate_zoo(const GapMatrix& g, double delta) {
  if (g.empty() || g[0].size() < 2) throw ParameterError("eliminate_zoo needs at least 2 solvers");
  if (delta < 0.0) throw ParameterError("eliminate_zoo: delta must be >= 0");
  ZooEliminationReport rep;
  rep.delta = delta;
  std::vector<std::size_t> zoo(g[0].size());
  std::iota(zoo.begin(), zoo.end(), 0);
  while (zoo.size() > 1) {
    std::vector<double> a;
    for (std::size_t s : zoo) a.push_back(contribution(g, zoo, s));
    rep.contributions_per_step.push_back(a);
    const auto it = std::min_element(a.begin(), a.end());
    if (*it > delta) break;
    const std::size_t k = static_cast<std::size_t>(it - a.begin());
    rep.removed.push_back({zoo[k], *it});
    zoo.erase(zoo.begin() + static_cast<std::ptrdiff_t>(k));
  }
  rep.final_zoo = zoo;
  return rep;
}

inline ZooEliminationReport eliminate_zoo(const PerformanceTable& t, double delta) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (t.usable(i)) keep.push_back(i);
  }
  return eliminate_zoo(t.select_rows(keep).gaps(), delta);
}

}  // namespace routesel

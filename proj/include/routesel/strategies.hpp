#pragma once

// Turning score vectors into solver subsets, and running those subsets.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "routesel/errors.hpp"
#include "routesel/instance.hpp"
#include "routesel/rng.hpp"
#include "routesel/solver_zoo.hpp"

namespace routesel {

struct SelectionDecision {
  std::string instance_id;
  std::vector<std::size_t> chosen;  // descending score
  double confidence = 0.0;          // max softmax probability
  std::string strategy;

  friend bool operator==(const SelectionDecision&, const SelectionDecision&) = default;
};

inline std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("softmax of empty scores");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(scores[i] - mx);
  for (auto& v : p) v /= z;
  return p;
}

inline double softmax_response(std::span<const double> scores) {
  const auto p = softmax(scores);
  return *std::max_element(p.begin(), p.end());
}

// Indices by descending value, ties to the lower index.
inline std::vector<std::size_t> descending_order(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return idx;
}

inline std::string format_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

inline SelectionDecision select_greedy(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("cannot select from an empty score vector");
  SelectionDecision d;
  d.chosen = {descending_order(scores)[0]};
  d.confidence = softmax_response(scores);
  d.strategy = "greedy";
  return d;
}

inline SelectionDecision select_topk(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ParameterError("top-k needs 1 <= k <= " + std::to_string(scores.size()) + ", got " + std::to_string(k));
  }
  SelectionDecision d;
  d.chosen = descending_order(scores);
  d.chosen.resize(k);
  d.confidence = softmax_response(scores);
  d.strategy = "topk:" + std::to_string(k);
  return d;
}

inline SelectionDecision select_topp(std::span<const double> scores, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("top-p needs 0 < p <= 1, got " + format_number(p));
  if (scores.empty()) throw DomainError("cannot select from an empty score vector");
  const auto prob = softmax(scores);
  const auto order = descending_order(prob);
  SelectionDecision d;
  d.confidence = prob[order[0]];
  d.strategy = "topp:" + format_number(p);
  if (p >= 1.0) {
    d.chosen = order;
    return d;
  }
  double cum = 0.0;
  for (std::size_t i : order) {
    d.chosen.push_back(i);
    cum += prob[i];
    if (cum >= p - 1e-12) break;
  }
  return d;
}

// Lower-interpolated quantile of the confidences; -inf and +inf for the
// end points so that ratio 0 rejects nothing and ratio 1 rejects everything.
inline double calibrate_rejection_threshold(std::span<const double> confidences, double reject_ratio) {
  if (!(reject_ratio >= 0.0 && reject_ratio <= 1.0)) {
    throw ParameterError("reject ratio must lie in [0, 1], got " + format_number(reject_ratio));
  }
  if (confidences.empty()) throw DomainError("cannot calibrate a threshold without confidences");
  if (reject_ratio == 0.0) return -std::numeric_limits<double>::infinity();
  const auto n = confidences.size();
  const auto k = static_cast<std::size_t>(std::floor(reject_ratio * static_cast<double>(n) + 1e-9));
  if (reject_ratio == 1.0 || k >= n) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(confidences.begin(), confidences.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[k];
}

inline SelectionDecision select_rejection(std::span<const double> scores, double tau, std::size_t k) {
  SelectionDecision d = softmax_response(scores) >= tau ? select_greedy(scores) : select_topk(scores, k);
  d.strategy = "reject:" + std::to_string(k);
  return d;
}

// ---------------------------------------------------------------------------
// Strategy specifications: greedy | topk:K | reject:RATIO,K | topp:P

struct StrategySpec {
  enum class Kind { kGreedy, kTopK, kReject, kTopP };
  Kind kind = Kind::kGreedy;
  std::size_t k = 2;
  double ratio = 0.2;
  double p = 0.5;

  std::string tag() const {
    switch (kind) {
      case Kind::kGreedy: return "greedy";
      case Kind::kTopK: return "topk:" + std::to_string(k);
      case Kind::kReject: return "reject:" + format_number(ratio) + "," + std::to_string(k);
      case Kind::kTopP: return "topp:" + format_number(p);
    }
    return "?";
  }
};

inline StrategySpec parse_strategy(const std::string& text) {
  StrategySpec s;
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto number = [&](const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("bad number '" + v + "' in strategy '" + text + "'");
    return x;
  };
  auto count = [&](const std::string& v) {
    const double x = number(v);
    if (x < 1.0 || x != std::floor(x)) throw ConfigError("k must be a positive integer in strategy '" + text + "'");
    return static_cast<std::size_t>(x);
  };
  if (head == "greedy" && colon == std::string::npos) {
    s.kind = StrategySpec::Kind::kGreedy;
  } else if (head == "topk" && !args.empty()) {
    s.kind = StrategySpec::Kind::kTopK;
    s.k = count(args);
  } else if (head == "reject" && args.find(',') != std::string::npos) {
    s.kind = StrategySpec::Kind::kReject;
    s.ratio = number(args.substr(0, args.find(',')));
    s.k = count(args.substr(args.find(',') + 1));
    if (s.ratio < 0.0 || s.ratio > 1.0) throw ConfigError("reject ratio must lie in [0, 1] in '" + text + "'");
  } else if (head == "topp" && !args.empty()) {
    s.kind = StrategySpec::Kind::kTopP;
    s.p = number(args);
    if (!(s.p > 0.0 && s.p <= 1.0)) throw ConfigError("p must lie in (0, 1] in '" + text + "'");
  } else {
    throw ConfigError("unknown strategy '" + text + "' (expected greedy | topk:K | reject:RATIO,K | topp:P)");
  }
  return s;
}

// Decisions for a whole set of score vectors. Rejection thresholds are
// calibrated on these scores unless `frozen_tau` is given.
inline std::vector<SelectionDecision> decide_all(const StrategySpec& spec,
                                                 const std::vector<std::vector<double>>& scores,
                                                 const std::vector<std::string>& instance_ids,
                                                 const double* frozen_tau = nullptr) {
  if (scores.size() != instance_ids.size()) throw DimensionError("one id per score vector is required");
  double tau = 0.0;
  if (spec.kind == StrategySpec::Kind::kReject) {
    if (frozen_tau) {
      tau = *frozen_tau;
    } else {
      std::vector<double> conf;
      for (const auto& s : scores) conf.push_back(softmax_response(s));
      tau = calibrate_rejection_threshold(conf, spec.ratio);
    }
  }
  std::vector<SelectionDecision> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    SelectionDecision d;
    switch (spec.kind) {
      case StrategySpec::Kind::kGreedy: d = select_greedy(scores[i]); break;
      case StrategySpec::Kind::kTopK: d = select_topk(scores[i], spec.k); break;
      case StrategySpec::Kind::kReject: d = select_rejection(scores[i], tau, spec.k); break;
      case StrategySpec::Kind::kTopP: d = select_topp(scores[i], spec.p); break;
    }
    d.instance_id = instance_ids[i];
    d.strategy = spec.tag();
    out.push_back(std::move(d));
  }
  return out;
}

inline std::string decisions_to_jsonl(const std::vector<SelectionDecision>& ds) {
  std::string out;
  for (const auto& d : ds) {
    nlohmann::ordered_json j;
    j["instance_id"] = d.instance_id;
    j["strategy"] = d.strategy;
    j["chosen"] = d.chosen;
    j["confidence"] = d.confidence;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Executing a decision.

struct SolverRun {
  std::size_t solver = 0;
  double objective = std::numeric_limits<double>::infinity();
  double seconds = 0.0;
  std::string error;
};

struct ExecutionRecord {
  std::string instance_id;
  Solution solution;
  std::size_t winner = 0;
  bool failed = false;
  double seconds = 0.0;  // selection time + sum of solver times
  std::vector<SolverRun> runs;
};

// Runs every chosen solver and keeps the cheapest valid solution (ties to the
// lower solver index).
inline ExecutionRecord execute_decision(const RoutingInstance& inst, const SelectionDecision& decision, const Zoo& zoo,
                                        std::uint64_t root_seed, double selection_seconds = 0.0) {
  ExecutionRecord rec;
  rec.instance_id = inst.id;
  rec.failed = true;
  rec.seconds = selection_seconds;
  for (std::size_t s : decision.chosen) {
    if (s >= zoo.size()) throw ContractViolation("decision refers to solver " + std::to_string(s) + " outside the zoo");
    SolverRun run;
    run.solver = s;
    Rng rng(cell_seed(root_seed, inst.id, zoo[s].id));
    const auto start = Clock::now();
    try {
      Solution sol = solve(zoo[s], inst, rng);
      run.objective = sol.objective;
      if (rec.failed || sol.objective < rec.solution.objective ||
          (sol.objective == rec.solution.objective && s < rec.winner)) {
        rec.solution = std::move(sol);
        rec.winner = s;
        rec.failed = false;
      }
    } catch (const SolverFailure& e) {
      run.error = e.what();
    }
    run.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    rec.seconds += run.seconds;
    rec.runs.push_back(std::move(run));
  }
  return rec;
}

// The same reduction over recorded runs in a performance table.
struct RecordedOutcome {
  double objective = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
  double seconds = 0.0;
  bool failed = true;
  std::size_t winner = 0;
};

inline RecordedOutcome evaluate_recorded(const PerformanceTable& t, std::size_t row, const SelectionDecision& d,
                                         TimingMode mode, double selection_seconds = 0.0) {
  RecordedOutcome o;
  o.seconds = selection_seconds;
  for (std::size_t s : d.chosen) {
    if (s >= t.cols()) throw ContractViolation("decision refers to solver " + std::to_string(s) + " outside the table");
    o.seconds += t.seconds(row, s, mode);
    const double v = t.objective[row][s];
    if (std::isfinite(v) && (o.failed || v < o.objective || (v == o.objective && s < o.winner))) {
      o.objective = v;
      o.winner = s;
      o.failed = false;
    }
  }
  if (!o.failed) o.gap = optimality_gap(o.objective, t.reference[row]);
  return o;
}

}  // namespace routesel

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "routesel/external_solver.hpp"
#include "routesel/heuristics.hpp"
#include "routesel/solver_zoo.hpp"
#include "test_util.hpp"

using namespace routesel;
using routesel::testing::random_cvrp;
using routesel::testing::random_tsp;

namespace {

double brute_force_tsp(const RoutingInstance& inst) {
  std::vector<std::size_t> perm(inst.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, tour_length(inst, perm));
  } while (std::next_permutation(perm.begin() + 1, perm.end()));
  return best;
}

Solution run(const SolverHandle& h, const RoutingInstance& inst, std::uint64_t seed = 1) {
  Rng rng(seed);
  return solve(h, inst, rng);
}

std::string mock(const std::string& mode) { return std::string(ROUTESEL_MOCK_SOLVER) + " " + mode; }

}  // namespace

TEST(Heuristics, NeverBeatBruteForceOptimum) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const RoutingInstance inst = random_tsp(4 + seed % 6, seed);
    const double opt = brute_force_tsp(inst);
    for (const auto& h : default_tsp_zoo()) {
      const Solution s = run(h, inst, seed);
      EXPECT_GE(s.objective, opt - 1e-9) << h.id;
      EXPECT_NEAR(s.objective, tour_cost(inst, s), 1e-12);
    }
  }
}

TEST(Heuristics, TwoOptFindsOptimumOnConvexPosition) {
  RoutingInstance inst;
  for (int k = 0; k < 9; ++k) {
    const double a = 2.0 * M_PI * ((k * 4) % 9) / 9.0;
    inst.coords.push_back({0.5 + 0.5 * std::cos(a), 0.5 + 0.5 * std::sin(a)});
  }
  const double opt = brute_force_tsp(inst);
  EXPECT_NEAR(run(builtin("nn_2opt"), inst).objective, opt, 1e-12);
  EXPECT_NEAR(run(builtin("multistart_2opt", {{"starts", 4}}), inst).objective, opt, 1e-12);
}

TEST(Heuristics, ValidOnLargerInstances) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const RoutingInstance t = random_tsp(120, seed);
    for (const auto& h : default_tsp_zoo()) EXPECT_NO_THROW(validate_solution(t, run(h, t))) << h.id;
    const RoutingInstance c = random_cvrp(120, seed);
    for (const auto& h : default_cvrp_zoo()) {
      const Solution s = run(h, c);
      EXPECT_NO_THROW(validate_solution(c, s)) << h.id;
      EXPECT_GT(s.work, 0u) << h.id;
    }
  }
}

TEST(Heuristics, CvrpOneCustomerPerRouteWhenDemandsFillCapacity) {
  RoutingInstance inst = random_cvrp(6, 2);
  for (std::size_t i = 1; i < inst.size(); ++i) inst.demands[i] = 1.0;
  for (const auto& h : default_cvrp_zoo()) EXPECT_EQ(run(h, inst).routes.size(), 5u) << h.id;
}

TEST(Heuristics, DeterministicGivenSeed) {
  const RoutingInstance inst = random_tsp(60, 8);
  for (const auto& h : default_tsp_zoo()) {
    const Solution a = run(h, inst, 5), b = run(h, inst, 5);
    EXPECT_EQ(a.tour, b.tour) << h.id;
    EXPECT_EQ(a.work, b.work) << h.id;
  }
}

TEST(Zoo, RejectsUnsupportedKind) {
  const RoutingInstance c = random_cvrp(10, 1);
  EXPECT_THROW(run(builtin("nn_2opt"), c), ContractViolation);
}

TEST(Zoo, JsonRoundTripAndErrors) {
  Zoo z = default_cvrp_zoo();
  z.push_back({"ext", ExternalSolver{"/bin/true", 5.0}, SupportedKind::kCvrp});
  const Zoo back = parse_zoo(zoo_to_json(z));
  EXPECT_EQ(zoo_to_json(back), zoo_to_json(z));
  EXPECT_THROW(parse_zoo(nlohmann::json::parse(R"([{"id":"a","builtin":"nope"}])")), ConfigError);
  EXPECT_THROW(parse_zoo(nlohmann::json::parse(R"([{"id":"a","builtin":"savings"},{"id":"a","builtin":"sweep_2opt"}])")),
               ConfigError);
  EXPECT_THROW(parse_zoo(nlohmann::json::parse(R"({"id":"a"})")), ConfigError);
}

TEST(PerformanceTable, IndependentOfParallelism) {
  GeneratorConfig g;
  g.n_min = 20;
  g.n_max = 40;
  g.seed = 3;
  const auto data = generate_dataset(g, 12, "p");
  const auto a = build_performance_table(default_tsp_zoo(), data, 1, 7);
  const auto b = build_performance_table(default_tsp_zoo(), data, 4, 7);
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_EQ(a.work, b.work);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    EXPECT_EQ(a.reference[i], *std::min_element(a.objective[i].begin(), a.objective[i].end()));
  }
}

TEST(PerformanceTable, JsonlRoundTrip) {
  GeneratorConfig g;
  g.kind = ProblemKind::kCvrp;
  g.n_min = 15;
  g.n_max = 25;
  g.seed = 2;
  const auto data = generate_dataset(g, 5, "q");
  PerformanceTable t = build_performance_table(default_cvrp_zoo(), data, 1, 1);
  t.objective[1][2] = std::numeric_limits<double>::infinity();
  t.failed[1][2] = true;
  const PerformanceTable back = table_from_jsonl(table_to_jsonl(t));
  EXPECT_EQ(back.objective, t.objective);
  EXPECT_EQ(back.work, t.work);
  EXPECT_EQ(back.solver_ids, t.solver_ids);
  EXPECT_EQ(table_to_jsonl(back), table_to_jsonl(t));
  EXPECT_THROW(table_from_jsonl("{\"instance_id\":\"a\"}\n"), ParseError);
  EXPECT_THROW(table_from_jsonl("nonsense\n"), ParseError);
}

TEST(PerformanceTable, BestKnownLowersReference) {
  PerformanceTable t;
  t.instance_ids = {"a"};
  t.solver_ids = {"x", "y"};
  t.objective = {{10.0, 12.0}};
  t.recompute_reference({{"a", 8.0}});
  EXPECT_EQ(t.reference[0], 8.0);
  EXPECT_DOUBLE_EQ(t.gap(0, 0), 25.0);
}

TEST(Elimination, WorkedExample) {
  const GapMatrix g = {{1.0, 2.0, 3.0}, {4.0, 2.0, 5.0}};
  EXPECT_EQ(contribution(g, {0, 1, 2}, 2), 0.0);
  EXPECT_DOUBLE_EQ(contribution(g, {0, 1, 2}, 0), 0.5);
  EXPECT_DOUBLE_EQ(contribution(g, {0, 1, 2}, 1), 1.0);
  const ZooStatistics st = zoo_statistics(g);
  EXPECT_EQ(st.wins, (std::vector<std::size_t>{1, 1, 0}));
  EXPECT_DOUBLE_EQ(st.oracle_gap, 1.5);
  const auto rep = eliminate_zoo(g, 0.01);
  ASSERT_FALSE(rep.removed.empty());
  EXPECT_EQ(rep.removed[0].solver, 2u);
  EXPECT_EQ(rep.removed[0].contribution, 0.0);
  EXPECT_EQ(rep.final_zoo, (std::vector<std::size_t>{0, 1}));
}

TEST(Elimination, KeepsUniquelyBestSolvers) {
  const GapMatrix g = {{0.0, 1.0, 1.0}, {1.0, 0.0, 1.0}, {1.0, 1.0, 0.0}};
  const auto rep = eliminate_zoo(g, 0.01);
  EXPECT_TRUE(rep.removed.empty());
  EXPECT_EQ(rep.final_zoo.size(), 3u);
  EXPECT_THROW(eliminate_zoo(GapMatrix{{1.0}}, 0.01), ParameterError);
  EXPECT_THROW(eliminate_zoo(g, -1.0), ParameterError);
}

TEST(Elimination, MatchesExhaustiveSingleRemovalOracle) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0, 3);
  GapMatrix g(40, std::vector<double>(5));
  for (auto& row : g) {
    for (auto& v : row) v = u(rng);
  }
  const auto rep = eliminate_zoo(g, 0.2);
  std::vector<std::size_t> zoo = {0, 1, 2, 3, 4};
  for (const auto& r : rep.removed) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s : zoo) best = std::min(best, contribution(g, zoo, s));
    EXPECT_DOUBLE_EQ(r.contribution, best);
    EXPECT_LE(r.contribution, 0.2);
    zoo.erase(std::find(zoo.begin(), zoo.end(), r.solver));
  }
  EXPECT_EQ(zoo, rep.final_zoo);
}

TEST(ExternalSolver, IdentityTour) {
  const RoutingInstance inst = random_tsp(7, 1, "ext-1");
  const Solution s = external_solve(mock("identity"), inst, 10.0);
  EXPECT_EQ(s.tour.size(), 7u);
  EXPECT_NEAR(s.objective, tour_length(inst, s.tour), 1e-12);
}

TEST(ExternalSolver, CvrpRoutes) {
  const RoutingInstance inst = random_cvrp(6, 1, "ext-2");
  EXPECT_EQ(external_solve(mock("identity"), inst, 10.0).routes.size(), 5u);
}

TEST(ExternalSolver, FailureKinds) {
  const RoutingInstance inst = random_tsp(5, 2, "ext-3");
  auto kind_of = [&](const std::string& mode, double timeout = 10.0) {
    try {
      external_solve(mock(mode), inst, timeout);
    } catch (const SolverFailure& e) {
      return e.kind();
    }
    ADD_FAILURE() << mode << " did not fail";
    return SolverFailure::Kind::kLaunch;
  };
  EXPECT_EQ(kind_of("invalid"), SolverFailure::Kind::kInvalidSolution);
  EXPECT_EQ(kind_of("error"), SolverFailure::Kind::kSolverError);
  EXPECT_EQ(kind_of("garbage"), SolverFailure::Kind::kMalformed);
  EXPECT_EQ(kind_of("crash"), SolverFailure::Kind::kExit);
  EXPECT_EQ(kind_of("sleep", 0.3), SolverFailure::Kind::kTimeout);
}

TEST(ExternalSolver, FailuresBecomeInfiniteCells) {
  GeneratorConfig g;
  g.n_min = g.n_max = 8;
  g.seed = 1;
  const auto data = generate_dataset(g, 3, "e");
  Zoo zoo = {builtin("nn_2opt"), {"bad", ExternalSolver{mock("invalid"), 10.0}, SupportedKind::kTsp}};
  const auto t = build_performance_table(zoo, data, 1, 1);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    EXPECT_TRUE(t.failed[i][1]);
    EXPECT_TRUE(std::isinf(t.objective[i][1]));
    EXPECT_TRUE(t.usable(i));
  }
  EXPECT_EQ(t.failures.size(), 3u);
}

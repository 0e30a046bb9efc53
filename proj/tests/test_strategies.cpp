#include <gtest/gtest.h>

#include <cmath>

#include "routesel/strategies.hpp"
#include "test_util.hpp"

using namespace routesel;

namespace {

std::vector<std::vector<double>> random_scores(std::size_t rows, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.5);
  std::vector<std::vector<double>> s(rows, std::vector<double>(m));
  for (auto& r : s) {
    for (auto& v : r) v = g(rng);
  }
  return s;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("i" + std::to_string(i));
  return out;
}

}  // namespace

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  const std::vector<double> s = {1.0, 2.0, 3.0};
  const auto p = softmax(s);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  const auto q = softmax(std::vector<double>{101.0, 102.0, 103.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-15);
  EXPECT_THROW(softmax(std::vector<double>{}), DomainError);
}

TEST(Greedy, PicksArgmaxLowestOnTies) {
  EXPECT_EQ(select_greedy(std::vector<double>{0.1, 0.9, 0.9}).chosen, (std::vector<std::size_t>{1}));
  EXPECT_NEAR(select_greedy(std::vector<double>{0.0, 0.0}).confidence, 0.5, 1e-15);
  EXPECT_THROW(select_greedy(std::vector<double>{}), DomainError);
}

TEST(TopK, DescendingScores) {
  EXPECT_EQ(select_topk(std::vector<double>{0.3, 0.1, 0.7, 0.5}, 3).chosen, (std::vector<std::size_t>{2, 3, 0}));
  EXPECT_THROW(select_topk(std::vector<double>{0.3, 0.1}, 3), ParameterError);
  EXPECT_THROW(select_topk(std::vector<double>{0.3, 0.1}, 0), ParameterError);
}

TEST(TopP, SmallestPrefixReachingMass) {
  const std::vector<double> s = {std::log(0.5), std::log(0.3), std::log(0.2)};
  EXPECT_EQ(select_topp(s, 0.5).chosen.size(), 1u);
  EXPECT_EQ(select_topp(s, 0.51).chosen.size(), 2u);
  EXPECT_EQ(select_topp(s, 0.8).chosen.size(), 2u);
  EXPECT_EQ(select_topp(s, 0.81).chosen.size(), 3u);
  EXPECT_EQ(select_topp(s, 1.0).chosen.size(), 3u);
  EXPECT_THROW(select_topp(s, 0.0), ParameterError);
  EXPECT_THROW(select_topp(s, 1.5), ParameterError);
}

TEST(Rejection, ThresholdQuantile) {
  const std::vector<double> c = {0.9, 0.2, 0.5, 0.7, 0.4};
  EXPECT_EQ(calibrate_rejection_threshold(c, 0.4), 0.5);
  EXPECT_EQ(calibrate_rejection_threshold(c, 0.0), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(calibrate_rejection_threshold(c, 1.0), std::numeric_limits<double>::infinity());
  EXPECT_THROW(calibrate_rejection_threshold(c, 1.1), ParameterError);
  EXPECT_THROW(calibrate_rejection_threshold(std::vector<double>{}, 0.5), DomainError);
}

TEST(Rejection, RejectedFractionMatchesRatio) {
  const auto s = random_scores(1000, 5, 3);
  for (double r : {0.1, 0.25, 0.5, 0.8}) {
    StrategySpec spec;
    spec.kind = StrategySpec::Kind::kReject;
    spec.ratio = r;
    spec.k = 3;
    std::size_t rejected = 0;
    for (const auto& d : decide_all(spec, s, ids(1000))) rejected += d.chosen.size() == 3;
    EXPECT_EQ(rejected, static_cast<std::size_t>(std::floor(r * 1000 + 1e-9))) << r;
  }
}

TEST(Rejection, EndpointsReproduceGreedyAndTopK) {
  const auto s = random_scores(300, 6, 4);
  StrategySpec g, k2, r0, r1;
  g.kind = StrategySpec::Kind::kGreedy;
  k2.kind = StrategySpec::Kind::kTopK;
  k2.k = 2;
  r0.kind = r1.kind = StrategySpec::Kind::kReject;
  r0.k = r1.k = 2;
  r0.ratio = 0.0;
  r1.ratio = 1.0;
  const auto dg = decide_all(g, s, ids(300)), dk = decide_all(k2, s, ids(300));
  const auto d0 = decide_all(r0, s, ids(300)), d1 = decide_all(r1, s, ids(300));
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_EQ(d0[i].chosen, dg[i].chosen);
    EXPECT_EQ(d1[i].chosen, dk[i].chosen);
  }
}

TEST(Rejection, FrozenThresholdIsUsed) {
  const auto s = random_scores(20, 3, 5);
  StrategySpec spec;
  spec.kind = StrategySpec::Kind::kReject;
  spec.k = 2;
  const double tau = 2.0;
  for (const auto& d : decide_all(spec, s, ids(20), &tau)) EXPECT_EQ(d.chosen.size(), 2u);
}

TEST(Spec, ParseAndTag) {
  EXPECT_EQ(parse_strategy("greedy").tag(), "greedy");
  EXPECT_EQ(parse_strategy("topk:3").k, 3u);
  const auto r = parse_strategy("reject:0.25,4");
  EXPECT_EQ(r.ratio, 0.25);
  EXPECT_EQ(r.k, 4u);
  EXPECT_EQ(r.tag(), "reject:0.25,4");
  EXPECT_EQ(parse_strategy("topp:0.8").tag(), "topp:0.8");
  for (const char* bad : {"best", "topk", "topk:0", "topk:1.5", "reject:0.2", "reject:2,2", "topp:0", "greedy:1", "topp:x"}) {
    EXPECT_THROW(parse_strategy(bad), ConfigError) << bad;
  }
}

TEST(Decisions, JsonLines) {
  SelectionDecision d{"a", {2, 0}, 0.5, "topk:2"};
  EXPECT_EQ(decisions_to_jsonl({d}), "{\"instance_id\":\"a\",\"strategy\":\"topk:2\",\"chosen\":[2,0],\"confidence\":0.5}\n");
}

class Recorded : public ::testing::Test {
 protected:
  void SetUp() override {
    GeneratorConfig g;
    g.n_min = 15;
    g.n_max = 40;
    g.seed = 8;
    data = generate_dataset(g, 20, "r");
    zoo = default_tsp_zoo();
    table = build_performance_table(zoo, data, 1, 3);
  }
  std::vector<RoutingInstance> data;
  Zoo zoo;
  PerformanceTable table;
};

TEST_F(Recorded, ExecutionMatchesRecordedTable) {
  const auto s = random_scores(data.size(), zoo.size(), 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    SelectionDecision d = select_topk(s[i], 3);
    const ExecutionRecord rec = execute_decision(data[i], d, zoo, 3);
    const RecordedOutcome o = evaluate_recorded(table, i, d, TimingMode::kWork);
    EXPECT_EQ(rec.solution.objective, o.objective);
    EXPECT_EQ(rec.winner, o.winner);
    EXPECT_NO_THROW(validate_solution(data[i], rec.solution));
  }
}

TEST_F(Recorded, CostNonIncreasingInK) {
  const auto s = random_scores(data.size(), zoo.size(), 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double prev = std::numeric_limits<double>::infinity();
    double prev_time = 0.0;
    for (std::size_t k = 1; k <= zoo.size(); ++k) {
      const RecordedOutcome o = evaluate_recorded(table, i, select_topk(s[i], k), TimingMode::kWork);
      EXPECT_LE(o.objective, prev);
      EXPECT_GE(o.seconds, prev_time);
      prev = o.objective;
      prev_time = o.seconds;
    }
    EXPECT_EQ(prev, table.reference[i]);
  }
}

TEST_F(Recorded, FailedSolversAreSkipped) {
  PerformanceTable t = table;
  t.objective[0][1] = std::numeric_limits<double>::infinity();
  SelectionDecision d{"", {1}, 0, ""};
  EXPECT_TRUE(evaluate_recorded(t, 0, d, TimingMode::kWork).failed);
  d.chosen = {1, 0};
  const auto o = evaluate_recorded(t, 0, d, TimingMode::kWork);
  EXPECT_FALSE(o.failed);
  EXPECT_EQ(o.winner, 0u);
  d.chosen = {9};
  EXPECT_THROW(evaluate_recorded(t, 0, d, TimingMode::kWork), ContractViolation);
}

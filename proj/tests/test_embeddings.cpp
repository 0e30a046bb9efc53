#include <gtest/gtest.h>

#include "routesel/solver_embeddings.hpp"
#include "test_util.hpp"

using namespace routesel;
using routesel::testing::random_tensor;
using routesel::testing::random_tsp;

namespace {

PairSystemConfig tiny_pair() {
  PairSystemConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.heads = 2;
  c.encoder.ff_hidden = 16;
  c.encoder.hier_blocks = 1;
  c.encoder.layers_per_block = 1;
  c.head_hidden = 16;
  c.representative_fraction = 0.5;
  return c;
}

PerformanceTable table_of(const std::vector<std::vector<double>>& obj) {
  PerformanceTable t;
  for (std::size_t i = 0; i < obj.size(); ++i) t.instance_ids.push_back("r" + std::to_string(i));
  for (std::size_t s = 0; s < obj[0].size(); ++s) t.solver_ids.push_back("s" + std::to_string(s));
  t.objective = obj;
  t.time_ms.assign(obj.size(), std::vector<double>(obj[0].size(), 1.0));
  t.work.assign(obj.size(), std::vector<std::uint64_t>(obj[0].size(), 1));
  t.failed.assign(obj.size(), std::vector<bool>(obj[0].size(), false));
  t.recompute_reference();
  return t;
}

void randomise_alphas(ad::ParameterSet& ps, Rng& rng) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i).ends_with(".alpha")) ps.value(i)[0] = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
  }
}

}  // namespace

TEST(Representatives, LargestMarginFirst) {
  const PerformanceTable t = table_of({{1.0, 2.0, 3.0},    // s0 wins, ratio 0.5
                                       {1.0, 1.25, 5.0},   // s0 wins, ratio 0.8
                                       {4.0, 1.0, 9.0},    // s1 wins
                                       {1.0, 4.0, 10.0},   // s0 wins, ratio 0.25
                                       {2.0, 2.0, 3.0}});  // tie: s0 and s1 both best, ratio 1
  EXPECT_EQ(representative_rows(t, 0, 1.0), (std::vector<std::size_t>{3, 0, 1, 4}));
  EXPECT_EQ(representative_rows(t, 0, 0.5), (std::vector<std::size_t>{3, 0}));
  EXPECT_EQ(representative_rows(t, 0, 0.01), (std::vector<std::size_t>{3}));
  EXPECT_EQ(representative_instances(t, 1, 1.0), (std::vector<std::string>{"r2", "r4"}));
  EXPECT_THROW(representative_rows(t, 2, 0.5), DomainError);
  EXPECT_THROW(representative_rows(t, 0, 0.0), ParameterError);
}

TEST(Representatives, RunnerUpFailureCountsAsLargestMargin) {
  const double inf = std::numeric_limits<double>::infinity();
  const PerformanceTable t = table_of({{1.0, 1.5}, {3.0, inf}});
  EXPECT_EQ(representative_rows(t, 0, 1.0), (std::vector<std::size_t>{1, 0}));
}

TEST(Momentum, ConvexCombination) {
  ad::ParameterSet live, shadow;
  live.add("w", ad::Tensor::row({1.0, 2.0}));
  shadow.add("w", ad::Tensor::row({0.0, 0.0}));
  momentum_update(live, shadow, 0.75);
  EXPECT_DOUBLE_EQ(shadow.value(0)[0], 0.25);
  EXPECT_DOUBLE_EQ(shadow.value(0)[1], 0.5);
  momentum_update(live, shadow, 0.0);
  EXPECT_EQ(shadow.value(0), live.value(0));
  EXPECT_THROW(momentum_update(live, shadow, 1.0), ParameterError);
  ad::ParameterSet other;
  EXPECT_THROW(momentum_update(live, other, 0.5), DimensionError);
}

TEST(PairSystem, RequiresHierarchicalEncoder) {
  PairSystemConfig c = tiny_pair();
  c.encoder.mode = EncoderMode::kFlat;
  EXPECT_THROW(PairSystem::create(ProblemKind::kTsp, c, 1), ConfigError);
}

TEST(PairSystem, EmbeddingInvariantToRepresentativeOrder) {
  PairSystem sys = PairSystem::create(ProblemKind::kTsp, tiny_pair(), 3);
  Rng rng(3);
  randomise_alphas(sys.net(), rng);
  const std::vector<RoutingInstance> pool = {random_tsp(8, 1, "a"), random_tsp(9, 2, "b"), random_tsp(10, 3, "c")};
  const ad::Tensor e1 = sys.embed({&pool[0], &pool[1], &pool[2]});
  const ad::Tensor e2 = sys.embed({&pool[2], &pool[0], &pool[1]});
  EXPECT_EQ(e1.cols(), sys.dim());
  for (std::size_t i = 0; i < e1.size(); ++i) EXPECT_NEAR(e1[i], e2[i], 1e-12);
}

TEST(PairSystem, PairHeadGradient) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    PairSystem sys = PairSystem::create(ProblemKind::kTsp, tiny_pair(), seed);
    Rng rng(seed);
    routesel::testing::randomise_parameters(sys.net(), rng);
    const ad::Tensor emb = random_tensor(1, sys.dim(), rng);
    const ad::Tensor repr = random_tensor(1, sys.dim(), rng);
    const double err = ad::grad_check(
        [&](ad::Tape& t, std::span<const ad::Var> p) { return sys.pair_score(p, t.constant(repr), t.constant(emb), 50); },
        sys.net().values(), 1e-5);
    EXPECT_LT(err, 1e-5);
  }
}

TEST(PairSystem, SummaryTransformerGradient) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    PairSystem sys = PairSystem::create(ProblemKind::kTsp, tiny_pair(), seed);
    Rng rng(seed);
    routesel::testing::randomise_parameters(sys.net(), rng);
    const ad::Tensor tokens = random_tensor(3, sys.dim(), rng);
    const ad::Tensor repr = random_tensor(1, sys.dim(), rng);
    const double err = ad::grad_check(
        [&](ad::Tape& t, std::span<const ad::Var> p) {
          return sys.pair_score(p, t.constant(repr), sys.solver_embed(p, t.constant(tokens)), 50);
        },
        sys.net().values(), 2e-3);
    EXPECT_LT(err, 1e-4);
  }
}

class PairTraining : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(4);
    for (std::size_t i = 0; i < 24; ++i) {
      const std::size_t n = i % 3 == 0 ? 6 : i % 3 == 1 ? 14 : 24;
      pool.push_back(random_tsp(n, rng(), "p" + std::to_string(i)));
      const std::size_t win = i % 3;
      std::vector<double> row(3, 12.0);
      row[win] = 10.0;
      obj.push_back(row);
    }
    table = table_of(obj);
    for (std::size_t i = 0; i < pool.size(); ++i) table.instance_ids[i] = pool[i].id;
  }
  std::vector<RoutingInstance> pool;
  std::vector<std::vector<double>> obj;
  PerformanceTable table;
};

TEST_F(PairTraining, TrainsAndIntegratesUnseenSolver) {
  const PerformanceTable seen = table.select_solvers({0, 1});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 6;
  cfg.lr = 1e-3;
  cfg.seed = 2;
  const auto res = train_pair_system(PairSystem::create(ProblemKind::kTsp, tiny_pair(), 2), pool, {}, seen, cfg);
  EXPECT_EQ(res.system.solver_ids(), (std::vector<std::string>{"s0", "s1"}));
  EXPECT_EQ(res.history.epochs.size(), 3u);
  EXPECT_FALSE(res.system.tokenizer().live == res.system.tokenizer().shadow);
  EXPECT_EQ(res.system.score(pool[0]).size(), 2u);

  const PairSystem ext = integrate_unseen_solver(res.system, "s2", table, pool);
  EXPECT_EQ(ext.solver_ids().back(), "s2");
  const auto scores = ext.score(pool[0]);
  ASSERT_EQ(scores.size(), 3u);
  const auto before = res.system.score(pool[0]);
  EXPECT_EQ(scores[0], before[0]);
  EXPECT_EQ(scores[1], before[1]);
  EXPECT_THROW(integrate_unseen_solver(res.system, "nope", table, pool), DomainError);
}

TEST_F(PairTraining, Deterministic) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 5;
  const auto a = train_pair_system(PairSystem::create(ProblemKind::kTsp, tiny_pair(), 5), pool, {}, table, cfg);
  const auto b = train_pair_system(PairSystem::create(ProblemKind::kTsp, tiny_pair(), 5), pool, {}, table, cfg);
  EXPECT_EQ(a.system.net(), b.system.net());
  EXPECT_EQ(a.system.score(pool[3]), b.system.score(pool[3]));
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "routesel/checkpoint.hpp"
#include "routesel/selection_model.hpp"
#include "test_util.hpp"

using namespace routesel;
using routesel::testing::random_tensor;
using routesel::testing::random_tsp;

namespace {

EncoderConfig tiny(EncoderMode mode = EncoderMode::kHierarchical) {
  EncoderConfig c;
  c.embed_dim = 8;
  c.heads = 2;
  c.ff_hidden = 16;
  c.flat_layers = 1;
  c.hier_blocks = 1;
  c.layers_per_block = 1;
  c.mode = mode;
  return c;
}

// Two solvers; solver 0 wins on small instances, solver 1 on large ones.
struct SizeTask {
  std::vector<RoutingInstance> data;
  PerformanceTable table;
};

SizeTask size_task(std::size_t count, std::uint64_t seed, const std::string& prefix) {
  SizeTask t;
  t.table.solver_ids = {"small", "large"};
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n = i % 2 == 0 ? 8 : 24;
    t.data.push_back(random_tsp(n, rng(), prefix + std::to_string(i)));
    t.table.instance_ids.push_back(t.data.back().id);
    const bool small = n < 16;
    t.table.objective.push_back(small ? std::vector<double>{10.0, 11.0} : std::vector<double>{11.0, 10.0});
    t.table.time_ms.push_back({1.0, 1.0});
    t.table.work.push_back({1, 1});
    t.table.failed.push_back({false, false});
  }
  t.table.recompute_reference();
  return t;
}

}  // namespace

TEST(Labels, StableAscendingRanking) {
  const std::vector<double> obj = {3.0, 1.0, 3.0, 2.0};
  const Labels l = build_labels(obj);
  EXPECT_EQ(l.best, 1u);
  EXPECT_EQ(l.ranking, (std::vector<std::size_t>{1, 3, 0, 2}));
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(build_labels(std::vector<double>{inf, 4.0}).ranking, (std::vector<std::size_t>{1, 0}));
  EXPECT_THROW(build_labels(std::vector<double>{inf, inf}), LabelError);
  EXPECT_THROW(build_labels(std::vector<double>{}), LabelError);
}

TEST(Losses, AnalyticValues) {
  EXPECT_NEAR(classification_loss(std::vector<double>(5, 0.7), 2), std::log(5.0), 1e-12);
  EXPECT_NEAR(ranking_loss(std::vector<double>{0.4, 0.4}, {1, 0}), std::log(2.0), 1e-12);
  EXPECT_EQ(ranking_loss(std::vector<double>{3.0}, {0}), 0.0);
  EXPECT_THROW(classification_loss(std::vector<double>{1.0}, 1), LabelError);
  EXPECT_EQ(parse_loss_kind("ranking"), LossKind::kRanking);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
}

TEST(Losses, RankingLossPrefersCorrectOrder) {
  const std::vector<double> s = {2.0, 1.0, 0.0};
  EXPECT_LT(ranking_loss(s, {0, 1, 2}), ranking_loss(s, {2, 1, 0}));
}

TEST(Model, ScoresHaveOneEntryPerSolver) {
  const auto m = SelectionModel::create(ProblemKind::kTsp, tiny(), {"a", "b", "c"}, 1, 16);
  const auto s = m.score(random_tsp(10, 1));
  EXPECT_EQ(s.size(), 3u);
  for (double v : s) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(m.score(routesel::testing::random_cvrp(10, 1)), DomainError);
  EXPECT_THROW(SelectionModel::create(ProblemKind::kTsp, tiny(), {}, 1), ConfigError);
}

TEST(Model, SameSeedSameParameters) {
  const auto a = SelectionModel::create(ProblemKind::kTsp, tiny(), {"a", "b"}, 5, 16);
  const auto b = SelectionModel::create(ProblemKind::kTsp, tiny(), {"a", "b"}, 5, 16);
  const auto c = SelectionModel::create(ProblemKind::kTsp, tiny(), {"a", "b"}, 6, 16);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_FALSE(a.params() == c.params());
}

TEST(Model, ManualModeNeedsFittedScaler) {
  auto m = SelectionModel::create(ProblemKind::kTsp, tiny(EncoderMode::kManual), {"a", "b"}, 1, 16);
  EXPECT_THROW(m.score(random_tsp(10, 1)), ContractViolation);
  m.scaler() = FeatureScaler::fit({random_tsp(10, 1), random_tsp(20, 2), random_tsp(30, 3)});
  EXPECT_EQ(m.score(random_tsp(10, 1)).size(), 2u);
}

TEST(Model, HeadGradientCheck) {
  Rng rng(3);
  ad::ParameterSet ps;
  const MlpIndex idx = add_mlp(ps, "h", 5, 7, 3, rng);
  for (std::size_t i = 0; i < ps.size(); ++i) ps.value(i) = random_tensor(ps.value(i).rows(), ps.value(i).cols(), rng);
  const ad::Tensor x = random_tensor(1, 5, rng);
  const double err = ad::grad_check(
      [&](ad::Tape& t, std::span<const ad::Var> p) { return ad::listmle(mlp(p, idx, t.constant(x)), {2, 0, 1}); },
      ps.values());
  EXPECT_LT(err, 1e-4);
}

TEST(Training, LearnsSizeSeparableTask) {
  const SizeTask tr = size_task(40, 1, "tr-"), va = size_task(10, 2, "va-");
  PerformanceTable both = tr.table;
  for (std::size_t i = 0; i < va.table.rows(); ++i) {
    both.instance_ids.push_back(va.table.instance_ids[i]);
    both.objective.push_back(va.table.objective[i]);
    both.time_ms.push_back(va.table.time_ms[i]);
    both.work.push_back(va.table.work[i]);
    both.failed.push_back(va.table.failed[i]);
  }
  both.recompute_reference();
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.seed = 1;
  auto res = train(SelectionModel::create(ProblemKind::kTsp, tiny(), both.solver_ids, 1, 16), tr.data, va.data, both, cfg);
  EXPECT_EQ(res.history.epochs.size(), 40u);
  EXPECT_EQ(res.history.epochs[0].steps, 5u);
  EXPECT_LT(res.history.epochs.back().train_loss, res.history.epochs.front().train_loss);
  EXPECT_DOUBLE_EQ(selection_accuracy(res.model, va.data, va.table), 100.0);
  EXPECT_GE(res.history.best_epoch, 1u);
}

TEST(Training, DeterministicGivenSeed) {
  const SizeTask tr = size_task(12, 4, "d-");
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  cfg.augment = AugmentMode::kRandom;
  auto make = [&] { return SelectionModel::create(ProblemKind::kTsp, tiny(), tr.table.solver_ids, 2, 16); };
  const auto a = train(make(), tr.data, {}, tr.table, cfg);
  const auto b = train(make(), tr.data, {}, tr.table, cfg);
  EXPECT_EQ(a.model.params(), b.model.params());
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
}

TEST(Training, ExcludesAllFailedRowsWithWarning) {
  SizeTask tr = size_task(6, 5, "f-");
  const double inf = std::numeric_limits<double>::infinity();
  tr.table.objective[2] = {inf, inf};
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  const auto r = train(SelectionModel::create(ProblemKind::kTsp, tiny(), tr.table.solver_ids, 1, 16), tr.data, {},
                       tr.table, cfg);
  ASSERT_EQ(r.history.warnings.size(), 1u);
  EXPECT_NE(r.history.warnings[0].find("f-2"), std::string::npos);
  EXPECT_EQ(r.history.epochs[0].steps, 3u);
}

TEST(Training, MismatchedSolversRejected) {
  const SizeTask tr = size_task(4, 5, "m-");
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(SelectionModel::create(ProblemKind::kTsp, tiny(), {"x", "y"}, 1, 16), tr.data, {}, tr.table, cfg),
               ContractViolation);
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Accuracy, TiesCountAsCorrect) {
  PerformanceTable t;
  t.instance_ids = {"a", "b", "c"};
  t.solver_ids = {"x", "y"};
  t.objective = {{1.0, 1.0}, {2.0, 1.0}, {1.0, 3.0}};
  const std::vector<std::vector<double>> scores = {{0.0, 1.0}, {1.0, 0.0}, {1.0, 0.0}};
  EXPECT_NEAR(selection_accuracy(scores, t), 200.0 / 3.0, 1e-12);
}

TEST(Checkpoint, RoundTripPreservesScores) {
  auto m = SelectionModel::create(ProblemKind::kTsp, tiny(), {"a", "b", "c"}, 7, 16);
  const auto path = (std::filesystem::temp_directory_path() / "routesel_ckpt_test.ckpt").string();
  save_model(m, path);
  const auto back = load_model(path);
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.solver_ids(), m.solver_ids());
  const auto inst = random_tsp(15, 2);
  EXPECT_EQ(back.score(inst), m.score(inst));
  std::filesystem::remove(path);
}

TEST(Checkpoint, ManualScalerSurvives) {
  auto m = SelectionModel::create(ProblemKind::kTsp, tiny(EncoderMode::kManual), {"a", "b"}, 1, 16);
  m.scaler() = FeatureScaler::fit({random_tsp(10, 1), random_tsp(20, 2)});
  const auto back = model_from_container(decode_container(encode_container(model_container(m))));
  EXPECT_EQ(back.scaler().mean, m.scaler().mean);
  EXPECT_EQ(back.score(random_tsp(12, 3)), m.score(random_tsp(12, 3)));
}

TEST(Checkpoint, CorruptInputsRejected) {
  const auto m = SelectionModel::create(ProblemKind::kTsp, tiny(), {"a"}, 1, 16);
  std::string bytes = encode_container(model_container(m));
  EXPECT_THROW(decode_container("garbage"), UnsupportedFormatError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(decode_container(bad_version), UnsupportedFormatError);
  EXPECT_THROW(decode_container(bytes.substr(0, bytes.size() - 8)), ParseError);
  EXPECT_THROW(load_model("/nonexistent/model.ckpt"), IoError);
  Container c = model_container(m);
  c.arrays.pop_back();
  EXPECT_THROW(model_from_container(c), ParseError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "routesel/encoder.hpp"
#include "test_util.hpp"

using namespace routesel;
using namespace routesel::ad;
using routesel::testing::random_cvrp;
using routesel::testing::random_tensor;
using routesel::testing::random_tsp;

namespace {

EncoderConfig small(EncoderMode mode) {
  EncoderConfig c;
  c.embed_dim = 16;
  c.heads = 4;
  c.ff_hidden = 24;
  c.flat_layers = 2;
  c.hier_blocks = 2;
  c.layers_per_block = 1;
  c.mode = mode;
  return c;
}

void randomise_alphas(ParameterSet& ps, Rng& rng) {
  std::uniform_real_distribution<double> u(0.3, 1.0);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i).ends_with(".alpha")) ps.value(i)[0] = u(rng);
  }
}

RoutingInstance permuted(const RoutingInstance& inst, const std::vector<std::size_t>& perm) {
  RoutingInstance out = inst;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.coords[i] = inst.coords[perm[i]];
    if (!inst.demands.empty()) out.demands[i] = inst.demands[perm[i]];
  }
  return out;
}

std::vector<double> encode_values(const ParameterSet& ps, const EncoderIndex& e, const RoutingInstance& inst) {
  Tape t;
  const auto p = ps.bind_constant(t);
  return encode(p, e, t.constant(node_features(inst))).value().values();
}

}  // namespace

TEST(Config, Validation) {
  EncoderConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.pool_ratio = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_encoder_mode("flat"), EncoderMode::kFlat);
  EXPECT_THROW(parse_encoder_mode("deep"), ConfigError);
}

TEST(Pooling, CountsFollowFloorRule) {
  for (std::size_t n = 1; n <= 500; ++n) {
    const std::size_t want = std::max<std::size_t>(1, (n * 8) / 10);
    EXPECT_EQ(pooled_count(n, 0.8), want) << n;
  }
}

TEST(Pooling, TopScoringStableDescending) {
  EXPECT_EQ(top_scoring({0.1, 0.5, 0.5, -1.0}, 3), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(top_scoring({0.1}, 5), (std::vector<std::size_t>{0}));
}

TEST(Encoder, ReZeroInitIsIdentity) {
  Rng rng(1);
  ParameterSet ps;
  const EncoderIndex e = add_encoder(ps, small(EncoderMode::kFlat), ProblemKind::kTsp, rng);
  const RoutingInstance inst = random_tsp(13, 4);
  Tape t;
  const auto p = ps.bind_constant(t);
  const Var h0 = embed_nodes(t.constant(node_features(inst)), p[e.embed]);
  EXPECT_EQ(flat_encode(p, e, t.constant(node_features(inst))).value(), mean_rows(h0).value());
  Var h = h0;
  for (const auto& L : e.flat) h = attention_layer(p, L, h);
  EXPECT_EQ(h.value(), h0.value());
}

TEST(Encoder, OutputWidths) {
  Rng rng(2);
  for (auto mode : {EncoderMode::kFlat, EncoderMode::kHierarchical}) {
    for (auto kind : {ProblemKind::kTsp, ProblemKind::kCvrp}) {
      ParameterSet ps;
      const EncoderIndex e = add_encoder(ps, small(mode), kind, rng);
      const RoutingInstance inst = kind == ProblemKind::kTsp ? random_tsp(11, 1) : random_cvrp(11, 1);
      EXPECT_EQ(encode_values(ps, e, inst).size(), e.output_dim());
    }
  }
}

TEST(Encoder, HandlesSingleNode) {
  Rng rng(3);
  ParameterSet ps;
  const EncoderIndex e = add_encoder(ps, small(EncoderMode::kHierarchical), ProblemKind::kTsp, rng);
  RoutingInstance inst;
  inst.coords = {{0.3, 0.7}};
  const auto v = encode_values(ps, e, inst);
  EXPECT_EQ(v.size(), 32u);
  for (double x : v) EXPECT_TRUE(std::isfinite(x));
}

TEST(Encoder, WrongFeatureWidthIsDimensionError) {
  Rng rng(4);
  ParameterSet ps;
  const EncoderIndex e = add_encoder(ps, small(EncoderMode::kFlat), ProblemKind::kTsp, rng);
  EXPECT_THROW(encode_values(ps, e, random_cvrp(6, 1)), DimensionError);
}

TEST(Encoder, HierarchicalPermutationInvariant) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ParameterSet ps;
    const EncoderIndex e = add_encoder(ps, small(EncoderMode::kHierarchical), ProblemKind::kCvrp, rng);
    randomise_alphas(ps, rng);
    const RoutingInstance inst = random_cvrp(20 + seed, seed);
    std::vector<std::size_t> perm(inst.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = encode_values(ps, e, inst);
    const auto b = encode_values(ps, e, permuted(inst, perm));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(Encoder, AttentionMatchesNaiveComputation) {
  Rng rng(9);
  ParameterSet ps;
  const auto L = add_attention_layer(ps, "l", 4, 2, 6, rng);
  const Tensor x = random_tensor(3, 4, rng);
  Tape t;
  const auto p = ps.bind_constant(t);
  const Tensor got = multi_head_attention(p, L, t.constant(x), t.constant(x)).value();
  const Eigen::MatrixXd X = x.mat();
  const Eigen::MatrixXd Q = X * ps.value(L.wq).mat(), K = X * ps.value(L.wk).mat(), V = X * ps.value(L.wv).mat();
  Eigen::MatrixXd cat(3, 4);
  for (int h = 0; h < 2; ++h) {
    Eigen::MatrixXd s = Q.middleCols(2 * h, 2) * K.middleCols(2 * h, 2).transpose() / std::sqrt(2.0);
    for (int r = 0; r < 3; ++r) {
      s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp();
      s.row(r) /= s.row(r).sum();
    }
    cat.middleCols(2 * h, 2) = s * V.middleCols(2 * h, 2);
  }
  const Eigen::MatrixXd want = cat * ps.value(L.wo).mat();
  EXPECT_LT((got.mat() - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, WorkProxyGrowsWithSize) {
  const EncoderConfig c;
  EXPECT_LT(encoder_work(c, 50), encoder_work(c, 100));
  EXPECT_GT(encoder_work(c, 100), 0.0);
}

class EncoderGrad : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(EncoderGrad, AttentionLayer) {
  Rng rng(GetParam());
  ParameterSet ps;
  const auto L = add_attention_layer(ps, "l", 16, 4, 24, rng);
  routesel::testing::randomise_parameters(ps, rng);
  const Tensor x = random_tensor(6, 16, rng);
  const double err = grad_check(
      [&](Tape& t, std::span<const Var> p) { return sum(mean_rows(attention_layer(p, L, t.constant(x)))); },
      ps.values(), 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST_P(EncoderGrad, HierarchicalEncoder) {
  Rng rng(GetParam());
  ParameterSet ps;
  const EncoderIndex e = add_encoder(ps, small(EncoderMode::kHierarchical), ProblemKind::kTsp, rng);
  routesel::testing::randomise_parameters(ps, rng);
  const Tensor x = node_features(random_tsp(8, GetParam()));
  const double err = grad_check(
      [&](Tape& t, std::span<const Var> p) { return sum(hier_encode(p, e, t.constant(x))); }, ps.values(), 2e-3);
  EXPECT_LT(err, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, EncoderGrad, ::testing::Range<std::uint64_t>(1, 4));

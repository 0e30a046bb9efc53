// Small end-to-end run: generate TSP instances, solve them with the built-in
// zoo, train a hierarchical selector and compare greedy picks on held-out data.
#include <routesel/selection_model.hpp>
#include <routesel/solver_zoo.hpp>
#include <routesel/strategies.hpp>

#include <cstdio>
#include <limits>

using namespace routesel;

int main() {
  GeneratorConfig gen;
  gen.n_min = 50;
  gen.n_max = 150;
  gen.seed = 7;
  const auto train_set = generate_dataset(gen, 600, "train");
  gen.seed = 8;
  const auto val_set = generate_dataset(gen, 60, "val");
  gen.seed = 9;
  const auto test_set = generate_dataset(gen, 100, "test");

  const Zoo zoo = default_tsp_zoo();
  std::vector<RoutingInstance> labelled = train_set;
  labelled.insert(labelled.end(), val_set.begin(), val_set.end());
  const PerformanceTable table = build_performance_table(zoo, labelled, 1, 11);
  const PerformanceTable test_table = build_performance_table(zoo, test_set, 1, 12);

  EncoderConfig enc;
  enc.embed_dim = 16;
  enc.heads = 2;
  enc.ff_hidden = 32;
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.seed = 1;
  tc.on_epoch = [](const EpochRecord& e) {
    std::printf("epoch %zu  loss %.4f  val gap %.3f%%\n", e.epoch, e.train_loss, e.val_gap);
  };
  auto model = SelectionModel::create(ProblemKind::kTsp, enc, table.solver_ids, 1, 64);
  const auto result = train(model, train_set, val_set, table, tc);

  const std::size_t m = test_table.cols();
  std::vector<double> column(m, 0.0);
  double greedy = 0.0, top2 = 0.0, oracle = 0.0;
  for (std::size_t i = 0; i < test_table.rows(); ++i) {
    const auto scores = result.model.score(test_set[i]);
    const auto pick = select_topk(scores, 2).chosen;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < m; ++s) {
      column[s] += test_table.gap(i, s);
      best = std::min(best, test_table.gap(i, s));
    }
    greedy += test_table.gap(i, pick[0]);
    top2 += std::min(test_table.gap(i, pick[0]), test_table.gap(i, pick[1]));
    oracle += best;
    if (i < 5) {
      std::printf("%s (n=%zu): picks %s then %s\n", test_set[i].id.c_str(), test_set[i].size(),
                  test_table.solver_ids[pick[0]].c_str(), test_table.solver_ids[pick[1]].c_str());
    }
  }
  const double rows = static_cast<double>(test_table.rows());
  std::size_t sbs = 0;
  for (std::size_t s = 1; s < m; ++s)
    if (column[s] < column[sbs]) sbs = s;
  std::printf("single best %-24s %.3f%%\n", test_table.solver_ids[sbs].c_str(), column[sbs] / rows);
  std::printf("greedy selection             %.3f%%\n", greedy / rows);
  std::printf("top-2 selection              %.3f%%\n", top2 / rows);
  std::printf("oracle                       %.3f%%\n", oracle / rows);
}

// routesel command line: one subcommand per pipeline stage plus `run`.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "routesel/experiment.hpp"

using namespace routesel;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 0;
  std::string zoo;
  std::string out;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config,-c", c.config, "key = value experiment config")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
  app->add_option("--seed", c.seeds, "seed(s) to run, replaces the config list");
  app->add_option("--jobs,-j", c.jobs, "parallel solver runs");
  app->add_option("--zoo", c.zoo, "zoo JSON file, or 'default'");
  app->add_option("--out,-o", c.out, "output directory");
  app->add_flag("--verbose,-v", c.verbose, "progress on stderr");
}

ExperimentConfig load_config(const Common& c) {
  KeyValueConfig kv = c.config.empty() ? KeyValueConfig() : KeyValueConfig::load(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  if (!c.out.empty()) kv.set("output_dir", c.out);
  if (!c.zoo.empty()) kv.set("zoo", c.zoo);
  if (c.jobs > 0) kv.set("jobs", std::to_string(c.jobs));
  if (c.verbose) kv.set("verbose", "true");
  if (!c.seeds.empty()) {
    std::string s;
    for (auto v : c.seeds) s += (s.empty() ? "" : " ") + std::to_string(v);
    kv.set("seeds", s);
  }
  return ExperimentConfig::from_kv(kv);
}

// Earlier artifacts are reused by the per-stage subcommands.
ExperimentConfig reuse(ExperimentConfig cfg) {
  cfg.resume = true;
  return cfg;
}

SelectionModel load_seed_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto path = seed_dir(cfg, seed) / "model.ckpt";
  if (!fs::exists(path)) throw IoError(path.string() + " not found; run `routesel train` first");
  return load_model(path.string());
}

void print_rows(const std::vector<ReportRow>& rows) { std::cout << report_csv(rows); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-instance solver selection for routing problems"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> strategies;
  std::vector<std::size_t> ks;

  auto* gen = app.add_subcommand("gen-data", "generate and store the train/val/test datasets");
  auto* zoo = app.add_subcommand("run-zoo", "run every solver on every instance and store the tables");
  auto* elim = app.add_subcommand("eliminate", "contribution-based zoo elimination on the training table");
  auto* train_cmd = app.add_subcommand("train", "train the selection model for each seed");
  auto* eval = app.add_subcommand("evaluate", "score the test split and report every strategy");
  auto* compare = app.add_subcommand("compare", "compare strategies on recorded runs, with parameter sweeps");
  auto* port = app.add_subcommand("portfolio-baseline", "best fixed size-k portfolio on the test split");
  auto* embed = app.add_subcommand("embed-solvers", "leave-one-out protocol for unseen solvers");
  auto* report = app.add_subcommand("report", "aggregate per-seed reports");
  auto* run = app.add_subcommand("run", "full pipeline");
  for (auto* sub : {gen, zoo, elim, train_cmd, eval, compare, port, embed, report, run}) add_common(sub, common);
  for (auto* sub : {eval, compare}) sub->add_option("--strategy", strategies, "strategy spec, repeatable (greedy | topk:K | reject:RATIO,K | topp:P)");
  port->add_option("--k", ks, "portfolio size(s)");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_config(common);
    if (!strategies.empty()) {
      cfg.strategies = strategies;
      cfg.validate();
    }

    if (gen->parsed()) {
      const Datasets d = ensure_datasets(cfg);
      std::cout << "datasets in " << cfg.dataset_dir() << ": " << d.train.size() << " train, " << d.val.size()
                << " val, " << d.test.size() << " test\n";
    } else if (zoo->parsed()) {
      const Datasets d = ensure_datasets(cfg);
      const Tables t = ensure_tables(cfg, d, load_zoo(cfg));
      std::cout << "tables in " << (fs::path(cfg.output_dir) / "tables").string() << " (" << t.train.cols()
                << " solvers)\n";
    } else if (elim->parsed()) {
      cfg.eliminate = true;
      const Prepared p = prepare(reuse(cfg));
      for (const auto& id : p.tables.train.solver_ids) std::cout << id << "\n";
    } else if (train_cmd->parsed()) {
      const Prepared p = prepare(reuse(cfg));
      for (auto seed : cfg.seeds) {
        TrainHistory h;
        const SelectionModel m = train_stage(cfg, p.data, p.tables, seed, &h);
        std::cout << "seed " << seed << ": best epoch " << h.best_epoch << ", model in "
                  << (seed_dir(cfg, seed) / "model.ckpt").string() << "\n";
      }
    } else if (eval->parsed() || compare->parsed()) {
      if (eval->parsed()) cfg.sweep = false;
      const Prepared p = prepare(reuse(cfg));
      std::vector<std::vector<ReportRow>> all;
      for (auto seed : cfg.seeds) all.push_back(evaluate_stage(cfg, load_seed_model(cfg, seed), p.data, p.tables, seed));
      print_rows(all.size() == 1 ? all[0] : aggregate_reports(all));
    } else if (port->parsed()) {
      const Prepared p = prepare(reuse(cfg));
      if (!ks.empty()) cfg.portfolio_k.assign(ks.begin(), ks.end());
      std::vector<ReportRow> rows;
      for (const auto& r : baseline_rows(p.tables.test, cfg.timing, cfg.portfolio_k)) {
        if (r.method.rfind("portfolio:", 0) == 0) rows.push_back(r);
      }
      const GapMatrix g = usable_gaps(p.tables.test);
      for (auto k : cfg.portfolio_k) {
        if (k < 1 || k > p.tables.test.cols()) throw ParameterError("k=" + std::to_string(k) + " is outside the zoo size");
        std::cout << "portfolio:" << k << " =";
        for (auto s : portfolio_baseline(g, k).subset) std::cout << " " << p.tables.test.solver_ids[s];
        std::cout << "\n";
      }
      emit_report(rows, cfg.output_dir, "portfolio");
      print_rows(rows);
    } else if (embed->parsed()) {
      const auto results = run_leave_one_out(reuse(cfg));
      std::cout << read_text_file((fs::path(cfg.output_dir) / "leave_one_out.csv").string());
      (void)results;
    } else if (report->parsed()) {
      std::vector<std::vector<ReportRow>> all;
      for (auto seed : cfg.seeds) {
        const auto path = seed_dir(cfg, seed) / "report.json";
        if (!fs::exists(path)) throw IoError(path.string() + " not found; run `routesel evaluate` first");
        all.push_back(report_from_json(read_text_file(path.string())));
      }
      const auto agg = aggregate_reports(all);
      emit_report(agg, cfg.output_dir);
      print_rows(agg);
    } else if (run->parsed()) {
      print_rows(run_pipeline(cfg).aggregate);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

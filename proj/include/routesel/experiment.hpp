#pragma once

// Experiment configuration, pipeline stages and report emission.
//
// Artifact layout under the output directory:
//   config.txt                    effective configuration
//   tables/{train,val,test}.jsonl performance tables
//   elimination.json              zoo elimination trace (when enabled)
//   seed_<s>/model.ckpt           trained selection model
//   seed_<s>/history.csv          epoch, steps, train_loss, val_gap
//   seed_<s>/decisions.jsonl      per-instance decisions of every strategy
//   seed_<s>/report.{csv,json}    per-seed report
//   seed_<s>/sweep.csv            rejection-ratio and top-p sweeps
//   report.{csv,json}             aggregate over seeds (mean and std)
// Datasets live in <data root>/<name>/{train,val,test}/ with a manifest.json;
// the data root defaults to <output>/data and is overridden by PS_DATA_DIR.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "routesel/checkpoint.hpp"
#include "routesel/encoder.hpp"
#include "routesel/errors.hpp"
#include "routesel/instance.hpp"
#include "routesel/selection_model.hpp"
#include "routesel/solver_embeddings.hpp"
#include "routesel/solver_zoo.hpp"
#include "routesel/strategies.hpp"
#include "routesel/tsplib.hpp"

namespace routesel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// key = value configuration files

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ParseError("expected 'key = value', found '" + t + "'", no);
      const std::string key = detail::trim(t.substr(0, eq));
      if (key.empty()) throw ParseError("empty key", no);
      if (c.values_.count(key)) throw ParseError("duplicate key '" + key + "'", no);
      c.values_[key] = detail::trim(t.substr(eq + 1));
    }
    return c;
  }

  static KeyValueConfig load(const std::string& path) { return parse(read_text_file(path)); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    return x;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return to_uint(key, values_.at(key));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
  }

  // Whitespace-separated list.
  std::vector<std::string> get_list(const std::string& key, std::vector<std::string> fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::string> out;
    std::istringstream in(values_.at(key));
    std::string item;
    while (in >> item) out.push_back(item);
    return out;
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key, {})) out.push_back(to_uint(key, s));
    return out;
  }

  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::uint64_t to_uint(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' is out of range: '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::string name = "experiment";
  ProblemKind problem = ProblemKind::kTsp;
  std::size_t train_count = 2000;
  std::size_t val_count = 500;
  std::size_t test_count = 500;
  std::size_t n_min = 50;
  std::size_t n_max = 150;
  int max_components = 15;
  CapacityMode capacity_mode = CapacityMode::kMixed;
  std::uint64_t data_seed = 1;
  std::string zoo = "default";
  std::size_t jobs = 1;
  TimingMode timing = TimingMode::kWork;
  bool eliminate = false;
  double delta = 0.01;
  EncoderConfig encoder;
  std::size_t head_hidden = 256;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> strategies;
  std::vector<std::uint64_t> portfolio_k = {1, 2, 3};
  bool sweep = true;
  std::string output_dir = "runs/experiment";
  std::string data_dir;
  bool resume = false;
  bool verbose = false;
  double representative_fraction = 0.01;
  double momentum = 0.99;

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "name",        "problem",          "train_count",  "val_count",    "test_count",   "n_min",
        "n_max",       "max_components",   "capacity_mode", "data_seed",   "zoo",          "jobs",
        "timing",      "eliminate",        "delta",        "encoder",      "embed_dim",    "heads",
        "ff_hidden",   "flat_layers",      "hier_blocks",  "layers_per_block", "pool_ratio", "head_hidden",
        "loss",        "lr",               "weight_decay", "epochs",       "batch_size",   "augment",
        "seeds",       "strategies",       "portfolio_k",  "sweep",        "output_dir",   "data_dir",
        "resume",      "verbose",          "representative_fraction",      "momentum"};
    return keys;
  }

  static std::vector<std::string> default_strategies(ProblemKind k) {
    return {"greedy", "topk:2", "reject:0.2,2", k == ProblemKind::kTsp ? "topp:0.5" : "topp:0.8"};
  }

  static ExperimentConfig from_kv(const KeyValueConfig& kv) {
    const auto& known = known_keys();
    for (const auto& [k, v] : kv.entries()) {
      if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
    }
    ExperimentConfig c;
    c.name = kv.get("name", c.name);
    c.problem = parse_problem_kind(kv.get("problem", "tsp"));
    c.train_count = kv.get_uint("train_count", c.train_count);
    c.val_count = kv.get_uint("val_count", c.val_count);
    c.test_count = kv.get_uint("test_count", c.test_count);
    c.n_min = kv.get_uint("n_min", c.n_min);
    c.n_max = kv.get_uint("n_max", c.n_max);
    c.max_components = static_cast<int>(kv.get_uint("max_components", static_cast<std::uint64_t>(c.max_components)));
    c.capacity_mode = parse_capacity_mode(kv.get("capacity_mode", to_string(c.capacity_mode)));
    c.data_seed = kv.get_uint("data_seed", c.data_seed);
    c.zoo = kv.get("zoo", c.zoo);
    c.jobs = kv.get_uint("jobs", c.jobs);
    const std::string timing = kv.get("timing", "work");
    if (timing != "work" && timing != "wall") throw ConfigError("timing must be 'work' or 'wall'");
    c.timing = timing == "work" ? TimingMode::kWork : TimingMode::kWall;
    c.eliminate = kv.get_bool("eliminate", c.eliminate);
    c.delta = kv.get_double("delta", c.delta);
    c.encoder.mode = parse_encoder_mode(kv.get("encoder", to_string(c.encoder.mode)));
    c.encoder.embed_dim = kv.get_uint("embed_dim", c.encoder.embed_dim);
    c.encoder.heads = kv.get_uint("heads", c.encoder.heads);
    c.encoder.ff_hidden = kv.get_uint("ff_hidden", c.encoder.ff_hidden);
    c.encoder.flat_layers = kv.get_uint("flat_layers", c.encoder.flat_layers);
    c.encoder.hier_blocks = kv.get_uint("hier_blocks", c.encoder.hier_blocks);
    c.encoder.layers_per_block = kv.get_uint("layers_per_block", c.encoder.layers_per_block);
    c.encoder.pool_ratio = kv.get_double("pool_ratio", c.encoder.pool_ratio);
    c.head_hidden = kv.get_uint("head_hidden", c.head_hidden);
    c.train.loss = parse_loss_kind(kv.get("loss", to_string(c.train.loss)));
    c.train.lr = kv.get_double("lr", c.train.lr);
    c.train.weight_decay = kv.get_double("weight_decay", c.train.weight_decay);
    c.train.epochs = kv.get_uint("epochs", c.train.epochs);
    c.train.batch_size = kv.get_uint("batch_size", c.train.batch_size);
    c.train.augment = parse_augment_mode(kv.get("augment", to_string(c.train.augment)));
    c.seeds = kv.get_uint_list("seeds", c.seeds);
    c.strategies = kv.get_list("strategies", default_strategies(c.problem));
    c.portfolio_k = kv.get_uint_list("portfolio_k", c.portfolio_k);
    c.sweep = kv.get_bool("sweep", c.sweep);
    c.output_dir = kv.get("output_dir", c.output_dir);
    c.data_dir = kv.get("data_dir", c.data_dir);
    c.resume = kv.get_bool("resume", c.resume);
    c.verbose = kv.get_bool("verbose", c.verbose);
    c.representative_fraction = kv.get_double("representative_fraction", c.representative_fraction);
    c.momentum = kv.get_double("momentum", c.momentum);
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) { return from_kv(KeyValueConfig::load(path)); }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    auto num = [](double v) { return detail::format_double(v); };
    auto join = [](const auto& xs) {
      std::string s;
      for (const auto& x : xs) {
        if (!s.empty()) s += " ";
        std::ostringstream o;
        o << x;
        s += o.str();
      }
      return s;
    };
    kv.set("name", name);
    kv.set("problem", to_string(problem));
    kv.set("train_count", std::to_string(train_count));
    kv.set("val_count", std::to_string(val_count));
    kv.set("test_count", std::to_string(test_count));
    kv.set("n_min", std::to_string(n_min));
    kv.set("n_max", std::to_string(n_max));
    kv.set("max_components", std::to_string(max_components));
    kv.set("capacity_mode", to_string(capacity_mode));
    kv.set("data_seed", std::to_string(data_seed));
    kv.set("zoo", zoo);
    kv.set("jobs", std::to_string(jobs));
    kv.set("timing", timing == TimingMode::kWork ? "work" : "wall");
    kv.set("eliminate", eliminate ? "true" : "false");
    kv.set("delta", num(delta));
    kv.set("encoder", to_string(encoder.mode));
    kv.set("embed_dim", std::to_string(encoder.embed_dim));
    kv.set("heads", std::to_string(encoder.heads));
    kv.set("ff_hidden", std::to_string(encoder.ff_hidden));
    kv.set("flat_layers", std::to_string(encoder.flat_layers));
    kv.set("hier_blocks", std::to_string(encoder.hier_blocks));
    kv.set("layers_per_block", std::to_string(encoder.layers_per_block));
    kv.set("pool_ratio", num(encoder.pool_ratio));
    kv.set("head_hidden", std::to_string(head_hidden));
    kv.set("loss", to_string(train.loss));
    kv.set("lr", num(train.lr));
    kv.set("weight_decay", num(train.weight_decay));
    kv.set("epochs", std::to_string(train.epochs));
    kv.set("batch_size", std::to_string(train.batch_size));
    kv.set("augment", to_string(train.augment));
    kv.set("seeds", join(seeds));
    kv.set("strategies", join(strategies));
    kv.set("portfolio_k", join(portfolio_k));
    kv.set("sweep", sweep ? "true" : "false");
    kv.set("output_dir", output_dir);
    if (!data_dir.empty()) kv.set("data_dir", data_dir);
    kv.set("resume", resume ? "true" : "false");
    kv.set("verbose", verbose ? "true" : "false");
    kv.set("representative_fraction", num(representative_fraction));
    kv.set("momentum", num(momentum));
    return kv;
  }

  void validate() const {
    if (train_count < 1 || val_count < 1 || test_count < 1) throw ConfigError("dataset counts must be at least 1");
    GeneratorConfig g = generator(0);
    g.validate();
    encoder.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    if (delta < 0.0) throw ConfigError("delta must be non-negative");
    for (const auto& s : strategies) parse_strategy(s);
    if (!(representative_fraction > 0.0 && representative_fraction <= 1.0)) {
      throw ConfigError("representative_fraction must lie in (0, 1]");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (zoo != "default" && !fs::exists(zoo)) throw ConfigError("zoo file " + zoo + " does not exist");
  }

  GeneratorConfig generator(std::uint64_t seed) const {
    GeneratorConfig g;
    g.kind = problem;
    g.n_min = n_min;
    g.n_max = n_max;
    g.max_components = max_components;
    g.capacity_mode = capacity_mode;
    g.seed = seed;
    return g;
  }

  std::string data_root() const {
    if (const char* env = std::getenv("PS_DATA_DIR"); env && *env) return env;
    return data_dir.empty() ? (fs::path(output_dir) / "data").string() : data_dir;
  }

  std::string dataset_dir() const { return (fs::path(data_root()) / name).string(); }
};

inline void log_line(const ExperimentConfig& cfg, const std::string& msg) {
  if (cfg.verbose) std::clog << "[" << cfg.name << "] " << msg << std::endl;
}

// ---------------------------------------------------------------------------
// Datasets

struct Datasets {
  std::vector<RoutingInstance> train, val, test;
};

inline nlohmann::ordered_json dataset_manifest(const ExperimentConfig& cfg) {
  nlohmann::ordered_json m;
  m["name"] = cfg.name;
  m["generator"] = cfg.generator(cfg.data_seed).describe();
  m["data_seed"] = cfg.data_seed;
  m["counts"] = {{"train", cfg.train_count}, {"val", cfg.val_count}, {"test", cfg.test_count}};
  return m;
}

inline Datasets generate_datasets(const ExperimentConfig& cfg) {
  Datasets d;
  d.train = generate_dataset(cfg.generator(derive_seed(cfg.data_seed, streams::kDataset, 0)), cfg.train_count, "train");
  d.val = generate_dataset(cfg.generator(derive_seed(cfg.data_seed, streams::kDataset, 1)), cfg.val_count, "val");
  d.test = generate_dataset(cfg.generator(derive_seed(cfg.data_seed, streams::kDataset, 2)), cfg.test_count, "test");
  return d;
}

inline void write_dataset_split(const std::vector<RoutingInstance>& data, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& inst : data) write_text_file((dir / (inst.id + ".vrp")).string(), serialize_instance(inst));
}

inline std::vector<RoutingInstance> load_dataset_split(const fs::path& dir, const std::string& prefix,
                                                       std::size_t count) {
  std::vector<RoutingInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = prefix + "-" + std::to_string(i);
    RoutingInstance inst = load_instance_file((dir / (id + ".vrp")).string());
    inst.provenance.path.clear();
    out.push_back(std::move(inst));
  }
  return out;
}

// Writes the datasets unless an identical manifest is already present, then
// reads them back from disk so later stages see exactly the stored bytes.
inline Datasets ensure_datasets(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.dataset_dir();
  const fs::path manifest = dir / "manifest.json";
  const std::string want = dataset_manifest(cfg).dump(2) + "\n";
  if (!(fs::exists(manifest) && read_text_file(manifest.string()) == want)) {
    log_line(cfg, "generating datasets in " + dir.string());
    const Datasets d = generate_datasets(cfg);
    fs::create_directories(dir);
    write_dataset_split(d.train, dir / "train");
    write_dataset_split(d.val, dir / "val");
    write_dataset_split(d.test, dir / "test");
    write_text_file(manifest.string(), want);
  }
  Datasets d;
  d.train = load_dataset_split(dir / "train", "train", cfg.train_count);
  d.val = load_dataset_split(dir / "val", "val", cfg.val_count);
  d.test = load_dataset_split(dir / "test", "test", cfg.test_count);
  return d;
}

// ---------------------------------------------------------------------------
// Zoo and performance tables

inline Zoo load_zoo(const ExperimentConfig& cfg) {
  if (cfg.zoo == "default") return default_zoo(cfg.problem);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(cfg.zoo));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("zoo file " + cfg.zoo + ": " + e.what());
  }
  return parse_zoo(j);
}

struct Tables {
  PerformanceTable train, val, test;
};

inline fs::path table_path(const ExperimentConfig& cfg, const std::string& split) {
  return fs::path(cfg.output_dir) / "tables" / (split + ".jsonl");
}

inline Tables ensure_tables(const ExperimentConfig& cfg, const Datasets& ds, const Zoo& zoo) {
  Tables t;
  auto one = [&](const std::string& split, const std::vector<RoutingInstance>& data, std::uint64_t stream) {
    const fs::path p = table_path(cfg, split);
    if (cfg.resume && fs::exists(p)) return table_from_jsonl(read_text_file(p.string()));
    log_line(cfg, "solving " + split + " split with " + std::to_string(zoo.size()) + " solvers");
    PerformanceTable table = build_performance_table(zoo, data, cfg.jobs, derive_seed(cfg.data_seed, streams::kSolver, stream));
    fs::create_directories(p.parent_path());
    write_text_file(p.string(), table_to_jsonl(table));
    return table;
  };
  t.train = one("train", ds.train, 0);
  t.val = one("val", ds.val, 1);
  t.test = one("test", ds.test, 2);
  return t;
}

inline nlohmann::ordered_json elimination_to_json(const ZooEliminationReport& r, const std::vector<std::string>& ids) {
  nlohmann::ordered_json j;
  j["delta"] = r.delta;
  j["removed"] = nlohmann::ordered_json::array();
  for (const auto& rem : r.removed) j["removed"].push_back({{"solver", ids[rem.solver]}, {"contribution", rem.contribution}});
  j["final_zoo"] = nlohmann::ordered_json::array();
  for (std::size_t s : r.final_zoo) j["final_zoo"].push_back(ids[s]);
  j["contributions_per_step"] = r.contributions_per_step;
  return j;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string method;
  double gap_mean = 0.0;
  double gap_std = 0.0;
  double time_s = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when not applicable

  friend bool operator==(const ReportRow& a, const ReportRow& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.method == b.method && same(a.gap_mean, b.gap_mean) && same(a.gap_std, b.gap_std) &&
           same(a.time_s, b.time_s) && same(a.accuracy, b.accuracy);
  }
};

inline constexpr const char* kReportCsvHeader = "method,gap_mean,gap_std,time_s,accuracy";

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractViolation("cannot emit a report without rows");
  std::string out = std::string(kReportCsvHeader) + "\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string() : detail::format_double(v); };
  for (const auto& r : rows) {
    out += r.method + "," + cell(r.gap_mean) + "," + cell(r.gap_std) + "," + cell(r.time_s) + "," + cell(r.accuracy) + "\n";
  }
  return out;
}

inline std::string report_json(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractViolation("cannot emit a report without rows");
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["method"] = r.method;
    o["gap_mean"] = num(r.gap_mean);
    o["gap_std"] = num(r.gap_std);
    o["time_s"] = num(r.time_s);
    o["accuracy"] = num(r.accuracy);
    j.push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

inline std::vector<ReportRow> report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  auto num = [](const nlohmann::json& v) {
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (v.is_string()) {
      return v.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
    }
    return v.get<double>();
  };
  std::vector<ReportRow> rows;
  for (const auto& o : j) {
    rows.push_back({o.at("method").get<std::string>(), num(o.at("gap_mean")), num(o.at("gap_std")), num(o.at("time_s")),
                    num(o.at("accuracy"))});
  }
  return rows;
}

// Writes <dir>/<base>.csv and <dir>/<base>.json.
inline void emit_report(const std::vector<ReportRow>& rows, const std::string& dir, const std::string& base = "report") {
  const std::string csv = report_csv(rows);
  const std::string json = report_json(rows);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir + ": " + ec.message());
  write_text_file((fs::path(dir) / (base + ".csv")).string(), csv);
  write_text_file((fs::path(dir) / (base + ".json")).string(), json);
}

inline const ReportRow& find_row(const std::vector<ReportRow>& rows, const std::string& method) {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw DomainError("report has no row '" + method + "'");
}

// Mean over seeds, with the sample standard deviation of the per-seed means.
inline std::vector<ReportRow> aggregate_reports(const std::vector<std::vector<ReportRow>>& per_seed) {
  if (per_seed.empty()) throw ContractViolation("nothing to aggregate");
  std::vector<ReportRow> out;
  for (const auto& proto : per_seed[0]) {
    std::vector<double> gaps, times, accs;
    for (const auto& rows : per_seed) {
      const ReportRow& r = find_row(rows, proto.method);
      gaps.push_back(r.gap_mean);
      times.push_back(r.time_s);
      accs.push_back(r.accuracy);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    ReportRow r;
    r.method = proto.method;
    r.gap_mean = mean(gaps);
    double var = 0.0;
    for (double g : gaps) var += (g - r.gap_mean) * (g - r.gap_mean);
    r.gap_std = gaps.size() > 1 ? std::sqrt(var / static_cast<double>(gaps.size() - 1)) : 0.0;
    r.time_s = mean(times);
    r.accuracy = mean(accs);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-portfolio baseline

struct PortfolioResult {
  std::vector<std::size_t> subset;
  double mean_gap = 0.0;
};

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

// Best size-k subset by mean oracle-within-subset gap; ties go to the
// lexicographically first subset.
inline PortfolioResult portfolio_baseline(const GapMatrix& g, std::size_t k) {
  if (g.empty() || g[0].empty()) throw DomainError("portfolio baseline on an empty table");
  const std::size_t m = g[0].size();
  if (k < 1 || k > m) throw ParameterError("portfolio size k must lie in [1, " + std::to_string(m) + "]");
  if (binomial(m, k) > 1e6) throw ParameterError("C(" + std::to_string(m) + ", " + std::to_string(k) + ") exceeds 1e6 subsets");
  std::vector<std::size_t> cur(k);
  std::iota(cur.begin(), cur.end(), 0);
  PortfolioResult best{cur, std::numeric_limits<double>::infinity()};
  while (true) {
    const double v = subset_mean_gap(g, cur);
    if (v < best.mean_gap) best = {cur, v};
    std::size_t i = k;
    while (i > 0 && cur[i - 1] == m - k + i - 1) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return best;
}

inline GapMatrix usable_gaps(const PerformanceTable& t) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (t.usable(i)) keep.push_back(i);
  }
  return t.select_rows(keep).gaps();
}

// ---------------------------------------------------------------------------
// Strategy comparison on recorded runs

struct ScoredSet {
  std::vector<std::vector<double>> scores;  // one per table row
  std::vector<double> selection_seconds;    // one per table row
};

// k is clamped to the zoo size so that strategies stay defined on small zoos.
inline StrategySpec clamp_spec(StrategySpec s, std::size_t m) {
  s.k = std::min(s.k, m);
  return s;
}

struct StrategyOutcome {
  ReportRow row;
  std::vector<SelectionDecision> decisions;
  std::vector<RecordedOutcome> outcomes;
};

inline StrategyOutcome evaluate_strategy(const StrategySpec& spec, const ScoredSet& set, const PerformanceTable& t,
                                         TimingMode timing) {
  if (set.scores.size() != t.rows()) throw DimensionError("one score vector per table row is required");
  StrategyOutcome so;
  so.row.method = spec.tag();
  so.decisions = decide_all(clamp_spec(spec, t.cols()), set.scores, t.instance_ids);
  double gap = 0.0, time = 0.0;
  std::size_t hit = 0, count = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const RecordedOutcome o = evaluate_recorded(t, i, so.decisions[i], timing, set.selection_seconds[i]);
    so.outcomes.push_back(o);
    if (!t.usable(i)) continue;
    ++count;
    gap += o.gap;
    time += o.seconds;
    const double best = *std::min_element(t.objective[i].begin(), t.objective[i].end());
    if (!o.failed && o.objective <= best) ++hit;
  }
  const double n = static_cast<double>(std::max<std::size_t>(count, 1));
  so.row.gap_mean = gap / n;
  so.row.time_s = time / n;
  so.row.accuracy = 100.0 * static_cast<double>(hit) / n;
  return so;
}

inline std::vector<ReportRow> compare_strategies(const ScoredSet& set, const PerformanceTable& t,
                                                 const std::vector<StrategySpec>& specs, TimingMode timing) {
  std::vector<ReportRow> rows;
  for (const auto& s : specs) rows.push_back(evaluate_strategy(s, set, t, timing).row);
  return rows;
}

// Rows for individual solvers, the single best solver, the oracle and the
// fixed portfolios.
inline std::vector<ReportRow> baseline_rows(const PerformanceTable& t, TimingMode timing,
                                            const std::vector<std::uint64_t>& portfolio_k) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (t.usable(i)) keep.push_back(i);
  }
  const GapMatrix g = t.select_rows(keep).gaps();
  const ZooStatistics st = zoo_statistics(g);
  const double n = static_cast<double>(keep.size());
  std::vector<ReportRow> rows;
  std::vector<double> solver_time(t.cols(), 0.0);
  for (std::size_t s = 0; s < t.cols(); ++s) {
    for (std::size_t i : keep) solver_time[s] += t.seconds(i, s, timing);
    ReportRow r;
    r.method = "solver:" + t.solver_ids[s];
    r.gap_mean = st.mean_gap[s];
    r.time_s = solver_time[s] / n;
    r.accuracy = 100.0 * static_cast<double>(st.wins[s]) / n;
    rows.push_back(r);
  }
  ReportRow sbs = rows[st.single_best];
  sbs.method = "single_best";
  rows.push_back(sbs);
  ReportRow oracle;
  oracle.method = "oracle";
  oracle.gap_mean = st.oracle_gap;
  oracle.time_s = std::accumulate(solver_time.begin(), solver_time.end(), 0.0) / n;
  oracle.accuracy = 100.0;
  rows.push_back(oracle);
  for (std::uint64_t k : portfolio_k) {
    if (k < 1 || k > t.cols()) continue;
    const PortfolioResult p = portfolio_baseline(g, k);
    ReportRow r;
    r.method = "portfolio:" + std::to_string(k);
    r.gap_mean = p.mean_gap;
    double time = 0.0;
    for (std::size_t s : p.subset) time += solver_time[s];
    r.time_s = time / n;
    std::size_t hit = 0;
    for (const auto& row : g) {
      double best = std::numeric_limits<double>::infinity(), sub = best;
      for (double v : row) best = std::min(best, v);
      for (std::size_t s : p.subset) sub = std::min(sub, row[s]);
      if (sub <= best) ++hit;
    }
    r.accuracy = 100.0 * static_cast<double>(hit) / n;
    rows.push_back(r);
  }
  return rows;
}

// Rejection ratios 0.05..0.85 (step 0.05) for k in {2,3,4}, and top-p for p in
// 0.40..0.95 (step 0.01). Columns: strategy,ratio,k,p,gap_mean,time_s.
inline std::string sweep_table(const ScoredSet& set, const PerformanceTable& t, TimingMode timing) {
  std::string out = "strategy,ratio,k,p,gap_mean,time_s\n";
  for (std::size_t k = 2; k <= 4; ++k) {
    for (int i = 1; i <= 17; ++i) {
      StrategySpec s;
      s.kind = StrategySpec::Kind::kReject;
      s.ratio = i / 20.0;
      s.k = k;
      const ReportRow r = evaluate_strategy(s, set, t, timing).row;
      out += "reject," + detail::format_double(s.ratio) + "," + std::to_string(k) + ",," +
             detail::format_double(r.gap_mean) + "," + detail::format_double(r.time_s) + "\n";
    }
  }
  for (int i = 40; i <= 95; ++i) {
    StrategySpec s;
    s.kind = StrategySpec::Kind::kTopP;
    s.p = i / 100.0;
    const ReportRow r = evaluate_strategy(s, set, t, timing).row;
    out += "topp,,," + detail::format_double(s.p) + "," + detail::format_double(r.gap_mean) + "," +
           detail::format_double(r.time_s) + "\n";
  }
  return out;
}

// Scores every row of `t` (instances looked up by id in `data`).
template <class Scorer>
ScoredSet score_table(const Scorer& scorer, const std::function<double(std::size_t)>& work_of,
                      const std::vector<RoutingInstance>& data, const PerformanceTable& t, TimingMode timing,
                      std::size_t jobs = 1) {
  std::unordered_map<std::string, const RoutingInstance*> by_id;
  for (const auto& inst : data) by_id[inst.id] = &inst;
  ScoredSet set;
  set.scores.resize(t.rows());
  set.selection_seconds.resize(t.rows());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= t.rows()) return;
      const auto it = by_id.find(t.instance_ids[i]);
      if (it == by_id.end()) throw DomainError("instance " + t.instance_ids[i] + " not in dataset");
      const auto start = Clock::now();
      set.scores[i] = scorer(*it->second);
      const double wall = std::chrono::duration<double>(Clock::now() - start).count();
      set.selection_seconds[i] = timing == TimingMode::kWork ? work_of(it->second->size()) * kSecondsPerWorkUnit : wall;
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t k = 0; k < jobs; ++k) {
      pool.emplace_back([&, k] {
        try {
          worker();
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Pipeline

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<ReportRow> rows;
  TrainHistory history;
};

struct PipelineResult {
  std::vector<SeedResult> seeds;
  std::vector<ReportRow> aggregate;
  std::vector<std::string> solver_ids;
  std::string output_dir;
};

inline fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed));
}

template <class F>
auto run_stage(const std::string& stage, const std::vector<std::string>& artifacts, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    std::string list;
    for (const auto& a : artifacts) list += (list.empty() ? "" : ", ") + a;
    throw StageError(stage, list.empty() ? "none" : list, e.what());
  }
}

// Applies zoo elimination on the training table (when enabled) and returns the
// column indices kept.
inline std::vector<std::size_t> eliminate_stage(const ExperimentConfig& cfg, const Tables& tables) {
  std::vector<std::size_t> keep(tables.train.cols());
  std::iota(keep.begin(), keep.end(), 0);
  if (!cfg.eliminate || keep.size() < 2) return keep;
  const ZooEliminationReport rep = eliminate_zoo(tables.train, cfg.delta);
  write_text_file((fs::path(cfg.output_dir) / "elimination.json").string(),
                  elimination_to_json(rep, tables.train.solver_ids).dump(2) + "\n");
  log_line(cfg, "elimination kept " + std::to_string(rep.final_zoo.size()) + " solvers");
  return rep.final_zoo;
}

inline SelectionModel train_stage(const ExperimentConfig& cfg, const Datasets& ds, const Tables& tables,
                                  std::uint64_t seed, TrainHistory* history = nullptr) {
  const fs::path dir = seed_dir(cfg, seed);
  const fs::path ckpt = dir / "model.ckpt";
  if (cfg.resume && fs::exists(ckpt)) {
    if (history && fs::exists(dir / "history.csv")) history->warnings.push_back("resumed from " + ckpt.string());
    return load_model(ckpt.string());
  }
  log_line(cfg, "training seed " + std::to_string(seed));
  SelectionModel init = SelectionModel::create(cfg.problem, cfg.encoder, tables.train.solver_ids, seed, cfg.head_hidden);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  if (cfg.verbose) {
    tc.on_epoch = [&cfg](const EpochRecord& r) {
      log_line(cfg, "  epoch " + std::to_string(r.epoch) + " loss " + detail::format_double(r.train_loss) + " val_gap " +
                        detail::format_double(r.val_gap));
    };
  }
  PerformanceTable both = tables.train;
  for (std::size_t i = 0; i < tables.val.rows(); ++i) {
    both.instance_ids.push_back(tables.val.instance_ids[i]);
    both.objective.push_back(tables.val.objective[i]);
    both.time_ms.push_back(tables.val.time_ms[i]);
    both.work.push_back(tables.val.work[i]);
    both.failed.push_back(tables.val.failed[i]);
    both.reference.push_back(tables.val.reference[i]);
  }
  TrainResult r = train(std::move(init), ds.train, ds.val, both, tc);
  fs::create_directories(dir);
  save_model(r.model, ckpt.string());
  write_text_file((dir / "history.csv").string(), r.history.to_csv());
  for (const auto& w : r.history.warnings) log_line(cfg, "warning: " + w);
  if (history) *history = r.history;
  return r.model;
}

inline std::vector<StrategySpec> strategy_specs(const ExperimentConfig& cfg) {
  std::vector<StrategySpec> out;
  for (const auto& s : cfg.strategies) out.push_back(parse_strategy(s));
  return out;
}

inline std::vector<ReportRow> evaluate_stage(const ExperimentConfig& cfg, const SelectionModel& model,
                                             const Datasets& ds, const Tables& tables, std::uint64_t seed) {
  const fs::path dir = seed_dir(cfg, seed);
  fs::create_directories(dir);
  const ScoredSet set = score_table([&](const RoutingInstance& x) { return model.score(x); },
                                    [&](std::size_t n) { return model.inference_work(n); }, ds.test, tables.test,
                                    cfg.timing, cfg.jobs);
  std::vector<ReportRow> rows = baseline_rows(tables.test, cfg.timing, cfg.portfolio_k);
  std::string decisions;
  for (const auto& spec : strategy_specs(cfg)) {
    StrategyOutcome so = evaluate_strategy(spec, set, tables.test, cfg.timing);
    if (spec.kind == StrategySpec::Kind::kGreedy) so.row.accuracy = selection_accuracy(set.scores, tables.test);
    rows.push_back(so.row);
    decisions += decisions_to_jsonl(so.decisions);
  }
  write_text_file((dir / "decisions.jsonl").string(), decisions);
  if (cfg.sweep) write_text_file((dir / "sweep.csv").string(), sweep_table(set, tables.test, cfg.timing));
  emit_report(rows, dir.string());
  return rows;
}

struct Prepared {
  Datasets data;
  Tables tables;  // restricted to the kept solvers when elimination is enabled
  std::vector<std::string> artifacts;
};

inline Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p;
  fs::create_directories(cfg.output_dir);
  write_text_file((fs::path(cfg.output_dir) / "config.txt").string(), cfg.to_kv().dump());
  p.artifacts.push_back((fs::path(cfg.output_dir) / "config.txt").string());
  p.data = run_stage("gen-data", p.artifacts, [&] { return ensure_datasets(cfg); });
  p.artifacts.push_back(cfg.dataset_dir());
  const Zoo zoo = run_stage("run-zoo", p.artifacts, [&] { return load_zoo(cfg); });
  p.tables = run_stage("run-zoo", p.artifacts, [&] { return ensure_tables(cfg, p.data, zoo); });
  p.artifacts.push_back((fs::path(cfg.output_dir) / "tables").string());
  const auto keep = run_stage("eliminate", p.artifacts, [&] { return eliminate_stage(cfg, p.tables); });
  if (keep.size() != p.tables.train.cols()) {
    p.tables.train = p.tables.train.select_solvers(keep);
    p.tables.val = p.tables.val.select_solvers(keep);
    p.tables.test = p.tables.test.select_solvers(keep);
  }
  return p;
}

inline PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineResult res;
  res.output_dir = cfg.output_dir;
  Prepared prep = prepare(cfg);
  const Datasets& ds = prep.data;
  const Tables& tables = prep.tables;
  std::vector<std::string>& artifacts = prep.artifacts;
  res.solver_ids = tables.train.solver_ids;

  std::vector<std::vector<ReportRow>> per_seed;
  for (std::uint64_t seed : cfg.seeds) {
    SeedResult sr;
    sr.seed = seed;
    const SelectionModel model =
        run_stage("train", artifacts, [&] { return train_stage(cfg, ds, tables, seed, &sr.history); });
    artifacts.push_back((seed_dir(cfg, seed) / "model.ckpt").string());
    sr.rows = run_stage("evaluate", artifacts, [&] { return evaluate_stage(cfg, model, ds, tables, seed); });
    artifacts.push_back((seed_dir(cfg, seed) / "report.csv").string());
    per_seed.push_back(sr.rows);
    res.seeds.push_back(std::move(sr));
  }
  res.aggregate = run_stage("report", artifacts, [&] {
    auto agg = aggregate_reports(per_seed);
    emit_report(agg, cfg.output_dir);
    return agg;
  });
  return res;
}

// ---------------------------------------------------------------------------
// Leave-one-out protocol for unseen solvers

struct LeaveOneOutResult {
  std::uint64_t seed = 0;
  std::string removed;
  double top1_without = 0.0;
  double top2_without = 0.0;
  double top1_with = 0.0;
  double top2_with = 0.0;
};

inline double topk_recorded_gap(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& columns,
                                const PerformanceTable& t, std::size_t k) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (!t.usable(i)) continue;
    SelectionDecision d = select_topk(scores[i], std::min(k, scores[i].size()));
    for (auto& c : d.chosen) c = columns[c];
    total += evaluate_recorded(t, i, d, TimingMode::kWork).gap;
    ++count;
  }
  return total / static_cast<double>(std::max<std::size_t>(count, 1));
}

// Removes the solver with the second-lowest mean training gap, trains the
// pair system on the rest, then reintroduces the solver through its
// representatives on the validation split and compares test gaps.
inline LeaveOneOutResult leave_one_out(const ExperimentConfig& cfg, const Datasets& ds, const Tables& tables,
                                       std::uint64_t seed) {
  // solvers without representatives cannot be embedded
  for (std::size_t s = 0; s < tables.train.cols(); ++s) {
    if (zoo_statistics(tables.train).wins[s] == 0) {
      throw DomainError("solver " + tables.train.solver_ids[s] + " never wins on the training split");
    }
  }
  const ZooStatistics st = zoo_statistics(tables.train);
  std::vector<std::size_t> order(st.mean_gap.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return st.mean_gap[a] < st.mean_gap[b]; });
  if (order.size() < 3) throw ConfigError("leave-one-out needs a zoo of at least 3 solvers");
  const std::size_t removed = order[1];
  std::vector<std::size_t> kept;
  for (std::size_t s = 0; s < tables.train.cols(); ++s) {
    if (s != removed) kept.push_back(s);
  }

  PairSystemConfig pc;
  pc.encoder = cfg.encoder;
  pc.encoder.mode = EncoderMode::kHierarchical;
  pc.head_hidden = cfg.head_hidden;
  pc.momentum = cfg.momentum;
  pc.representative_fraction = cfg.representative_fraction;
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  if (cfg.verbose) {
    tc.on_epoch = [&cfg](const EpochRecord& r) {
      log_line(cfg, "  epoch " + std::to_string(r.epoch) + " loss " + detail::format_double(r.train_loss) + " val_gap " +
                        detail::format_double(r.val_gap));
    };
  }

  PerformanceTable both = tables.train.select_solvers(kept);
  const PerformanceTable val_kept = tables.val.select_solvers(kept);
  for (std::size_t i = 0; i < val_kept.rows(); ++i) {
    both.instance_ids.push_back(val_kept.instance_ids[i]);
    both.objective.push_back(val_kept.objective[i]);
    both.time_ms.push_back(val_kept.time_ms[i]);
    both.work.push_back(val_kept.work[i]);
    both.failed.push_back(val_kept.failed[i]);
    both.reference.push_back(val_kept.reference[i]);
  }
  log_line(cfg, "leave-one-out seed " + std::to_string(seed) + ": holding out " + tables.train.solver_ids[removed]);
  PairTrainResult tr = train_pair_system(PairSystem::create(cfg.problem, pc, seed), ds.train, ds.val, both, tc);

  std::vector<std::vector<double>> without, with;
  for (std::size_t i = 0; i < tables.test.rows(); ++i) {
    const auto& inst = ds.test.at(i);
    if (inst.id != tables.test.instance_ids[i]) throw DomainError("test split and table rows are out of order");
    without.push_back(tr.system.score(inst));
  }
  const PairSystem extended = integrate_unseen_solver(tr.system, tables.val.solver_ids[removed], tables.val, ds.val);
  for (const auto& inst : ds.test) with.push_back(extended.score(inst));
  std::vector<std::size_t> with_cols = kept;
  with_cols.push_back(removed);

  LeaveOneOutResult r;
  r.seed = seed;
  r.removed = tables.train.solver_ids[removed];
  r.top1_without = topk_recorded_gap(without, kept, tables.test, 1);
  r.top2_without = topk_recorded_gap(without, kept, tables.test, 2);
  r.top1_with = topk_recorded_gap(with, with_cols, tables.test, 1);
  r.top2_with = topk_recorded_gap(with, with_cols, tables.test, 2);
  return r;
}

inline std::vector<LeaveOneOutResult> run_leave_one_out(const ExperimentConfig& cfg) {
  cfg.validate();
  Prepared prep = prepare(cfg);
  const Datasets& ds = prep.data;
  Tables& tables = prep.tables;
  const ZooStatistics st = zoo_statistics(tables.train);
  std::vector<std::size_t> keep;
  for (std::size_t s = 0; s < tables.train.cols(); ++s) {
    if (st.wins[s] > 0) keep.push_back(s);
  }
  if (keep.size() != tables.train.cols()) {
    log_line(cfg, "leave-one-out drops " + std::to_string(tables.train.cols() - keep.size()) + " solvers that never win");
    tables.train = tables.train.select_solvers(keep);
    tables.val = tables.val.select_solvers(keep);
    tables.test = tables.test.select_solvers(keep);
  }
  std::vector<LeaveOneOutResult> out;
  std::string csv = "seed,removed,top1_without,top2_without,top1_with,top2_with\n";
  for (std::uint64_t seed : cfg.seeds) {
    const LeaveOneOutResult r = run_stage("embed-solvers", prep.artifacts,
                                          [&] { return leave_one_out(cfg, ds, tables, seed); });
    csv += std::to_string(r.seed) + "," + r.removed + "," + detail::format_double(r.top1_without) + "," +
           detail::format_double(r.top2_without) + "," + detail::format_double(r.top1_with) + "," +
           detail::format_double(r.top2_with) + "\n";
    out.push_back(r);
  }
  write_text_file((fs::path(cfg.output_dir) / "leave_one_out.csv").string(), csv);
  return out;
}

}  // namespace routesel

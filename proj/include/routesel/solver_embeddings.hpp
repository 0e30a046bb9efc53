#pragma once

// Solver embeddings built from representative instances, and a pair-scoring
// selector that can take in solvers it was not trained with.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "routesel/autodiff.hpp"
#include "routesel/encoder.hpp"
#include "routesel/errors.hpp"
#include "routesel/instance.hpp"
#include "routesel/rng.hpp"
#include "routesel/selection_model.hpp"
#include "routesel/solver_zoo.hpp"

namespace routesel {

// Rows where `solver` attains the row minimum, ordered by own / runner-up
// objective (largest winning margin first, ties by instance id); the first
// max(1, floor(fraction * count)) are returned.
inline std::vector<std::size_t> representative_rows(const PerformanceTable& t, std::size_t solver, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("representative fraction must lie in (0, 1]");
  if (solver >= t.cols()) throw ParameterError("solver index out of range");
  struct Cand {
    double ratio;
    std::size_t row;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const auto& row = t.objective[i];
    const double own = row[solver];
    if (!std::isfinite(own)) continue;
    double best = std::numeric_limits<double>::infinity();
    for (double v : row) best = std::min(best, v);
    if (own > best) continue;
    std::vector<double> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end());
    const double runner_up = sorted.size() > 1 ? sorted[1] : std::numeric_limits<double>::infinity();
    double ratio = 0.0;
    if (std::isfinite(runner_up)) ratio = runner_up > 0.0 ? own / runner_up : 1.0;
    cands.push_back({ratio, i});
  }
  if (cands.empty()) {
    throw DomainError("solver " + t.solver_ids[solver] + " is never best, so it has no representative instances");
  }
  std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
    if (a.ratio != b.ratio) return a.ratio < b.ratio;
    return t.instance_ids[a.row] < t.instance_ids[b.row];
  });
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(cands.size()) + 1e-9)));
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < keep; ++k) rows.push_back(cands[k].row);
  return rows;
}

inline std::vector<std::string> representative_instances(const PerformanceTable& t, std::size_t solver,
                                                          double fraction) {
  std::vector<std::string> ids;
  for (std::size_t r : representative_rows(t, solver, fraction)) ids.push_back(t.instance_ids[r]);
  return ids;
}

// theta' <- m theta' + (1 - m) theta, element-wise.
inline void momentum_update(const ad::ParameterSet& live, ad::ParameterSet& shadow, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (live.size() != shadow.size()) throw DimensionError("momentum update: parameter sets differ in size");
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (!live.value(i).same_shape(shadow.value(i))) {
      throw DimensionError("momentum update: shape mismatch for " + live.name(i));
    }
    shadow.value(i).mat() = m * shadow.value(i).mat() + (1.0 - m) * live.value(i).mat();
  }
}

struct MomentumTokenizer {
  ad::ParameterSet live;
  ad::ParameterSet shadow;
  double momentum = 0.99;

  void update() { momentum_update(live, shadow, momentum); }
};

struct SolverFeature {
  std::string solver_id;
  ad::Tensor embedding;  // 1 x 2d
  std::vector<std::string> representatives;
};

struct PairSystemConfig {
  EncoderConfig encoder;
  std::size_t head_hidden = 256;
  double momentum = 0.99;
  double representative_fraction = 0.01;
};

class PairSystem {
 public:
  static PairSystem create(ProblemKind kind, const PairSystemConfig& cfg, std::uint64_t seed) {
    if (cfg.encoder.mode != EncoderMode::kHierarchical) {
      throw ConfigError("solver embeddings use the hierarchical encoder");
    }
    PairSystem s;
    s.kind_ = kind;
    s.cfg_ = cfg;
    Rng rng(derive_seed(seed, streams::kInit, 1));
    s.enc_ = add_encoder(s.tok_.live, cfg.encoder, kind, rng);
    s.tok_.shadow = s.tok_.live;
    s.tok_.momentum = cfg.momentum;
    const std::size_t dim = s.enc_.output_dim();
    s.sum1_ = add_attention_layer(s.net_, "summary.self", dim, cfg.encoder.heads, cfg.encoder.ff_hidden, rng);
    s.sum2_ = add_attention_layer(s.net_, "summary.cross", dim, cfg.encoder.heads, cfg.encoder.ff_hidden, rng);
    Rng token_rng(derive_seed(seed, streams::kSummaryToken, 0));
    s.token_ = s.net_.add("summary.token", uniform_init(1, dim, 0.1, token_rng));
    s.head_ = add_mlp(s.net_, "pair", 2 * dim + 1, cfg.head_hidden, 1, rng);
    return s;
  }

  ProblemKind kind() const { return kind_; }
  const PairSystemConfig& config() const { return cfg_; }
  std::size_t dim() const { return enc_.output_dim(); }
  MomentumTokenizer& tokenizer() { return tok_; }
  const MomentumTokenizer& tokenizer() const { return tok_; }
  ad::ParameterSet& net() { return net_; }
  const ad::ParameterSet& net() const { return net_; }
  const EncoderIndex& encoder_index() const { return enc_; }
  const std::vector<SolverFeature>& solvers() const { return features_; }
  std::vector<SolverFeature>& solvers() { return features_; }

  std::vector<std::string> solver_ids() const {
    std::vector<std::string> ids;
    for (const auto& f : features_) ids.push_back(f.solver_id);
    return ids;
  }

  // Summary transformer: self-attention over [summary; tokens], then the
  // summary row alone attends over the result.
  ad::Var solver_embed(std::span<const ad::Var> net, ad::Var tokens) const {
    if (tokens.rows() == 0) throw DomainError("solver embedding needs at least one token");
    const ad::Var rows[] = {net[token_], tokens};
    const ad::Var x = attention_layer(net, sum1_, ad::concat_rows(rows));
    return attention_layer(net, sum2_, ad::gather_rows(x, {0}), x);
  }

  ad::Var pair_score(std::span<const ad::Var> net, ad::Var instance_repr, ad::Var solver_embedding,
                     std::size_t n) const {
    const ad::Var parts[] = {instance_repr, solver_embedding};
    return mlp(net, head_, with_scale(ad::concat_cols(parts), n));
  }

  ad::Var encode_instance(std::span<const ad::Var> enc, ad::Tape& tape, const RoutingInstance& inst) const {
    if (inst.kind != kind_) throw DomainError("pair system cannot encode a " + to_string(inst.kind) + " instance");
    return hier_encode(enc, enc_, tape.constant(node_features(inst)));
  }

  // Tokens from the shadow encoder; never differentiated.
  ad::Var tokens(ad::Tape& tape, std::span<const ad::Var> shadow, const std::vector<const RoutingInstance*>& reps) const {
    std::vector<ad::Var> rows;
    for (const auto* r : reps) rows.push_back(tape.constant(encode_instance(shadow, tape, *r).value()));
    return ad::concat_rows(rows);
  }

  ad::Tensor embed(const std::vector<const RoutingInstance*>& reps) const {
    ad::Tape tape;
    const auto shadow = tok_.shadow.bind_constant(tape);
    const auto net = net_.bind_constant(tape);
    return solver_embed(net, tokens(tape, shadow, reps)).value();
  }

  std::vector<double> score(const RoutingInstance& inst) const {
    if (features_.empty()) throw ContractViolation("pair system has no embedded solvers");
    ad::Tape tape;
    const auto enc = tok_.live.bind_constant(tape);
    const auto net = net_.bind_constant(tape);
    const ad::Var repr = encode_instance(enc, tape, inst);
    std::vector<double> out;
    for (const auto& f : features_) out.push_back(pair_score(net, repr, tape.constant(f.embedding), inst.size()).value()[0]);
    return out;
  }

 private:
  ProblemKind kind_ = ProblemKind::kTsp;
  PairSystemConfig cfg_;
  MomentumTokenizer tok_;
  EncoderIndex enc_;
  ad::ParameterSet net_;
  AttentionLayerIndex sum1_{}, sum2_{};
  std::size_t token_ = 0;
  MlpIndex head_{};
  std::vector<SolverFeature> features_;
};

inline std::vector<const RoutingInstance*> lookup_instances(const std::vector<std::string>& ids,
                                                            const std::vector<RoutingInstance>& pool) {
  std::unordered_map<std::string, const RoutingInstance*> by_id;
  for (const auto& inst : pool) by_id[inst.id] = &inst;
  std::vector<const RoutingInstance*> out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DomainError("representative instance " + id + " not found");
    out.push_back(it->second);
  }
  return out;
}

// Recomputes every solver embedding with the current (frozen) networks.
inline void refresh_embeddings(PairSystem& sys, const std::vector<RoutingInstance>& pool) {
  for (auto& f : sys.solvers()) f.embedding = sys.embed(lookup_instances(f.representatives, pool));
}

struct PairTrainResult {
  PairSystem system;
  TrainHistory history;
};

// Trains the pair system with the ranking loss over the table's solvers.
// Representatives come from the training rows of `table`.
inline PairTrainResult train_pair_system(PairSystem sys, const std::vector<RoutingInstance>& train_set,
                                         const std::vector<RoutingInstance>& val_set, const PerformanceTable& table,
                                         const TrainConfig& cfg) {
  cfg.validate();
  PairTrainResult res{sys, {}};
  auto items = label_dataset(train_set, table, res.history.warnings);
  if (items.empty()) throw TrainingError("no labelled training instances");

  std::vector<std::size_t> train_rows;
  {
    std::unordered_map<std::string, std::size_t> rows;
    for (std::size_t i = 0; i < table.rows(); ++i) rows[table.instance_ids[i]] = i;
    for (const auto& inst : train_set) train_rows.push_back(rows.at(inst.id));
  }
  const PerformanceTable train_table = table.select_rows(train_rows);
  sys.solvers().clear();
  for (std::size_t s = 0; s < table.cols(); ++s) {
    SolverFeature f;
    f.solver_id = table.solver_ids[s];
    f.representatives = representative_instances(train_table, s, sys.config().representative_fraction);
    sys.solvers().push_back(std::move(f));
  }
  std::vector<std::vector<const RoutingInstance*>> reps;
  for (const auto& f : sys.solvers()) reps.push_back(lookup_instances(f.representatives, train_set));

  auto enc_state = ad::AdamState::for_parameters(sys.tokenizer().live, cfg.lr, cfg.weight_decay);
  auto net_state = ad::AdamState::for_parameters(sys.net(), cfg.lr, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, streams::kShuffle, 1));
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  double best_gap = std::numeric_limits<double>::infinity();
  PairSystem best = sys;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ad::Tape tape;
      const auto enc = sys.tokenizer().live.bind(tape);
      const auto shadow = sys.tokenizer().shadow.bind_constant(tape);
      const auto net = sys.net().bind(tape);
      std::vector<ad::Var> emb;
      for (const auto& r : reps) emb.push_back(sys.solver_embed(net, sys.tokens(tape, shadow, r)));
      ad::Var total;
      for (std::size_t k = start; k < end; ++k) {
        const LabelledInstance& item = items[order[k]];
        RoutingInstance view;
        const RoutingInstance* inst = item.instance;
        if (cfg.augment != AugmentMode::kNone) {
          const int sym = static_cast<int>(rng() % 8);
          if (sym != 0) {
            view = augment_view(*inst, sym);
            inst = &view;
          }
        }
        const ad::Var repr = sys.encode_instance(enc, tape, *inst);
        std::vector<ad::Var> scores;
        for (const auto& e : emb) scores.push_back(sys.pair_score(net, repr, e, inst->size()));
        const ad::Var loss = loss_of(ad::concat_cols(scores), item.labels, cfg.loss);
        if (!std::isfinite(loss.value()[0])) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
        }
        loss_sum += loss.value()[0];
        total = k == start ? loss : ad::add(total, loss);
      }
      tape.backward(ad::scale(total, 1.0 / static_cast<double>(end - start)));
      ad::adam_step(sys.tokenizer().live, ad::ParameterSet::gradients(tape, enc), enc_state);
      ad::adam_step(sys.net(), ad::ParameterSet::gradients(tape, net), net_state);
      sys.tokenizer().update();
      ++rec.steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(items.size());
    refresh_embeddings(sys, train_set);
    rec.val_gap = val_set.empty() ? rec.train_loss
                                  : greedy_mean_gap([&](const RoutingInstance& x) { return sys.score(x); }, val_set, table);
    res.history.epochs.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
    if (rec.val_gap < best_gap) {
      best_gap = rec.val_gap;
      best = sys;
      res.history.best_epoch = epoch;
    }
  }
  res.system = res.history.best_epoch != 0 ? std::move(best) : std::move(sys);
  return res;
}

// Adds a solver the system was not trained with. Representatives are taken
// from `table` (which must contain a column for the solver) over `pool`.
inline PairSystem integrate_unseen_solver(PairSystem sys, const std::string& solver_id, const PerformanceTable& table,
                                          const std::vector<RoutingInstance>& pool) {
  SolverFeature f;
  f.solver_id = solver_id;
  try {
    f.representatives = representative_instances(table, table.col_of(solver_id), sys.config().representative_fraction);
  } catch (const DomainError& e) {
    throw DomainError("cannot integrate " + solver_id + ": " + e.what());
  }
  f.embedding = sys.embed(lookup_instances(f.representatives, pool));
  sys.solvers().push_back(std::move(f));
  return sys;
}

}  // namespace routesel

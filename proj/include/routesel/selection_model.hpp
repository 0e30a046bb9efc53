#pragma once

// Scoring head over the solver zoo, labels, losses and the training loop.

#include <algorithm>
#include <functional>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "routesel/autodiff.hpp"
#include "routesel/encoder.hpp"
#include "routesel/errors.hpp"
#include "routesel/instance.hpp"
#include "routesel/manual_features.hpp"
#include "routesel/rng.hpp"
#include "routesel/solver_zoo.hpp"

namespace routesel {

inline constexpr double kScaleNormaliser = 500.0;

// ---------------------------------------------------------------------------
// Labels and losses

struct Labels {
  std::size_t best = 0;
  std::vector<std::size_t> ranking;  // ranking[i] = solver at rank i, ascending objective
};

inline Labels build_labels(std::span<const double> objectives) {
  if (objectives.empty()) throw LabelError("cannot label an empty row");
  if (std::none_of(objectives.begin(), objectives.end(), [](double v) { return std::isfinite(v); })) {
    throw LabelError("every solver failed on this row");
  }
  Labels l;
  l.ranking.resize(objectives.size());
  std::iota(l.ranking.begin(), l.ranking.end(), 0);
  std::stable_sort(l.ranking.begin(), l.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return objectives[a] < objectives[b]; });
  l.best = l.ranking[0];
  return l;
}

inline double classification_loss(std::span<const double> scores, std::size_t best) {
  ad::Tape tape;
  const ad::Var s = tape.constant(ad::Tensor::row({scores.begin(), scores.end()}));
  return ad::cross_entropy(s, best).value()[0];
}

inline double ranking_loss(std::span<const double> scores, const std::vector<std::size_t>& ranking) {
  ad::Tape tape;
  const ad::Var s = tape.constant(ad::Tensor::row({scores.begin(), scores.end()}));
  return ad::listmle(s, ranking).value()[0];
}

enum class LossKind { kClassification, kRanking };

inline std::string to_string(LossKind k) { return k == LossKind::kRanking ? "ranking" : "classification"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "ranking") return LossKind::kRanking;
  if (s == "classification") return LossKind::kClassification;
  throw ConfigError("unknown loss: " + s);
}

inline ad::Var loss_of(ad::Var scores, const Labels& l, LossKind k) {
  return k == LossKind::kRanking ? ad::listmle(scores, l.ranking) : ad::cross_entropy(scores, l.best);
}

// ---------------------------------------------------------------------------
// MLP head: (repr || N/500) -> hidden -> hidden -> out, tanh activations.

struct MlpIndex {
  std::size_t w1, b1, w2, b2, w3, b3;
};

inline MlpIndex add_mlp(ad::ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden,
                        std::size_t out, Rng& rng) {
  MlpIndex m;
  m.w1 = ps.add(prefix + ".w1", fan_in_init(in, hidden, rng));
  m.b1 = ps.add(prefix + ".b1", ad::Tensor(1, hidden));
  m.w2 = ps.add(prefix + ".w2", fan_in_init(hidden, hidden, rng));
  m.b2 = ps.add(prefix + ".b2", ad::Tensor(1, hidden));
  m.w3 = ps.add(prefix + ".w3", fan_in_init(hidden, out, rng));
  m.b3 = ps.add(prefix + ".b3", ad::Tensor(1, out));
  return m;
}

inline ad::Var mlp(std::span<const ad::Var> p, const MlpIndex& m, ad::Var x) {
  const ad::Var h1 = ad::tanh(ad::add_row(ad::matmul(x, p[m.w1]), p[m.b1]));
  const ad::Var h2 = ad::tanh(ad::add_row(ad::matmul(h1, p[m.w2]), p[m.b2]));
  return ad::add_row(ad::matmul(h2, p[m.w3]), p[m.b3]);
}

inline ad::Var with_scale(ad::Var repr, std::size_t n) {
  const ad::Var scale = repr.tape()->constant(ad::Tensor::scalar(static_cast<double>(n) / kScaleNormaliser));
  const ad::Var parts[] = {repr, scale};
  return ad::concat_cols(parts);
}

// ---------------------------------------------------------------------------
// Selection model

struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool fitted() const { return !mean.empty(); }

  static FeatureScaler fit(const std::vector<RoutingInstance>& data) {
    if (data.empty()) throw DomainError("cannot fit a feature scaler on no instances");
    FeatureScaler s;
    std::vector<std::vector<double>> rows;
    for (const auto& inst : data) rows.push_back(manual_features(inst).values);
    const std::size_t f = rows[0].size();
    s.mean.assign(f, 0.0);
    s.stddev.assign(f, 0.0);
    for (const auto& r : rows) {
      for (std::size_t j = 0; j < f; ++j) s.mean[j] += r[j];
    }
    for (auto& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows) {
      for (std::size_t j = 0; j < f; ++j) s.stddev[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    }
    for (auto& v : s.stddev) {
      v = std::sqrt(v / static_cast<double>(rows.size()));
      if (v < 1e-12) v = 1.0;
    }
    return s;
  }

  std::vector<double> apply(std::vector<double> v) const {
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = (v[j] - mean[j]) / stddev[j];
    return v;
  }
};

class SelectionModel {
 public:
  static SelectionModel create(ProblemKind kind, const EncoderConfig& enc, std::vector<std::string> solver_ids,
                               std::uint64_t seed, std::size_t head_hidden = 256) {
    if (solver_ids.empty()) throw ConfigError("selection model needs at least one solver");
    enc.validate();
    SelectionModel m;
    m.kind_ = kind;
    m.enc_cfg_ = enc;
    m.solver_ids_ = std::move(solver_ids);
    m.head_hidden_ = head_hidden;
    Rng rng(derive_seed(seed, streams::kInit, 0));
    std::size_t repr_dim = 0;
    if (enc.mode == EncoderMode::kManual) {
      repr_dim = kind == ProblemKind::kTsp ? kTspFeatureCount : kCvrpFeatureCount;
    } else {
      m.enc_ = add_encoder(m.params_, enc, kind, rng);
      repr_dim = m.enc_.output_dim();
    }
    m.head_ = add_mlp(m.params_, "head", repr_dim + 1, head_hidden, m.solver_ids_.size(), rng);
    return m;
  }

  ProblemKind kind() const { return kind_; }
  const EncoderConfig& encoder_config() const { return enc_cfg_; }
  const std::vector<std::string>& solver_ids() const { return solver_ids_; }
  std::size_t num_solvers() const { return solver_ids_.size(); }
  std::size_t head_hidden() const { return head_hidden_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  FeatureScaler& scaler() { return scaler_; }
  const FeatureScaler& scaler() const { return scaler_; }
  const EncoderIndex& encoder_index() const { return enc_; }
  const MlpIndex& head_index() const { return head_; }

  ad::Var representation(std::span<const ad::Var> p, ad::Tape& tape, const RoutingInstance& inst) const {
    check_kind(inst);
    if (enc_cfg_.mode == EncoderMode::kManual) {
      if (!scaler_.fitted()) throw ContractViolation("manual-feature model used before its scaler was fitted");
      return tape.constant(ad::Tensor::row(scaler_.apply(manual_features(inst).values)));
    }
    return encode(p, enc_, tape.constant(node_features(inst)));
  }

  ad::Var forward(std::span<const ad::Var> p, ad::Tape& tape, const RoutingInstance& inst) const {
    return mlp(p, head_, with_scale(representation(p, tape, inst), inst.size()));
  }

  std::vector<double> score(const RoutingInstance& inst) const {
    ad::Tape tape;
    const auto p = params_.bind_constant(tape);
    return forward(p, tape, inst).value().values();
  }

  // Deterministic selection-time proxy, in work units.
  double inference_work(std::size_t n) const {
    const double h = static_cast<double>(head_hidden_);
    return encoder_work(enc_cfg_, n) + h * h + h * (2.0 * static_cast<double>(enc_cfg_.embed_dim) + 1.0) +
           h * static_cast<double>(num_solvers());
  }

 private:
  void check_kind(const RoutingInstance& inst) const {
    if (inst.kind != kind_) {
      throw DomainError("model for " + to_string(kind_) + " cannot score " + to_string(inst.kind) + " instance " +
                        inst.id);
    }
  }

  ProblemKind kind_ = ProblemKind::kTsp;
  EncoderConfig enc_cfg_;
  std::vector<std::string> solver_ids_;
  std::size_t head_hidden_ = 256;
  ad::ParameterSet params_;
  EncoderIndex enc_;
  MlpIndex head_{};
  FeatureScaler scaler_;
};

inline std::size_t argmax_lowest(std::span<const double> v) {
  if (v.empty()) throw DomainError("argmax of empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training

enum class AugmentMode { kNone, kRandom, kFull };

inline AugmentMode parse_augment_mode(const std::string& s) {
  if (s == "none") return AugmentMode::kNone;
  if (s == "random") return AugmentMode::kRandom;
  if (s == "full") return AugmentMode::kFull;
  throw ConfigError("unknown augmentation mode: " + s);
}

inline std::string to_string(AugmentMode m) {
  return m == AugmentMode::kNone ? "none" : m == AugmentMode::kRandom ? "random" : "full";
}

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  double val_gap = 0.0;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-6;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kRanking;
  AugmentMode augment = AugmentMode::kNone;
  std::function<void(const EpochRecord&)> on_epoch;  // progress hook, optional

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  }
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::vector<std::string> warnings;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,steps,train_loss,val_gap\n";
    for (const auto& e : epochs) out << e.epoch << "," << e.steps << "," << e.train_loss << "," << e.val_gap << "\n";
    return out.str();
  }

  friend bool operator==(const TrainHistory& a, const TrainHistory& b) { return a.to_csv() == b.to_csv(); }
};

struct TrainResult {
  SelectionModel model;
  TrainHistory history;
};

struct LabelledInstance {
  const RoutingInstance* instance;
  Labels labels;
};

// Rows of `table` for `data`, labelled; rows where every solver failed are
// dropped with a warning.
inline std::vector<LabelledInstance> label_dataset(const std::vector<RoutingInstance>& data,
                                                   const PerformanceTable& table, std::vector<std::string>& warnings) {
  std::unordered_map<std::string, std::size_t> rows;
  for (std::size_t i = 0; i < table.rows(); ++i) rows[table.instance_ids[i]] = i;
  std::vector<LabelledInstance> out;
  for (const auto& inst : data) {
    const auto it = rows.find(inst.id);
    if (it == rows.end()) throw DomainError("instance " + inst.id + " missing from performance table");
    try {
      out.push_back({&inst, build_labels(table.objective[it->second])});
    } catch (const LabelError& e) {
      warnings.push_back("excluded " + inst.id + ": " + e.what());
    }
  }
  return out;
}

// Mean gap of the greedy choice over `data` (rows looked up in `table`).
template <class Scorer>
double greedy_mean_gap(const Scorer& scorer, const std::vector<RoutingInstance>& data, const PerformanceTable& table) {
  std::unordered_map<std::string, std::size_t> rows;
  for (std::size_t i = 0; i < table.rows(); ++i) rows[table.instance_ids[i]] = i;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& inst : data) {
    const std::size_t r = rows.at(inst.id);
    if (!table.usable(r)) continue;
    const auto s = scorer(inst);
    total += table.gap(r, argmax_lowest(s));
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

inline void fit_scaler_if_needed(SelectionModel& model, const std::vector<RoutingInstance>& train_set) {
  if (model.encoder_config().mode == EncoderMode::kManual && !model.scaler().fitted()) {
    model.scaler() = FeatureScaler::fit(train_set);
  }
}

// Expands the labelled training items according to the augmentation mode.
// Full augmentation stores all eight symmetric views; random augmentation
// draws one view per item per epoch inside the loop.
inline std::vector<RoutingInstance> full_augmentation(const std::vector<LabelledInstance>& items) {
  std::vector<RoutingInstance> views;
  views.reserve(items.size() * 8);
  for (const auto& it : items) {
    for (auto& v : augment_8fold(*it.instance)) views.push_back(std::move(v));
  }
  return views;
}

inline TrainResult train(SelectionModel model, const std::vector<RoutingInstance>& train_set,
                         const std::vector<RoutingInstance>& val_set, const PerformanceTable& table,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (table.solver_ids != model.solver_ids()) {
    throw ContractViolation("model solver list does not match the performance table columns");
  }
  TrainResult res{model, {}};
  fit_scaler_if_needed(model, train_set);
  auto items = label_dataset(train_set, table, res.history.warnings);
  if (items.empty()) throw TrainingError("no labelled training instances");

  std::vector<RoutingInstance> views;
  if (cfg.augment == AugmentMode::kFull) {
    views = full_augmentation(items);
    std::vector<LabelledInstance> expanded;
    for (std::size_t i = 0; i < views.size(); ++i) expanded.push_back({&views[i], items[i / 8].labels});
    items = std::move(expanded);
  }

  auto state = ad::AdamState::for_parameters(model.params(), cfg.lr, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, streams::kShuffle, 0));
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  auto val_scorer = [&](const RoutingInstance& inst) { return model.score(inst); };

  double best_gap = std::numeric_limits<double>::infinity();
  ad::ParameterSet best = model.params();
  std::vector<ad::Tensor> batch_grad;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_grad.clear();
      for (const auto& v : model.params().values()) batch_grad.emplace_back(v.rows(), v.cols());
      for (std::size_t k = start; k < end; ++k) {
        const LabelledInstance& item = items[order[k]];
        RoutingInstance view;
        const RoutingInstance* inst = item.instance;
        if (cfg.augment == AugmentMode::kRandom) {
          const int sym = static_cast<int>(rng() % 8);
          if (sym != 0) {
            view = augment_view(*inst, sym);
            inst = &view;
          }
        }
        ad::Tape tape;
        const auto p = model.params().bind(tape);
        const ad::Var loss = loss_of(model.forward(p, tape, *inst), item.labels, cfg.loss);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch) + " (instance " + inst->id + ")");
        }
        loss_sum += lv;
        tape.backward(loss);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const ad::TapeNode& node = tape.node(p[i].id());
          if (!node.grad.empty()) batch_grad[i].mat() += node.grad.mat();
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : batch_grad) g.mat() *= inv;
      try {
        ad::adam_step(model.params(), batch_grad, state);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch));
      }
      ++rec.steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(items.size());
    rec.val_gap = val_set.empty() ? rec.train_loss : greedy_mean_gap(val_scorer, val_set, table);
    res.history.epochs.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
    if (rec.val_gap < best_gap) {
      best_gap = rec.val_gap;
      best = model.params();
      res.history.best_epoch = epoch;
    }
  }
  if (res.history.best_epoch != 0) model.params() = std::move(best);
  res.model = std::move(model);
  return res;
}

// ---------------------------------------------------------------------------
// Selection accuracy: share of rows where the greedy pick attains the row
// minimum (ties count as correct), in percent.

inline double selection_accuracy(const std::vector<std::vector<double>>& scores, const PerformanceTable& table) {
  if (scores.size() != table.rows()) throw DimensionError("one score vector per table row is required");
  std::size_t hit = 0, count = 0;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (!table.usable(i)) continue;
    ++count;
    const double best = *std::min_element(table.objective[i].begin(), table.objective[i].end());
    if (table.objective[i][argmax_lowest(scores[i])] <= best) ++hit;
  }
  return count == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(count);
}

inline double selection_accuracy(const SelectionModel& model, const std::vector<RoutingInstance>& data,
                                 const PerformanceTable& table) {
  std::vector<std::vector<double>> scores;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto it = std::find_if(data.begin(), data.end(),
                                 [&](const RoutingInstance& x) { return x.id == table.instance_ids[i]; });
    if (it == data.end()) throw DomainError("instance " + table.instance_ids[i] + " not in dataset");
    scores.push_back(model.score(*it));
  }
  return selection_accuracy(scores, table);
}

}  // namespace routesel

#pragma once

// Graph attention encoders: a flat stack of attention layers averaged into a
// d-vector, and a hierarchical encoder that pools nodes by learned scores and
// sums per-level readouts into a 2d-vector.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "routesel/autodiff.hpp"
#include "routesel/errors.hpp"
#include "routesel/instance.hpp"
#include "routesel/rng.hpp"

namespace routesel {

enum class EncoderMode { kFlat, kHierarchical, kManual };

inline std::string to_string(EncoderMode m) {
  switch (m) {
    case EncoderMode::kFlat: return "flat";
    case EncoderMode::kHierarchical: return "hierarchical";
    case EncoderMode::kManual: return "manual";
  }
  return "?";
}

inline EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "flat") return EncoderMode::kFlat;
  if (s == "hierarchical" || s == "hier") return EncoderMode::kHierarchical;
  if (s == "manual") return EncoderMode::kManual;
  throw ConfigError("unknown encoder mode: " + s);
}

struct EncoderConfig {
  std::size_t embed_dim = 128;
  std::size_t heads = 8;
  std::size_t ff_hidden = 512;
  std::size_t flat_layers = 4;
  std::size_t hier_blocks = 2;
  std::size_t layers_per_block = 2;
  double pool_ratio = 0.8;
  EncoderMode mode = EncoderMode::kHierarchical;

  void validate() const {
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
      throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                        std::to_string(heads));
    }
    if (ff_hidden == 0) throw ConfigError("ff_hidden must be positive");
    if (!(pool_ratio > 0.0 && pool_ratio < 1.0)) throw ConfigError("pool_ratio must lie in (0, 1)");
    if (hier_blocks < 1) throw ConfigError("hier_blocks must be at least 1");
  }
};

// Nodes kept by one pooling step.
inline std::size_t pooled_count(std::size_t n, double ratio) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
}

inline std::size_t raw_feature_width(ProblemKind k) { return k == ProblemKind::kTsp ? 2 : 3; }

// Per-node raw features: (x, y) or (x, y, demand).
inline ad::Tensor node_features(const RoutingInstance& inst) {
  const std::size_t w = raw_feature_width(inst.kind);
  ad::Tensor x(inst.size(), w);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    x(i, 0) = inst.coords[i].x;
    x(i, 1) = inst.coords[i].y;
    if (w == 3) x(i, 2) = inst.demands[i];
  }
  return x;
}

inline ad::Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  ad::Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline ad::Tensor fan_in_init(std::size_t rows, std::size_t cols, Rng& rng) {
  return uniform_init(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
}

// ---------------------------------------------------------------------------
// Attention layer: h^ = h + a * MHA(h), h' = h^ + a * FF(h^), a initialised 0.

struct AttentionLayerIndex {
  std::size_t wq, wk, wv, wo, w1, b1, w2, b2, alpha;
  std::size_t dim = 0;
  std::size_t heads = 1;
};

inline AttentionLayerIndex add_attention_layer(ad::ParameterSet& ps, const std::string& prefix, std::size_t dim,
                                               std::size_t heads, std::size_t ff, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  AttentionLayerIndex L;
  L.dim = dim;
  L.heads = heads;
  L.wq = ps.add(prefix + ".wq", fan_in_init(dim, dim, rng));
  L.wk = ps.add(prefix + ".wk", fan_in_init(dim, dim, rng));
  L.wv = ps.add(prefix + ".wv", fan_in_init(dim, dim, rng));
  L.wo = ps.add(prefix + ".wo", fan_in_init(dim, dim, rng));
  L.w1 = ps.add(prefix + ".w1", fan_in_init(dim, ff, rng));
  L.b1 = ps.add(prefix + ".b1", uniform_init(1, ff, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
  L.w2 = ps.add(prefix + ".w2", fan_in_init(ff, dim, rng));
  L.b2 = ps.add(prefix + ".b2", uniform_init(1, dim, 1.0 / std::sqrt(static_cast<double>(ff)), rng));
  L.alpha = ps.add(prefix + ".alpha", ad::Tensor(1, 1, 0.0));
  return L;
}

// Multi-head attention of queries `q` over keys/values `kv`.
inline ad::Var multi_head_attention(std::span<const ad::Var> p, const AttentionLayerIndex& L, ad::Var q, ad::Var kv) {
  if (q.cols() != L.dim || kv.cols() != L.dim) {
    throw DimensionError("attention layer expects width " + std::to_string(L.dim) + ", got " +
                         std::to_string(q.cols()) + " and " + std::to_string(kv.cols()));
  }
  const std::size_t dk = L.dim / L.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  const ad::Var Q = ad::matmul(q, p[L.wq]);
  const ad::Var K = ad::matmul(kv, p[L.wk]);
  const ad::Var V = ad::matmul(kv, p[L.wv]);
  if (L.heads == 1) {
    const ad::Var a = ad::row_softmax(ad::scale(ad::matmul_nt(Q, K), inv));
    return ad::matmul(ad::matmul(a, V), p[L.wo]);
  }
  std::vector<ad::Var> heads;
  heads.reserve(L.heads);
  for (std::size_t h = 0; h < L.heads; ++h) {
    const ad::Var qh = ad::slice_cols(Q, h * dk, dk);
    const ad::Var kh = ad::slice_cols(K, h * dk, dk);
    const ad::Var vh = ad::slice_cols(V, h * dk, dk);
    const ad::Var a = ad::row_softmax(ad::scale(ad::matmul_nt(qh, kh), inv));
    heads.push_back(ad::matmul(a, vh));
  }
  return ad::matmul(ad::concat_cols(heads), p[L.wo]);
}

inline ad::Var feed_forward(std::span<const ad::Var> p, const AttentionLayerIndex& L, ad::Var h) {
  const ad::Var hidden = ad::relu(ad::add_row(ad::matmul(h, p[L.w1]), p[L.b1]));
  return ad::add_row(ad::matmul(hidden, p[L.w2]), p[L.b2]);
}

inline ad::Var attention_layer(std::span<const ad::Var> p, const AttentionLayerIndex& L, ad::Var q, ad::Var kv) {
  const ad::Var alpha = p[L.alpha];
  const ad::Var hat = ad::add(q, ad::scalar_mul(alpha, multi_head_attention(p, L, q, kv)));
  return ad::add(hat, ad::scalar_mul(alpha, feed_forward(p, L, hat)));
}

inline ad::Var attention_layer(std::span<const ad::Var> p, const AttentionLayerIndex& L, ad::Var h) {
  return attention_layer(p, L, h, h);
}

// ---------------------------------------------------------------------------
// Encoders

struct HierBlockIndex {
  std::vector<AttentionLayerIndex> layers;
  AttentionLayerIndex score;
  std::size_t w_score = 0;
};

struct EncoderIndex {
  EncoderConfig cfg;
  ProblemKind kind = ProblemKind::kTsp;
  std::size_t embed = 0;
  std::vector<AttentionLayerIndex> flat;
  std::vector<HierBlockIndex> blocks;

  std::size_t output_dim() const {
    return cfg.mode == EncoderMode::kHierarchical ? 2 * cfg.embed_dim : cfg.embed_dim;
  }
};

inline EncoderIndex add_encoder(ad::ParameterSet& ps, const EncoderConfig& cfg, ProblemKind kind, Rng& rng,
                                const std::string& prefix = "enc") {
  cfg.validate();
  if (cfg.mode == EncoderMode::kManual) throw ConfigError("manual features have no encoder parameters");
  EncoderIndex e;
  e.cfg = cfg;
  e.kind = kind;
  const std::size_t d = cfg.embed_dim;
  e.embed = ps.add(prefix + ".embed", fan_in_init(raw_feature_width(kind), d, rng));
  if (cfg.mode == EncoderMode::kFlat) {
    for (std::size_t l = 0; l < cfg.flat_layers; ++l) {
      e.flat.push_back(add_attention_layer(ps, prefix + ".layer" + std::to_string(l), d, cfg.heads, cfg.ff_hidden, rng));
    }
  } else {
    for (std::size_t b = 0; b < cfg.hier_blocks; ++b) {
      HierBlockIndex blk;
      const std::string bp = prefix + ".block" + std::to_string(b);
      for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
        blk.layers.push_back(add_attention_layer(ps, bp + ".layer" + std::to_string(l), d, cfg.heads, cfg.ff_hidden, rng));
      }
      blk.score = add_attention_layer(ps, bp + ".score", d, cfg.heads, cfg.ff_hidden, rng);
      blk.w_score = ps.add(bp + ".w_score", fan_in_init(d, 1, rng));
      e.blocks.push_back(std::move(blk));
    }
  }
  return e;
}

inline ad::Var embed_nodes(ad::Var x, ad::Var w) {
  if (x.cols() != w.rows()) {
    throw DimensionError("node features have width " + std::to_string(x.cols()) + " but the embedding expects " +
                         std::to_string(w.rows()));
  }
  return ad::matmul(x, w);
}

inline ad::Var flat_encode(std::span<const ad::Var> p, const EncoderIndex& e, ad::Var x) {
  ad::Var h = embed_nodes(x, p[e.embed]);
  for (const auto& L : e.flat) h = attention_layer(p, L, h);
  return ad::mean_rows(h);
}

inline ad::Var readout(ad::Var h) {
  const ad::Var parts[] = {ad::mean_rows(h), ad::max_cols(h)};
  return ad::tanh(ad::concat_cols(parts));
}

struct PoolResult {
  ad::Var pooled;                // kept rows of H + Z 1
  ad::Var readout;               // tanh(mean || max) of the block output before pooling
  std::vector<std::size_t> kept;  // row indices into the block input, in score order
  std::vector<double> scores;
};

// Indices of the top `keep` scores; ties go to the lower index.
inline std::vector<std::size_t> top_scoring(const std::vector<double>& z, std::size_t keep) {
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  order.resize(std::min(keep, order.size()));
  return order;
}

inline PoolResult pool_block(std::span<const ad::Var> p, const HierBlockIndex& blk, ad::Var h, double ratio) {
  for (const auto& L : blk.layers) h = attention_layer(p, L, h);
  PoolResult r;
  const ad::Var z = ad::tanh(ad::matmul(attention_layer(p, blk.score, h), p[blk.w_score]));
  r.scores = z.value().values();
  r.kept = top_scoring(r.scores, pooled_count(h.rows(), ratio));
  r.readout = readout(h);
  r.pooled = ad::gather_rows(ad::broadcast_add_col(h, z), r.kept);
  return r;
}

inline ad::Var hier_encode(std::span<const ad::Var> p, const EncoderIndex& e, ad::Var x) {
  ad::Var h = embed_nodes(x, p[e.embed]);
  ad::Var total;
  bool first = true;
  for (const auto& blk : e.blocks) {
    PoolResult r = pool_block(p, blk, h, e.cfg.pool_ratio);
    total = first ? r.readout : ad::add(total, r.readout);
    first = false;
    h = r.pooled;
  }
  return ad::add(total, readout(h));
}

inline ad::Var encode(std::span<const ad::Var> p, const EncoderIndex& e, ad::Var x) {
  return e.cfg.mode == EncoderMode::kFlat ? flat_encode(p, e, x) : hier_encode(p, e, x);
}

// Approximate multiply-add count of one forward pass; drives the
// deterministic selection-time proxy.
inline double encoder_work(const EncoderConfig& cfg, std::size_t n) {
  const double d = static_cast<double>(cfg.embed_dim);
  const double ff = static_cast<double>(cfg.ff_hidden);
  auto layer = [&](double rows) { return rows * (4.0 * d * d + 2.0 * d * ff) + 2.0 * rows * rows * d; };
  double w = static_cast<double>(n) * 3.0 * d;
  if (cfg.mode == EncoderMode::kFlat) {
    w += static_cast<double>(cfg.flat_layers) * layer(static_cast<double>(n));
  } else if (cfg.mode == EncoderMode::kHierarchical) {
    std::size_t rows = n;
    for (std::size_t b = 0; b < cfg.hier_blocks; ++b) {
      w += static_cast<double>(cfg.layers_per_block + 1) * layer(static_cast<double>(rows));
      rows = pooled_count(rows, cfg.pool_ratio);
    }
  } else {
    w = static_cast<double>(n) * static_cast<double>(n);
  }
  return w;
}

}  // namespace routesel

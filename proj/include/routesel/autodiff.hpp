#pragma once

// Dense rank-2 tensors with a define-by-run reverse-mode tape and Adam.
//
// Every value is a row-major matrix of doubles; scalars are 1x1 and vectors are
// 1xd rows. A Tape records each primitive as a TapeNode (op kind, input ids,
// cached forward value, gradient accumulator). Tapes are built fresh per forward
// pass and thrown away after the optimizer step.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <new>
#include <vector>

#include "routesel/errors.hpp"

namespace routesel::ad {

inline constexpr std::size_t kTensorAlign = 64;

// 64-byte aligned, and leaves elements uninitialised on resize; every use
// overwrites them. Alignment keeps Eigen's vectorised reductions independent
// of where the buffer landed, so results are bitwise reproducible.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  DefaultInitAllocator() = default;
  template <class U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kTensorAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kTensorAlign}); }
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix, Eigen::Aligned64>;
using ConstMatrixMap = Eigen::Map<const Matrix, Eigen::Aligned64>;

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, const std::vector<double>& data)
      : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  static Tensor uninitialized(std::size_t rows, std::size_t cols) {
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_.resize(rows * cols);
    return t;
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(1, n, v);
  }
  static Tensor from(const Matrix& m) {
    Tensor t = uninitialized(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    t.mat() = m;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  MatrixMap mat() {
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows_),
                     static_cast<Eigen::Index>(cols_));
  }
  ConstMatrixMap mat() const {
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows_),
                          static_cast<Eigen::Index>(cols_));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, DefaultInitAllocator<double>> data_;
};

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kMatMulNT,
  kAdd,
  kAddRow,
  kMul,
  kScalarMul,
  kScale,
  kRowSoftmax,
  kTanh,
  kRelu,
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kMeanRows,
  kMaxCols,
  kGatherRows,
  kBroadcastAddCol,
  kSum,
  kCrossEntropy,
  kListMle,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kMatMulNT: return "matmul-nt";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add-row";
    case OpKind::kMul: return "mul";
    case OpKind::kScalarMul: return "scalar-mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRowSoftmax: return "row-softmax";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kConcatCols: return "concat-cols";
    case OpKind::kConcatRows: return "concat-rows";
    case OpKind::kSliceCols: return "slice-cols";
    case OpKind::kMeanRows: return "mean-rows";
    case OpKind::kMaxCols: return "max-cols";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kBroadcastAddCol: return "broadcast-add-col";
    case OpKind::kSum: return "sum";
    case OpKind::kCrossEntropy: return "cross-entropy";
    case OpKind::kListMle: return "listmle";
  }
  return "?";
}

struct TapeNode {
  OpKind op = OpKind::kLeaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;  // empty until a backward pass reaches the node
  std::vector<std::size_t> index;  // rows to gather, argmax rows, ranking, slice start
  double scalar = 0.0;
  bool requires_grad = false;
};

class Tape;

// Lightweight handle to a node on a tape. Copying a Var never copies data.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input (parameters, or points under a gradient check).
  Var leaf(Tensor value) {
    return push(OpKind::kLeaf, {}, std::move(value), {}, 0.0, true);
  }
  // Non-differentiable input; backward never propagates into it.
  Var constant(Tensor value) {
    return push(OpKind::kConstant, {}, std::move(value), {}, 0.0, false);
  }

  Var push(OpKind op, std::vector<std::size_t> inputs, Tensor value,
           std::vector<std::size_t> index = {}, double scalar = 0.0) {
    bool rg = false;
    for (std::size_t in : inputs) rg = rg || nodes_[in].requires_grad;
    return push(op, std::move(inputs), std::move(value), std::move(index), scalar, rg);
  }

  const TapeNode& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward pass(es) w.r.t. a node; zeros if unreached.
  Tensor grad(Var v) const {
    const TapeNode& n = nodes_[v.id()];
    if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor();
  }

  // Reverse sweep from a scalar node. Gradients are added into each node's
  // accumulator, so calling backward twice on the same graph doubles them.
  void backward(Var loss);

 private:
  Var push(OpKind op, std::vector<std::size_t> inputs, Tensor value,
           std::vector<std::size_t> index, double scalar, bool requires_grad) {
    TapeNode n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.index = std::move(index);
    n.scalar = scalar;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<TapeNode> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

namespace detail {

[[noreturn]] inline void shape_error(OpKind k, std::initializer_list<const Tensor*> ts) {
  std::string msg = std::string(op_name(k)) + ": incompatible shapes";
  for (const Tensor* t : ts) msg += " " + t->shape_string();
  throw DimensionError(msg);
}

inline void same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ContractViolation("operands live on different tapes");
}

// blocked gemm only pays off above a few thousand multiply-adds
inline bool small_product(Eigen::Index m, Eigen::Index k, Eigen::Index n) { return m * k * n <= 8192; }

template <class Dst, class A, class B>
void assign_product(Dst&& dst, const A& a, const B& b) {
  if (small_product(a.rows(), a.cols(), b.cols())) {
    dst.noalias() = a.lazyProduct(b);
  } else {
    dst.noalias() = a * b;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward primitives. Each computes its value eagerly and records a node.

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) detail::shape_error(OpKind::kMatMul, {&x, &y});
  Tensor out = Tensor::uninitialized(x.rows(), y.cols());
  detail::assign_product(out.mat(), x.mat(), y.mat());
  return a.tape()->push(OpKind::kMatMul, {a.id(), b.id()}, std::move(out));
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.cols()) detail::shape_error(OpKind::kMatMulNT, {&x, &y});
  Tensor out = Tensor::uninitialized(x.rows(), y.rows());
  detail::assign_product(out.mat(), x.mat(), y.mat().transpose());
  return a.tape()->push(OpKind::kMatMulNT, {a.id(), b.id()}, std::move(out));
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!x.same_shape(y)) detail::shape_error(OpKind::kAdd, {&x, &y});
  Tensor out = x;
  out.mat() += y.mat();
  return a.tape()->push(OpKind::kAdd, {a.id(), b.id()}, std::move(out));
}

// (N x d) + (1 x d) broadcast over rows.
inline Var add_row(Var a, Var row) {
  detail::same_tape(a, row);
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) detail::shape_error(OpKind::kAddRow, {&x, &r});
  Tensor out = x;
  out.mat().rowwise() += r.mat().row(0);
  return a.tape()->push(OpKind::kAddRow, {a.id(), row.id()}, std::move(out));
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!x.same_shape(y)) detail::shape_error(OpKind::kMul, {&x, &y});
  Tensor out = x;
  out.mat().array() *= y.mat().array();
  return a.tape()->push(OpKind::kMul, {a.id(), b.id()}, std::move(out));
}

// Learnable 1x1 scalar times a tensor.
inline Var scalar_mul(Var s, Var a) {
  detail::same_tape(s, a);
  const Tensor& sv = s.value();
  const Tensor& x = a.value();
  if (sv.size() != 1) detail::shape_error(OpKind::kScalarMul, {&sv, &x});
  Tensor out = x;
  out.mat() *= sv[0];
  return a.tape()->push(OpKind::kScalarMul, {s.id(), a.id()}, std::move(out));
}

// Constant factor times a tensor.
inline Var scale(Var a, double c) {
  Tensor out = a.value();
  out.mat() *= c;
  return a.tape()->push(OpKind::kScale, {a.id()}, std::move(out), {}, c);
}

inline Var row_softmax(Var a) {
  Tensor out = a.value();
  auto m = out.mat();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
  return a.tape()->push(OpKind::kRowSoftmax, {a.id()}, std::move(out));
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  out.mat() = out.mat().array().tanh().matrix();
  return a.tape()->push(OpKind::kTanh, {a.id()}, std::move(out));
}

inline Var relu(Var a) {
  Tensor out = a.value();
  out.mat() = out.mat().cwiseMax(0.0);
  return a.tape()->push(OpKind::kRelu, {a.id()}, std::move(out));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat-cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != rows) detail::shape_error(OpKind::kConcatCols, {&parts[0].value(), &p.value()});
    cols += p.cols();
    ids.push_back(p.id());
  }
  Tensor out = Tensor::uninitialized(rows, cols);
  Eigen::Index c0 = 0;
  for (const Var& p : parts) {
    const auto w = static_cast<Eigen::Index>(p.cols());
    out.mat().middleCols(c0, w) = p.value().mat();
    c0 += w;
  }
  return parts[0].tape()->push(OpKind::kConcatCols, std::move(ids), std::move(out));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat-rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.cols() != cols) detail::shape_error(OpKind::kConcatRows, {&parts[0].value(), &p.value()});
    rows += p.rows();
    ids.push_back(p.id());
  }
  Tensor out = Tensor::uninitialized(rows, cols);
  Eigen::Index r0 = 0;
  for (const Var& p : parts) {
    const auto h = static_cast<Eigen::Index>(p.rows());
    out.mat().middleRows(r0, h) = p.value().mat();
    r0 += h;
  }
  return parts[0].tape()->push(OpKind::kConcatRows, std::move(ids), std::move(out));
}

inline Var slice_cols(Var a, std::size_t start, std::size_t width) {
  const Tensor& x = a.value();
  if (width == 0 || start + width > x.cols()) {
    throw DimensionError("slice-cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + width) + ") out of range for " +
                         x.shape_string());
  }
  Tensor out = Tensor::uninitialized(x.rows(), width);
  out.mat() = x.mat().middleCols(static_cast<Eigen::Index>(start),
                                 static_cast<Eigen::Index>(width));
  return a.tape()->push(OpKind::kSliceCols, {a.id()}, std::move(out), {start});
}

// Column-wise mean over rows: (N x d) -> (1 x d).
inline Var mean_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) detail::shape_error(OpKind::kMeanRows, {&x});
  Tensor out(1, x.cols());
  out.mat() = x.mat().colwise().mean();
  return a.tape()->push(OpKind::kMeanRows, {a.id()}, std::move(out));
}

// Column-wise maximum over rows: (N x d) -> (1 x d). Ties go to the lowest row.
inline Var max_cols(Var a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) detail::shape_error(OpKind::kMaxCols, {&x});
  Tensor out(1, x.cols());
  std::vector<std::size_t> arg(x.cols(), 0);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double best = x(0, c);
    for (std::size_t r = 1; r < x.rows(); ++r) {
      if (x(r, c) > best) {
        best = x(r, c);
        arg[c] = r;
      }
    }
    out(0, c) = best;
  }
  return a.tape()->push(OpKind::kMaxCols, {a.id()}, std::move(out), std::move(arg));
}

inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& x = a.value();
  Tensor out = Tensor::uninitialized(rows.size(), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) {
      throw DimensionError("gather-rows: row " + std::to_string(rows[k]) + " out of range for " +
                           x.shape_string());
    }
    out.mat().row(static_cast<Eigen::Index>(k)) = x.mat().row(static_cast<Eigen::Index>(rows[k]));
  }
  return a.tape()->push(OpKind::kGatherRows, {a.id()}, std::move(out), std::move(rows));
}

// (N x d) + (N x 1) broadcast over columns.
inline Var broadcast_add_col(Var a, Var col) {
  detail::same_tape(a, col);
  const Tensor& x = a.value();
  const Tensor& c = col.value();
  if (c.cols() != 1 || c.rows() != x.rows()) detail::shape_error(OpKind::kBroadcastAddCol, {&x, &c});
  Tensor out = x;
  out.mat().colwise() += c.mat().col(0);
  return a.tape()->push(OpKind::kBroadcastAddCol, {a.id(), col.id()}, std::move(out));
}

inline Var sum(Var a) {
  return a.tape()->push(OpKind::kSum, {a.id()}, Tensor::scalar(a.value().mat().sum()));
}

namespace detail {

inline double logsumexp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// -log softmax(scores)[target] for a 1 x M score row.
inline Var cross_entropy(Var scores, std::size_t target) {
  const Tensor& s = scores.value();
  if (s.rows() != 1) detail::shape_error(OpKind::kCrossEntropy, {&s});
  if (target >= s.cols()) {
    throw LabelError("cross-entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(s.cols()) + " scores");
  }
  const double v = detail::logsumexp(s.data()) - s[target];
  return scores.tape()->push(OpKind::kCrossEntropy, {scores.id()}, Tensor::scalar(v), {target});
}

// Plackett-Luce negative log-likelihood of `ranking` (ranking[i] = index of the
// rank-i item) under a 1 x M score row; each suffix normaliser is computed with
// its own max subtraction.
inline Var listmle(Var scores, std::vector<std::size_t> ranking) {
  const Tensor& s = scores.value();
  if (s.rows() != 1) detail::shape_error(OpKind::kListMle, {&s});
  const std::size_t m = s.cols();
  if (ranking.size() != m) {
    throw LabelError("listmle: ranking length " + std::to_string(ranking.size()) +
                     " differs from score count " + std::to_string(m));
  }
  std::vector<bool> seen(m, false);
  for (std::size_t r : ranking) {
    if (r >= m || seen[r]) throw LabelError("listmle: ranking is not a permutation");
    seen[r] = true;
  }
  std::vector<double> ordered(m);
  for (std::size_t i = 0; i < m; ++i) ordered[i] = s[ranking[i]];
  double v = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    v += detail::logsumexp(std::span<const double>(ordered).subspan(i)) - ordered[i];
  }
  return scores.tape()->push(OpKind::kListMle, {scores.id()}, Tensor::scalar(v), std::move(ranking));
}

// ---------------------------------------------------------------------------

inline void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractViolation("backward: loss node belongs to another tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractViolation("backward: loss must be scalar-shaped, got " + lv.shape_string());
  }
  const std::size_t top = loss.id();
  std::vector<Tensor> g(top + 1);
  g[top] = Tensor::scalar(1.0);

  auto acc = [&](std::size_t id) -> Tensor* {
    if (!nodes_[id].requires_grad) return nullptr;
    if (g[id].empty()) g[id] = Tensor(nodes_[id].value.rows(), nodes_[id].value.cols());
    return &g[id];
  };
  // Adds a full-shape contribution, assigning instead when it is the first.
  auto put = [&](std::size_t id, const auto& expr) {
    if (!nodes_[id].requires_grad) return;
    Tensor& t = g[id];
    if (t.empty()) {
      t = Tensor::uninitialized(nodes_[id].value.rows(), nodes_[id].value.cols());
      t.mat().noalias() = expr;
    } else {
      t.mat().noalias() += expr;
    }
  };

  auto put_product = [&](std::size_t id, const auto& a, const auto& b) {
    if (detail::small_product(a.rows(), a.cols(), b.cols())) {
      put(id, a.lazyProduct(b));
    } else {
      put(id, a * b);
    }
  };

  for (std::size_t k = top + 1; k-- > 0;) {
    if (g[k].empty()) continue;
    const TapeNode& n = nodes_[k];
    const Tensor& dy = g[k];
    const auto& in = n.inputs;
    switch (n.op) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul: {
        const Tensor& a = nodes_[in[0]].value;
        const Tensor& b = nodes_[in[1]].value;
        put_product(in[0], dy.mat(), b.mat().transpose());
        put_product(in[1], a.mat().transpose(), dy.mat());
        break;
      }
      case OpKind::kMatMulNT: {
        const Tensor& a = nodes_[in[0]].value;
        const Tensor& b = nodes_[in[1]].value;
        put_product(in[0], dy.mat(), b.mat());
        put_product(in[1], dy.mat().transpose(), a.mat());
        break;
      }
      case OpKind::kAdd:
        put(in[0], dy.mat());
        put(in[1], dy.mat());
        break;
      case OpKind::kAddRow:
        put(in[0], dy.mat());
        put(in[1], dy.mat().colwise().sum());
        break;
      case OpKind::kMul: {
        const Tensor& a = nodes_[in[0]].value;
        const Tensor& b = nodes_[in[1]].value;
        if (Tensor* da = acc(in[0])) da->mat().array() += dy.mat().array() * b.mat().array();
        if (Tensor* db = acc(in[1])) db->mat().array() += dy.mat().array() * a.mat().array();
        break;
      }
      case OpKind::kScalarMul: {
        const Tensor& s = nodes_[in[0]].value;
        const Tensor& a = nodes_[in[1]].value;
        if (Tensor* ds = acc(in[0])) (*ds)[0] += (dy.mat().array() * a.mat().array()).sum();
        put(in[1], s[0] * dy.mat());
        break;
      }
      case OpKind::kScale:
        put(in[0], n.scalar * dy.mat());
        break;
      case OpKind::kRowSoftmax:
        if (nodes_[in[0]].requires_grad) {
          const auto y = n.value.mat();
          const auto d = dy.mat();
          const Eigen::VectorXd dots = (d.array() * y.array()).rowwise().sum();
          put(in[0], (y.array() * (d.colwise() - dots).array()).matrix());
        }
        break;
      case OpKind::kTanh:
        put(in[0], (dy.mat().array() * (1.0 - n.value.mat().array().square())).matrix());
        break;
      case OpKind::kRelu:
        put(in[0], (nodes_[in[0]].value.mat().array() > 0.0).select(dy.mat().array(), 0.0).matrix());
        break;
      case OpKind::kConcatCols: {
        Eigen::Index c0 = 0;
        for (std::size_t id : in) {
          const auto w = static_cast<Eigen::Index>(nodes_[id].value.cols());
          put(id, dy.mat().middleCols(c0, w));
          c0 += w;
        }
        break;
      }
      case OpKind::kConcatRows: {
        Eigen::Index r0 = 0;
        for (std::size_t id : in) {
          const auto h = static_cast<Eigen::Index>(nodes_[id].value.rows());
          put(id, dy.mat().middleRows(r0, h));
          r0 += h;
        }
        break;
      }
      case OpKind::kSliceCols:
        if (Tensor* da = acc(in[0])) {
          da->mat().middleCols(static_cast<Eigen::Index>(n.index[0]),
                               static_cast<Eigen::Index>(n.value.cols())) += dy.mat();
        }
        break;
      case OpKind::kMeanRows:
        if (Tensor* da = acc(in[0])) {
          const double inv = 1.0 / static_cast<double>(da->rows());
          da->mat().rowwise() += inv * dy.mat().row(0);
        }
        break;
      case OpKind::kMaxCols:
        if (Tensor* da = acc(in[0])) {
          for (std::size_t c = 0; c < n.index.size(); ++c) (*da)(n.index[c], c) += dy[c];
        }
        break;
      case OpKind::kGatherRows:
        if (Tensor* da = acc(in[0])) {
          for (std::size_t k2 = 0; k2 < n.index.size(); ++k2) {
            da->mat().row(static_cast<Eigen::Index>(n.index[k2])) +=
                dy.mat().row(static_cast<Eigen::Index>(k2));
          }
        }
        break;
      case OpKind::kBroadcastAddCol:
        put(in[0], dy.mat());
        put(in[1], dy.mat().rowwise().sum());
        break;
      case OpKind::kSum:
        if (Tensor* da = acc(in[0])) da->mat().array() += dy[0];
        break;
      case OpKind::kCrossEntropy:
        if (Tensor* da = acc(in[0])) {
          const Tensor& s = nodes_[in[0]].value;
          const double lse = detail::logsumexp(s.data());
          for (std::size_t j = 0; j < s.cols(); ++j) (*da)[j] += dy[0] * std::exp(s[j] - lse);
          (*da)[n.index[0]] -= dy[0];
        }
        break;
      case OpKind::kListMle:
        if (Tensor* da = acc(in[0])) {
          const Tensor& s = nodes_[in[0]].value;
          const std::size_t m = s.cols();
          std::vector<double> ordered(m);
          for (std::size_t i = 0; i < m; ++i) ordered[i] = s[n.index[i]];
          std::vector<double> coef(m, -1.0);
          for (std::size_t i = 0; i < m; ++i) {
            const double lse = detail::logsumexp(std::span<const double>(ordered).subspan(i));
            for (std::size_t j = i; j < m; ++j) coef[j] += std::exp(ordered[j] - lse);
          }
          for (std::size_t j = 0; j < m; ++j) (*da)[n.index[j]] += dy[0] * coef[j];
        }
        break;
    }
  }

  for (std::size_t k = 0; k <= top; ++k) {
    if (g[k].empty()) continue;
    if (nodes_[k].grad.empty()) {
      nodes_[k].grad = std::move(g[k]);
    } else {
      nodes_[k].grad.mat() += g[k].mat();
    }
  }
}

// ---------------------------------------------------------------------------
// Named parameters, bound to a tape as leaves for one forward pass.

class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor init) {
    for (const auto& n : names_) {
      if (n == name) throw ContractViolation("duplicate parameter name: " + name);
    }
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  const std::vector<Tensor>& values() const { return values_; }
  std::vector<Tensor>& values() { return values_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  std::vector<Var> bind(Tape& tape) const {
    std::vector<Var> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(tape.leaf(v));
    return out;
  }

  // Frozen binding: same values, no gradient flow.
  std::vector<Var> bind_constant(Tape& tape) const {
    std::vector<Var> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(tape.constant(v));
    return out;
  }

  static std::vector<Tensor> gradients(const Tape& tape, std::span<const Var> bound) {
    std::vector<Tensor> out;
    out.reserve(bound.size());
    for (const Var& v : bound) out.push_back(tape.grad(v));
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// ---------------------------------------------------------------------------
// Adam with L2 weight decay folded into the gradient before the moments.

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double lr = 1e-4;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_parameters(const ParameterSet& params, double lr = 1e-4,
                                  double weight_decay = 1e-6) {
    AdamState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (const auto& v : params.values()) {
      s.first_moment.emplace_back(v.rows(), v.cols());
      s.second_moment.emplace_back(v.rows(), v.cols());
    }
    return s;
  }
};

inline void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("adam: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params.value(i)) || !state.first_moment[i].same_shape(params.value(i))) {
      throw DimensionError("adam: shape mismatch for parameter " + params.name(i));
    }
    if (!grads[i].all_finite()) throw TrainingError("non-finite gradient for parameter " + params.name(i));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.value(i).mat().array();
    auto m = state.first_moment[i].mat().array();
    auto v = state.second_moment[i].mat().array();
    const Eigen::ArrayXXd g = grads[i].mat().array() + state.weight_decay * p;
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    p -= state.lr * (m / bc1) / ((v / bc2).sqrt() + state.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Central-difference gradient check over every coordinate of every input, fourth order:
// (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h.

using ScalarGraph = std::function<Var(Tape&, std::span<const Var>)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Hash of every discrete choice made on a tape: relu signs, max-cols argmax
// rows, gathered rows. Equal hashes mean the same smooth piece.
inline std::uint64_t branch_signature(const Tape& tape) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const TapeNode& n = tape.node(id);
    if (n.op == OpKind::kRelu) {
      mix(id);
      for (std::size_t i = 0; i < n.value.size(); ++i) mix(n.value[i] > 0.0);
    } else if (n.op == OpKind::kMaxCols || n.op == OpKind::kGatherRows) {
      mix(id);
      for (std::size_t r : n.index) mix(r + 2);
    }
  }
  return h;
}

struct Evaluation {
  double value = 0.0;
  std::uint64_t branches = 0;
};

inline Evaluation evaluate_traced(const ScalarGraph& f, std::span<const Tensor> point) {
  Tape tape;
  std::vector<Var> in;
  in.reserve(point.size());
  for (const auto& t : point) in.push_back(tape.constant(t));
  const double v = f(tape, in).value()[0];
  return {v, branch_signature(tape)};
}

inline double evaluate(const ScalarGraph& f, std::span<const Tensor> point) { return evaluate_traced(f, point).value; }

// Where any stencil point lands on a different branch (relu sign, argmax, kept rows) the
// step is halved until both ends sit on the branch of x, at most 30 times.
inline double grad_check(const ScalarGraph& f, std::vector<Tensor> point, double h = 1e-5) {
  if (!(h > 0.0)) throw ParameterError("grad_check: step must be positive");
  std::vector<Tensor> analytic;
  std::uint64_t branch = 0;
  {
    Tape tape;
    std::vector<Var> in;
    for (const auto& t : point) in.push_back(tape.leaf(t));
    Var out = f(tape, in);
    branch = branch_signature(tape);
    tape.backward(out);
    analytic = ParameterSet::gradients(tape, in);
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < point.size(); ++p) {
    for (std::size_t i = 0; i < point[p].size(); ++i) {
      const double x0 = point[p][i];
      double step = h;
      double numeric = 0.0;
      for (int tries = 0;; ++tries) {
        Evaluation e[4];
        const double offs[4] = {2.0, 1.0, -1.0, -2.0};
        bool same = true;
        for (int k = 0; k < 4; ++k) {
          point[p][i] = x0 + offs[k] * step;
          e[k] = evaluate_traced(f, point);
          same = same && e[k].branches == branch;
        }
        numeric = (8.0 * (e[1].value - e[2].value) - (e[0].value - e[3].value)) / (12.0 * step);
        if (same || tries == 30) break;
        step *= 0.5;
      }
      point[p][i] = x0;
      worst = std::max(worst, relative_error(analytic[p][i], numeric));
    }
  }
  return worst;
}

}  // namespace routesel::ad

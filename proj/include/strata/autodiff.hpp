#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Graph is an append-only list of nodes. Every operation appends one node
// holding its forward value and a closure that pushes the output gradient
// back to its inputs. Nodes that do not depend on any parameter carry no
// closure, so constant subgraphs cost nothing in the backward pass.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "strata/tensor.hpp"

namespace strata::ad {

using NodeId = std::size_t;

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kSubtract,
  kMultiply,
  kDivide,
  kNeg,
  kScale,
  kRelu,
  kSoftplus,
  kSigmoid,
  kExp,
  kLog,
  kSin,
  kCos,
  kSquare,
  kSqrt,
  kSum,
  kMean,
  kSumAxis,
  kBroadcast,
  kConcat,
  kGatherRows,
  kStopGradient,
  kReshape,
  kSliceCols,
  kCustom,
};

inline constexpr std::pair<OpKind, std::string_view> kOpNames[] = {
    {OpKind::kLeaf, "leaf"},
    {OpKind::kMatMul, "matmul"},
    {OpKind::kAdd, "add"},
    {OpKind::kSubtract, "subtract"},
    {OpKind::kMultiply, "multiply"},
    {OpKind::kDivide, "divide"},
    {OpKind::kNeg, "neg"},
    {OpKind::kScale, "scale"},
    {OpKind::kRelu, "relu"},
    {OpKind::kSoftplus, "softplus"},
    {OpKind::kSigmoid, "sigmoid"},
    {OpKind::kExp, "exp"},
    {OpKind::kLog, "log"},
    {OpKind::kSin, "sin"},
    {OpKind::kCos, "cos"},
    {OpKind::kSquare, "square"},
    {OpKind::kSqrt, "sqrt"},
    {OpKind::kSum, "sum"},
    {OpKind::kMean, "mean"},
    {OpKind::kSumAxis, "sum_axis"},
    {OpKind::kBroadcast, "broadcast"},
    {OpKind::kConcat, "concat"},
    {OpKind::kGatherRows, "gather_rows"},
    {OpKind::kStopGradient, "stop_gradient"},
    {OpKind::kReshape, "reshape"},
    {OpKind::kSliceCols, "slice_cols"},
    {OpKind::kCustom, "custom"},
};

inline std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  throw std::invalid_argument("unknown op kind " +
                              std::to_string(static_cast<int>(kind)));
}

inline OpKind op_kind_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown op kind '" + std::string(name) + "'");
}

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  inline bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Result of Graph::backward. Nodes that did not receive a gradient (not
/// reachable from the root, or not depending on any parameter) read as zero.
class Gradients {
 public:
  Gradients(const Graph* graph, std::vector<Tensor> grads, std::vector<bool> present)
      : graph_(graph), grads_(std::move(grads)), present_(std::move(present)) {}

  inline Tensor of(const Var& v) const;
  bool has(const Var& v) const { return v.id() < present_.size() && present_[v.id()]; }

  /// Moves the gradient out; zero-filled when absent.
  inline Tensor take(const Var& v);

 private:
  const Graph* graph_;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

enum class Retain { kAll, kLeaves };

class Graph {
 public:
  /// Accumulates the node's incoming gradient into its inputs. input_grads[i]
  /// is null when input i does not require a gradient.
  using BackwardFn = std::function<void(const Graph& g, NodeId self, const Tensor& grad,
                                        std::span<Tensor* const> input_grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(OpKind::kLeaf, std::move(value), {}, nullptr, false); }
  Var parameter(Tensor value) { return push(OpKind::kLeaf, std::move(value), {}, nullptr, true); }

  /// Appends a derived node. The backward closure is dropped when no input
  /// requires a gradient.
  Var record(OpKind kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
    bool req = false;
    for (NodeId in : inputs) req = req || nodes_[in].requires_grad;
    if (!req) backward = nullptr;
    return push(kind, std::move(value), std::move(inputs), std::move(backward), req);
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  Gradients backward(const Var& root, Retain retain = Retain::kAll) const {
    if (&root.graph() != this) throw std::invalid_argument("backward: root is not on this graph");
    const Tensor& rv = value(root.id());
    if (rv.rank() != 0) {
      throw ShapeError("backward: root must be a scalar, got shape " + shape_string(rv.shape()));
    }
    std::vector<Tensor> grads(nodes_.size(), Tensor(Shape{0}));
    std::vector<bool> present(nodes_.size(), false);
    grads[root.id()] = Tensor(Shape{}, 1.0);
    present[root.id()] = true;
    std::vector<Tensor*> in_grads;
    for (NodeId i = root.id() + 1; i-- > 0;) {
      if (!present[i]) continue;
      const Node& node = nodes_[i];
      if (node.backward) {
        in_grads.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          NodeId in = node.inputs[k];
          if (!nodes_[in].requires_grad) continue;
          if (!present[in]) {
            grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
            present[in] = true;
          }
          in_grads[k] = &grads[in];
        }
        node.backward(*this, i, grads[i], in_grads);
      }
      if (retain == Retain::kLeaves && node.kind != OpKind::kLeaf) {
        grads[i] = Tensor(Shape{0});
        present[i] = false;
      }
    }
    return Gradients(this, std::move(grads), std::move(present));
  }

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  Var push(OpKind kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward, bool req) {
    nodes_.push_back(Node{kind, std::move(value), std::move(inputs), std::move(backward), req});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable references to node values across pushes
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }

inline Tensor Gradients::of(const Var& v) const {
  if (has(v)) return grads_[v.id()];
  return Tensor(graph_->value(v.id()).shape(), 0.0);
}

inline Tensor Gradients::take(const Var& v) {
  if (has(v)) {
    present_[v.id()] = false;
    return std::move(grads_[v.id()]);
  }
  return Tensor(graph_->value(v.id()).shape(), 0.0);
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline MapMat as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMapMat as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

inline void check_same_graph(const Var& a, const Var& b, std::string_view op) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different graphs");
  }
}

/// numpy-style broadcast of two shapes; strides are aligned to the output rank
/// with zero stride on broadcast dimensions.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::size_t dim = s.size() - 1 - k;
    std::size_t od = r - 1 - k;
    strides[od] = s[dim] == 1 ? 0 : stride;
    stride *= s[dim];
  }
  return strides;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast shapes " + shape_string(a) +
                       " and " + shape_string(b));
    }
    p.out[r - 1 - k] = da == 1 ? db : da;
  }
  p.stride_a = aligned_strides(a, p.out);
  p.stride_b = aligned_strides(b, p.out);
  return p;
}

/// Calls f(out_index, a_offset, b_offset) for every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t n = shape_size(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  if (r == 2) {
    const std::size_t rows = p.out[0], cols = p.out[1];
    // Column strides are 0 or 1 after broadcasting a rank-2 result; making
    // them compile-time constants lets the inner loop vectorize.
    auto run = [&](auto sa, auto sb) {
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t o = i * cols, ia = i * p.stride_a[0], ib = i * p.stride_b[0];
        for (std::size_t j = 0; j < cols; ++j) f(o + j, ia + j * sa, ib + j * sb);
      }
    };
    using Zero = std::integral_constant<std::size_t, 0>;
    using One = std::integral_constant<std::size_t, 1>;
    const bool a1 = p.stride_a[1] == 1, b1 = p.stride_b[1] == 1;
    if (a1 && b1) run(One{}, One{});
    else if (a1) run(One{}, Zero{});
    else if (b1) run(Zero{}, One{});
    else run(Zero{}, Zero{});
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    std::size_t d = r;
    while (d-- > 0) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

/// Elementwise binary op with broadcasting. da/db give the partial
/// derivatives of f with respect to each operand.
template <class F, class DA, class DB>
Var binary(OpKind kind, const Var& a, const Var& b, F f, DA da, DB db) {
  check_same_graph(a, b, op_name(kind));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  BroadcastPlan plan = plan_broadcast(av.shape(), bv.shape(), op_name(kind));
  Tensor out(plan.out);
  const double* pa = av.data().data();
  const double* pb = bv.data().data();
  double* po = out.data().data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    po[o] = f(pa[ia], pb[ib]);
  });
  Graph& g = a.graph();
  return g.record(
      kind, std::move(out), {a.id(), b.id()},
      [plan = std::move(plan), da, db](const Graph& g, NodeId self, const Tensor& grad,
                                       std::span<Tensor* const> in) {
        const NodeId ida = g.inputs(self)[0], idb = g.inputs(self)[1];
        const double* pa = g.value(ida).data().data();
        const double* pb = g.value(idb).data().data();
        const double* pg = grad.data().data();
        double* ga = in[0] ? in[0]->data().data() : nullptr;
        double* gb = in[1] ? in[1]->data().data() : nullptr;
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          if (ga) ga[ia] += pg[o] * da(pa[ia], pb[ib]);
          if (gb) gb[ib] += pg[o] * db(pa[ia], pb[ib]);
        });
      });
}

/// Elementwise unary op; df(x, y) is the derivative given input x and output y.
template <class F, class DF>
Var unary(OpKind kind, const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  const std::size_t n = xv.size();
  const double* px = xv.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) po[i] = f(px[i]);
  return x.graph().record(kind, std::move(out), {x.id()},
                          [df](const Graph& g, NodeId self, const Tensor& grad,
                               std::span<Tensor* const> in) {
                            const double* px = g.value(g.inputs(self)[0]).data().data();
                            const double* py = g.value(self).data().data();
                            const double* pg = grad.data().data();
                            double* gx = in[0]->data().data();
                            const std::size_t n = grad.size();
                            for (std::size_t i = 0; i < n; ++i) gx[i] += pg[i] * df(px[i], py[i]);
                          });
}

inline double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (broadcasting)

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::kAdd, a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var subtract(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::kSubtract, a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var multiply(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::kMultiply, a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var divide(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::kDivide, a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

inline Var neg(const Var& x) {
  return detail::unary(
      OpKind::kNeg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Var scale(const Var& x, double c) {
  return detail::unary(
      OpKind::kScale, x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// Activations and transcendental functions

/// Subgradient at 0 is 0.
inline Var relu(const Var& x) {
  return detail::unary(
      OpKind::kRelu, x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Var softplus(const Var& x) {
  return detail::unary(OpKind::kSoftplus, x, detail::softplus_value,
                       [](double v, double) { return detail::sigmoid_value(v); });
}

inline Var sigmoid(const Var& x) {
  return detail::unary(OpKind::kSigmoid, x, detail::sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& x) {
  return detail::unary(
      OpKind::kExp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  return detail::unary(
      OpKind::kLog, x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

inline Var sin(const Var& x) {
  return detail::unary(
      OpKind::kSin, x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

inline Var cos(const Var& x) {
  return detail::unary(
      OpKind::kCos, x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

inline Var square(const Var& x) {
  return detail::unary(
      OpKind::kSquare, x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(const Var& x) {
  return detail::unary(
      OpKind::kSqrt, x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

/// Value-identical copy that contributes no gradient to its input.
inline Var stop_gradient(const Var& x) {
  return x.graph().record(OpKind::kStopGradient, x.value(), {x.id()}, nullptr);
}

// ---------------------------------------------------------------------------
// Contractions, reductions and shape manipulation

/// [m x k] . [k x n] -> [m x n]
inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out(Shape{m, n});
  detail::as_mat(out, m, n).noalias() = detail::as_mat(av, m, k) * detail::as_mat(bv, k, n);
  return a.graph().record(
      OpKind::kMatMul, std::move(out), {a.id(), b.id()},
      [m, k, n](const Graph& g, NodeId self, const Tensor& grad, std::span<Tensor* const> in) {
        const Tensor& av = g.value(g.inputs(self)[0]);
        const Tensor& bv = g.value(g.inputs(self)[1]);
        auto gm = detail::as_mat(grad, m, n);
        if (in[0]) {
          detail::as_mat(*in[0], m, k).noalias() += gm * detail::as_mat(bv, k, n).transpose();
        }
        if (in[1]) {
          detail::as_mat(*in[1], k, n).noalias() += detail::as_mat(av, m, k).transpose() * gm;
        }
      });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(OpKind::kSum, Tensor::scalar(s), {x.id()},
                          [](const Graph&, NodeId, const Tensor& grad,
                             std::span<Tensor* const> in) {
                            const double gv = grad.item();
                            for (double& v : in[0]->data()) v += gv;
                          });
}

inline Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(OpKind::kMean, Tensor::scalar(s / static_cast<double>(n)), {x.id()},
                          [n](const Graph&, NodeId, const Tensor& grad,
                              std::span<Tensor* const> in) {
                            const double gv = grad.item() / static_cast<double>(n);
                            for (double& v : in[0]->data()) v += gv;
                          });
}

/// Sum of a matrix along `axis`, keeping the reduced dimension (size 1).
inline Var sum_axis(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "sum_axis");
  if (axis > 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  const std::size_t r = xv.shape()[0], c = xv.shape()[1];
  Tensor out(axis == 0 ? Shape{1, c} : Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += xv[i * c + j];
  }
  return x.graph().record(OpKind::kSumAxis, std::move(out), {x.id()},
                          [r, c, axis](const Graph&, NodeId, const Tensor& grad,
                                       std::span<Tensor* const> in) {
                            double* gx = in[0]->data().data();
                            for (std::size_t i = 0; i < r; ++i) {
                              for (std::size_t j = 0; j < c; ++j) {
                                gx[i * c + j] += grad[axis == 0 ? j : i];
                              }
                            }
                          });
}

inline Var broadcast_to(const Var& x, const Shape& shape) {
  const Tensor& xv = x.value();
  detail::BroadcastPlan plan = detail::plan_broadcast(xv.shape(), shape, "broadcast");
  if (plan.out != shape) {
    throw ShapeError("broadcast: cannot broadcast " + shape_string(xv.shape()) + " to " +
                     shape_string(shape));
  }
  Tensor out(shape);
  const double* px = xv.data().data();
  double* po = out.data().data();
  detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { po[o] = px[ia]; });
  return x.graph().record(OpKind::kBroadcast, std::move(out), {x.id()},
                          [plan = std::move(plan)](const Graph&, NodeId, const Tensor& grad,
                                                   std::span<Tensor* const> in) {
                            double* gx = in[0]->data().data();
                            const double* pg = grad.data().data();
                            detail::for_each_broadcast(
                                plan, [&](std::size_t o, std::size_t ia, std::size_t) {
                                  gx[ia] += pg[o];
                                });
                          });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value();
  out.reshape(std::move(shape));
  return x.graph().record(OpKind::kReshape, std::move(out), {x.id()},
                          [](const Graph&, NodeId, const Tensor& grad,
                             std::span<Tensor* const> in) {
                            double* gx = in[0]->data().data();
                            const double* pg = grad.data().data();
                            for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += pg[i];
                          });
}

/// Concatenates matrices along axis 1 (columns) or axis 0 (rows); vectors
/// concatenate along their only axis.
inline Var concat(std::span<const Var> parts, std::size_t axis = 1) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = parts[0].graph();
  std::vector<NodeId> ids;
  const Tensor& first = parts[0].value();
  const bool vec = first.rank() == 1;
  if (!vec) detail::require_rank2(first, "concat");
  if (vec) axis = 0;
  const std::size_t rows = vec ? 1 : first.shape()[0];
  const std::size_t cols0 = vec ? first.size() : first.shape()[1];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::check_same_graph(parts[0], p, "concat");
    const Tensor& t = p.value();
    bool ok = t.rank() == first.rank();
    if (ok && !vec) ok = axis == 1 ? t.shape()[0] == rows : t.shape()[1] == cols0;
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_string(first.shape()) + " and " +
                       shape_string(t.shape()));
    }
    std::size_t w = vec ? t.size() : t.shape()[axis];
    widths.push_back(w);
    total += w;
    ids.push_back(p.id());
  }
  Tensor out(vec ? Shape{total} : (axis == 1 ? Shape{rows, total} : Shape{total, cols0}));
  if (vec || axis == 0) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      auto d = p.value().data();
      std::copy(d.begin(), d.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
      off += d.size();
    }
  } else {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].value().data().data();
      const std::size_t w = widths[k];
      for (std::size_t i = 0; i < rows; ++i) {
        std::copy(src + i * w, src + (i + 1) * w, out.data().data() + i * total + off);
      }
      off += w;
    }
  }
  const bool by_cols = !vec && axis == 1;
  return g.record(OpKind::kConcat, std::move(out), std::move(ids),
                  [widths, rows, total, by_cols](const Graph&, NodeId, const Tensor& grad,
                                                 std::span<Tensor* const> in) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < widths.size(); ++k) {
                      const std::size_t w = widths[k];
                      if (in[k]) {
                        double* gx = in[k]->data().data();
                        if (by_cols) {
                          for (std::size_t i = 0; i < rows; ++i) {
                            for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += grad[i * total + off + j];
                          }
                        } else {
                          const std::size_t n = in[k]->size();
                          for (std::size_t j = 0; j < n; ++j) gx[j] += grad[off * (n / w) + j];
                        }
                      }
                      off += w;
                    }
                  });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis = 1) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

/// Rows table[indices[i]]; the backward pass scatter-adds into the table.
inline Var gather_rows(const Var& table, std::vector<std::size_t> indices) {
  const Tensor& tv = table.value();
  detail::require_rank2(tv, "gather_rows");
  const std::size_t n = tv.shape()[0], d = tv.shape()[1];
  Tensor out(Shape{indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                       shape_string(tv.shape()));
    }
    std::copy_n(tv.data().data() + indices[i] * d, d, out.data().data() + i * d);
  }
  return table.graph().record(
      OpKind::kGatherRows, std::move(out), {table.id()},
      [indices = std::move(indices), d](const Graph&, NodeId, const Tensor& grad,
                                        std::span<Tensor* const> in) {
        double* gt = in[0]->data().data();
        for (std::size_t i = 0; i < indices.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j) gt[indices[i] * d + j] += grad[i * d + j];
        }
      });
}

/// Columns [begin, end) of a matrix.
inline Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "slice_cols");
  const std::size_t r = xv.shape()[0], c = xv.shape()[1];
  if (begin >= end || end > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(xv.data().data() + i * c + begin, w, out.data().data() + i * w);
  }
  return x.graph().record(OpKind::kSliceCols, std::move(out), {x.id()},
                          [r, c, begin, w](const Graph&, NodeId, const Tensor& grad,
                                           std::span<Tensor* const> in) {
                            double* gx = in[0]->data().data();
                            for (std::size_t i = 0; i < r; ++i) {
                              for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += grad[i * w + j];
                            }
                          });
}

// ---------------------------------------------------------------------------
// Composites and operator sugar

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return subtract(a, b); }
inline Var operator*(const Var& a, const Var& b) { return multiply(a, b); }
inline Var operator/(const Var& a, const Var& b) { return divide(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add(a, a.graph().constant(Tensor::scalar(c))); }
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(double c, const Var& a) { return add(neg(a), a.graph().constant(Tensor::scalar(c))); }
inline Var operator-(const Var& a, double c) { return a + (-c); }

/// x . W + b for a batch of row vectors x.
inline Var affine(const Var& x, const Var& weight, const Var& bias) {
  return add(matmul(x, weight), bias);
}

inline Var mse(const Var& prediction, const Var& target) {
  return mean(square(subtract(prediction, target)));
}

/// Dispatch by kind for attribute-free operations. Kinds that carry
/// attributes (axis, shape, indices, slice bounds, scale factor) must use
/// their dedicated functions.
inline Var forward_op(OpKind kind, std::span<const Var> inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kMatMul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::kAdd: need(2); return add(inputs[0], inputs[1]);
    case OpKind::kSubtract: need(2); return subtract(inputs[0], inputs[1]);
    case OpKind::kMultiply: need(2); return multiply(inputs[0], inputs[1]);
    case OpKind::kDivide: need(2); return divide(inputs[0], inputs[1]);
    case OpKind::kNeg: need(1); return neg(inputs[0]);
    case OpKind::kRelu: need(1); return relu(inputs[0]);
    case OpKind::kSoftplus: need(1); return softplus(inputs[0]);
    case OpKind::kSigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::kExp: need(1); return exp(inputs[0]);
    case OpKind::kLog: need(1); return log(inputs[0]);
    case OpKind::kSin: need(1); return sin(inputs[0]);
    case OpKind::kCos: need(1); return cos(inputs[0]);
    case OpKind::kSquare: need(1); return square(inputs[0]);
    case OpKind::kSqrt: need(1); return sqrt(inputs[0]);
    case OpKind::kSum: need(1); return sum(inputs[0]);
    case OpKind::kMean: need(1); return mean(inputs[0]);
    case OpKind::kStopGradient: need(1); return stop_gradient(inputs[0]);
    case OpKind::kConcat: return concat(inputs, 1);
    case OpKind::kLeaf:
    case OpKind::kScale:
    case OpKind::kSumAxis:
    case OpKind::kBroadcast:
    case OpKind::kGatherRows:
    case OpKind::kReshape:
    case OpKind::kSliceCols:
    case OpKind::kCustom:
      throw std::invalid_argument(std::string(op_name(kind)) +
                                  ": requires attributes; call the dedicated function");
  }
  throw std::invalid_argument("unknown op kind " + std::to_string(static_cast<int>(kind)));
}

inline Var forward_op(std::string_view name, std::span<const Var> inputs) {
  return forward_op(op_kind_from_name(name), inputs);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

using ScalarFn = std::function<Var(Graph&, const Var&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double gradient_check(const ScalarFn& f, const Tensor& point, double h = 1e-5) {
  if (!(h > 0)) throw std::invalid_argument("gradient_check: step must be positive");
  Tensor analytic;
  {
    Graph g;
    Var x = g.parameter(point);
    Var y = f(g, x);
    if (!std::isfinite(y.value().item())) {
      throw std::runtime_error("gradient_check: non-finite value at the base point");
    }
    analytic = g.backward(y).of(x);
  }
  auto eval = [&](const Tensor& p) {
    Graph g;
    Var x = g.constant(p);
    double v = f(g, x).value().item();
    if (!std::isfinite(v)) throw std::runtime_error("gradient_check: non-finite value at a perturbed point");
    return v;
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + h;
    const double fp = eval(probe);
    probe[i] = x0 - h;
    const double fm = eval(probe);
    probe[i] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace strata::ad

#include "litens/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>

namespace litens::ad {

namespace {

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

double softplus_scalar(double x) {
  // max(x,0) + log1p(exp(-|x|)) never overflows and never rounds through
  // the probability.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double logistic_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double t = std::exp(x);
  return t / (1.0 + t);
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar, kLeftColumn, kRightColumn };

// How do the operands of an elementwise binary op line up?  Column
// broadcast replicates an (n x 1) operand across the batch columns of an
// (n x B) operand.
Broadcast classify_broadcast(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kNone;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  if (a.rows == b.rows && a.cols == 1 && b.cols > 1) return Broadcast::kLeftColumn;
  if (a.rows == b.rows && b.cols == 1 && a.cols > 1) return Broadcast::kRightColumn;
  throw ShapeError(fmt::format("incompatible shapes ({}x{}) and ({}x{})",
                               a.rows, a.cols, b.rows, b.cols));
}

Shape broadcast_result(const Shape& a, const Shape& b) {
  switch (classify_broadcast(a, b)) {
    case Broadcast::kNone:
    case Broadcast::kRightScalar:
    case Broadcast::kRightColumn:
      return a;
    case Broadcast::kLeftScalar:
    case Broadcast::kLeftColumn:
      return b;
  }
  return a;
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kInput: return "input";
    case Op::kAdd: return "add";
    case Op::kAddN: return "add_n";
    case Op::kMultiply: return "multiply";
    case Op::kMatVec: return "matvec";
    case Op::kDot: return "dot";
    case Op::kSoftplus: return "softplus";
    case Op::kRelu: return "relu";
    case Op::kLogistic: return "logistic";
    case Op::kLog: return "log";
    case Op::kNegate: return "negate";
    case Op::kReciprocal: return "reciprocal";
    case Op::kSquare: return "square";
    case Op::kStep: return "step";
    case Op::kSum: return "sum";
  }
  return "?";
}

void Tape::check_node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ShapeError(fmt::format("node id {} out of range", id), id);
  }
}

std::span<const NodeId> Tape::parents_of(const Node& n) const {
  return {parent_pool_.data() + n.first_parent,
          static_cast<std::size_t>(n.parent_count)};
}

NodeId Tape::emit(Op op, Shape shape, std::initializer_list<NodeId> parents,
                  bool transpose) {
  return emit(op, shape, std::span<const NodeId>(parents.begin(), parents.size()),
              transpose);
}

NodeId Tape::emit(Op op, Shape shape, std::span<const NodeId> parents,
                  bool transpose) {
  if (shape.rows <= 0 || shape.cols <= 0) {
    throw ShapeError(fmt::format("{}: empty shape ({}x{})", op_name(op),
                                 shape.rows, shape.cols));
  }
  for (NodeId p : parents) check_node(p);
  Node n;
  n.op = op;
  n.transpose = transpose;
  n.shape = shape;
  n.first_parent = static_cast<std::int32_t>(parent_pool_.size());
  n.parent_count = static_cast<std::int32_t>(parents.size());
  n.offset = static_cast<std::int64_t>(values_.size());
  parent_pool_.insert(parent_pool_.end(), parents.begin(), parents.end());
  values_.resize(values_.size() + shape.size(), 0.0);
  adjoints_.resize(values_.size(), 0.0);
  nodes_.push_back(n);
  bound_.push_back(0);
  touched_.push_back(0);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(double value) {
  NodeId id = emit(Op::kConstant, Shape{1, 1}, {});
  values_[nodes_[id].offset] = value;
  bound_[id] = 1;
  return id;
}

NodeId Tape::parameter(Shape shape) {
  NodeId id = emit(Op::kParameter, shape, {});
  parameter_leaves_.push_back(id);
  return id;
}

NodeId Tape::input(Shape shape) {
  NodeId id = emit(Op::kInput, shape, {});
  input_leaves_.push_back(id);
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  return emit(Op::kAdd, broadcast_result(nodes_[a].shape, nodes_[b].shape), {a, b});
}

NodeId Tape::add_n(std::span<const NodeId> terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  check_node(terms[0]);
  const Shape s = nodes_[terms[0]].shape;
  for (NodeId t : terms) {
    check_node(t);
    if (!(nodes_[t].shape == s)) {
      throw ShapeError(fmt::format("add_n: term shape mismatch at node {}", t), t);
    }
  }
  return emit(Op::kAddN, s, terms);
}

NodeId Tape::multiply(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  return emit(Op::kMultiply, broadcast_result(nodes_[a].shape, nodes_[b].shape),
              {a, b});
}

NodeId Tape::matvec(NodeId matrix, NodeId vec, bool transpose_matrix) {
  check_node(matrix);
  check_node(vec);
  const Shape m = nodes_[matrix].shape;
  const Shape v = nodes_[vec].shape;
  const int in_rows = transpose_matrix ? m.rows : m.cols;
  const int out_rows = transpose_matrix ? m.cols : m.rows;
  if (v.rows != in_rows) {
    throw ShapeError(
        fmt::format("matvec: matrix node {} is {}x{}{} but operand node {} has {} rows",
                    matrix, m.rows, m.cols, transpose_matrix ? " (transposed)" : "",
                    vec, v.rows),
        vec);
  }
  return emit(Op::kMatVec, Shape{out_rows, v.cols}, {matrix, vec}, transpose_matrix);
}

NodeId Tape::dot(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  if (!(nodes_[a].shape == nodes_[b].shape)) {
    throw ShapeError(fmt::format("dot: shape mismatch between nodes {} and {}", a, b), b);
  }
  return emit(Op::kDot, Shape{1, nodes_[a].shape.cols}, {a, b});
}

NodeId Tape::softplus(NodeId a) { check_node(a); return emit(Op::kSoftplus, nodes_[a].shape, {a}); }
NodeId Tape::relu(NodeId a) { check_node(a); return emit(Op::kRelu, nodes_[a].shape, {a}); }
NodeId Tape::logistic(NodeId a) { check_node(a); return emit(Op::kLogistic, nodes_[a].shape, {a}); }
NodeId Tape::log(NodeId a) { check_node(a); return emit(Op::kLog, nodes_[a].shape, {a}); }
NodeId Tape::negate(NodeId a) { check_node(a); return emit(Op::kNegate, nodes_[a].shape, {a}); }
NodeId Tape::reciprocal(NodeId a) { check_node(a); return emit(Op::kReciprocal, nodes_[a].shape, {a}); }
NodeId Tape::square(NodeId a) { check_node(a); return emit(Op::kSquare, nodes_[a].shape, {a}); }
NodeId Tape::step(NodeId a) { check_node(a); return emit(Op::kStep, nodes_[a].shape, {a}); }
NodeId Tape::sum(NodeId a) { check_node(a); return emit(Op::kSum, Shape{1, 1}, {a}); }

void Tape::bind(NodeId leaf, std::span<const double> values) {
  check_node(leaf);
  Node& n = nodes_[leaf];
  if (n.op != Op::kParameter && n.op != Op::kInput) {
    throw ShapeError(fmt::format("bind: node {} ({}) is not a leaf", leaf, op_name(n.op)), leaf);
  }
  if (static_cast<std::int64_t>(values.size()) != n.shape.size()) {
    throw ShapeError(fmt::format("bind: node {} expects {} values, got {}", leaf,
                                 n.shape.size(), values.size()),
                     leaf);
  }
  std::memcpy(values_.data() + n.offset, values.data(), values.size() * sizeof(double));
  bound_[leaf] = 1;
}

void Tape::bind(NodeId leaf, double value) { bind(leaf, std::span<const double>(&value, 1)); }

std::span<const double> Tape::value(NodeId id) const {
  check_node(id);
  const Node& n = nodes_[id];
  return {values_.data() + n.offset, static_cast<std::size_t>(n.shape.size())};
}

double Tape::scalar_value(NodeId id) const {
  check_node(id);
  if (!nodes_[id].shape.is_scalar()) {
    throw ShapeError(fmt::format("node {} is not scalar", id), id);
  }
  return values_[nodes_[id].offset];
}

std::span<const double> Tape::adjoint(NodeId id) const {
  check_node(id);
  const Node& n = nodes_[id];
  return {adjoints_.data() + n.offset, static_cast<std::size_t>(n.shape.size())};
}

Shape Tape::shape(NodeId id) const {
  check_node(id);
  return nodes_[id].shape;
}

Op Tape::op(NodeId id) const {
  check_node(id);
  return nodes_[id].op;
}

void Tape::forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    double* out = values_.data() + n.offset;
    const auto parents = parents_of(n);
    auto pval = [&](int k) -> const double* {
      return values_.data() + nodes_[parents[k]].offset;
    };
    auto pshape = [&](int k) -> const Shape& { return nodes_[parents[k]].shape; };

    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParameter:
      case Op::kInput:
        if (!bound_[i]) {
          throw ShapeError(fmt::format("forward: leaf node {} ({}) has no binding",
                                       i, op_name(n.op)),
                           static_cast<NodeId>(i));
        }
        break;
      case Op::kAdd: {
        const Shape &sa = pshape(0), &sb = pshape(1);
        ArrMap o(out, n.shape.size());
        ConstArrMap a(pval(0), sa.size());
        ConstArrMap b(pval(1), sb.size());
        switch (classify_broadcast(sa, sb)) {
          case Broadcast::kNone: o = a + b; break;
          case Broadcast::kLeftScalar: o = a(0) + b; break;
          case Broadcast::kRightScalar: o = a + b(0); break;
          case Broadcast::kLeftColumn: {
            MatMap om(out, n.shape.rows, n.shape.cols);
            om = ConstMatMap(pval(1), sb.rows, sb.cols).colwise() +
                 Eigen::Map<const Eigen::VectorXd>(pval(0), sa.rows);
            break;
          }
          case Broadcast::kRightColumn: {
            MatMap om(out, n.shape.rows, n.shape.cols);
            om = ConstMatMap(pval(0), sa.rows, sa.cols).colwise() +
                 Eigen::Map<const Eigen::VectorXd>(pval(1), sb.rows);
            break;
          }
        }
        break;
      }
      case Op::kAddN: {
        ArrMap o(out, n.shape.size());
        o = ConstArrMap(pval(0), n.shape.size());
        for (std::size_t k = 1; k < parents.size(); ++k) {
          o += ConstArrMap(pval(static_cast<int>(k)), n.shape.size());
        }
        break;
      }
      case Op::kMultiply: {
        const Shape &sa = pshape(0), &sb = pshape(1);
        ArrMap o(out, n.shape.size());
        ConstArrMap a(pval(0), sa.size());
        ConstArrMap b(pval(1), sb.size());
        switch (classify_broadcast(sa, sb)) {
          case Broadcast::kNone: o = a * b; break;
          case Broadcast::kLeftScalar: o = a(0) * b; break;
          case Broadcast::kRightScalar: o = a * b(0); break;
          case Broadcast::kLeftColumn: {
            MatMap om(out, n.shape.rows, n.shape.cols);
            om.array() = ConstMatMap(pval(1), sb.rows, sb.cols).array().colwise() *
                         ConstArrMap(pval(0), sa.rows);
            break;
          }
          case Broadcast::kRightColumn: {
            MatMap om(out, n.shape.rows, n.shape.cols);
            om.array() = ConstMatMap(pval(0), sa.rows, sa.cols).array().colwise() *
                         ConstArrMap(pval(1), sb.rows);
            break;
          }
        }
        break;
      }
      case Op::kMatVec: {
        const Shape &sm = pshape(0), &sv = pshape(1);
        ConstMatMap m(pval(0), sm.rows, sm.cols);
        ConstMatMap v(pval(1), sv.rows, sv.cols);
        MatMap o(out, n.shape.rows, n.shape.cols);
        if (n.transpose) {
          o.noalias() = m.transpose() * v;
        } else {
          o.noalias() = m * v;
        }
        break;
      }
      case Op::kDot: {
        const Shape& sa = pshape(0);
        ConstMatMap a(pval(0), sa.rows, sa.cols);
        ConstMatMap b(pval(1), sa.rows, sa.cols);
        MatMap o(out, 1, sa.cols);
        o = (a.array() * b.array()).colwise().sum().matrix();
        break;
      }
      case Op::kSoftplus: {
        const double* a = pval(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) out[k] = softplus_scalar(a[k]);
        break;
      }
      case Op::kRelu: {
        const double* a = pval(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) out[k] = a[k] > 0.0 ? a[k] : 0.0;
        break;
      }
      case Op::kLogistic: {
        const double* a = pval(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) out[k] = logistic_scalar(a[k]);
        break;
      }
      case Op::kLog: {
        const double* a = pval(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) out[k] = std::log(a[k]);
        break;
      }
      case Op::kNegate: {
        ArrMap(out, n.shape.size()) = -ConstArrMap(pval(0), n.shape.size());
        break;
      }
      case Op::kReciprocal: {
        ArrMap(out, n.shape.size()) = ConstArrMap(pval(0), n.shape.size()).inverse();
        break;
      }
      case Op::kSquare: {
        ConstArrMap a(pval(0), n.shape.size());
        ArrMap(out, n.shape.size()) = a * a;
        break;
      }
      case Op::kStep: {
        const double* a = pval(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) out[k] = a[k] > 0.0 ? 1.0 : 0.0;
        break;
      }
      case Op::kSum: {
        out[0] = ConstArrMap(pval(0), pshape(0).size()).sum();
        break;
      }
    }
  }
}

void Tape::backward(NodeId seed) {
  check_node(seed);
  if (!nodes_[seed].shape.is_scalar()) {
    throw ShapeError(fmt::format("backward: seed node {} is not scalar", seed), seed);
  }
  std::fill(adjoints_.begin(), adjoints_.end(), 0.0);
  std::fill(touched_.begin(), touched_.end(), 0);
  adjoints_[nodes_[seed].offset] = 1.0;
  touched_[seed] = 1;

  for (std::int32_t i = seed; i >= 0; --i) {
    if (!touched_[i]) continue;
    const Node& n = nodes_[i];
    const double* up = adjoints_.data() + n.offset;
    const auto parents = parents_of(n);
    auto pval = [&](int k) -> const double* {
      return values_.data() + nodes_[parents[k]].offset;
    };
    auto padj = [&](int k) -> double* {
      touched_[parents[k]] = 1;
      return adjoints_.data() + nodes_[parents[k]].offset;
    };
    auto pshape = [&](int k) -> const Shape& { return nodes_[parents[k]].shape; };

    switch (n.op) {
      case Op::kConstant:
      case Op::kParameter:
      case Op::kInput:
        break;
      case Op::kAdd: {
        const Shape &sa = pshape(0), &sb = pshape(1);
        ConstArrMap u(up, n.shape.size());
        switch (classify_broadcast(sa, sb)) {
          case Broadcast::kNone:
            ArrMap(padj(0), sa.size()) += u;
            ArrMap(padj(1), sb.size()) += u;
            break;
          case Broadcast::kLeftScalar:
            padj(0)[0] += u.sum();
            ArrMap(padj(1), sb.size()) += u;
            break;
          case Broadcast::kRightScalar:
            ArrMap(padj(0), sa.size()) += u;
            padj(1)[0] += u.sum();
            break;
          case Broadcast::kLeftColumn: {
            ConstMatMap um(up, n.shape.rows, n.shape.cols);
            Eigen::Map<Eigen::VectorXd>(padj(0), sa.rows) += um.rowwise().sum();
            ArrMap(padj(1), sb.size()) += u;
            break;
          }
          case Broadcast::kRightColumn: {
            ConstMatMap um(up, n.shape.rows, n.shape.cols);
            ArrMap(padj(0), sa.size()) += u;
            Eigen::Map<Eigen::VectorXd>(padj(1), sb.rows) += um.rowwise().sum();
            break;
          }
        }
        break;
      }
      case Op::kAddN: {
        ConstArrMap u(up, n.shape.size());
        for (std::size_t k = 0; k < parents.size(); ++k) {
          ArrMap(padj(static_cast<int>(k)), n.shape.size()) += u;
        }
        break;
      }
      case Op::kMultiply: {
        const Shape &sa = pshape(0), &sb = pshape(1);
        ConstArrMap u(up, n.shape.size());
        ConstArrMap a(pval(0), sa.size());
        ConstArrMap b(pval(1), sb.size());
        switch (classify_broadcast(sa, sb)) {
          case Broadcast::kNone:
            ArrMap(padj(0), sa.size()) += u * b;
            ArrMap(padj(1), sb.size()) += u * a;
            break;
          case Broadcast::kLeftScalar:
            padj(0)[0] += (u * b).sum();
            ArrMap(padj(1), sb.size()) += a(0) * u;
            break;
          case Broadcast::kRightScalar:
            ArrMap(padj(0), sa.size()) += b(0) * u;
            padj(1)[0] += (u * a).sum();
            break;
          case Broadcast::kLeftColumn: {
            ConstMatMap um(up, n.shape.rows, n.shape.cols);
            ConstMatMap bm(pval(1), sb.rows, sb.cols);
            Eigen::Map<Eigen::VectorXd>(padj(0), sa.rows) +=
                (um.array() * bm.array()).rowwise().sum().matrix();
            MatMap(padj(1), sb.rows, sb.cols).array() +=
                um.array().colwise() * ConstArrMap(pval(0), sa.rows);
            break;
          }
          case Broadcast::kRightColumn: {
            ConstMatMap um(up, n.shape.rows, n.shape.cols);
            ConstMatMap am(pval(0), sa.rows, sa.cols);
            MatMap(padj(0), sa.rows, sa.cols).array() +=
                um.array().colwise() * ConstArrMap(pval(1), sb.rows);
            Eigen::Map<Eigen::VectorXd>(padj(1), sb.rows) +=
                (um.array() * am.array()).rowwise().sum().matrix();
            break;
          }
        }
        break;
      }
      case Op::kMatVec: {
        const Shape &sm = pshape(0), &sv = pshape(1);
        ConstMatMap u(up, n.shape.rows, n.shape.cols);
        ConstMatMap m(pval(0), sm.rows, sm.cols);
        ConstMatMap v(pval(1), sv.rows, sv.cols);
        MatMap madj(padj(0), sm.rows, sm.cols);
        MatMap vadj(padj(1), sv.rows, sv.cols);
        if (n.transpose) {
          // y = M^T v:  dM += v u^T,  dv += M u
          madj.noalias() += v * u.transpose();
          vadj.noalias() += m * u;
        } else {
          // y = M v:  dM += u v^T,  dv += M^T u
          madj.noalias() += u * v.transpose();
          vadj.noalias() += m.transpose() * u;
        }
        break;
      }
      case Op::kDot: {
        const Shape& sa = pshape(0);
        const double* av = pval(0);
        const double* bv = pval(1);
        double* ga = padj(0);
        double* gb = padj(1);
        for (int c = 0; c < sa.cols; ++c) {
          const double ue = up[c];
          const std::int64_t base = std::int64_t{c} * sa.rows;
          for (int r = 0; r < sa.rows; ++r) {
            ga[base + r] += ue * bv[base + r];
            gb[base + r] += ue * av[base + r];
          }
        }
        break;
      }
      case Op::kSoftplus: {
        // d softplus = logistic
        const double* a = pval(0);
        double* g = padj(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) g[k] += up[k] * logistic_scalar(a[k]);
        break;
      }
      case Op::kRelu: {
        // derivative at exactly 0 is 0
        const double* a = pval(0);
        double* g = padj(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) {
          if (a[k] > 0.0) g[k] += up[k];
        }
        break;
      }
      case Op::kLogistic: {
        const double* y = values_.data() + n.offset;
        double* g = padj(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) g[k] += up[k] * y[k] * (1.0 - y[k]);
        break;
      }
      case Op::kLog: {
        const double* a = pval(0);
        double* g = padj(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) g[k] += up[k] / a[k];
        break;
      }
      case Op::kNegate: {
        ArrMap(padj(0), n.shape.size()) -= ConstArrMap(up, n.shape.size());
        break;
      }
      case Op::kReciprocal: {
        const double* y = values_.data() + n.offset;
        double* g = padj(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) g[k] -= up[k] * y[k] * y[k];
        break;
      }
      case Op::kSquare: {
        const double* a = pval(0);
        double* g = padj(0);
        for (std::int64_t k = 0; k < n.shape.size(); ++k) g[k] += 2.0 * up[k] * a[k];
        break;
      }
      case Op::kStep:
        // flat everywhere by definition
        break;
      case Op::kSum: {
        ArrMap(padj(0), pshape(0).size()) += up[0];
        break;
      }
    }
  }
}

double grad_check(Tape& tape, NodeId seed, std::span<const NodeId> leaves,
                  double step) {
  if (step <= 0.0) throw UsageError("grad_check: step must be positive");
  tape.forward();
  tape.backward(seed);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (NodeId leaf : leaves) {
    auto adj = tape.adjoint(leaf);
    analytic.emplace_back(adj.begin(), adj.end());
  }

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const NodeId leaf = leaves[li];
    std::vector<double> x(tape.value(leaf).begin(), tape.value(leaf).end());
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double x0 = x[k];
      x[k] = x0 + step;
      tape.bind(leaf, x);
      tape.forward();
      const double fp = tape.scalar_value(seed);
      x[k] = x0 - step;
      tape.bind(leaf, x);
      tape.forward();
      const double fm = tape.scalar_value(seed);
      x[k] = x0;
      tape.bind(leaf, x);
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[li][k]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[li][k] - numeric) / denom);
    }
  }
  tape.forward();  // restore values for the unperturbed point
  return worst;
}

}  // namespace litens::ad

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "litens/errors.hpp"

namespace litens::ad {

// Reverse-mode differentiation over an explicitly built computation graph.
//
// Every node value is a dense column-major (rows x cols) block of doubles.
// The graph is written in terms of scalars and vectors; the column count is
// an evaluation batch. Binding an input leaf with B columns evaluates the
// same expression at B points simultaneously, with per-column semantics
// identical to the B=1 case. Parameters and constants stay single-column and
// broadcast across the batch.
//
// Scalar objectives that contain input-gradient vectors of a model are
// handled by building those gradients into the graph analytically (see
// mlp_graph.hpp), so one reverse sweep differentiates them with respect to
// the parameters.

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kInput,
  kAdd,         // binary, broadcasting
  kAddN,        // n-ary, equal shapes
  kMultiply,    // elementwise, broadcasting
  kMatVec,      // matrix (xB columns); optional transpose of the matrix
  kDot,         // columnwise dot of two equal blocks -> 1xB
  kSoftplus,
  kRelu,
  kLogistic,
  kLog,
  kNegate,
  kReciprocal,
  kSquare,
  kStep,        // 1[x > 0], 0 at 0; derivative defined as 0 everywhere
  kSum,         // all entries -> scalar
};

std::string_view op_name(Op op);

struct Shape {
  int rows = 1;
  int cols = 1;

  bool operator==(const Shape&) const = default;
  bool is_scalar() const { return rows == 1 && cols == 1; }
  std::int64_t size() const { return std::int64_t{1} * rows * cols; }
};

using NodeId = std::int32_t;
inline constexpr NodeId kInvalidNode = -1;

// The value/adjoint arenas live at a fixed 64-byte alignment. Eigen's
// kernels peel to an alignment boundary at run time, so reduction order,
// and with it the low bits of every result, would otherwise depend on where
// the allocator happened to place the arena.
template <class T>
struct ArenaAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  ArenaAllocator() = default;
  template <class U>
  ArenaAllocator(const ArenaAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t n) {
    ::operator delete(p, n * sizeof(T), kAlign);
  }

  friend bool operator==(const ArenaAllocator&, const ArenaAllocator&) {
    return true;
  }
};

class Tape {
 public:
  // --- graph construction -------------------------------------------------
  NodeId constant(double value);
  NodeId parameter(Shape shape);
  NodeId input(Shape shape);

  NodeId add(NodeId a, NodeId b);
  NodeId add_n(std::span<const NodeId> terms);
  NodeId multiply(NodeId a, NodeId b);
  NodeId matvec(NodeId matrix, NodeId vec, bool transpose_matrix = false);
  NodeId dot(NodeId a, NodeId b);
  NodeId softplus(NodeId a);
  NodeId relu(NodeId a);
  NodeId logistic(NodeId a);
  NodeId log(NodeId a);
  NodeId negate(NodeId a);
  NodeId reciprocal(NodeId a);
  NodeId square(NodeId a);
  NodeId step(NodeId a);
  NodeId sum(NodeId a);

  // --- binding and execution ----------------------------------------------
  // Leaves must be bound with exactly their declared shape before forward().
  void bind(NodeId leaf, std::span<const double> values);
  void bind(NodeId leaf, double value);

  // Computes every node value in topological order. Deterministic for fixed
  // bindings; two passes produce bitwise-identical results.
  void forward();

  // Reverse sweep from a scalar seed node (adjoint 1); accumulates exact
  // adjoints for every node the seed depends on. Requires forward() first.
  void backward(NodeId seed);

  std::span<const double> value(NodeId id) const;
  double scalar_value(NodeId id) const;
  std::span<const double> adjoint(NodeId id) const;

  Shape shape(NodeId id) const;
  Op op(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::span<const NodeId> parameter_leaves() const { return parameter_leaves_; }
  std::span<const NodeId> input_leaves() const { return input_leaves_; }

 private:
  struct Node {
    Op op;
    bool transpose = false;
    Shape shape;
    std::int32_t first_parent = 0;
    std::int32_t parent_count = 0;
    std::int64_t offset = 0;  // into the value/adjoint arenas
  };

  NodeId emit(Op op, Shape shape, std::initializer_list<NodeId> parents,
              bool transpose = false);
  NodeId emit(Op op, Shape shape, std::span<const NodeId> parents,
              bool transpose = false);
  void check_node(NodeId id) const;
  std::span<const NodeId> parents_of(const Node& n) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> parent_pool_;
  std::vector<double, ArenaAllocator<double>> values_;
  std::vector<double, ArenaAllocator<double>> adjoints_;
  std::vector<NodeId> parameter_leaves_;
  std::vector<NodeId> input_leaves_;
  std::vector<char> bound_;
  std::vector<char> touched_;  // reached by the current backward sweep
};

// Central finite differences against the reverse-mode adjoints.
//
// Runs forward/backward once, then re-evaluates the scalar seed with each
// component of each listed leaf displaced by +/-step. Returns the worst
// relative error, with denominator max(|analytic|, |numeric|, 1e-8). Leaf
// bindings are restored before returning.
double grad_check(Tape& tape, NodeId seed, std::span<const NodeId> leaves,
                  double step);

}  // namespace litens::ad

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "xmodal/matrix.hpp"

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every operation as a Node in insertion order, which is a
// topological order. `Tape::backward` walks the nodes once in reverse and
// adds the resulting gradients into each node's persistent gradient, so
// calling it twice without `zero_grad` doubles every gradient.
//
// Nodes flagged constant (and nodes whose inputs are all constant) carry no
// gradient flow. A tape is confined to one thread.
namespace xmodal::ad {

enum class OpKind {
  kLeaf,
  kMatMul,
  kAddRowVec,
  kRelu,
  kConcatCols,
  kSqPairDist,
  kSoftmaxCE,
  kHinge,
  kAdd,
  kScale,
  kSum,
  kMean,
  kAffine,
  kGatherRows,
  kNormalizeRows,
};

// Number of parent nodes an op consumes.
int arity(OpKind op) noexcept;
const char* op_name(OpKind op) noexcept;

struct Node {
  Matrix value;
  Matrix grad;
  OpKind op = OpKind::kLeaf;
  std::array<std::size_t, 2> parents{};
  bool constant = false;

  // Op payloads.
  std::vector<std::size_t> indices;  // labels (softmax_ce) or row indices (gather)
  Matrix aux;                        // softmax probabilities, affine coefficients, row norms
  double scalar = 0.0;               // scale factor
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input.
  Var leaf(Matrix value);
  // Input excluded from gradient flow.
  Var constant(Matrix value);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every non-constant node
  // recorded before `loss`. Throws ShapeError if loss is not 1x1.
  void backward(Var loss);
  void zero_grad();

  // Appends a node; used by the op functions.
  Var push(Node n);

 private:
  std::vector<Node> nodes_;
};

// Operations. Each throws ShapeError on incompatible operands.

Var matmul(Var a, Var b);
// Adds the 1xn row `b` to every row of `a`.
Var add_rowvec(Var a, Var b);
Var relu(Var a);
Var concat_cols(Var a, Var b);
// Row i holds sum_j (a_ij - b_ij)^2, shape m x 1.
Var sq_pair_dist(Var a, Var b);
// Mean over rows of -log softmax(logits)_label, shape 1x1.
Var softmax_ce(Var logits, std::span<const std::size_t> labels);
// Elementwise max(0, x); subgradient 0 at x = 0.
Var hinge(Var a);
Var add(Var a, Var b);
Var scale(Var a, double c);
Var sum(Var a);
Var mean(Var a);
// out = coef .* a + offset, with constant coef and offset of a's shape.
Var affine(Var a, Matrix coef, Matrix offset);
Var gather_rows(Var a, std::span<const std::size_t> indices);
// Scales each row to unit Euclidean length. Zero rows stay zero.
Var normalize_rows(Var a);

// Scalar graph over a list of leaf inputs.
using ScalarGraph = std::function<Var(Tape&, std::span<const Var>)>;

// Maximum relative error between tape gradients and central differences
// (f(x+eps e) - f(x-eps e)) / (2 eps) over every entry of every input.
// The relative error denominator is max(|analytic|, |numeric|, 1e-8).
// Throws std::invalid_argument for eps <= 0 and NumericError if f is not
// finite at any probe point.
double grad_check(const ScalarGraph& f, const std::vector<Matrix>& inputs, double eps = 1e-5);
double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& x, double eps = 1e-5);

}  // namespace xmodal::ad

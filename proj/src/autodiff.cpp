#include "xmodal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "xmodal/errors.hpp"

namespace xmodal::ad {

int arity(OpKind op) noexcept {
  switch (op) {
    case OpKind::kLeaf:
      return 0;
    case OpKind::kMatMul:
    case OpKind::kAddRowVec:
    case OpKind::kConcatCols:
    case OpKind::kSqPairDist:
    case OpKind::kAdd:
      return 2;
    default:
      return 1;
  }
}

const char* op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddRowVec: return "add_rowvec";
    case OpKind::kRelu: return "relu";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSqPairDist: return "sq_pair_dist";
    case OpKind::kSoftmaxCE: return "softmax_ce";
    case OpKind::kHinge: return "hinge";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kAffine: return "affine";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kNormalizeRows: return "normalize_rows";
  }
  return "?";
}

const Matrix& Var::value() const { return tape->node(id).value; }
const Matrix& Var::grad() const { return tape->node(id).grad; }

Var Tape::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.constant = true;
  return push(std::move(n));
}

Var Tape::push(Node n) {
  if (n.op != OpKind::kLeaf) {
    bool all_const = true;
    for (int i = 0; i < arity(n.op); ++i) {
      all_const = all_const && nodes_.at(n.parents[i]).constant;
    }
    n.constant = all_const;
  }
  n.grad = Matrix(n.value.rows, n.value.cols);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::zero_grad() {
  for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
}

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

Matrix& slot(std::vector<Matrix>& pass, const std::vector<Node>& nodes, std::size_t id) {
  if (pass[id].data.empty() && nodes[id].value.size() > 0) {
    pass[id] = Matrix(nodes[id].value.rows, nodes[id].value.cols);
  }
  return pass[id];
}

}  // namespace

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss is on another tape");
  const Node& root = nodes_.at(loss.id);
  if (root.value.rows != 1 || root.value.cols != 1) {
    throw ShapeError("backward: root must be 1x1, got " + root.value.shape_str());
  }
  if (root.constant) return;

  // Per-pass gradients; added into the persistent ones at the end.
  std::vector<Matrix> pass(loss.id + 1);
  pass[loss.id] = Matrix(1, 1, 1.0);

  for (std::size_t k = loss.id + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (n.constant || n.op == OpKind::kLeaf || pass[k].data.empty()) continue;
    const Matrix& g = pass[k];
    const std::size_t pa = n.parents[0];
    const std::size_t pb = n.parents[1];
    const bool need_a = !nodes_[pa].constant;
    const bool need_b = arity(n.op) == 2 && !nodes_[pb].constant;

    switch (n.op) {
      case OpKind::kMatMul: {
        const Matrix& a = nodes_[pa].value;
        const Matrix& b = nodes_[pb].value;
        if (need_a) add_into(slot(pass, nodes_, pa), matmul_bt(g, b));
        if (need_b) add_into(slot(pass, nodes_, pb), matmul_at(a, g));
        break;
      }
      case OpKind::kAddRowVec: {
        if (need_a) add_into(slot(pass, nodes_, pa), g);
        if (need_b) {
          Matrix& gb = slot(pass, nodes_, pb);
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += g(r, c);
          }
        }
        break;
      }
      case OpKind::kRelu:
      case OpKind::kHinge: {
        if (!need_a) break;
        const Matrix& x = nodes_[pa].value;
        Matrix& ga = slot(pass, nodes_, pa);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x.data[i] > 0.0) ga.data[i] += g.data[i];
        }
        break;
      }
      case OpKind::kConcatCols: {
        const std::size_t p = nodes_[pa].value.cols;
        const std::size_t q = nodes_[pb].value.cols;
        if (need_a) {
          Matrix& ga = slot(pass, nodes_, pa);
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < p; ++c) ga(r, c) += g(r, c);
          }
        }
        if (need_b) {
          Matrix& gb = slot(pass, nodes_, pb);
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < q; ++c) gb(r, c) += g(r, p + c);
          }
        }
        break;
      }
      case OpKind::kSqPairDist: {
        const Matrix& a = nodes_[pa].value;
        const Matrix& b = nodes_[pb].value;
        Matrix* ga = need_a ? &slot(pass, nodes_, pa) : nullptr;
        Matrix* gb = need_b ? &slot(pass, nodes_, pb) : nullptr;
        for (std::size_t r = 0; r < a.rows; ++r) {
          const double gr = 2.0 * g.data[r];
          for (std::size_t c = 0; c < a.cols; ++c) {
            const double d = gr * (a(r, c) - b(r, c));
            if (ga) (*ga)(r, c) += d;
            if (gb) (*gb)(r, c) -= d;
          }
        }
        break;
      }
      case OpKind::kSoftmaxCE: {
        if (!need_a) break;
        const Matrix& p = n.aux;
        Matrix& ga = slot(pass, nodes_, pa);
        const double s = g.data[0] / static_cast<double>(p.rows);
        for (std::size_t r = 0; r < p.rows; ++r) {
          for (std::size_t c = 0; c < p.cols; ++c) {
            const double onehot = (c == n.indices[r]) ? 1.0 : 0.0;
            ga(r, c) += s * (p(r, c) - onehot);
          }
        }
        break;
      }
      case OpKind::kAdd: {
        if (need_a) add_into(slot(pass, nodes_, pa), g);
        if (need_b) add_into(slot(pass, nodes_, pb), g);
        break;
      }
      case OpKind::kScale: {
        if (!need_a) break;
        Matrix& ga = slot(pass, nodes_, pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += n.scalar * g.data[i];
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        if (!need_a) break;
        Matrix& ga = slot(pass, nodes_, pa);
        double s = g.data[0];
        if (n.op == OpKind::kMean) s /= static_cast<double>(ga.size());
        for (double& v : ga.data) v += s;
        break;
      }
      case OpKind::kAffine: {
        if (!need_a) break;
        Matrix& ga = slot(pass, nodes_, pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += n.aux.data[i] * g.data[i];
        break;
      }
      case OpKind::kGatherRows: {
        if (!need_a) break;
        Matrix& ga = slot(pass, nodes_, pa);
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          auto src = g.row(r);
          auto dst = ga.row(n.indices[r]);
          for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
        }
        break;
      }
      case OpKind::kNormalizeRows: {
        if (!need_a) break;
        const Matrix& y = n.value;
        Matrix& ga = slot(pass, nodes_, pa);
        for (std::size_t r = 0; r < y.rows; ++r) {
          const double norm = n.aux.data[r];
          if (norm == 0.0) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols; ++c) dot += y(r, c) * g(r, c);
          for (std::size_t c = 0; c < y.cols; ++c) {
            ga(r, c) += (g(r, c) - y(r, c) * dot) / norm;
          }
        }
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }

  for (std::size_t k = 0; k <= loss.id; ++k) {
    if (!nodes_[k].constant && !pass[k].data.empty()) add_into(nodes_[k].grad, pass[k]);
  }
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Node n;
  n.value = xmodal::matmul(a.value(), b.value());
  n.op = OpKind::kMatMul;
  n.parents = {a.id, b.id};
  return a.tape->push(std::move(n));
}

Var add_rowvec(Var a, Var b) {
  check_same_tape(a, b, "add_rowvec");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows != 1 || bv.cols != av.cols) {
    throw ShapeError("add_rowvec: cannot add " + bv.shape_str() + " to rows of " +
                     av.shape_str());
  }
  Node n;
  n.value = av;
  for (std::size_t r = 0; r < av.rows; ++r) {
    for (std::size_t c = 0; c < av.cols; ++c) n.value(r, c) += bv.data[c];
  }
  n.op = OpKind::kAddRowVec;
  n.parents = {a.id, b.id};
  return a.tape->push(std::move(n));
}

namespace {

Var rectify(Var a, OpKind op) {
  Node n;
  n.value = a.value();
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  n.op = op;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

}  // namespace

Var relu(Var a) { return rectify(a, OpKind::kRelu); }
Var hinge(Var a) { return rectify(a, OpKind::kHinge); }

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b, "concat_cols");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows != bv.rows) {
    throw ShapeError("concat_cols: row counts differ (" + av.shape_str() + ", " +
                     bv.shape_str() + ")");
  }
  Node n;
  n.value = Matrix(av.rows, av.cols + bv.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    auto out = n.value.row(r);
    std::copy(av.row(r).begin(), av.row(r).end(), out.begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), out.begin() + av.cols);
  }
  n.op = OpKind::kConcatCols;
  n.parents = {a.id, b.id};
  return a.tape->push(std::move(n));
}

Var sq_pair_dist(Var a, Var b) {
  check_same_tape(a, b, "sq_pair_dist");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) {
    throw ShapeError("sq_pair_dist: shapes differ (" + av.shape_str() + ", " +
                     bv.shape_str() + ")");
  }
  Node n;
  n.value = Matrix(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols; ++c) {
      const double d = av(r, c) - bv(r, c);
      s += d * d;
    }
    n.value.data[r] = s;
  }
  n.op = OpKind::kSqPairDist;
  n.parents = {a.id, b.id};
  return a.tape->push(std::move(n));
}

Var softmax_ce(Var logits, std::span<const std::size_t> labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows) {
    throw ShapeError("softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                     z.shape_str() + " logits");
  }
  if (z.rows == 0) throw ShapeError("softmax_ce: empty batch");
  Node n;
  n.aux = Matrix(z.rows, z.cols);
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows; ++r) {
    if (labels[r] >= z.cols) {
      throw std::out_of_range("softmax_ce: label " + std::to_string(labels[r]) +
                              " outside [0, " + std::to_string(z.cols) + ")");
    }
    auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < z.cols; ++c) {
      const double e = std::exp(row[c] - mx);
      n.aux(r, c) = e;
      denom += e;
    }
    for (std::size_t c = 0; c < z.cols; ++c) n.aux(r, c) /= denom;
    total += std::log(denom) - (row[labels[r]] - mx);
  }
  n.value = Matrix(1, 1, total / static_cast<double>(z.rows));
  n.indices.assign(labels.begin(), labels.end());
  n.op = OpKind::kSoftmaxCE;
  n.parents = {logits.id, 0};
  return logits.tape->push(std::move(n));
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: shapes differ (" + a.value().shape_str() + ", " +
                     b.value().shape_str() + ")");
  }
  Node n;
  n.value = a.value();
  add_into(n.value, b.value());
  n.op = OpKind::kAdd;
  n.parents = {a.id, b.id};
  return a.tape->push(std::move(n));
}

Var scale(Var a, double c) {
  Node n;
  n.value = a.value();
  for (double& v : n.value.data) v *= c;
  n.scalar = c;
  n.op = OpKind::kScale;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  Node n;
  n.value = Matrix(1, 1, s);
  n.op = OpKind::kSum;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty operand");
  double s = 0.0;
  for (double v : a.value().data) s += v;
  Node n;
  n.value = Matrix(1, 1, s / static_cast<double>(a.value().size()));
  n.op = OpKind::kMean;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

Var affine(Var a, Matrix coef, Matrix offset) {
  const Matrix& av = a.value();
  if (!coef.same_shape(av) || !offset.same_shape(av)) {
    throw ShapeError("affine: coefficient shapes " + coef.shape_str() + ", " +
                     offset.shape_str() + " do not match " + av.shape_str());
  }
  Node n;
  n.value = Matrix(av.rows, av.cols);
  for (std::size_t i = 0; i < av.size(); ++i) {
    n.value.data[i] = coef.data[i] * av.data[i] + offset.data[i];
  }
  n.aux = std::move(coef);
  n.op = OpKind::kAffine;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Node n;
  n.value = xmodal::gather_rows(a.value(), indices);
  n.indices.assign(indices.begin(), indices.end());
  n.op = OpKind::kGatherRows;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

Var normalize_rows(Var a) {
  const Matrix& av = a.value();
  Node n;
  n.value = av;
  n.aux = Matrix(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v * v;
    const double norm = std::sqrt(s);
    n.aux.data[r] = norm;
    if (norm > 0.0) {
      for (double& v : n.value.row(r)) v /= norm;
    }
  }
  n.op = OpKind::kNormalizeRows;
  n.parents = {a.id, 0};
  return a.tape->push(std::move(n));
}

double grad_check(const ScalarGraph& f, const std::vector<Matrix>& inputs, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");

  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(t.leaf(x));
    const double v = f(t, vars).value().data.at(0);
    if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
    return v;
  };

  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  Var out = f(tape, vars);
  if (!std::isfinite(out.value().data.at(0))) {
    throw NumericError("grad_check: function value is not finite");
  }
  tape.backward(out);

  double worst = 0.0;
  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& analytic = vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data[i];
      probe[k].data[i] = orig + eps;
      const double fp = evaluate(probe);
      probe[k].data[i] = orig - eps;
      const double fm = evaluate(probe);
      probe[k].data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic.data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& x, double eps) {
  return grad_check([&](Tape& t, std::span<const Var> v) { return f(t, v[0]); },
                    std::vector<Matrix>{x}, eps);
}

}  // namespace xmodal::ad

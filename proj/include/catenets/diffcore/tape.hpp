#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation of a forward pass as a node holding its
// value. backward() then walks the nodes in reverse creation order and
// accumulates adjoints. Only the primitives needed by dense feed-forward
// networks are supported; each has a hand-written adjoint below.

#include "catenets/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace catenets::diff {

/// Handle to a node on a Tape. Cheap to copy; only valid for the tape that made it.
struct Var {
  static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

enum class Op : std::uint8_t {
  Leaf,
  Matmul,      // a * b
  MatmulTN,    // a^T * b
  AddRow,      // a + broadcast row vector b
  Add,
  Sub,
  Mul,         // elementwise
  Scale,       // scalar * a
  Elu,
  Sigmoid,
  ConcatCols,
  RowSlice,    // rows [offset, offset + count)
  SumSquares,  // -> 1x1
  Mse,         // mean squared error -> 1x1
  Bce,         // mean binary cross-entropy with clamping -> 1x1
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Matmul: return "matmul";
    case Op::MatmulTN: return "matmul_tn";
    case Op::AddRow: return "add_row";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Elu: return "elu";
    case Op::Sigmoid: return "sigmoid";
    case Op::ConcatCols: return "concat_cols";
    case Op::RowSlice: return "row_slice";
    case Op::SumSquares: return "sum_squares";
    case Op::Mse: return "mse";
    case Op::Bce: return "bce";
  }
  return "unknown";
}

inline constexpr double kBceClamp = 1e-7;

class Tape {
 public:
  Tape() { nodes_.reserve(128); }

  Var constant(Matrix value) { return push(Op::Leaf, {}, std::move(value), false); }
  Var parameter(Matrix value) { return push(Op::Leaf, {}, std::move(value), true); }

  const Matrix& value(Var v) const { return node(v).value; }
  double scalar(Var v) const {
    const auto& m = node(v).value;
    if (m.size() != 1) throw ShapeError("scalar(): node is " + shape_str(m));
    return m(0, 0);
  }

  /// Adjoint of `v` after backward(). Zero matrix when nothing flowed into it.
  Matrix grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows())
      throw ShapeError("matmul: " + shape_str(A) + " * " + shape_str(B));
    Matrix out;
    if (A.cols() == 0)
      out = Matrix::Zero(A.rows(), B.cols());
    else
      out.noalias() = A * B;
    return push(Op::Matmul, {a.id, b.id}, std::move(out));
  }

  Var matmul_tn(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows())
      throw ShapeError("matmul_tn: " + shape_str(A) + "^T * " + shape_str(B));
    Matrix out;
    if (A.rows() == 0)
      out = Matrix::Zero(A.cols(), B.cols());
    else
      out.noalias() = A.transpose() * B;
    return push(Op::MatmulTN, {a.id, b.id}, std::move(out));
  }

  Var add_row(Var a, Var row) {
    const Matrix& A = value(a);
    const Matrix& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols())
      throw ShapeError("add_row: " + shape_str(A) + " + row " + shape_str(R));
    Matrix out = A.rowwise() + R.row(0);
    return push(Op::AddRow, {a.id, row.id}, std::move(out));
  }

  Var add(Var a, Var b) {
    check_same("add", a, b);
    return push(Op::Add, {a.id, b.id}, value(a) + value(b));
  }

  Var sub(Var a, Var b) {
    check_same("sub", a, b);
    return push(Op::Sub, {a.id, b.id}, value(a) - value(b));
  }

  Var mul(Var a, Var b) {
    check_same("mul", a, b);
    return push(Op::Mul, {a.id, b.id}, value(a).cwiseProduct(value(b)));
  }

  Var scale(Var a, double s) {
    Var out = push(Op::Scale, {a.id}, s * value(a));
    nodes_[out.id].scalar = s;
    return out;
  }

  Var elu(Var a) {
    Matrix out = value(a).unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    return push(Op::Elu, {a.id}, std::move(out));
  }

  Var sigmoid(Var a) {
    Matrix out = value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return push(Op::Sigmoid, {a.id}, std::move(out));
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows())
      throw ShapeError("concat_cols: " + shape_str(A) + " | " + shape_str(B));
    Matrix out(A.rows(), A.cols() + B.cols());
    out << A, B;
    return push(Op::ConcatCols, {a.id, b.id}, std::move(out));
  }

  Var row_slice(Var a, Index offset, Index count) {
    const Matrix& A = value(a);
    if (offset < 0 || count < 0 || offset + count > A.rows())
      throw ShapeError("row_slice: rows [" + std::to_string(offset) + ", " +
                       std::to_string(offset + count) + ") of " + shape_str(A));
    Var out = push(Op::RowSlice, {a.id}, A.middleRows(offset, count));
    nodes_[out.id].offset = offset;
    return out;
  }

  Var sum_squares(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).squaredNorm();
    return push(Op::SumSquares, {a.id}, std::move(out));
  }

  Var mse(Var pred, Var target) {
    check_same("mse", pred, target);
    const Matrix& P = value(pred);
    if (P.size() == 0) throw InputError("mse: empty batch");
    Matrix out(1, 1);
    out(0, 0) = (P - value(target)).squaredNorm() / static_cast<double>(P.size());
    return push(Op::Mse, {pred.id, target.id}, std::move(out));
  }

  Var bce(Var pred, Var target) {
    check_same("bce", pred, target);
    const Matrix& P = value(pred);
    const Matrix& T = value(target);
    if (P.size() == 0) throw InputError("bce: empty batch");
    double total = 0.0;
    for (Index i = 0; i < P.size(); ++i) {
      const double p = std::clamp(P(i), kBceClamp, 1.0 - kBceClamp);
      total -= T(i) * std::log(p) + (1.0 - T(i)) * std::log1p(-p);
    }
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(P.size());
    return push(Op::Bce, {pred.id, target.id}, std::move(out));
  }

  /// Sign pattern (x > 0) of every ELU input recorded so far, in creation order.
  std::vector<bool> elu_pattern() const {
    std::vector<bool> pattern;
    for (const Node& n : nodes_) {
      if (n.op != Op::Elu) continue;
      const Matrix& in = nodes_[n.inputs[0]].value;
      for (Index i = 0; i < in.size(); ++i) pattern.push_back(in(i) > 0.0);
    }
    return pattern;
  }

  /// Accumulate d(root)/d(node) into every node that depends on a parameter.
  void backward(Var root) {
    Node& r = node_mut(root);
    if (r.value.size() != 1) throw ShapeError("backward: root must be 1x1, got " + shape_str(r.value));
    for (Node& n : nodes_) n.grad.resize(0, 0);
    r.grad = Matrix::Ones(1, 1);
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0 || n.op == Op::Leaf) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::array<std::uint32_t, 2> inputs{Var::npos, Var::npos};
    Matrix value;
    Matrix grad;
    double scalar = 0.0;
    Index offset = 0;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("Var does not belong to this tape");
    return nodes_[v.id];
  }
  Node& node_mut(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("Var does not belong to this tape");
    return nodes_[v.id];
  }

  void check_same(const char* what, Var a, Var b) const {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw ShapeError(std::string(what) + ": " + shape_str(A) + " vs " + shape_str(B));
  }

  Var push(Op op, std::array<std::uint32_t, 2> inputs, Matrix value, bool leaf_requires_grad = false) {
    Node n;
    n.op = op;
    n.inputs = inputs;
    n.value = std::move(value);
    if (op == Op::Leaf) {
      n.requires_grad = leaf_requires_grad;
    } else {
      for (auto in : inputs)
        if (in != Var::npos && nodes_[in].requires_grad) n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void accumulate(std::uint32_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  bool wants(std::uint32_t id) const { return nodes_[id].requires_grad; }

  void propagate(const Node& n) {
    const Matrix& G = n.grad;
    const auto a = n.inputs[0];
    const auto b = n.inputs[1];
    switch (n.op) {
      case Op::Matmul:
        if (wants(a)) accumulate(a, G * nodes_[b].value.transpose());
        if (wants(b)) accumulate(b, nodes_[a].value.transpose() * G);
        break;
      case Op::MatmulTN:
        if (wants(a)) accumulate(a, nodes_[b].value * G.transpose());
        if (wants(b)) accumulate(b, nodes_[a].value * G);
        break;
      case Op::AddRow:
        if (wants(a)) accumulate(a, G);
        if (wants(b)) accumulate(b, G.colwise().sum());
        break;
      case Op::Add:
        accumulate(a, G);
        accumulate(b, G);
        break;
      case Op::Sub:
        accumulate(a, G);
        if (wants(b)) accumulate(b, -G);
        break;
      case Op::Mul:
        if (wants(a)) accumulate(a, G.cwiseProduct(nodes_[b].value));
        if (wants(b)) accumulate(b, G.cwiseProduct(nodes_[a].value));
        break;
      case Op::Scale:
        accumulate(a, n.scalar * G);
        break;
      case Op::Elu: {
        // d/dx elu = 1 for x > 0, exp(x) = elu(x) + 1 otherwise.
        const Matrix& x = nodes_[a].value;
        Matrix d = G;
        for (Index i = 0; i < d.size(); ++i)
          if (!(x(i) > 0.0)) d(i) *= n.value(i) + 1.0;
        accumulate(a, d);
        break;
      }
      case Op::Sigmoid:
        accumulate(a, G.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix())));
        break;
      case Op::ConcatCols: {
        const Index ca = nodes_[a].value.cols();
        if (wants(a)) accumulate(a, G.leftCols(ca));
        if (wants(b)) accumulate(b, G.rightCols(G.cols() - ca));
        break;
      }
      case Op::RowSlice: {
        const Matrix& src = nodes_[a].value;
        Matrix d = Matrix::Zero(src.rows(), src.cols());
        d.middleRows(n.offset, G.rows()) = G;
        accumulate(a, d);
        break;
      }
      case Op::SumSquares:
        accumulate(a, (2.0 * G(0, 0)) * nodes_[a].value);
        break;
      case Op::Mse: {
        const Matrix diff = nodes_[a].value - nodes_[b].value;
        const double k = 2.0 * G(0, 0) / static_cast<double>(diff.size());
        if (wants(a)) accumulate(a, k * diff);
        if (wants(b)) accumulate(b, -k * diff);
        break;
      }
      case Op::Bce: {
        const Matrix& P = nodes_[a].value;
        const Matrix& T = nodes_[b].value;
        const double k = G(0, 0) / static_cast<double>(P.size());
        if (wants(a)) {
          Matrix d(P.rows(), P.cols());
          for (Index i = 0; i < P.size(); ++i) {
            const double p = P(i);
            d(i) = (p < kBceClamp || p > 1.0 - kBceClamp)
                       ? 0.0
                       : k * (-T(i) / p + (1.0 - T(i)) / (1.0 - p));
          }
          accumulate(a, d);
        }
        if (wants(b)) {
          Matrix d(P.rows(), P.cols());
          for (Index i = 0; i < P.size(); ++i) {
            const double p = std::clamp(P(i), kBceClamp, 1.0 - kBceClamp);
            d(i) = -k * (std::log(p) - std::log1p(-p));
          }
          accumulate(b, d);
        }
        break;
      }
      case Op::Leaf:
        break;
      default:
        throw std::logic_error(std::string("backward: unsupported primitive ") + op_name(n.op));
    }
  }
};

}  // namespace catenets::diff

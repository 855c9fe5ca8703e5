#pragma once

#include "catenets/core.hpp"
#include "catenets/diffcore/tape.hpp"

#include <cmath>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace catenets::diff {

enum class Activation { ELU, Sigmoid, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::ELU: return "elu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "elu") return Activation::ELU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw InputError("unknown activation '" + s + "'");
}

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

inline Vector elu(const Vector& x) { return x.unaryExpr([](double v) { return elu(v); }); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One affine map followed by an activation. `P` is `Matrix` for stored
/// parameters and `Var` for parameters bound to a tape.
/// weights: in_dim x out_dim, biases: 1 x out_dim.
template <class P>
struct DenseLayerT {
  P weights{};
  P biases{};
  Activation activation = Activation::ELU;
};

template <class P>
using StackT = std::vector<DenseLayerT<P>>;

using DenseLayer = DenseLayerT<Matrix>;
using Stack = StackT<Matrix>;

// Parameter traversal. Weights and biases are visited in layer order; every
// model type builds its own visit() from these so that stored and bound
// parameters always line up index for index.

template <class P, class F>
void visit_stack(StackT<P>& stack, F&& f) {
  for (auto& layer : stack) {
    f(layer.weights);
    f(layer.biases);
  }
}

template <class P, class F>
void visit_stack(const StackT<P>& stack, F&& f) {
  for (const auto& layer : stack) {
    f(layer.weights);
    f(layer.biases);
  }
}

template <class P, class F>
auto rebind_stack(const StackT<P>& stack, F&& f) {
  using Q = std::decay_t<std::invoke_result_t<F&, const P&>>;
  StackT<Q> out;
  out.reserve(stack.size());
  for (const auto& layer : stack) out.push_back({f(layer.weights), f(layer.biases), layer.activation});
  return out;
}

/// Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline DenseLayer make_layer(Index in_dim, Index out_dim, Activation act, Rng& rng) {
  DenseLayer layer;
  layer.weights = Matrix::Zero(in_dim, out_dim);
  layer.biases = Matrix::Zero(1, out_dim);
  layer.activation = act;
  if (in_dim + out_dim > 0) {
    const double r = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    std::uniform_real_distribution<double> dist(-r, r);
    for (Index j = 0; j < out_dim; ++j)
      for (Index i = 0; i < in_dim; ++i) layer.weights(i, j) = dist(rng);
  }
  return layer;
}

/// Hidden layers of `widths` with ELU, then a scalar output layer with `out_act`.
inline Stack make_mlp(Index in_dim, const std::vector<Index>& widths, Activation out_act, Rng& rng) {
  Stack stack;
  Index prev = in_dim;
  for (Index w : widths) {
    stack.push_back(make_layer(prev, w, Activation::ELU, rng));
    prev = w;
  }
  stack.push_back(make_layer(prev, 1, out_act, rng));
  return stack;
}

inline Index stack_in_dim(const Stack& s) { return s.empty() ? 0 : s.front().weights.rows(); }
inline Index stack_out_dim(const Stack& s) { return s.empty() ? 0 : s.back().weights.cols(); }

inline Var apply_activation(Tape& tape, Var z, Activation act) {
  switch (act) {
    case Activation::ELU: return tape.elu(z);
    case Activation::Sigmoid: return tape.sigmoid(z);
    case Activation::Identity: return z;
  }
  return z;
}

inline Var forward(Tape& tape, const DenseLayerT<Var>& layer, Var x) {
  return apply_activation(tape, tape.add_row(tape.matmul(x, layer.weights), layer.biases), layer.activation);
}

inline Var forward(Tape& tape, const StackT<Var>& stack, Var x) {
  for (const auto& layer : stack) x = forward(tape, layer, x);
  return x;
}

inline Matrix apply_activation(Matrix z, Activation act) {
  switch (act) {
    case Activation::ELU: return z.unaryExpr([](double v) { return elu(v); });
    case Activation::Sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::Identity: return z;
  }
  return z;
}

/// Plain evaluation of a stack on `x` (rows are samples).
inline Matrix forward(const Stack& layers, const Matrix& x) {
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (h.cols() != layer.weights.rows())
      throw ShapeError("forward: layer " + std::to_string(i) + " expects " +
                       std::to_string(layer.weights.rows()) + " inputs, got " + std::to_string(h.cols()));
    if (layer.biases.rows() != 1 || layer.biases.cols() != layer.weights.cols())
      throw ShapeError("forward: layer " + std::to_string(i) + " bias is " + shape_str(layer.biases) +
                       ", weights " + shape_str(layer.weights));
    Matrix z = layer.weights.rows() == 0 ? Matrix::Zero(h.rows(), layer.weights.cols())
                                         : Matrix(h * layer.weights);
    z.rowwise() += layer.biases.row(0);
    h = apply_activation(std::move(z), layer.activation);
  }
  return h;
}

/// Sum of squared weight entries over a bound stack (biases excluded).
inline Var weight_sq(Tape& tape, const StackT<Var>& stack) {
  Var total;
  for (const auto& layer : stack) {
    Var s = tape.sum_squares(layer.weights);
    total = total.valid() ? tape.add(total, s) : s;
  }
  if (!total.valid()) total = tape.constant(Matrix::Zero(1, 1));
  return total;
}

/// Squared distance between corresponding weight matrices of two stacks.
inline Var weight_diff_sq(Tape& tape, const StackT<Var>& a, const StackT<Var>& b) {
  if (a.size() != b.size())
    throw ShapeError("weight_diff_sq: stacks have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " layers");
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t i = 0; i < a.size(); ++i)
    total = tape.add(total, tape.sum_squares(tape.sub(a[i].weights, b[i].weights)));
  return total;
}

}  // namespace catenets::diff

#pragma once

// Model structures for the end-to-end potential-outcome learners. Each model
// is a template over its parameter type so the same struct holds stored
// weights (Matrix) or weights bound to a tape (Var).

#include "catenets/architectures/config.hpp"
#include "catenets/diffcore.hpp"

#include <string>
#include <vector>

namespace catenets {

using diff::Activation;
using diff::StackT;
using diff::Tape;
using diff::Var;

template <class F, class P>
using rebound_t = std::decay_t<std::invoke_result_t<F&, const P&>>;

/// Two separate stacks, one per treatment arm.
template <class P>
struct TNetT {
  StackT<P> head0;
  StackT<P> head1;
  bool binary_y = false;

  template <class F>
  void visit(F&& f) {
    diff::visit_stack(head0, f);
    diff::visit_stack(head1, f);
  }
  template <class F>
  void visit(F&& f) const {
    diff::visit_stack(head0, f);
    diff::visit_stack(head1, f);
  }
  template <class F>
  TNetT<rebound_t<F, P>> rebind(F&& f) const {
    return {diff::rebind_stack(head0, f), diff::rebind_stack(head1, f), binary_y};
  }
};

/// Shared representation followed by one head per arm.
template <class P>
struct TARNetT {
  StackT<P> repr;
  StackT<P> head0;
  StackT<P> head1;
  bool binary_y = false;

  template <class F>
  void visit(F&& f) {
    diff::visit_stack(repr, f);
    diff::visit_stack(head0, f);
    diff::visit_stack(head1, f);
  }
  template <class F>
  void visit(F&& f) const {
    diff::visit_stack(repr, f);
    diff::visit_stack(head0, f);
    diff::visit_stack(head1, f);
  }
  template <class F>
  TARNetT<rebound_t<F, P>> rebind(F&& f) const {
    return {diff::rebind_stack(repr, f), diff::rebind_stack(head0, f), diff::rebind_stack(head1, f), binary_y};
  }
};

/// mu1 = mu0 + tau with tau its own network (the reverse flag makes the
/// treated arm the base instead). Both stacks end in Identity; the sigmoid
/// link for binary outcomes is applied after the sum.
template <class P>
struct OffsetT {
  StackT<P> base;
  StackT<P> offset;
  bool binary_y = false;
  bool reverse = false;

  template <class F>
  void visit(F&& f) {
    diff::visit_stack(base, f);
    diff::visit_stack(offset, f);
  }
  template <class F>
  void visit(F&& f) const {
    diff::visit_stack(base, f);
    diff::visit_stack(offset, f);
  }
  template <class F>
  OffsetT<rebound_t<F, P>> rebind(F&& f) const {
    return {diff::rebind_stack(base, f), diff::rebind_stack(offset, f), binary_y, reverse};
  }
};

template <class P>
struct FlexLayerT {
  diff::DenseLayerT<P> shared;
  diff::DenseLayerT<P> private0;
  diff::DenseLayerT<P> private1;
};

/// Per-layer shared and private subspaces. Layer 1 feeds X to all three
/// subspaces; later private layers read [shared, own private] from the
/// previous layer (only [own private] when `communicate` is off), and shared
/// layers read only the previous shared output. The output of arm w is
/// shared + private_w from the last layer.
template <class P>
struct FlexTENetT {
  std::vector<FlexLayerT<P>> layers;
  bool binary_y = false;
  bool communicate = true;

  template <class F>
  void visit(F&& f) {
    for (auto& l : layers) {
      f(l.shared.weights), f(l.shared.biases);
      f(l.private0.weights), f(l.private0.biases);
      f(l.private1.weights), f(l.private1.biases);
    }
  }
  template <class F>
  void visit(F&& f) const {
    for (const auto& l : layers) {
      f(l.shared.weights), f(l.shared.biases);
      f(l.private0.weights), f(l.private0.biases);
      f(l.private1.weights), f(l.private1.biases);
    }
  }
  template <class F>
  FlexTENetT<rebound_t<F, P>> rebind(F&& f) const {
    using Q = rebound_t<F, P>;
    FlexTENetT<Q> out;
    out.binary_y = binary_y;
    out.communicate = communicate;
    for (const auto& l : layers) {
      auto rb = [&](const diff::DenseLayerT<P>& d) {
        return diff::DenseLayerT<Q>{f(d.weights), f(d.biases), d.activation};
      };
      out.layers.push_back({rb(l.shared), rb(l.private0), rb(l.private1)});
    }
    return out;
  }
};

using TNetModel = TNetT<Matrix>;
using TARNetModel = TARNetT<Matrix>;
using OffsetModel = OffsetT<Matrix>;
using FlexTENetModel = FlexTENetT<Matrix>;

/// Output widths of one FlexTENet layer.
struct FlexWidths {
  Index shared = 0;
  Index private0 = 0;
  Index private1 = 0;
};

// ---------------------------------------------------------------------------
// Construction

inline Activation output_activation(bool binary_y) { return binary_y ? Activation::Sigmoid : Activation::Identity; }

/// With `shared_init`, head 1 starts as an exact copy of head 0.
inline TNetModel make_tnet(Index d, const NetworkSpec& spec, Rng& rng, bool shared_init = false) {
  spec.validate();
  TNetModel m;
  m.binary_y = spec.binary_y;
  m.head0 = diff::make_mlp(d, spec.hidden_widths(), output_activation(spec.binary_y), rng);
  m.head1 = shared_init ? m.head0 : diff::make_mlp(d, spec.hidden_widths(), output_activation(spec.binary_y), rng);
  return m;
}

inline TARNetModel make_tarnet(Index d, const NetworkSpec& spec, Rng& rng, bool shared_init = false) {
  spec.validate();
  TARNetModel m;
  m.binary_y = spec.binary_y;
  Index prev = d;
  for (int i = 0; i < spec.d_r; ++i) {
    m.repr.push_back(diff::make_layer(prev, spec.n_r, Activation::ELU, rng));
    prev = spec.n_r;
  }
  const std::vector<Index> head(static_cast<std::size_t>(spec.d_h), spec.n_h);
  m.head0 = diff::make_mlp(prev, head, output_activation(spec.binary_y), rng);
  m.head1 = shared_init ? m.head0 : diff::make_mlp(prev, head, output_activation(spec.binary_y), rng);
  return m;
}

inline OffsetModel make_offset(Index d, const NetworkSpec& spec, Rng& rng, bool reverse = false) {
  spec.validate();
  OffsetModel m;
  m.binary_y = spec.binary_y;
  m.reverse = reverse;
  m.base = diff::make_mlp(d, spec.hidden_widths(), Activation::Identity, rng);
  m.offset = diff::make_mlp(d, spec.hidden_widths(), Activation::Identity, rng);
  return m;
}

/// Default FlexTENet widths: each of d_r + d_h hidden layers is split into a
/// shared half and a private half per arm; the output layer is (1, 1, 1).
inline std::vector<FlexWidths> flextenet_widths(const NetworkSpec& spec) {
  std::vector<FlexWidths> w;
  for (Index n : spec.hidden_widths()) {
    const Index priv = n / 2;
    w.push_back({n - priv, priv, priv});
  }
  w.push_back({1, 1, 1});
  return w;
}

inline FlexTENetModel make_flextenet(Index d, const std::vector<FlexWidths>& widths, bool binary_y, Rng& rng,
                                     bool communicate = true) {
  if (widths.empty()) throw InputError("make_flextenet: no layers");
  const auto& last = widths.back();
  if (last.shared > 1 || last.private0 > 1 || last.private1 > 1)
    throw InputError("make_flextenet: output layer widths must be 0 or 1");
  FlexTENetModel m;
  m.binary_y = binary_y;
  m.communicate = communicate;
  FlexWidths prev{};
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const bool is_out = l + 1 == widths.size();
    const Activation act = is_out ? Activation::Identity : Activation::ELU;
    const auto& w = widths[l];
    FlexLayerT<Matrix> layer;
    if (l == 0) {
      layer.shared = diff::make_layer(d, w.shared, act, rng);
      layer.private0 = diff::make_layer(d, w.private0, act, rng);
      layer.private1 = diff::make_layer(d, w.private1, act, rng);
    } else {
      const Index from_shared = communicate ? prev.shared : 0;
      layer.shared = diff::make_layer(prev.shared, w.shared, act, rng);
      layer.private0 = diff::make_layer(from_shared + prev.private0, w.private0, act, rng);
      layer.private1 = diff::make_layer(from_shared + prev.private1, w.private1, act, rng);
    }
    m.layers.push_back(std::move(layer));
    prev = w;
  }
  return m;
}

inline FlexTENetModel make_flextenet(Index d, const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  return make_flextenet(d, flextenet_widths(spec), spec.binary_y, rng, true);
}

// ---------------------------------------------------------------------------
// Forward passes on a tape

struct PoVars {
  Var mu0;
  Var mu1;
  Var tau;  // set only when the model parametrizes tau directly
};

inline PoVars forward_pos(Tape& tape, const TNetT<Var>& m, Var x) {
  return {diff::forward(tape, m.head0, x), diff::forward(tape, m.head1, x), {}};
}

inline PoVars forward_pos(Tape& tape, const TARNetT<Var>& m, Var x) {
  const Var phi = diff::forward(tape, m.repr, x);
  return {diff::forward(tape, m.head0, phi), diff::forward(tape, m.head1, phi), {}};
}

/// Pre-link outputs of the offset model: base and tau on the same rows.
inline std::pair<Var, Var> forward_offset_raw(Tape& tape, const OffsetT<Var>& m, Var x) {
  return {diff::forward(tape, m.base, x), diff::forward(tape, m.offset, x)};
}

inline PoVars forward_pos(Tape& tape, const OffsetT<Var>& m, Var x) {
  const auto [base, off] = forward_offset_raw(tape, m, x);
  Var mu0 = m.reverse ? tape.sub(base, off) : base;
  Var mu1 = m.reverse ? base : tape.add(base, off);
  if (m.binary_y) return {tape.sigmoid(mu0), tape.sigmoid(mu1), {}};
  return {mu0, mu1, off};
}

namespace detail {

inline Var sum_outputs(Tape& tape, Var shared, Var priv) {
  const Index cs = tape.value(shared).cols();
  const Index cp = tape.value(priv).cols();
  if (cs == 1 && cp == 1) return tape.add(shared, priv);
  if (cs == 1 && cp == 0) return shared;
  if (cs == 0 && cp == 1) return priv;
  if (cs == 0 && cp == 0) return tape.constant(Matrix::Zero(tape.value(shared).rows(), 1));
  throw ShapeError("flextenet: output subspaces must be scalar, got " + std::to_string(cs) + " and " +
                   std::to_string(cp) + " columns");
}

}  // namespace detail

/// FlexTENet forward pass; returns (mu0, mu1), sigmoid-linked iff binary_y.
inline PoVars forward_pos(Tape& tape, const FlexTENetT<Var>& m, Var x) {
  if (m.layers.empty()) throw ShapeError("flextenet: no layers");
  Var xs, x0, x1;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    try {
      if (l == 0) {
        xs = diff::forward(tape, layer.shared, x);
        x0 = diff::forward(tape, layer.private0, x);
        x1 = diff::forward(tape, layer.private1, x);
      } else {
        const Var in0 = m.communicate ? tape.concat_cols(xs, x0) : x0;
        const Var in1 = m.communicate ? tape.concat_cols(xs, x1) : x1;
        x0 = diff::forward(tape, layer.private0, in0);
        x1 = diff::forward(tape, layer.private1, in1);
        xs = diff::forward(tape, layer.shared, xs);
      }
    } catch (const ShapeError& e) {
      throw ShapeError("flextenet layer " + std::to_string(l + 1) + ": " + e.what());
    }
  }
  Var y0 = detail::sum_outputs(tape, xs, x0);
  Var y1 = detail::sum_outputs(tape, xs, x1);
  if (m.binary_y) {
    y0 = tape.sigmoid(y0);
    y1 = tape.sigmoid(y1);
  }
  return {y0, y1, {}};
}

// ---------------------------------------------------------------------------
// Predictions

template <class M>
PredictionTriple predict_pos(const M& model, const Matrix& x) {
  Tape tape;
  const auto bound = diff::bind(tape, model, false);
  const PoVars po = forward_pos(tape, bound, tape.constant(x));
  PredictionTriple out;
  out.mu0 = tape.value(po.mu0).col(0);
  out.mu1 = tape.value(po.mu1).col(0);
  out.tau = po.tau.valid() ? Vector(tape.value(po.tau).col(0)) : Vector(out.mu1 - out.mu0);
  return out;
}

/// Input dimension expected by a model.
inline Index input_dim(const TNetModel& m) { return diff::stack_in_dim(m.head0); }
inline Index input_dim(const TARNetModel& m) {
  return m.repr.empty() ? diff::stack_in_dim(m.head0) : diff::stack_in_dim(m.repr);
}
inline Index input_dim(const OffsetModel& m) { return diff::stack_in_dim(m.base); }
inline Index input_dim(const FlexTENetModel& m) {
  return m.layers.empty() ? 0 : m.layers.front().shared.weights.rows();
}

}  // namespace catenets

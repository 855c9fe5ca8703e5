#pragma once

#include "catenets/diffcore/dense.hpp"
#include "catenets/diffcore/losses.hpp"
#include "catenets/diffcore/train.hpp"

#include <vector>

namespace catenets::diff {

/// A single dense stack; the plain regressor used for nuisance and
/// second-stage fits.
template <class P>
struct MlpT {
  StackT<P> net;

  template <class F>
  void visit(F&& f) { visit_stack(net, f); }
  template <class F>
  void visit(F&& f) const { visit_stack(net, f); }
  template <class F>
  auto rebind(F&& f) const {
    using Q = typename decltype(rebind_stack(net, f))::value_type;
    return MlpT<decltype(Q::weights)>{rebind_stack(net, f)};
  }
};

using Mlp = MlpT<Matrix>;

/// Factual loss of a single net plus lambda * sum of squared weights.
struct MlpLoss {
  double lambda = 1e-4;
  bool binary_y = false;

  Var operator()(Tape& tape, const MlpT<Var>& m, const Batch& b) const {
    const Var pred = forward(tape, m.net, tape.constant(b.x));
    Var loss = factual_loss(tape, pred, tape.constant(b.y), binary_y);
    if (lambda != 0.0) loss = tape.add(loss, tape.scale(weight_sq(tape, m.net), lambda));
    return loss;
  }
};

inline Vector predict(const Mlp& m, const Matrix& x) { return forward(m.net, x).col(0); }

}  // namespace catenets::diff

#pragma once

// Training objectives for the end-to-end learners. Every penalty acts on
// weight matrices only; biases are never regularized.

#include "catenets/architectures/config.hpp"
#include "catenets/architectures/models.hpp"

namespace catenets {

using diff::Batch;

namespace detail {

/// Factual loss with each row predicted by the head of its own arm.
inline Var factual_two_head(Tape& tape, const PoVars& po, const Batch& b, bool binary_y) {
  if (b.size() == 0) throw InputError("loss: batch has no samples");
  if (b.w.size() != b.size()) throw InputError("loss: batch is missing treatment indicators");
  const Var w = tape.constant(b.w);
  const Var not_w = tape.constant((1.0 - b.w.array()).matrix());
  const Var pred = tape.add(tape.mul(w, po.mu1), tape.mul(not_w, po.mu0));
  return diff::factual_loss(tape, pred, tape.constant(b.y), binary_y);
}

}  // namespace detail

/// Factual loss plus lambda1 * (|head0|^2 + |head1|^2).
inline Var loss_standard(Tape& tape, const TNetT<Var>& m, const Batch& b, const EstimatorConfig& cfg) {
  const Var x = tape.constant(b.x);
  Var loss = detail::factual_two_head(tape, forward_pos(tape, m, x), b, m.binary_y);
  const Var pen = tape.add(diff::weight_sq(tape, m.head0), diff::weight_sq(tape, m.head1));
  return tape.add(loss, tape.scale(pen, cfg.lambda1));
}

/// As above plus lambda1 * |repr|^2 when regularize_representation is set.
inline Var loss_standard(Tape& tape, const TARNetT<Var>& m, const Batch& b, const EstimatorConfig& cfg) {
  const Var x = tape.constant(b.x);
  Var loss = detail::factual_two_head(tape, forward_pos(tape, m, x), b, m.binary_y);
  Var pen = tape.add(diff::weight_sq(tape, m.head0), diff::weight_sq(tape, m.head1));
  if (cfg.regularize_representation) pen = tape.add(pen, diff::weight_sq(tape, m.repr));
  return tape.add(loss, tape.scale(pen, cfg.lambda1));
}

/// Factual loss + lambda1 |head0|^2 + lambda2 |head1 - head0|^2, layerwise.
inline Var loss_soft(Tape& tape, const TNetT<Var>& m, const Batch& b, const EstimatorConfig& cfg) {
  if (m.head0.size() != m.head1.size()) throw ShapeError("loss_soft: heads differ in depth");
  const Var x = tape.constant(b.x);
  Var loss = detail::factual_two_head(tape, forward_pos(tape, m, x), b, m.binary_y);
  loss = tape.add(loss, tape.scale(diff::weight_sq(tape, m.head0), cfg.lambda1));
  return tape.add(loss, tape.scale(diff::weight_diff_sq(tape, m.head1, m.head0), cfg.lambda2));
}

/// TARNet variant: the difference penalty spans only the d_h head layers.
inline Var loss_soft(Tape& tape, const TARNetT<Var>& m, const Batch& b, const EstimatorConfig& cfg) {
  if (m.head0.size() != m.head1.size()) throw ShapeError("loss_soft: heads differ in depth");
  const Var x = tape.constant(b.x);
  Var loss = detail::factual_two_head(tape, forward_pos(tape, m, x), b, m.binary_y);
  Var pen = diff::weight_sq(tape, m.head0);
  if (cfg.regularize_representation) pen = tape.add(pen, diff::weight_sq(tape, m.repr));
  loss = tape.add(loss, tape.scale(pen, cfg.lambda1));
  return tape.add(loss, tape.scale(diff::weight_diff_sq(tape, m.head1, m.head0), cfg.lambda2));
}

/// Factual loss on base(x) + w * tau(x) (sigmoid of the sum for binary y)
/// + lambda1 |base|^2 + lambda2 |tau|^2. With reverse set, the treated arm is
/// the base and controls are fit by base(x) - tau(x).
inline Var loss_offset(Tape& tape, const OffsetT<Var>& m, const Batch& b, const EstimatorConfig& cfg) {
  if (b.size() == 0) throw InputError("loss: batch has no samples");
  if (b.w.size() != b.size()) throw InputError("loss: batch is missing treatment indicators");
  const auto [base, off] = forward_offset_raw(tape, m, tape.constant(b.x));
  const Vector sign = m.reverse ? Vector(b.w.array() - 1.0) : b.w;
  Var pred = tape.add(base, tape.mul(tape.constant(sign), off));
  if (m.binary_y) pred = tape.sigmoid(pred);
  Var loss = diff::factual_loss(tape, pred, tape.constant(b.y), m.binary_y);
  loss = tape.add(loss, tape.scale(diff::weight_sq(tape, m.base), cfg.lambda1));
  return tape.add(loss, tape.scale(diff::weight_sq(tape, m.offset), cfg.lambda2));
}

/// Sum over arms and layers of |shared^T * private_rows|_F^2, where
/// private_rows are the rows of the private matrix that multiply the
/// previous shared output. In layer 1 every private row multiplies X, which
/// the shared subspace also reads, so the whole matrix is used.
inline Var orthogonal_reg(Tape& tape, const FlexTENetT<Var>& m) {
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    const Var ws = layer.shared.weights;
    const Index shared_in = tape.value(ws).rows();
    for (const Var wp : {layer.private0.weights, layer.private1.weights}) {
      Var rows;
      if (l == 0) {
        rows = wp;
      } else if (m.communicate) {
        rows = tape.row_slice(wp, 0, shared_in);
      } else {
        continue;
      }
      total = tape.add(total, tape.sum_squares(tape.matmul_tn(ws, rows)));
    }
  }
  return total;
}

inline double orthogonal_reg(const FlexTENetModel& m) {
  Tape tape;
  return tape.scalar(orthogonal_reg(tape, diff::bind(tape, m, false)));
}

/// Factual loss + lambda1 |shared|^2 + lambda2 sum_w |private_w|^2
/// + lambda_o * orthogonal_reg. Pass cfg.effective() for the ablated variant.
inline Var loss_flextenet(Tape& tape, const FlexTENetT<Var>& m, const Batch& b, const EstimatorConfig& cfg) {
  const Var x = tape.constant(b.x);
  Var loss = detail::factual_two_head(tape, forward_pos(tape, m, x), b, m.binary_y);
  Var shared = tape.constant(Matrix::Zero(1, 1));
  Var priv = tape.constant(Matrix::Zero(1, 1));
  for (const auto& layer : m.layers) {
    shared = tape.add(shared, tape.sum_squares(layer.shared.weights));
    priv = tape.add(priv, tape.sum_squares(layer.private0.weights));
    priv = tape.add(priv, tape.sum_squares(layer.private1.weights));
  }
  loss = tape.add(loss, tape.scale(shared, cfg.lambda1));
  loss = tape.add(loss, tape.scale(priv, cfg.lambda2));
  if (cfg.lambda_o != 0.0) loss = tape.add(loss, tape.scale(orthogonal_reg(tape, m), cfg.lambda_o));
  return loss;
}

/// Loss builder for diff::train: picks the objective that matches the
/// strategy and model type.
struct ArchitectureLoss {
  EstimatorConfig cfg;

  Var operator()(Tape& tape, const TNetT<Var>& m, const Batch& b) const {
    return cfg.strategy == Strategy::TNetSoft ? loss_soft(tape, m, b, cfg) : loss_standard(tape, m, b, cfg);
  }
  Var operator()(Tape& tape, const TARNetT<Var>& m, const Batch& b) const {
    return cfg.strategy == Strategy::TARNetSoft ? loss_soft(tape, m, b, cfg) : loss_standard(tape, m, b, cfg);
  }
  Var operator()(Tape& tape, const OffsetT<Var>& m, const Batch& b) const { return loss_offset(tape, m, b, cfg); }
  Var operator()(Tape& tape, const FlexTENetT<Var>& m, const Batch& b) const {
    return loss_flextenet(tape, m, b, cfg.effective());
  }
};

}  // namespace catenets

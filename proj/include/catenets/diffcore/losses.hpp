#pragma once

#include "catenets/core.hpp"
#include "catenets/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace catenets::diff {

inline void check_lengths(const char* what, const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw ShapeError(std::string(what) + ": length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  if (a.size() == 0) throw InputError(std::string(what) + ": empty input");
}

/// Mean squared error.
inline double loss_mse(const Vector& pred, const Vector& target) {
  check_lengths("loss_mse", pred, target);
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
inline double loss_bce(const Vector& pred, const Vector& target) {
  check_lengths("loss_bce", pred, target);
  double total = 0.0;
  for (Index i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred(i), kBceClamp, 1.0 - kBceClamp);
    total -= target(i) * std::log(p) + (1.0 - target(i)) * std::log1p(-p);
  }
  return total / static_cast<double>(pred.size());
}

/// Factual loss on the tape: BCE for binary outcomes, MSE otherwise.
inline Var factual_loss(Tape& tape, Var pred, Var target, bool binary_y) {
  return binary_y ? tape.bce(pred, target) : tape.mse(pred, target);
}

}  // namespace catenets::diff

#pragma once

#include "catenets/core.hpp"

#include <cmath>
#include <span>
#include <sstream>
#include <vector>

namespace catenets::diff {

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;

  template <class Range>
  explicit AdamState(const Range& shapes) {
    for (const Matrix* p : shapes) {
      first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
};

/// One bias-corrected Adam update, in place. Throws TrainingError on a
/// non-finite gradient before touching any parameter.
inline void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
                      double step_size) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(state.first_moment.size()) +
                     " moment slots");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols() ||
        state.first_moment[i].rows() != grads[i].rows() || state.first_moment[i].cols() != grads[i].cols())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " is " + shape_str(*params[i]) +
                       ", gradient " + shape_str(grads[i]));
    if (!grads[i].allFinite()) {
      std::ostringstream msg;
      msg << "adam_step: non-finite gradient in parameter " << i << " (" << shape_str(grads[i])
          << ") at step " << state.step_count << ", max |g| = " << grads[i].cwiseAbs().maxCoeff();
      throw TrainingError(msg.str());
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -= step_size * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

}  // namespace catenets::diff

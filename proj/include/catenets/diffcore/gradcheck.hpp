#pragma once

#include "catenets/core.hpp"
#include "catenets/diffcore/tape.hpp"
#include "catenets/diffcore/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace catenets::diff {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kink = 0;  // perturbation moved an ELU input across zero
  bool passed = true;
  std::string worst;             // "param <i> entry <j>" of the largest relative error
};

namespace detail {

template <ParameterModel M, class L>
std::pair<double, std::vector<bool>> loss_with_pattern(const M& model, const Batch& batch, L& loss) {
  Tape tape;
  const auto bound = bind(tape, model, false);
  const double v = tape.scalar(loss(tape, bound, batch));
  return {v, tape.elu_pattern()};
}

}  // namespace detail

/// Compares reverse-mode gradients to central differences entry by entry.
/// Relative error is |a - n| / max(|a|, |n|, grad_floor); entries whose
/// +-h perturbations change the ELU sign pattern are skipped and counted.
template <ParameterModel M, class L>
GradCheckReport finite_difference_check(const M& model, const Batch& batch, L&& loss, double h = 1e-5,
                                        double tol = 1e-4, double grad_floor = 1e-5) {
  std::vector<Matrix> analytic;
  loss_and_gradients(model, batch, loss, analytic);

  GradCheckReport report;
  M probe = model;
  auto params = parameter_list(probe);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = *params[p];
    for (Index j = 0; j < m.size(); ++j) {
      const double orig = m(j);
      m(j) = orig + h;
      const auto [up, up_pattern] = detail::loss_with_pattern(probe, batch, loss);
      m(j) = orig - h;
      const auto [down, down_pattern] = detail::loss_with_pattern(probe, batch, loss);
      m(j) = orig;
      if (up_pattern != down_pattern) {
        ++report.skipped_kink;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p](j);
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), grad_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst = "param " + std::to_string(p) + " entry " + std::to_string(j);
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace catenets::diff

#pragma once

#include "catenets/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace catenets::eval {

namespace detail {

inline void same_length(Index a, Index b, const char* who) {
  if (a != b) throw ShapeError(std::string(who) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  if (a == 0) throw InputError(std::string(who) + ": empty input");
}

}  // namespace detail

/// sqrt(mean((a - b)^2))
inline double rmse(const Vector& a, const Vector& b, const char* who = "rmse") {
  detail::same_length(a.size(), b.size(), who);
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

inline double rmse_cate(const Vector& tau_hat, const Vector& tau) { return rmse(tau_hat, tau, "rmse_cate"); }

/// Sample standard deviation with the n-1 denominator.
inline double sample_sd(const Vector& v) {
  if (v.size() < 2) throw InputError("sample_sd: need at least 2 values, got " + std::to_string(v.size()));
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

/// raw / sample-SD of the factual training outcomes.
inline double normalized_rmse(double raw, const Vector& factual_train_y) {
  const double sd = sample_sd(factual_train_y);
  if (!(sd > 0.0)) throw InputError("normalized_rmse: factual training outcomes have zero standard deviation");
  return raw / sd;
}

/// (P(diff=-1), P(diff=0), P(diff=+1)) for independent Bernoulli outcomes
/// with means mu0 and mu1.
inline std::array<double, 3> twins_threeclass_probs(double mu0, double mu1) {
  if (!(mu0 >= 0.0 && mu0 <= 1.0) || !(mu1 >= 0.0 && mu1 <= 1.0))
    throw InputError("twins_threeclass_probs: probabilities must lie in [0,1], got (" + std::to_string(mu0) + ", " +
                     std::to_string(mu1) + ")");
  return {mu0 * (1.0 - mu1), mu0 * mu1 + (1.0 - mu0) * (1.0 - mu1), (1.0 - mu0) * mu1};
}

/// Row i holds the three class probabilities of sample i.
inline Matrix twins_threeclass_probs(const Vector& mu0, const Vector& mu1) {
  if (mu0.size() != mu1.size()) throw ShapeError("twins_threeclass_probs: length mismatch");
  Matrix out(mu0.size(), 3);
  for (Index i = 0; i < mu0.size(); ++i) {
    const auto p = twins_threeclass_probs(mu0(i), mu1(i));
    out.row(i) << p[0], p[1], p[2];
  }
  return out;
}

inline double rmse_cf_diff(const Vector& tau_hat, const Vector& y1_minus_y0) {
  return rmse(y1_minus_y0, tau_hat, "rmse_cf_diff");
}

/// Rank-based ROC AUC; tied scores receive their average rank, so a tie
/// between a positive and a negative counts one half.
inline double auc(const Vector& scores, const Vector& labels) {
  detail::same_length(scores.size(), labels.size(), "auc");
  const Index n = scores.size();
  Index n_pos = 0;
  for (Index i = 0; i < n; ++i) {
    if (labels(i) == 1.0)
      ++n_pos;
    else if (labels(i) != 0.0)
      throw InputError("auc: labels must be 0 or 1, got " + std::to_string(labels(i)));
    if (!std::isfinite(scores(i))) throw InputError("auc: non-finite score at index " + std::to_string(i));
  }
  const Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InputError("auc: labels contain a single class");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) < scores(b); });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores(order[j + 1]) == scores(order[i])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels(order[k]) == 1.0) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Macro average of one-vs-rest AUCs over the classes {-1, 0, +1} of a
/// realized outcome difference. Classes absent from the truth, or covering
/// every sample, are skipped.
inline double auc_threeclass(const Matrix& probs, const Vector& diff) {
  if (probs.cols() != 3) throw ShapeError("auc_threeclass: expected 3 probability columns, got " + shape_str(probs));
  detail::same_length(probs.rows(), diff.size(), "auc_threeclass");
  double total = 0.0;
  int used = 0;
  for (int k = 0; k < 3; ++k) {
    const double cls = static_cast<double>(k - 1);
    Vector lab(diff.size());
    for (Index i = 0; i < diff.size(); ++i) {
      if (diff(i) != -1.0 && diff(i) != 0.0 && diff(i) != 1.0)
        throw InputError("auc_threeclass: outcome differences must be in {-1,0,1}");
      lab(i) = diff(i) == cls ? 1.0 : 0.0;
    }
    const double pos = lab.sum();
    if (pos == 0.0 || pos == static_cast<double>(lab.size())) continue;
    total += auc(probs.col(k), lab);
    ++used;
  }
  if (used == 0) throw InputError("auc_threeclass: outcome differences contain a single class");
  return total / used;
}

inline bool both_classes(const Vector& labels) {
  return (labels.array() == 1.0).any() && (labels.array() == 0.0).any();
}

struct MetricReport {
  double rmse_cate = 0.0;
  double normalized_rmse_cate = 0.0;
  std::optional<double> rmse_mu0;
  std::optional<double> rmse_mu1;
  std::optional<double> rmse_cf_diff;
  std::optional<double> auc_cf_diff;
  std::optional<double> auc_mu0;
  std::optional<double> auc_mu1;
};

/// Everything needed to score predictions on a test partition.
struct EvalTarget {
  Vector tau;
  Vector mu0;
  Vector mu1;
  Vector factual_train_y;
  /// Realized potential outcomes for binary-outcome data; empty otherwise.
  Vector y0;
  Vector y1;
};

/// mu0_hat / mu1_hat may be empty for learners that never estimate them.
inline MetricReport evaluate(const Vector& tau_hat, const Vector& mu0_hat, const Vector& mu1_hat, const EvalTarget& t) {
  MetricReport r;
  r.rmse_cate = rmse_cate(tau_hat, t.tau);
  r.normalized_rmse_cate = normalized_rmse(r.rmse_cate, t.factual_train_y);
  const bool has_po = mu0_hat.size() > 0 && mu1_hat.size() > 0;
  if (has_po && t.mu0.size() > 0) {
    r.rmse_mu0 = rmse(mu0_hat, t.mu0, "rmse_mu0");
    r.rmse_mu1 = rmse(mu1_hat, t.mu1, "rmse_mu1");
  }
  if (t.y0.size() > 0 && t.y1.size() > 0) {
    const Vector diff = t.y1 - t.y0;
    r.rmse_cf_diff = rmse_cf_diff(tau_hat, diff);
    if (has_po) {
      r.auc_cf_diff = auc_threeclass(twins_threeclass_probs(mu0_hat, mu1_hat), diff);
      if (both_classes(t.y0)) r.auc_mu0 = auc(mu0_hat, t.y0);
      if (both_classes(t.y1)) r.auc_mu1 = auc(mu1_hat, t.y1);
    }
  }
  return r;
}

}  // namespace catenets::eval

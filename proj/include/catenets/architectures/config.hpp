#pragma once

#include "catenets/core.hpp"

#include <string>
#include <vector>

namespace catenets {

/// Layer depths and widths shared by every estimator. d_r representation
/// layers of n_r units, then d_h head layers of n_h units, then a scalar output.
struct NetworkSpec {
  int d_r = 1;
  Index n_r = 200;
  int d_h = 1;
  Index n_h = 100;
  bool binary_y = false;

  void validate() const {
    if (d_r < 0 || d_h < 0 || d_r + d_h < 1) throw InputError("NetworkSpec: need d_r + d_h >= 1 and both >= 0");
    if ((d_r > 0 && n_r < 1) || (d_h > 0 && n_h < 1)) throw InputError("NetworkSpec: widths must be positive");
  }

  /// Widths of a full d_r + d_h hidden stack.
  std::vector<Index> hidden_widths() const {
    std::vector<Index> w(static_cast<std::size_t>(d_r), n_r);
    w.insert(w.end(), static_cast<std::size_t>(d_h), n_h);
    return w;
  }
};

enum class Strategy { TNet, TARNet, TNetSoft, TARNetSoft, Offset, FlexTENet, FlexTENetAblated };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::TNet: return "tnet";
    case Strategy::TARNet: return "tarnet";
    case Strategy::TNetSoft: return "tnet_soft";
    case Strategy::TARNetSoft: return "tarnet_soft";
    case Strategy::Offset: return "offset";
    case Strategy::FlexTENet: return "flextenet";
    case Strategy::FlexTENetAblated: return "flextenet_ablated";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (Strategy k : {Strategy::TNet, Strategy::TARNet, Strategy::TNetSoft, Strategy::TARNetSoft, Strategy::Offset,
                     Strategy::FlexTENet, Strategy::FlexTENetAblated})
    if (s == to_string(k)) return k;
  throw InputError("unknown strategy '" + s + "'");
}

/// Strategy selector plus penalties. lambda1 acts on baseline/shared weights,
/// lambda2 on difference/offset/private weights, lambda_o on the
/// shared-private orthogonality term. Biases are never penalized.
struct EstimatorConfig {
  Strategy strategy = Strategy::TNet;
  double lambda1 = 1e-4;
  double lambda2 = 1e-2;
  double lambda_o = 0.1;
  bool regularize_representation = true;  // lambda1 on the TARNet representation
  bool reverse_offset = false;            // Offset: treated arm is the base, mu0 = mu1 - tau
  static constexpr bool penalize_bias = false;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda_o < 0.0) throw InputError("EstimatorConfig: penalties must be >= 0");
  }

  /// Penalties actually used by the loss; the ablated FlexTENet drops the
  /// orthogonality term and ties lambda2 to lambda1.
  EstimatorConfig effective() const {
    EstimatorConfig e = *this;
    if (strategy == Strategy::FlexTENetAblated) {
      e.lambda_o = 0.0;
      e.lambda2 = e.lambda1;
    }
    return e;
  }
};

/// Potential-outcome predictions on a query matrix. Direct learners that never
/// estimate the outcome surfaces leave mu0/mu1 empty and set has_po = false.
struct PredictionTriple {
  Vector mu0;
  Vector mu1;
  Vector tau;
  bool has_po = true;
};

}  // namespace catenets

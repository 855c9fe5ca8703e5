#pragma once

#include "catenets/architectures/config.hpp"

#include <json.hpp>

#include <memory>
#include <string>

namespace catenets {

/// A fitted CATE / potential-outcome estimator. Immutable after fitting, so
/// predict() may be called concurrently.
class Estimator {
 public:
  virtual ~Estimator() = default;

  virtual PredictionTriple predict(const Matrix& x) const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json to_json() const = 0;

  /// Optimizer steps taken by the final training stage.
  long stop_step() const noexcept { return stop_step_; }

 protected:
  long stop_step_ = 0;
};

using EstimatorPtr = std::shared_ptr<const Estimator>;

}  // namespace catenets

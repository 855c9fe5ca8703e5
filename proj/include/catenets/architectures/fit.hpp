#pragma once

#include "catenets/architectures/losses.hpp"
#include "catenets/architectures/models.hpp"
#include "catenets/estimator.hpp"
#include "catenets/serialize.hpp"

#include <string>
#include <variant>
#include <vector>

namespace catenets {

using AnyModel = std::variant<TNetModel, TARNetModel, OffsetModel, FlexTENetModel>;

/// Trained end-to-end learner together with the configuration it was fit under.
class ArchitectureEstimator final : public Estimator {
 public:
  ArchitectureEstimator(EstimatorConfig cfg, NetworkSpec spec, AnyModel model, long stop_step = 0)
      : cfg_(cfg), spec_(spec), model_(std::move(model)) {
    stop_step_ = stop_step;
  }

  PredictionTriple predict(const Matrix& x) const override {
    return std::visit(
        [&](const auto& m) {
          if (x.cols() != input_dim(m))
            throw ShapeError("predict: model expects " + std::to_string(input_dim(m)) + " covariates, got " +
                             std::to_string(x.cols()));
          return predict_pos(m, x);
        },
        model_);
  }

  std::string kind() const override { return to_string(cfg_.strategy); }
  nlohmann::json to_json() const override;

  const EstimatorConfig& config() const noexcept { return cfg_; }
  const NetworkSpec& spec() const noexcept { return spec_; }
  const AnyModel& model() const noexcept { return model_; }

 private:
  EstimatorConfig cfg_;
  NetworkSpec spec_;
  AnyModel model_;
};

struct ArmCounts {
  Index control = 0;
  Index treated = 0;
};

inline ArmCounts count_arms(const Vector& w) {
  ArmCounts c;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) == 1.0)
      ++c.treated;
    else if (w(i) == 0.0)
      ++c.control;
    else
      throw InputError("treatment indicator must be 0 or 1, got " + std::to_string(w(i)) + " at row " +
                       std::to_string(i));
  }
  return c;
}

inline void require_both_arms(const Vector& w, const std::string& who) {
  const ArmCounts c = count_arms(w);
  if (c.control == 0) throw InputError(who + ": control arm (w=0) is empty; its outcome model cannot be trained");
  if (c.treated == 0) throw InputError(who + ": treated arm (w=1) is empty; its outcome model cannot be trained");
}

/// Builds the initial model for a strategy. Soft strategies start both
/// heads from one random draw.
inline AnyModel init_model(const EstimatorConfig& cfg, const NetworkSpec& spec, Index d, Rng& rng) {
  switch (cfg.strategy) {
    case Strategy::TNet: return make_tnet(d, spec, rng, false);
    case Strategy::TNetSoft: return make_tnet(d, spec, rng, true);
    case Strategy::TARNet: return make_tarnet(d, spec, rng, false);
    case Strategy::TARNetSoft: return make_tarnet(d, spec, rng, true);
    case Strategy::Offset: return make_offset(d, spec, rng, cfg.reverse_offset);
    case Strategy::FlexTENet:
    case Strategy::FlexTENetAblated: return make_flextenet(d, spec, rng);
  }
  throw InputError("init_model: unknown strategy");
}

/// Trains `init` under the strategy's loss.
inline ArchitectureEstimator fit_model(const EstimatorConfig& cfg, const NetworkSpec& spec, AnyModel init,
                                       const diff::Batch& data, const diff::TrainConfig& train_cfg) {
  return std::visit(
      [&](auto&& m) {
        auto report = diff::train(std::move(m), data, ArchitectureLoss{cfg}, train_cfg);
        return ArchitectureEstimator(cfg, spec, AnyModel(std::move(report.best_params)), report.stop_step);
      },
      std::move(init));
}

/// Fit one end-to-end learner on (x, y, w). Initialization, validation split
/// and minibatch order all derive from train_cfg.seed.
inline ArchitectureEstimator fit_estimator(const EstimatorConfig& cfg, const NetworkSpec& spec,
                                           const diff::Batch& data, const diff::TrainConfig& train_cfg) {
  cfg.validate();
  spec.validate();
  if (data.size() == 0) throw InputError(std::string("fit_estimator(") + to_string(cfg.strategy) + "): empty dataset");
  if (data.w.size() != data.size()) throw InputError("fit_estimator: treatment vector length mismatch");
  require_both_arms(data.w, std::string("fit_estimator(") + to_string(cfg.strategy) + ")");
  Rng rng(derive_seed(train_cfg.seed, 0x696e6974ULL));
  return fit_model(cfg, spec, init_model(cfg, spec, data.x.cols(), rng), data, train_cfg);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json model_to_json(const AnyModel& model) {
  using io::to_json;
  return std::visit(
      [](const auto& m) -> nlohmann::json {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, TNetModel>) {
          return {{"type", "tnet"}, {"binary_y", m.binary_y}, {"head0", to_json(m.head0)}, {"head1", to_json(m.head1)}};
        } else if constexpr (std::is_same_v<M, TARNetModel>) {
          return {{"type", "tarnet"},
                  {"binary_y", m.binary_y},
                  {"repr", to_json(m.repr)},
                  {"head0", to_json(m.head0)},
                  {"head1", to_json(m.head1)}};
        } else if constexpr (std::is_same_v<M, OffsetModel>) {
          return {{"type", "offset"},
                  {"binary_y", m.binary_y},
                  {"reverse", m.reverse},
                  {"base", to_json(m.base)},
                  {"offset", to_json(m.offset)}};
        } else {
          nlohmann::json layers = nlohmann::json::array();
          for (const auto& l : m.layers)
            layers.push_back(
                {{"shared", to_json(l.shared)}, {"private0", to_json(l.private0)}, {"private1", to_json(l.private1)}});
          return {{"type", "flextenet"}, {"binary_y", m.binary_y}, {"communicate", m.communicate}, {"layers", layers}};
        }
      },
      model);
}

inline AnyModel model_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  const bool binary = j.at("binary_y").get<bool>();
  if (type == "tnet") return TNetModel{io::stack_from_json(j.at("head0")), io::stack_from_json(j.at("head1")), binary};
  if (type == "tarnet")
    return TARNetModel{io::stack_from_json(j.at("repr")), io::stack_from_json(j.at("head0")),
                       io::stack_from_json(j.at("head1")), binary};
  if (type == "offset")
    return OffsetModel{io::stack_from_json(j.at("base")), io::stack_from_json(j.at("offset")), binary,
                       j.at("reverse").get<bool>()};
  if (type == "flextenet") {
    FlexTENetModel m;
    m.binary_y = binary;
    m.communicate = j.at("communicate").get<bool>();
    for (const auto& l : j.at("layers"))
      m.layers.push_back({io::layer_from_json(l.at("shared")), io::layer_from_json(l.at("private0")),
                          io::layer_from_json(l.at("private1"))});
    return m;
  }
  throw InputError("model dump: unknown model type '" + type + "'");
}

inline nlohmann::json to_json(const EstimatorConfig& c) {
  return {{"strategy", to_string(c.strategy)},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda_o", c.lambda_o},
          {"regularize_representation", c.regularize_representation},
          {"reverse_offset", c.reverse_offset}};
}

/// Missing keys keep their defaults.
inline EstimatorConfig estimator_config_from_json(const nlohmann::json& j) {
  EstimatorConfig c;
  c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lambda_o = j.value("lambda_o", c.lambda_o);
  c.regularize_representation = j.value("regularize_representation", c.regularize_representation);
  c.reverse_offset = j.value("reverse_offset", c.reverse_offset);
  return c;
}

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"d_r", s.d_r}, {"n_r", s.n_r}, {"d_h", s.d_h}, {"n_h", s.n_h}, {"binary_y", s.binary_y}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.d_r = j.value("d_r", s.d_r);
  s.n_r = j.value("n_r", s.n_r);
  s.d_h = j.value("d_h", s.d_h);
  s.n_h = j.value("n_h", s.n_h);
  s.binary_y = j.value("binary_y", s.binary_y);
  return s;
}

inline nlohmann::json ArchitectureEstimator::to_json() const {
  return {{"kind", "architecture"},
          {"config", catenets::to_json(cfg_)},
          {"network", catenets::to_json(spec_)},
          {"stop_step", stop_step_},
          {"model", model_to_json(model_)}};
}

inline ArchitectureEstimator architecture_from_json(const nlohmann::json& j) {
  return ArchitectureEstimator(estimator_config_from_json(j.at("config")), network_spec_from_json(j.at("network")),
                               model_from_json(j.at("model")), j.value("stop_step", 0L));
}

// ---------------------------------------------------------------------------
// Weight analysis

struct WeightNormRow {
  int layer = 0;          // 1-based
  std::string subspace;   // shared | private0 | private1
  Index units = 0;
  double mean_norm = 0.0;
};

/// Mean L2 norm of each hidden unit's incoming weight vector, per layer and subspace.
inline std::vector<WeightNormRow> weight_norm_report(const FlexTENetModel& m) {
  std::vector<WeightNormRow> rows;
  auto add = [&](int layer, const char* name, const Matrix& w) {
    WeightNormRow r{layer, name, w.cols(), 0.0};
    if (w.cols() > 0) r.mean_norm = w.colwise().norm().mean();
    rows.push_back(r);
  };
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const int id = static_cast<int>(l) + 1;
    add(id, "shared", m.layers[l].shared.weights);
    add(id, "private0", m.layers[l].private0.weights);
    add(id, "private1", m.layers[l].private1.weights);
  }
  return rows;
}

}  // namespace catenets

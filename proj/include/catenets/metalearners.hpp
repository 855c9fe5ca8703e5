#pragma once

// Two-stage and single-model CATE learners built from plain dense regressors:
// S, T, RA, PW, DR, X and R.

#include "catenets/architectures/fit.hpp"
#include "catenets/diffcore/mlp.hpp"
#include "catenets/serialize.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <string>

namespace catenets::meta {

using diff::Batch;
using diff::Mlp;
using diff::TrainConfig;

inline constexpr double kPropensityClamp = 0.01;

enum class MetaKind { S, T, RA, PW, DR, X, R };

inline const char* to_string(MetaKind k) {
  switch (k) {
    case MetaKind::S: return "s_learner";
    case MetaKind::T: return "t_learner";
    case MetaKind::RA: return "ra_learner";
    case MetaKind::PW: return "pw_learner";
    case MetaKind::DR: return "dr_learner";
    case MetaKind::X: return "x_learner";
    case MetaKind::R: return "r_learner";
  }
  return "?";
}

inline MetaKind meta_kind_from_string(const std::string& s) {
  for (MetaKind k : {MetaKind::S, MetaKind::T, MetaKind::RA, MetaKind::PW, MetaKind::DR, MetaKind::X, MetaKind::R})
    if (s == to_string(k)) return k;
  throw InputError("unknown meta-learner '" + s + "'");
}

/// Weighting of the two X-learner arm estimators: g(x) tau1(x) + (1 - g(x)) tau0(x).
enum class XWeight { Propensity, OneMinusPropensity, Constant };

inline const char* to_string(XWeight g) {
  switch (g) {
    case XWeight::Propensity: return "propensity";
    case XWeight::OneMinusPropensity: return "one_minus_propensity";
    case XWeight::Constant: return "constant";
  }
  return "?";
}

inline XWeight x_weight_from_string(const std::string& s) {
  for (XWeight g : {XWeight::Propensity, XWeight::OneMinusPropensity, XWeight::Constant})
    if (s == to_string(g)) return g;
  throw InputError("unknown X-learner weighting '" + s + "'");
}

// ---------------------------------------------------------------------------
// Pseudo-outcomes

namespace detail {

inline void check_lengths(const char* who, Index n, std::initializer_list<Index> sizes) {
  for (Index s : sizes)
    if (s != n) throw ShapeError(std::string(who) + ": input vectors differ in length");
}

inline void check_open_unit(const char* who, const Vector& pi) {
  for (Index i = 0; i < pi.size(); ++i)
    if (!(pi(i) > 0.0 && pi(i) < 1.0))
      throw InputError(std::string(who) + ": propensity " + std::to_string(pi(i)) + " at row " + std::to_string(i) +
                       " is outside (0,1); clamp it first");
}

}  // namespace detail

/// W (Y - mu0) + (1 - W)(mu1 - Y)
inline Vector pseudo_ra(const Vector& y, const Vector& w, const Vector& mu0, const Vector& mu1) {
  detail::check_lengths("pseudo_ra", y.size(), {w.size(), mu0.size(), mu1.size()});
  return (w.array() * (y - mu0).array() + (1.0 - w.array()) * (mu1 - y).array()).matrix();
}

/// (W / pi - (1 - W) / (1 - pi)) Y
inline Vector pseudo_pw(const Vector& y, const Vector& w, const Vector& pi) {
  detail::check_lengths("pseudo_pw", y.size(), {w.size(), pi.size()});
  detail::check_open_unit("pseudo_pw", pi);
  return ((w.array() / pi.array() - (1.0 - w.array()) / (1.0 - pi.array())) * y.array()).matrix();
}

/// Augmented inverse-propensity pseudo-outcome.
inline Vector pseudo_dr(const Vector& y, const Vector& w, const Vector& pi, const Vector& mu0, const Vector& mu1) {
  detail::check_lengths("pseudo_dr", y.size(), {w.size(), pi.size(), mu0.size(), mu1.size()});
  detail::check_open_unit("pseudo_dr", pi);
  const auto a = w.array() / pi.array();
  const auto b = (1.0 - w.array()) / (1.0 - pi.array());
  return ((a - b) * y.array() + (1.0 - a) * mu1.array() - (1.0 - b) * mu0.array()).matrix();
}

/// Nuisance values evaluated at the training rows.
struct NuisanceEstimates {
  Vector mu0, mu1, pi, mu;
};

inline Vector pseudo_outcomes(MetaKind kind, const Batch& b, const NuisanceEstimates& n) {
  switch (kind) {
    case MetaKind::RA: return pseudo_ra(b.y, b.w, n.mu0, n.mu1);
    case MetaKind::PW: return pseudo_pw(b.y, b.w, n.pi);
    case MetaKind::DR: return pseudo_dr(b.y, b.w, n.pi, n.mu0, n.mu1);
    default: throw InputError(std::string("pseudo_outcomes: ") + to_string(kind) + " is not a pseudo-outcome learner");
  }
}

// ---------------------------------------------------------------------------
// Stage regressors

/// Stage index mixed into the training seed, so every nuisance and stage fit
/// owns an independent stream.
enum class Stage : std::uint64_t { Mu0 = 1, Mu1, Propensity, Pooled, Target, Tau0, Tau1, FirstStage, Single };

inline TrainConfig stage_config(const TrainConfig& base, Stage s) {
  TrainConfig c = base;
  c.seed = derive_seed(base.seed, static_cast<std::uint64_t>(s));
  return c;
}

/// Dense regressor with d_r + d_h hidden layers and a scalar output.
inline Mlp fit_regressor(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg, bool sigmoid_out,
                         double lambda, long* stop_step = nullptr) {
  if (data.size() == 0) throw InputError("fit_regressor: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x696e6974ULL));
  Mlp init{diff::make_mlp(data.x.cols(), spec.hidden_widths(), sigmoid_out ? Activation::Sigmoid : Activation::Identity,
                          rng)};
  auto report = diff::train(std::move(init), data, diff::MlpLoss{lambda, sigmoid_out}, cfg);
  if (stop_step) *stop_step = report.stop_step;
  return std::move(report.best_params);
}

/// Propensity model: a fitted classifier or a known constant; outputs are
/// clamped to [clamp, 1 - clamp].
struct Propensity {
  std::optional<Mlp> net;
  double constant = 0.5;
  double clamp = kPropensityClamp;

  Vector operator()(const Matrix& x) const {
    Vector p = net ? diff::predict(*net, x) : Vector::Constant(x.rows(), constant);
    return p.cwiseMax(clamp).cwiseMin(1.0 - clamp);
  }
};

inline Propensity known_propensity(double pi) {
  if (!(pi > 0.0 && pi < 1.0)) throw InputError("known propensity must lie in (0,1), got " + std::to_string(pi));
  return Propensity{std::nullopt, pi, kPropensityClamp};
}

/// Sigmoid-output classifier of W on X trained with cross-entropy.
inline constexpr double kPropensityLambda = 1e-2;

inline Propensity fit_propensity(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                 double lambda = kPropensityLambda) {
  const ArmCounts arms = count_arms(data.w);
  if (arms.control == 0 || arms.treated == 0)
    throw InputError("fit_propensity: treatment indicator has a single class");
  Batch b{data.x, data.w, data.w};
  return Propensity{fit_regressor(b, spec, cfg, true, lambda), 0.5, kPropensityClamp};
}

// ---------------------------------------------------------------------------
// R-learner objective

/// Stage-2 R-learner loss on a batch whose y holds Y - mu(X) and whose w
/// holds W - pi(X): mean((y - w * tau(x))^2) + lambda |theta|^2.
struct RLoss {
  double lambda = 1e-4;

  Var operator()(Tape& tape, const diff::MlpT<Var>& m, const Batch& b) const {
    if (b.size() == 0) throw InputError("r-loss: batch has no samples");
    const Var tau = diff::forward(tape, m.net, tape.constant(b.x));
    const Var fit = tape.mul(tape.constant(b.w), tau);
    Var loss = tape.mse(fit, tape.constant(b.y));
    if (lambda != 0.0) loss = tape.add(loss, tape.scale(diff::weight_sq(tape, m.net), lambda));
    return loss;
  }
};

// ---------------------------------------------------------------------------
// Fitted meta-learner

struct MetaConfig {
  MetaKind kind = MetaKind::DR;
  double lambda = 1e-4;                 // weight penalty of every outcome and target regressor
  double propensity_lambda = kPropensityLambda;
  EstimatorConfig first_stage;          // PO learner for RA, DR and X
  XWeight x_weight = XWeight::Propensity;
  double x_weight_constant = 0.5;
  bool use_known_propensity = true;     // skip propensity fitting when the design propensity is known

  void validate() const {
    if (lambda < 0.0 || propensity_lambda < 0.0) throw InputError("MetaConfig: penalties must be >= 0");
    if (!(x_weight_constant >= 0.0 && x_weight_constant <= 1.0))
      throw InputError("MetaConfig: x_weight_constant must lie in [0,1]");
    first_stage.validate();
  }
};

class MetaEstimator final : public Estimator {
 public:
  MetaConfig cfg;
  bool binary_y = false;
  std::optional<Mlp> mu0, mu1;    // T
  std::optional<Mlp> single;      // S, input [x, w]
  std::optional<Mlp> tau;         // RA, PW, DR, R
  std::optional<Mlp> tau0, tau1;  // X
  Propensity propensity;          // X weighting

  PredictionTriple predict(const Matrix& x) const override {
    PredictionTriple p;
    switch (cfg.kind) {
      case MetaKind::T:
        p.mu0 = diff::predict(*mu0, check(x, *mu0));
        p.mu1 = diff::predict(*mu1, x);
        p.tau = p.mu1 - p.mu0;
        break;
      case MetaKind::S: {
        Matrix xw(x.rows(), x.cols() + 1);
        xw.leftCols(x.cols()) = x;
        xw.col(x.cols()).setZero();
        p.mu0 = diff::predict(*single, check(xw, *single));
        xw.col(x.cols()).setOnes();
        p.mu1 = diff::predict(*single, xw);
        p.tau = p.mu1 - p.mu0;
        break;
      }
      case MetaKind::X: {
        const Vector t1 = diff::predict(*tau1, check(x, *tau1));
        const Vector t0 = diff::predict(*tau0, x);
        const Vector g = weight(x);
        p.tau = (g.array() * t1.array() + (1.0 - g.array()) * t0.array()).matrix();
        p.has_po = false;
        break;
      }
      default:
        p.tau = diff::predict(*tau, check(x, *tau));
        p.has_po = false;
    }
    return p;
  }

  /// X-learner weighting g(x).
  Vector weight(const Matrix& x) const {
    switch (cfg.x_weight) {
      case XWeight::Propensity: return propensity(x);
      case XWeight::OneMinusPropensity: return (1.0 - propensity(x).array()).matrix();
      case XWeight::Constant: return Vector::Constant(x.rows(), cfg.x_weight_constant);
    }
    return {};
  }

  std::string kind() const override { return to_string(cfg.kind); }
  nlohmann::json to_json() const override;

  void set_stop_step(long s) { stop_step_ = s; }

 private:
  static const Matrix& check(const Matrix& x, const Mlp& m) {
    if (x.cols() != diff::stack_in_dim(m.net))
      throw ShapeError("predict: model expects " + std::to_string(diff::stack_in_dim(m.net)) + " inputs, got " +
                       std::to_string(x.cols()));
    return x;
  }
};

/// Builds the first-stage PO estimator used by RA, DR and X learners.
using FirstStageFactory = std::function<EstimatorPtr(const Batch&, const TrainConfig&)>;

inline FirstStageFactory architecture_factory(const EstimatorConfig& cfg, const NetworkSpec& spec) {
  return [cfg, spec](const Batch& b, const TrainConfig& t) -> EstimatorPtr {
    return std::make_shared<ArchitectureEstimator>(fit_estimator(cfg, spec, b, t));
  };
}

namespace detail {

inline Propensity propensity_for(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                 std::optional<double> known_pi, double lambda = kPropensityLambda) {
  if (known_pi) return known_propensity(*known_pi);
  NetworkSpec s = spec;
  s.binary_y = true;
  return fit_propensity(data, s, stage_config(cfg, Stage::Propensity), lambda);
}

inline NetworkSpec continuous(NetworkSpec s) {
  s.binary_y = false;
  return s;
}

}  // namespace detail

inline MetaEstimator fit_t_learner(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                   double lambda = 1e-4) {
  require_both_arms(data.w, "t_learner");
  MetaEstimator est;
  est.cfg.kind = MetaKind::T;
  est.cfg.lambda = lambda;
  est.binary_y = spec.binary_y;
  std::vector<Index> idx[2];
  for (Index i = 0; i < data.size(); ++i) idx[data.w(i) == 1.0].push_back(i);
  const auto t0 = stage_config(cfg, Stage::Mu0), t1 = stage_config(cfg, Stage::Mu1);
  est.mu0 = fit_regressor(data.rows(idx[0]), spec, t0, spec.binary_y, lambda);
  long steps = 0;
  est.mu1 = fit_regressor(data.rows(idx[1]), spec, t1, spec.binary_y, lambda, &steps);
  est.set_stop_step(steps);
  return est;
}

inline MetaEstimator fit_s_learner(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                   double lambda = 1e-4) {
  if (data.w.size() != data.size()) throw InputError("s_learner: treatment vector length mismatch");
  count_arms(data.w);
  MetaEstimator est;
  est.cfg.kind = MetaKind::S;
  est.cfg.lambda = lambda;
  est.binary_y = spec.binary_y;
  Batch xw = data;
  xw.x.conservativeResize(Eigen::NoChange, data.x.cols() + 1);
  xw.x.col(data.x.cols()) = data.w;
  long steps = 0;
  est.single = fit_regressor(xw, spec, stage_config(cfg, Stage::Single), spec.binary_y, lambda, &steps);
  est.set_stop_step(steps);
  return est;
}

/// RA, PW or DR learner. Nuisances are fit on all rows (no sample
/// splitting); the target network then regresses the pseudo-outcome on X.
inline MetaEstimator fit_pseudo_learner(MetaKind kind, const Batch& data, const FirstStageFactory& first_stage,
                                        const NetworkSpec& spec, const TrainConfig& cfg,
                                        std::optional<double> known_pi = std::nullopt, double lambda = 1e-4,
                                        double propensity_lambda = kPropensityLambda) {
  if (kind != MetaKind::RA && kind != MetaKind::PW && kind != MetaKind::DR)
    throw InputError(std::string("fit_pseudo_learner: ") + to_string(kind) + " is not a pseudo-outcome learner");
  require_both_arms(data.w, to_string(kind));
  NuisanceEstimates nu;
  if (kind != MetaKind::PW) {
    const auto po = first_stage(data, stage_config(cfg, Stage::FirstStage))->predict(data.x);
    nu.mu0 = po.mu0;
    nu.mu1 = po.mu1;
  }
  if (kind != MetaKind::RA) nu.pi = detail::propensity_for(data, spec, cfg, known_pi, propensity_lambda)(data.x);
  Batch target{data.x, pseudo_outcomes(kind, data, nu), data.w};
  MetaEstimator est;
  est.cfg.kind = kind;
  est.cfg.lambda = lambda;
  long steps = 0;
  est.tau = fit_regressor(target, detail::continuous(spec), stage_config(cfg, Stage::Target), false, lambda, &steps);
  est.set_stop_step(steps);
  return est;
}

/// Imputed-effect regression targets: treated rows Y - mu0(X), control rows
/// mu1(X) - Y.
inline std::pair<Batch, Batch> x_learner_targets(const Batch& data, const Vector& mu0, const Vector& mu1) {
  std::vector<Index> idx[2];
  for (Index i = 0; i < data.size(); ++i) idx[data.w(i) == 1.0].push_back(i);
  Batch treated = data.rows(idx[1]), control = data.rows(idx[0]);
  for (std::size_t k = 0; k < idx[1].size(); ++k)
    treated.y(static_cast<Index>(k)) = data.y(idx[1][k]) - mu0(idx[1][k]);
  for (std::size_t k = 0; k < idx[0].size(); ++k)
    control.y(static_cast<Index>(k)) = mu1(idx[0][k]) - data.y(idx[0][k]);
  return {treated, control};
}

inline MetaEstimator fit_x_learner(const Batch& data, const FirstStageFactory& first_stage, const NetworkSpec& spec,
                                   const TrainConfig& cfg, XWeight g = XWeight::Propensity, double g_constant = 0.5,
                                   std::optional<double> known_pi = std::nullopt, double lambda = 1e-4,
                                   double propensity_lambda = kPropensityLambda) {
  require_both_arms(data.w, "x_learner");
  const auto po = first_stage(data, stage_config(cfg, Stage::FirstStage))->predict(data.x);
  const auto [treated, control] = x_learner_targets(data, po.mu0, po.mu1);
  MetaEstimator est;
  est.cfg.kind = MetaKind::X;
  est.cfg.lambda = lambda;
  est.cfg.x_weight = g;
  est.cfg.x_weight_constant = g_constant;
  const NetworkSpec s = detail::continuous(spec);
  est.tau1 = fit_regressor(treated, s, stage_config(cfg, Stage::Tau1), false, lambda);
  long steps = 0;
  est.tau0 = fit_regressor(control, s, stage_config(cfg, Stage::Tau0), false, lambda, &steps);
  est.set_stop_step(steps);
  if (g != XWeight::Constant) est.propensity = detail::propensity_for(data, spec, cfg, known_pi, propensity_lambda);
  return est;
}

/// Batch for the R-learner objective: y = Y - mu(X), w = W - pi(X).
inline Batch r_residuals(const Batch& data, const Vector& mu_hat, const Vector& pi_hat) {
  detail::check_lengths("r_residuals", data.size(), {data.y.size(), data.w.size(), mu_hat.size(), pi_hat.size()});
  Batch resid{data.x, data.y - mu_hat, data.w - pi_hat};
  if (resid.size() == 0 || resid.w.cwiseAbs().maxCoeff() < 1e-12)
    throw InputError("r_learner: treatment residual W - pi(X) is identically zero; the effect is not identified");
  return resid;
}

/// R-learner: pooled outcome regression and propensity, then the
/// residual-on-residual objective.
inline MetaEstimator fit_r_learner(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg,
                                   std::optional<double> known_pi = std::nullopt, double lambda = 1e-4,
                                   double propensity_lambda = kPropensityLambda) {
  require_both_arms(data.w, "r_learner");
  const Mlp pooled = fit_regressor({data.x, data.y, {}}, spec, stage_config(cfg, Stage::Pooled), spec.binary_y, lambda);
  const Vector pi = detail::propensity_for(data, spec, cfg, known_pi, propensity_lambda)(data.x);
  const Batch resid = r_residuals(data, diff::predict(pooled, data.x), pi);
  Rng rng(derive_seed(stage_config(cfg, Stage::Target).seed, 0x696e6974ULL));
  Mlp init{diff::make_mlp(data.x.cols(), spec.hidden_widths(), Activation::Identity, rng)};
  MetaEstimator est;
  est.cfg.kind = MetaKind::R;
  est.cfg.lambda = lambda;
  auto report = diff::train(std::move(init), resid, RLoss{lambda}, stage_config(cfg, Stage::Target));
  est.tau = std::move(report.best_params);
  est.set_stop_step(report.stop_step);
  return est;
}

/// Dispatches on cfg.kind. known_pi is ignored unless cfg.use_known_propensity.
inline MetaEstimator fit_meta(const MetaConfig& cfg, const Batch& data, const NetworkSpec& spec,
                              const TrainConfig& train_cfg, std::optional<double> known_pi = std::nullopt) {
  cfg.validate();
  spec.validate();
  if (!cfg.use_known_propensity) known_pi.reset();
  MetaEstimator est;
  switch (cfg.kind) {
    case MetaKind::T: est = fit_t_learner(data, spec, train_cfg, cfg.lambda); break;
    case MetaKind::S: est = fit_s_learner(data, spec, train_cfg, cfg.lambda); break;
    case MetaKind::RA:
    case MetaKind::PW:
    case MetaKind::DR:
      est = fit_pseudo_learner(cfg.kind, data, architecture_factory(cfg.first_stage, spec), spec, train_cfg, known_pi,
                               cfg.lambda, cfg.propensity_lambda);
      break;
    case MetaKind::X:
      est = fit_x_learner(data, architecture_factory(cfg.first_stage, spec), spec, train_cfg, cfg.x_weight,
                          cfg.x_weight_constant, known_pi, cfg.lambda, cfg.propensity_lambda);
      break;
    case MetaKind::R:
      est = fit_r_learner(data, spec, train_cfg, known_pi, cfg.lambda, cfg.propensity_lambda);
      break;
  }
  est.cfg = cfg;
  return est;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const MetaConfig& c) {
  return {{"learner", to_string(c.kind)},
          {"lambda", c.lambda},
          {"propensity_lambda", c.propensity_lambda},
          {"first_stage", catenets::to_json(c.first_stage)},
          {"x_weight", to_string(c.x_weight)},
          {"x_weight_constant", c.x_weight_constant},
          {"use_known_propensity", c.use_known_propensity}};
}

/// Missing keys keep their defaults; first_stage defaults to a TNet.
inline MetaConfig meta_config_from_json(const nlohmann::json& j) {
  MetaConfig c;
  c.kind = meta_kind_from_string(j.at("learner").get<std::string>());
  c.lambda = j.value("lambda", c.lambda);
  c.propensity_lambda = j.value("propensity_lambda", c.propensity_lambda);
  if (j.contains("first_stage")) c.first_stage = estimator_config_from_json(j.at("first_stage"));
  c.x_weight = x_weight_from_string(j.value("x_weight", std::string(to_string(c.x_weight))));
  c.x_weight_constant = j.value("x_weight_constant", c.x_weight_constant);
  c.use_known_propensity = j.value("use_known_propensity", c.use_known_propensity);
  return c;
}

inline nlohmann::json MetaEstimator::to_json() const {
  nlohmann::json j{{"kind", "meta"}, {"config", meta::to_json(cfg)}, {"binary_y", binary_y}, {"stop_step", stop_step_}};
  const auto put = [&](const char* name, const std::optional<Mlp>& m) {
    if (m) j["nets"][name] = io::to_json(m->net);
  };
  put("mu0", mu0);
  put("mu1", mu1);
  put("single", single);
  put("tau", tau);
  put("tau0", tau0);
  put("tau1", tau1);
  put("propensity", propensity.net);
  j["propensity_constant"] = propensity.constant;
  return j;
}

inline MetaEstimator meta_from_json(const nlohmann::json& j) {
  MetaEstimator est;
  est.cfg = meta_config_from_json(j.at("config"));
  est.binary_y = j.value("binary_y", false);
  est.set_stop_step(j.value("stop_step", 0L));
  const auto get = [&](const char* name, std::optional<Mlp>& m) {
    if (j.contains("nets") && j["nets"].contains(name)) m = Mlp{io::stack_from_json(j["nets"][name])};
  };
  get("mu0", est.mu0);
  get("mu1", est.mu1);
  get("single", est.single);
  get("tau", est.tau);
  get("tau0", est.tau0);
  get("tau1", est.tau1);
  get("propensity", est.propensity.net);
  est.propensity.constant = j.value("propensity_constant", 0.5);
  return est;
}

}  // namespace catenets::meta

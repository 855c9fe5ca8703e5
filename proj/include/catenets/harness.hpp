#pragma once

#include "catenets/architectures.hpp"
#include "catenets/evaluation.hpp"
#include "catenets/metalearners.hpp"
#include "catenets/simulation.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace catenets::harness {

using nlohmann::json;
using diff::TrainConfig;

// ---------------------------------------------------------------------------
// Config

/// Synthetic covariate pool used when no covariate CSV is given (setups A/B).
struct PoolConfig {
  Index n = 4802;
  Index d_cont = 23;
  Index d_bin = 32;
  std::uint64_t seed = 0;
};

/// Where data comes from. setup A/B/C/D simulates, "csv" replays a dataset file.
struct DgpSpec {
  std::string setup = "A";
  sim::DGPConfigAB ab;
  sim::DGPConfigIHDP ihdp_cfg;
  std::string covariates;               // covariate CSV (A/B pool, or C/D design)
  std::string treatment_column = "w";   // C/D: treatment column inside the covariate CSV
  PoolConfig pool;
  std::uint64_t design_seed = 0;        // C/D synthetic design
  std::string dataset;                  // setup "csv"

  bool is_polynomial() const { return setup == "A" || setup == "B"; }
  bool is_ihdp() const { return setup == "C" || setup == "D"; }
};

/// One estimator of a sweep: an architecture (strategy) or a meta-learner (learner).
struct EstimatorEntry {
  std::string name;
  std::optional<EstimatorConfig> arch;
  std::optional<meta::MetaConfig> meta;
};

struct ExperimentConfig {
  DgpSpec dgp;
  std::vector<double> rho{0.0};
  std::vector<Index> n0{500};
  std::vector<Index> n1{500};
  std::vector<EstimatorEntry> estimators;
  NetworkSpec network;
  TrainConfig train;
  int n_seeds = 1;
  std::uint64_t base_seed = 0;
  std::string output;
  int jobs = 0;  // 0: all available cores
};

namespace detail {

/// Reads keys of one JSON object, naming the full path in every error and
/// rejecting keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw InputError("config: " + path_ + ": " + msg); }
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw InputError("config: " + sub(key) + ": " + msg);
  }
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    if (!has(key)) fail(key, "missing required field");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(key, j_.at(key));
  }
  template <class T>
  T require(const std::string& key) {
    return convert<T>(key, at(key));
  }
  template <class T>
  std::vector<T> list(const std::string& key, std::vector<T> fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected a list");
    if (v.empty()) fail(key, "list must not be empty");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<T>(key + "[" + std::to_string(i) + "]", v[i]));
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(key, "unknown field");
  }

 private:
  template <class T>
  T convert(const std::string& key, const json& v) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) fail(key, "must be >= 0");
      }
      return v.get<T>();
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Runs f, prefixing any library InputError with the config path.
template <class F>
auto at_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const InputError& e) {
    const std::string what = e.what();
    if (what.rfind("config: ", 0) == 0) throw;
    throw InputError("config: " + path + ": " + what);
  }
}

inline char setup_char(const Fields& f, const std::string& s) {
  if (s.size() != 1) f.fail("setup", "expected one of A, B, C, D, csv");
  return s[0];
}

}  // namespace detail

inline TrainConfig train_config_from_json(const json& j, const std::string& path = "train") {
  detail::Fields f(j, path);
  TrainConfig t;
  t.batch_size = f.get<Index>("batch_size", t.batch_size);
  t.val_fraction = f.get<double>("val_fraction", t.val_fraction);
  t.patience = f.get<int>("patience", t.patience);
  t.max_epochs = f.get<int>("max_epochs", t.max_epochs);
  t.max_steps = f.get<long>("max_steps", t.max_steps);
  t.step_size = f.get<double>("step_size", t.step_size);
  t.seed = f.get<std::uint64_t>("seed", t.seed);
  f.finish();
  if (t.batch_size < 1) f.fail("batch_size", "must be positive");
  if (!(t.val_fraction > 0.0 && t.val_fraction < 1.0)) f.fail("val_fraction", "must lie in (0, 1)");
  if (t.patience < 0) f.fail("patience", "must be >= 0");
  if (t.max_epochs < 1) f.fail("max_epochs", "must be positive");
  if (t.max_steps < 0) f.fail("max_steps", "must be >= 0");
  if (!(t.step_size > 0.0)) f.fail("step_size", "must be positive");
  return t;
}

inline json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size}, {"val_fraction", t.val_fraction}, {"patience", t.patience},
          {"max_epochs", t.max_epochs}, {"max_steps", t.max_steps},       {"step_size", t.step_size},
          {"seed", t.seed}};
}

inline NetworkSpec network_from_json(const json& j, const std::string& path = "network") {
  detail::Fields f(j, path);
  NetworkSpec s;
  s.d_r = f.get<int>("d_r", s.d_r);
  s.n_r = f.get<Index>("n_r", s.n_r);
  s.d_h = f.get<int>("d_h", s.d_h);
  s.n_h = f.get<Index>("n_h", s.n_h);
  s.binary_y = f.get<bool>("binary_y", s.binary_y);
  f.finish();
  detail::at_path(path, [&] { s.validate(); return 0; });
  return s;
}

inline EstimatorConfig arch_config_from_json(const json& j, const std::string& path) {
  detail::Fields f(j, path);
  EstimatorConfig c;
  const auto strategy = f.require<std::string>("strategy");
  c.strategy = detail::at_path(f.sub("strategy"), [&] { return strategy_from_string(strategy); });
  c.lambda1 = f.get<double>("lambda1", c.lambda1);
  c.lambda2 = f.get<double>("lambda2", c.lambda2);
  c.lambda_o = f.get<double>("lambda_o", c.lambda_o);
  c.regularize_representation = f.get<bool>("regularize_representation", c.regularize_representation);
  c.reverse_offset = f.get<bool>("reverse_offset", c.reverse_offset);
  f.has("name");
  f.finish();
  detail::at_path(path, [&] { c.validate(); return 0; });
  return c;
}

inline meta::MetaConfig meta_config_from_json(const json& j, const std::string& path) {
  detail::Fields f(j, path);
  meta::MetaConfig c;
  const auto learner = f.require<std::string>("learner");
  c.kind = detail::at_path(f.sub("learner"), [&] { return meta::meta_kind_from_string(learner); });
  c.lambda = f.get<double>("lambda", c.lambda);
  c.propensity_lambda = f.get<double>("propensity_lambda", c.propensity_lambda);
  if (f.has("first_stage")) {
    json fs = f.at("first_stage");
    if (fs.is_object()) fs.erase("name");
    c.first_stage = arch_config_from_json(fs, f.sub("first_stage"));
  }
  const auto g = f.get<std::string>("x_weight", meta::to_string(c.x_weight));
  c.x_weight = detail::at_path(f.sub("x_weight"), [&] { return meta::x_weight_from_string(g); });
  c.x_weight_constant = f.get<double>("x_weight_constant", c.x_weight_constant);
  c.use_known_propensity = f.get<bool>("use_known_propensity", c.use_known_propensity);
  f.has("name");
  f.finish();
  detail::at_path(path, [&] { c.validate(); return 0; });
  return c;
}

/// An entry with "strategy" is an architecture, one with "learner" a meta-learner.
inline EstimatorEntry estimator_entry_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw InputError("config: " + path + ": expected an object");
  const bool arch = j.contains("strategy"), learner = j.contains("learner");
  if (arch == learner) throw InputError("config: " + path + ": needs exactly one of 'strategy' or 'learner'");
  EstimatorEntry e;
  if (arch) {
    e.arch = arch_config_from_json(j, path);
    e.name = to_string(e.arch->strategy);
  } else {
    e.meta = meta_config_from_json(j, path);
    e.name = meta::to_string(e.meta->kind);
  }
  if (j.contains("name")) {
    if (!j["name"].is_string() || j["name"].get<std::string>().empty())
      throw InputError("config: " + path + ".name: expected a non-empty string");
    e.name = j["name"].get<std::string>();
  }
  if (e.name.find_first_of(",\n\r\"") != std::string::npos)
    throw InputError("config: " + path + ".name: must not contain commas, quotes or newlines");
  return e;
}

inline json to_json(const EstimatorEntry& e) {
  json j = e.arch ? catenets::to_json(*e.arch) : meta::to_json(*e.meta);
  j["name"] = e.name;
  return j;
}

/// Reads the "dgp" object. rho, n0 and n1 given here seed the sweep axes
/// when the top level does not list them.
inline DgpSpec dgp_from_json(const json& j, const std::string& path = "dgp") {
  detail::Fields f(j, path);
  DgpSpec d;
  d.setup = f.get<std::string>("setup", d.setup);
  if (d.setup != "csv") {
    const char c = detail::setup_char(f, d.setup);
    if (c != 'A' && c != 'B' && c != 'C' && c != 'D') f.fail("setup", "expected one of A, B, C, D, csv");
  }
  auto& ab = d.ab;
  ab.rho = f.get<double>("rho", ab.rho);
  ab.n0 = f.get<Index>("n0", ab.n0);
  ab.n1 = f.get<Index>("n1", ab.n1);
  ab.n_test = f.get<Index>("n_test", ab.n_test);
  ab.p_beta = f.get<double>("p_beta", ab.p_beta);
  ab.p_inter = f.get<double>("p_inter", ab.p_inter);
  ab.intercept = f.get<double>("intercept", ab.intercept);
  auto& ih = d.ihdp_cfg;
  ih.offset = f.get<double>("offset", ih.offset);
  ih.target_att = f.get<double>("target_att", ih.target_att);
  ih.test_fraction = f.get<double>("test_fraction", ih.test_fraction);
  ab.noise_sd = ih.noise_sd = f.get<double>("noise_sd", ab.noise_sd);
  d.covariates = f.get<std::string>("covariates", d.covariates);
  d.treatment_column = f.get<std::string>("treatment_column", d.treatment_column);
  d.design_seed = f.get<std::uint64_t>("design_seed", d.design_seed);
  d.dataset = f.get<std::string>("dataset", d.dataset);
  if (f.has("pool")) {
    detail::Fields p(f.at("pool"), f.sub("pool"));
    d.pool.n = p.get<Index>("n", d.pool.n);
    d.pool.d_cont = p.get<Index>("d_cont", d.pool.d_cont);
    d.pool.d_bin = p.get<Index>("d_bin", d.pool.d_bin);
    d.pool.seed = p.get<std::uint64_t>("seed", d.pool.seed);
    p.finish();
    if (d.pool.n < 1 || d.pool.d_cont < 0 || d.pool.d_bin < 0 || d.pool.d_cont + d.pool.d_bin < 1)
      p.fail("needs n >= 1 and at least one column");
  }
  f.finish();
  if (d.setup == "csv" && d.dataset.empty()) f.fail("dataset", "required when setup is csv");
  if (d.is_polynomial()) {
    ab.setup = d.setup[0];
    detail::at_path(path, [&] { ab.validate(); return 0; });
  } else if (d.is_ihdp()) {
    ih.setup = d.setup[0];
    detail::at_path(path, [&] { ih.validate(); return 0; });
  }
  return d;
}

/// Parses and validates a whole experiment; every error names its field.
inline ExperimentConfig experiment_from_json(const json& j) {
  detail::Fields f(j, "");
  ExperimentConfig c;
  c.dgp = dgp_from_json(f.at("dgp"));
  if (f.has("sweep")) {
    detail::Fields s(f.at("sweep"), "sweep");
    c.rho = s.list<double>("rho", {c.dgp.ab.rho});
    c.n0 = s.list<Index>("n0", {c.dgp.ab.n0});
    c.n1 = s.list<Index>("n1", {c.dgp.ab.n1});
    s.finish();
    for (std::size_t i = 0; i < c.rho.size(); ++i)
      if (!(c.rho[i] >= 0.0 && c.rho[i] <= 1.0)) s.fail("rho[" + std::to_string(i) + "]", "must lie in [0,1]");
    for (const auto* axis : {&c.n0, &c.n1})
      for (std::size_t i = 0; i < axis->size(); ++i)
        if ((*axis)[i] < 1) s.fail((axis == &c.n0 ? "n0[" : "n1[") + std::to_string(i) + "]", "must be positive");
  } else {
    c.rho = {c.dgp.ab.rho};
    c.n0 = {c.dgp.ab.n0};
    c.n1 = {c.dgp.ab.n1};
  }
  const json& est = f.at("estimators");
  if (!est.is_array() || est.empty()) f.fail("estimators", "expected a non-empty list");
  std::set<std::string> names;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const std::string path = "estimators[" + std::to_string(i) + "]";
    c.estimators.push_back(estimator_entry_from_json(est[i], path));
    if (!names.insert(c.estimators.back().name).second)
      throw InputError("config: " + path + ".name: duplicate estimator name '" + c.estimators.back().name + "'");
  }
  if (f.has("network")) c.network = network_from_json(f.at("network"));
  if (f.has("train")) c.train = train_config_from_json(f.at("train"));
  c.n_seeds = f.get<int>("n_seeds", c.n_seeds);
  c.base_seed = f.get<std::uint64_t>("base_seed", c.base_seed);
  c.output = f.get<std::string>("output", c.output);
  c.jobs = f.get<int>("jobs", c.jobs);
  f.finish();
  if (c.n_seeds < 1) f.fail("n_seeds", "must be positive");
  if (c.jobs < 0) f.fail("jobs", "must be >= 0");
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config: " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

// ---------------------------------------------------------------------------
// Data

/// One point of the sweep grid. rho, n0 and n1 only apply to setups A/B.
struct Setting {
  std::string setup;
  std::optional<double> rho;
  Index n0 = 0, n1 = 0;
};

/// Covariates and designs loaded once per experiment and shared read-only.
class DataSource {
 public:
  explicit DataSource(const DgpSpec& spec) : spec_(spec) {
    if (spec.is_polynomial()) {
      pool_ = spec.covariates.empty()
                  ? sim::gen_covariates_synthetic(spec.pool.n, spec.pool.d_cont, spec.pool.d_bin, spec.pool.seed)
                  : sim::load_covariates_csv(spec.covariates);
    } else if (spec.is_ihdp()) {
      if (spec.covariates.empty()) {
        auto [cov, w] = sim::synthetic_ihdp_design(spec.design_seed);
        design_x_ = std::move(cov.x);
        design_w_ = std::move(w);
      } else {
        load_design(spec.covariates, spec.treatment_column);
      }
    } else {
      fixed_ = sim::read_dataset_csv(spec.dataset);
    }
  }

  std::vector<Setting> settings(const ExperimentConfig& c) const {
    std::vector<Setting> out;
    if (spec_.is_polynomial()) {
      for (double rho : c.rho)
        for (Index n0 : c.n0)
          for (Index n1 : c.n1) out.push_back({spec_.setup, rho, n0, n1});
    } else if (spec_.is_ihdp()) {
      const auto n1 = static_cast<Index>(design_w_.sum());
      out.push_back({spec_.setup, std::nullopt, design_w_.size() - n1, n1});
    } else {
      const auto n1 = static_cast<Index>(fixed_->train.w.sum());
      out.push_back({"csv", std::nullopt, fixed_->train.size() - n1, n1});
    }
    return out;
  }

  sim::SimulatedDataset make(const Setting& s, std::uint64_t seed) const {
    if (spec_.is_polynomial()) {
      sim::DGPConfigAB cfg = spec_.ab;
      cfg.rho = *s.rho;
      cfg.n0 = s.n0;
      cfg.n1 = s.n1;
      cfg.seed = seed;
      return sim::simulate_setup_ab(pool_, cfg);
    }
    if (spec_.is_ihdp()) {
      sim::DGPConfigIHDP cfg = spec_.ihdp_cfg;
      cfg.seed = seed;
      return sim::simulate_ihdp(design_x_, design_w_, cfg);
    }
    return *fixed_;
  }

 private:
  void load_design(const std::string& path, const std::string& column) {
    const sim::Covariates cov = sim::load_covariates_csv(path);
    const auto it = std::find(cov.names.begin(), cov.names.end(), column);
    if (it == cov.names.end()) throw InputError(path + ": no treatment column '" + column + "'");
    const auto k = static_cast<Index>(it - cov.names.begin());
    design_w_ = cov.x.col(k);
    for (Index i = 0; i < design_w_.size(); ++i)
      if (design_w_(i) != 0.0 && design_w_(i) != 1.0) throw InputError(path + ": treatment column must be 0/1");
    design_x_.resize(cov.x.rows(), cov.x.cols() - 1);
    for (Index j = 0, out = 0; j < cov.x.cols(); ++j)
      if (j != k) design_x_.col(out++) = cov.x.col(j);
  }

  DgpSpec spec_;
  sim::Covariates pool_;
  Matrix design_x_;
  Vector design_w_;
  std::optional<sim::SimulatedDataset> fixed_;
};

/// Dataset seed of one (setting, replicate seed) pair. It depends only on the
/// setting's values, never on its position in the grid, so a cell run alone
/// sees the same data as inside a sweep.
inline std::uint64_t dataset_seed(const Setting& s, std::uint64_t seed) {
  std::uint64_t h = derive_seed(seed, 0x64617461ULL);
  for (char ch : s.setup) h = derive_seed(h, static_cast<unsigned char>(ch));
  h = derive_seed(h, s.rho ? std::bit_cast<std::uint64_t>(*s.rho) : 0x6e6f6e65ULL);
  h = derive_seed(h, static_cast<std::uint64_t>(s.n0));
  return derive_seed(h, static_cast<std::uint64_t>(s.n1));
}

/// Training seed shared by every estimator of a cell.
inline std::uint64_t training_seed(std::uint64_t data_seed) { return derive_seed(data_seed, 0x74726169ULL); }

// ---------------------------------------------------------------------------
// Fitting and scoring

inline EstimatorPtr fit_entry(const EstimatorEntry& e, const sim::SimulatedDataset& ds, const NetworkSpec& spec,
                              const TrainConfig& train) {
  const Batch b = ds.train.batch();
  if (e.arch) return std::make_shared<ArchitectureEstimator>(fit_estimator(*e.arch, spec, b, train));
  return std::make_shared<meta::MetaEstimator>(meta::fit_meta(*e.meta, b, spec, train, ds.propensity));
}

/// Restores a model written by Estimator::to_json().
inline EstimatorPtr estimator_from_json(const json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "architecture") return std::make_shared<ArchitectureEstimator>(architecture_from_json(j));
  if (kind == "meta") return std::make_shared<meta::MetaEstimator>(meta::meta_from_json(j));
  throw InputError("model dump: unknown estimator kind '" + kind + "'");
}

inline eval::EvalTarget eval_target(const sim::SimulatedDataset& ds) {
  eval::EvalTarget t;
  t.tau = ds.test.tau;
  t.mu0 = ds.test.mu0;
  t.mu1 = ds.test.mu1;
  t.factual_train_y = ds.train.y;
  return t;
}

inline eval::MetricReport score(const Estimator& est, const sim::SimulatedDataset& ds) {
  if (ds.test.size() == 0) throw InputError("dataset has no test rows");
  const PredictionTriple p = est.predict(ds.test.x);
  return p.has_po ? eval::evaluate(p.tau, p.mu0, p.mu1, eval_target(ds))
                  : eval::evaluate(p.tau, Vector(), Vector(), eval_target(ds));
}

// ---------------------------------------------------------------------------
// Result rows

struct ResultRow {
  std::string setup;
  std::optional<double> rho;
  Index n0 = 0, n1 = 0;
  std::uint64_t seed = 0;
  std::string estimator;
  std::optional<double> rmse_cate, normalized_rmse, rmse_mu0, rmse_mu1;
  double train_seconds = 0.0;
  long stop_step = 0;
  std::string error;  // empty on success
};

inline ResultRow blank_row(const Setting& s, std::uint64_t seed, const std::string& estimator) {
  ResultRow r;
  r.setup = s.setup;
  r.rho = s.rho;
  r.n0 = s.n0;
  r.n1 = s.n1;
  r.seed = seed;
  r.estimator = estimator;
  return r;
}

inline const std::vector<std::string>& result_header() {
  static const std::vector<std::string> h{"setup",    "rho",      "n0",          "n1",           "seed",
                                          "estimator", "rmse_cate", "normalized_rmse", "rmse_mu0", "rmse_mu1",
                                          "train_seconds", "stop_step", "error"};
  return h;
}

/// Shortest round-trip decimal form, so equal doubles always print the same bytes.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

inline void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  const auto& h = result_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << '\n';
  for (const auto& r : rows) {
    out << r.setup << ',' << format_optional(r.rho) << ',' << r.n0 << ',' << r.n1 << ',' << r.seed << ','
        << r.estimator << ',' << format_optional(r.rmse_cate) << ',' << format_optional(r.normalized_rmse) << ','
        << format_optional(r.rmse_mu0) << ',' << format_optional(r.rmse_mu1) << ','
        << format_double(r.train_seconds) << ',' << r.stop_step << ',' << sanitize(r.error) << '\n';
  }
}

inline void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write results to " + path);
  write_results_csv(rows, out);
}

namespace detail {

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::optional<double> parse_optional(const std::string& s, const std::string& where) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InputError(where + ": not a number '" + s + "'");
  return v;
}

template <class T>
T parse_integer(const std::string& s, const std::string& where) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InputError(where + ": not an integer '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<ResultRow> read_results_csv(std::istream& in, const std::string& name = "results") {
  std::string line;
  if (!std::getline(in, line)) throw InputError(name + ": empty input");
  if (detail::split_row(line) != result_header())
    throw InputError(name + ": header does not match the result schema");
  std::vector<ResultRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty() || line == "\r") continue;
    const auto c = detail::split_row(line);
    const std::string where = name + ":" + std::to_string(n);
    if (c.size() != result_header().size()) throw InputError(where + ": expected 13 cells");
    ResultRow r;
    r.setup = c[0];
    r.rho = detail::parse_optional(c[1], where);
    r.n0 = detail::parse_integer<Index>(c[2], where);
    r.n1 = detail::parse_integer<Index>(c[3], where);
    r.seed = detail::parse_integer<std::uint64_t>(c[4], where);
    r.estimator = c[5];
    r.rmse_cate = detail::parse_optional(c[6], where);
    r.normalized_rmse = detail::parse_optional(c[7], where);
    r.rmse_mu0 = detail::parse_optional(c[8], where);
    r.rmse_mu1 = detail::parse_optional(c[9], where);
    r.train_seconds = detail::parse_optional(c[10], where).value_or(0.0);
    r.stop_step = detail::parse_integer<long>(c[11], where);
    r.error = c[12];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("path not found: " + path);
  return read_results_csv(in, path);
}

// ---------------------------------------------------------------------------
// Sweep

/// Fits and scores one estimator on one dataset. Failures become an error row.
inline ResultRow run_cell(const EstimatorEntry& e, const Setting& s, std::uint64_t seed,
                          const sim::SimulatedDataset& ds, const NetworkSpec& spec, TrainConfig train) {
  ResultRow r = blank_row(s, seed, e.name);
  train.seed = training_seed(dataset_seed(s, seed));
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const EstimatorPtr est = fit_entry(e, ds, spec, train);
    r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.stop_step = est->stop_step();
    const auto m = score(*est, ds);
    for (double v : {m.rmse_cate, m.normalized_rmse_cate, m.rmse_mu0.value_or(0.0), m.rmse_mu1.value_or(0.0)})
      if (!std::isfinite(v)) throw TrainingError("non-finite metric");
    r.rmse_cate = m.rmse_cate;
    r.normalized_rmse = m.normalized_rmse_cate;
    r.rmse_mu0 = m.rmse_mu0;
    r.rmse_mu1 = m.rmse_mu1;
  } catch (const std::exception& ex) {
    r.error = ex.what();
    if (r.error.empty()) r.error = "failed";
  }
  return r;
}

inline int resolve_jobs(int jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs every (setting, seed, estimator) cell. Replicate r uses seed
/// base_seed + r. Rows come back in grid order: settings as listed (rho, then
/// n0, then n1), then seed, then estimator order of the config.
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  const DataSource source(cfg.dgp);
  const auto settings = source.settings(cfg);
  const auto n_est = cfg.estimators.size();
  const auto n_data = settings.size() * static_cast<std::size_t>(cfg.n_seeds);

  struct DataSlot {
    std::once_flag once;
    std::shared_ptr<const sim::SimulatedDataset> ds;
    std::string error;
    std::atomic<std::size_t> pending{0};  // estimators still to run; the last one frees ds
  };
  std::vector<DataSlot> data(n_data);
  for (auto& slot : data) slot.pending = n_est;
  const auto seed_of = [&](std::size_t d) { return cfg.base_seed + d % static_cast<std::size_t>(cfg.n_seeds); };
  const auto setting_of = [&](std::size_t d) -> const Setting& { return settings[d / static_cast<std::size_t>(cfg.n_seeds)]; };

  std::vector<ResultRow> rows(n_data * n_est);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t cell; (cell = next.fetch_add(1)) < rows.size();) {
      const std::size_t d = cell / n_est;
      const Setting& s = setting_of(d);
      const std::uint64_t seed = seed_of(d);
      DataSlot& slot = data[d];
      std::call_once(slot.once, [&] {
        try {
          slot.ds = std::make_shared<const sim::SimulatedDataset>(source.make(s, dataset_seed(s, seed)));
        } catch (const std::exception& ex) {
          slot.error = std::string("simulate: ") + ex.what();
        }
      });
      const EstimatorEntry& e = cfg.estimators[cell % n_est];
      if (!slot.ds) {
        rows[cell] = blank_row(s, seed, e.name);
        rows[cell].error = slot.error;
      } else {
        rows[cell] = run_cell(e, s, seed, *slot.ds, cfg.network, cfg.train);
      }
      if (slot.pending.fetch_sub(1) == 1) slot.ds.reset();
    }
  };
  const int jobs = std::min<int>(resolve_jobs(cfg.jobs), static_cast<int>(rows.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregation

struct MetricSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double se = 0.0;
};

struct AggregateRow {
  std::string setup;
  std::optional<double> rho;
  Index n0 = 0, n1 = 0;
  std::string estimator;
  std::size_t n_seeds = 0;   // rows without an error
  std::size_t n_failed = 0;
  bool single_seed = false;  // SE reported as 0 by convention
  MetricSummary rmse_cate, normalized_rmse, rmse_mu0, rmse_mu1;
};

/// Mean and standard error (sample SD / sqrt(n)); one value gives SE 0.
/// Values are sorted first so the result does not depend on row order.
inline MetricSummary summarize(std::vector<double> v) {
  MetricSummary s;
  s.n = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return s;
}

/// Groups rows by (setup, rho, n0, n1, estimator) and summarizes each metric
/// across seeds. Output is sorted by that key.
inline std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw InputError("aggregate: empty input");
  using Key = std::tuple<std::string, bool, double, Index, Index, std::string>;
  struct Acc {
    std::vector<double> cate, norm, mu0, mu1;
    std::size_t ok = 0, failed = 0;
  };
  std::map<Key, Acc> groups;
  for (const auto& r : rows) {
    Acc& a = groups[Key{r.setup, r.rho.has_value(), r.rho.value_or(0.0), r.n0, r.n1, r.estimator}];
    if (!r.error.empty()) {
      ++a.failed;
      continue;
    }
    ++a.ok;
    if (r.rmse_cate) a.cate.push_back(*r.rmse_cate);
    if (r.normalized_rmse) a.norm.push_back(*r.normalized_rmse);
    if (r.rmse_mu0) a.mu0.push_back(*r.rmse_mu0);
    if (r.rmse_mu1) a.mu1.push_back(*r.rmse_mu1);
  }
  std::vector<AggregateRow> out;
  for (auto& [k, a] : groups) {
    AggregateRow g;
    g.setup = std::get<0>(k);
    if (std::get<1>(k)) g.rho = std::get<2>(k);
    g.n0 = std::get<3>(k);
    g.n1 = std::get<4>(k);
    g.estimator = std::get<5>(k);
    g.n_seeds = a.ok;
    g.n_failed = a.failed;
    g.single_seed = a.ok == 1;
    g.rmse_cate = summarize(a.cate);
    g.normalized_rmse = summarize(a.norm);
    g.rmse_mu0 = summarize(a.mu0);
    g.rmse_mu1 = summarize(a.mu1);
    out.push_back(g);
  }
  return out;
}

inline void write_aggregate_csv(const std::vector<AggregateRow>& rows, std::ostream& out) {
  out << "setup,rho,n0,n1,estimator,n_seeds,n_failed,single_seed,rmse_cate_mean,rmse_cate_se,normalized_rmse_mean,"
         "normalized_rmse_se,rmse_mu0_mean,rmse_mu0_se,rmse_mu1_mean,rmse_mu1_se\n";
  const auto put = [&](const MetricSummary& m) {
    if (m.n == 0)
      out << ",,";
    else
      out << ',' << format_double(m.mean) << ',' << format_double(m.se);
  };
  for (const auto& r : rows) {
    out << r.setup << ',' << format_optional(r.rho) << ',' << r.n0 << ',' << r.n1 << ',' << r.estimator << ','
        << r.n_seeds << ',' << r.n_failed << ',' << (r.single_seed ? 1 : 0);
    put(r.rmse_cate);
    put(r.normalized_rmse);
    put(r.rmse_mu0);
    put(r.rmse_mu1);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// lambda2 selection on held-out factual error

struct Lambda2Trial {
  double lambda2 = 0.0;
  double factual_rmse = 0.0;
};

struct Lambda2Choice {
  double lambda2 = 0.0;
  double threshold = 0.0;  // (1 + delta) * best factual RMSE
  std::vector<Lambda2Trial> trace;
};

inline constexpr double kLambda2Delta = 0.02;

/// Largest lambda2 whose factual RMSE is within (1 + delta) of the best one.
inline Lambda2Choice select_lambda2(const std::vector<Lambda2Trial>& trace, double delta = kLambda2Delta) {
  if (trace.empty()) throw InputError("tune_lambda2: empty grid");
  if (!(delta >= 0.0)) throw InputError("tune_lambda2: delta must be >= 0");
  double best = trace.front().factual_rmse;
  for (const auto& t : trace) best = std::min(best, t.factual_rmse);
  Lambda2Choice c{trace.front().lambda2, (1.0 + delta) * best, trace};
  for (const auto& t : trace)
    if (t.factual_rmse <= c.threshold) c.lambda2 = t.lambda2;
  return c;
}

inline void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw InputError("tune_lambda2: empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0)) throw InputError("tune_lambda2: grid values must be >= 0");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw InputError("tune_lambda2: grid must be strictly ascending");
  }
}

/// RMSE of potential-outcome predictions against observed outcomes on the test partition.
inline double factual_rmse(const Estimator& est, const sim::Split& s) {
  const PredictionTriple p = est.predict(s.x);
  if (!p.has_po) throw InputError("tune_lambda2: estimator does not predict potential outcomes");
  Vector f(s.size());
  for (Index i = 0; i < s.size(); ++i) f(i) = s.w(i) == 1.0 ? p.mu1(i) : p.mu0(i);
  return eval::rmse(f, s.y, "factual_rmse");
}

/// Fits the template once per grid value on the training partition and scores
/// factual predictions on the held-out test partition.
inline Lambda2Choice tune_lambda2(const sim::SimulatedDataset& ds, const EstimatorConfig& tmpl, const NetworkSpec& spec,
                                  const TrainConfig& train, const std::vector<double>& grid,
                                  double delta = kLambda2Delta) {
  check_grid(grid);
  if (ds.test.size() == 0) throw InputError("tune_lambda2: dataset has no held-out rows");
  std::vector<Lambda2Trial> trace;
  for (double l2 : grid) {
    EstimatorConfig c = tmpl;
    c.lambda2 = l2;
    const auto est = fit_estimator(c, spec, ds.train.batch(), train);
    trace.push_back({l2, factual_rmse(est, ds.test)});
  }
  return select_lambda2(trace, delta);
}

}  // namespace catenets::harness

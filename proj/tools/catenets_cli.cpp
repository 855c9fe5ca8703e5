#include "catenets/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace catenets;
using namespace catenets::harness;

namespace {

// Name of the step currently running, reported when something throws.
std::string g_stage = "startup";

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

/// Writes to --out, or stdout when it is empty.
template <class F>
void emit(const std::string& out, F&& write) {
  if (out.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream f(out);
  if (!f) throw InputError("cannot write " + out);
  write(f);
  if (!f) throw InputError("write failed: " + out);
}

/// Estimator job file: {"estimator": {...}, "network": {...}, "train": {...}}.
struct FitJob {
  EstimatorEntry estimator;
  NetworkSpec network;
  TrainConfig train;
};

FitJob fit_job(const json& j) {
  harness::detail::Fields f(j, "");
  FitJob job;
  job.estimator = estimator_entry_from_json(f.at("estimator"), "estimator");
  if (f.has("network")) job.network = network_from_json(f.at("network"));
  if (f.has("train")) job.train = train_config_from_json(f.at("train"));
  f.finish();
  return job;
}

void cmd_simulate(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  g_stage = "reading config";
  json j = read_json(config);
  if (j.contains("dgp")) j = j["dgp"];
  const DgpSpec spec = dgp_from_json(j);
  g_stage = "loading covariates";
  const DataSource source(spec);
  ExperimentConfig grid;
  grid.dgp = spec;
  grid.rho = {spec.ab.rho};
  grid.n0 = {spec.ab.n0};
  grid.n1 = {spec.ab.n1};
  const Setting s = source.settings(grid).front();
  g_stage = "simulating";
  const auto ds = source.make(s, dataset_seed(s, seed.value_or(0)));
  g_stage = "writing dataset";
  emit(out, [&](std::ostream& o) { sim::write_dataset_csv(ds, o); });
}

void cmd_fit(const std::string& config, const std::string& data, std::optional<std::uint64_t> seed,
             const std::string& out) {
  g_stage = "reading config";
  FitJob job = fit_job(read_json(config));
  if (seed) job.train.seed = *seed;
  g_stage = "reading dataset";
  const auto ds = sim::read_dataset_csv(data);
  g_stage = "training " + job.estimator.name;
  const auto est = fit_entry(job.estimator, ds, job.network, job.train);
  g_stage = "writing model";
  emit(out, [&](std::ostream& o) { o << est->to_json().dump() << '\n'; });
}

void cmd_eval(const std::string& model, const std::string& data, const std::string& out) {
  g_stage = "loading model";
  const auto est = estimator_from_json(read_json(model));
  g_stage = "reading dataset";
  const auto ds = sim::read_dataset_csv(data);
  g_stage = "scoring";
  const auto m = score(*est, ds);
  json j{{"estimator", est->kind()}, {"rmse_cate", m.rmse_cate}, {"normalized_rmse", m.normalized_rmse_cate}};
  if (m.rmse_mu0) j["rmse_mu0"] = *m.rmse_mu0;
  if (m.rmse_mu1) j["rmse_mu1"] = *m.rmse_mu1;
  emit(out, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

void cmd_sweep(const std::string& config, std::optional<std::uint64_t> seed, std::string out, int jobs) {
  g_stage = "reading config";
  ExperimentConfig cfg = load_experiment(config);
  if (seed) cfg.base_seed = *seed;
  if (jobs > 0) cfg.jobs = jobs;
  if (out.empty()) out = cfg.output;
  g_stage = "running sweep";
  const auto rows = run_experiment(cfg);
  g_stage = "writing results";
  emit(out, [&](std::ostream& o) { write_results_csv(rows, o); });
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.error.empty();
  std::cerr << rows.size() << " rows, " << failed << " failed\n";
}

void cmd_aggregate(const std::string& results, const std::string& out) {
  g_stage = "reading results";
  const auto rows = read_results_csv(results);
  g_stage = "aggregating";
  const auto agg = aggregate(rows);
  g_stage = "writing summary";
  emit(out, [&](std::ostream& o) { write_aggregate_csv(agg, o); });
}

void cmd_tune(const std::string& config, const std::string& data, std::optional<std::uint64_t> seed,
              const std::string& out) {
  g_stage = "reading config";
  const json j = read_json(config);
  json job_json = j;
  job_json.erase("grid");
  job_json.erase("delta");
  FitJob job = fit_job(job_json);
  if (!job.estimator.arch) throw InputError("config: estimator: lambda2 tuning needs an architecture (strategy)");
  if (seed) job.train.seed = *seed;
  if (!j.contains("grid") || !j["grid"].is_array()) throw InputError("config: grid: expected a list of lambda2 values");
  const auto grid = j["grid"].get<std::vector<double>>();
  const double delta = j.value("delta", kLambda2Delta);
  check_grid(grid);
  g_stage = "reading dataset";
  const auto ds = sim::read_dataset_csv(data);
  g_stage = "tuning lambda2";
  const auto choice = tune_lambda2(ds, *job.estimator.arch, job.network, job.train, grid, delta);
  json trace = json::array();
  for (const auto& t : choice.trace) trace.push_back({{"lambda2", t.lambda2}, {"factual_rmse", t.factual_rmse}});
  g_stage = "writing trace";
  emit(out, [&](std::ostream& o) {
    o << json{{"lambda2", choice.lambda2}, {"threshold", choice.threshold}, {"delta", delta}, {"trace", trace}}.dump(2)
      << '\n';
  });
}

void cmd_weight_report(const std::string& model, const std::string& out) {
  g_stage = "loading model";
  const json j = read_json(model);
  const auto est = architecture_from_json(j);
  const auto* flex = std::get_if<FlexTENetModel>(&est.model());
  if (!flex) throw InputError("weight report needs a FlexTENet model, got " + est.kind());
  emit(out, [&](std::ostream& o) {
    o << "layer,subspace,units,mean_norm\n";
    for (const auto& r : weight_norm_report(*flex))
      o << r.layer << ',' << r.subspace << ',' << r.units << ',' << format_double(r.mean_norm) << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural CATE estimators: simulate data, fit, evaluate and run sweeps"};
  app.require_subcommand(1);

  std::string config, out, data, model, results;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  const auto common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output path (default: stdout)");
  };

  auto* simulate = app.add_subcommand("simulate", "write one simulated dataset as CSV");
  common(simulate, true);
  simulate->add_option("--seed", seed, "replicate seed");

  auto* fit = app.add_subcommand("fit", "train one estimator on a dataset CSV and dump the model");
  common(fit, true);
  fit->add_option("dataset", data, "dataset CSV")->required();
  fit->add_option("--seed", seed, "training seed");

  auto* evaluate = app.add_subcommand("eval", "score a dumped model on the test rows of a dataset CSV");
  common(evaluate, false);
  evaluate->add_option("model", model, "model JSON")->required();
  evaluate->add_option("dataset", data, "dataset CSV")->required();

  auto* sweep = app.add_subcommand("sweep", "run a full experiment from a config file");
  common(sweep, true);
  sweep->add_option("--seed", seed, "base seed (overrides the config)");
  sweep->add_option("--jobs", jobs, "parallel cells (overrides the config)")->check(CLI::NonNegativeNumber);

  auto* agg = app.add_subcommand("aggregate", "mean and standard error per setting and estimator");
  common(agg, false);
  agg->add_option("results", results, "sweep results CSV")->required();

  auto* tune = app.add_subcommand("tune-lambda2", "pick lambda2 by held-out factual error");
  common(tune, true);
  tune->add_option("dataset", data, "dataset CSV")->required();
  tune->add_option("--seed", seed, "training seed");

  auto* weights = app.add_subcommand("weight-report", "per-layer weight norms of a FlexTENet model");
  common(weights, false);
  weights->add_option("model", model, "model JSON")->required();

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*simulate) cmd_simulate(config, seed, out);
    if (*fit) cmd_fit(config, data, seed, out);
    if (*evaluate) cmd_eval(model, data, out);
    if (*sweep) cmd_sweep(config, seed, out, jobs);
    if (*agg) cmd_aggregate(results, out);
    if (*tune) cmd_tune(config, data, seed, out);
    if (*weights) cmd_weight_report(model, out);
  } catch (const std::exception& e) {
    std::cerr << "catenets " << name << ": failed while " << g_stage << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include "catenets/harness.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace catenets;
using namespace catenets::harness;

namespace {

json tiny_config() {
  return json::parse(R"({
    "dgp": {"setup": "A", "n_test": 40, "pool": {"n": 200, "d_cont": 3, "d_bin": 2, "seed": 1}},
    "sweep": {"rho": [0.5], "n0": [40], "n1": [40]},
    "estimators": [{"strategy": "tnet"}, {"strategy": "flextenet", "name": "flex"}],
    "network": {"n_r": 4, "n_h": 2},
    "train": {"max_epochs": 5, "step_size": 1e-3},
    "n_seeds": 1,
    "base_seed": 3,
    "jobs": 1
  })");
}

std::string csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  write_results_csv(rows, out);
  return out.str();
}

/// CSV text with the timing column blanked.
std::string without_timing(const std::vector<ResultRow>& rows) {
  auto copy = rows;
  for (auto& r : copy) r.train_seconds = 0.0;
  return csv(copy);
}

std::string error_of(const json& j) {
  try {
    experiment_from_json(j);
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

ResultRow row(const std::string& est, std::uint64_t seed, double value) {
  ResultRow r;
  r.setup = "A";
  r.rho = 0.5;
  r.n0 = 10;
  r.n1 = 10;
  r.seed = seed;
  r.estimator = est;
  r.rmse_cate = value;
  r.normalized_rmse = value / 2.0;
  return r;
}

}  // namespace

TEST(Config, ParsesTinyExperiment) {
  const auto c = experiment_from_json(tiny_config());
  EXPECT_EQ(c.dgp.setup, "A");
  ASSERT_EQ(c.estimators.size(), 2u);
  EXPECT_EQ(c.estimators[0].name, "tnet");
  EXPECT_EQ(c.estimators[1].name, "flex");
  EXPECT_EQ(c.network.n_r, 4);
  EXPECT_EQ(c.train.max_epochs, 5);
  EXPECT_EQ(c.base_seed, 3u);
}

TEST(Config, MisconfiguredEstimatorRejectedWithIndex) {
  auto j = tiny_config();
  j["estimators"].push_back({{"strategy", "no_such_net"}});
  EXPECT_NE(error_of(j).find("estimators[2].strategy"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["estimators"][1]["lambda2"] = -1.0;
  EXPECT_NE(error_of(j).find("estimators[1]"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["estimators"][0]["lamda1"] = 0.1;
  EXPECT_NE(error_of(j).find("estimators[0].lamda1: unknown field"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["estimators"][0] = {{"strategy", "tnet"}, {"learner", "dr_learner"}};
  EXPECT_NE(error_of(j).find("estimators[0]"), std::string::npos);

  j = tiny_config();
  j["estimators"][1]["name"] = "tnet";
  EXPECT_NE(error_of(j).find("duplicate"), std::string::npos);
}

TEST(Config, NamedFieldErrors) {
  auto j = tiny_config();
  j["sweep"]["rho"] = json::array();
  EXPECT_NE(error_of(j).find("sweep.rho"), std::string::npos);
  j = tiny_config();
  j["sweep"]["rho"] = {0.2, 1.5};
  EXPECT_NE(error_of(j).find("sweep.rho[1]"), std::string::npos);
  j = tiny_config();
  j["train"]["step_size"] = 0.0;
  EXPECT_NE(error_of(j).find("train.step_size"), std::string::npos);
  j = tiny_config();
  j["dgp"]["setup"] = "Z";
  EXPECT_NE(error_of(j).find("dgp.setup"), std::string::npos);
  j = tiny_config();
  j.erase("dgp");
  EXPECT_NE(error_of(j).find("dgp: missing"), std::string::npos);
  j = tiny_config();
  j["n_seeds"] = "five";
  EXPECT_NE(error_of(j).find("n_seeds: expected an integer"), std::string::npos);
  j = tiny_config();
  j["network"]["d_r"] = 0;
  j["network"]["d_h"] = 0;
  EXPECT_NE(error_of(j).find("network"), std::string::npos);
}

TEST(Config, MetaLearnerEntries) {
  auto j = tiny_config();
  j["estimators"] = json::parse(
      R"([{"learner": "dr_learner", "first_stage": {"strategy": "tarnet"}}, {"learner": "x_learner", "x_weight": "constant"}])");
  const auto c = experiment_from_json(j);
  ASSERT_TRUE(c.estimators[0].meta);
  EXPECT_EQ(c.estimators[0].name, "dr_learner");
  EXPECT_EQ(c.estimators[0].meta->first_stage.strategy, Strategy::TARNet);
  EXPECT_EQ(c.estimators[1].meta->x_weight, meta::XWeight::Constant);
  j["estimators"][1]["x_weight"] = "sometimes";
  EXPECT_NE(error_of(j).find("estimators[1].x_weight"), std::string::npos);
}

TEST(Sweep, CardinalityAndHeader) {
  const auto rows = run_experiment(experiment_from_json(tiny_config()));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].estimator, "tnet");
  EXPECT_EQ(rows[1].estimator, "flex");
  for (const auto& r : rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_EQ(r.seed, 3u);
    ASSERT_TRUE(r.rmse_cate && r.rmse_mu0 && r.rmse_mu1);
    EXPECT_TRUE(std::isfinite(*r.rmse_cate));
    EXPECT_GT(r.stop_step, 0);
  }
  const std::string text = csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "setup,rho,n0,n1,seed,estimator,rmse_cate,normalized_rmse,rmse_mu0,rmse_mu1,train_seconds,stop_step,error");
}

TEST(Sweep, GridOrderAndReplicateSeeds) {
  auto j = tiny_config();
  j["sweep"]["rho"] = {0.0, 1.0};
  j["n_seeds"] = 2;
  const auto rows = run_experiment(experiment_from_json(j));
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(*rows[0].rho, 0.0);
  EXPECT_EQ(rows[0].seed, 3u);
  EXPECT_EQ(rows[2].seed, 4u);
  EXPECT_EQ(*rows[4].rho, 1.0);
  EXPECT_EQ(rows[7].estimator, "flex");
}

TEST(Sweep, RerunIsByteIdenticalAcrossJobCounts) {
  auto j = tiny_config();
  j["sweep"]["rho"] = {0.0, 0.5};
  j["n_seeds"] = 2;
  const auto a = run_experiment(experiment_from_json(j));
  j["jobs"] = 3;
  const auto b = run_experiment(experiment_from_json(j));
  EXPECT_EQ(without_timing(a), without_timing(b));
}

TEST(Sweep, CellInIsolationMatchesFullSweep) {
  auto j = tiny_config();
  j["sweep"]["rho"] = {0.0, 0.5};
  j["n_seeds"] = 2;
  const auto full = run_experiment(experiment_from_json(j));
  j["sweep"]["rho"] = {0.5};
  j["base_seed"] = 4;
  j["n_seeds"] = 1;
  j["estimators"] = json::array({j["estimators"][1]});
  const auto alone = run_experiment(experiment_from_json(j));
  ASSERT_EQ(alone.size(), 1u);
  const auto it = std::find_if(full.begin(), full.end(), [](const ResultRow& r) {
    return *r.rho == 0.5 && r.seed == 4 && r.estimator == "flex";
  });
  ASSERT_NE(it, full.end());
  EXPECT_EQ(*it->rmse_cate, *alone[0].rmse_cate);
  EXPECT_EQ(it->stop_step, alone[0].stop_step);
}

TEST(Sweep, DifferentRhoGetsIndependentData) {
  const Setting a{"A", 0.0, 10, 10}, b{"A", 0.5, 10, 10};
  EXPECT_NE(dataset_seed(a, 1), dataset_seed(b, 1));
  EXPECT_NE(dataset_seed(a, 1), dataset_seed(a, 2));
  EXPECT_EQ(dataset_seed(a, 1), dataset_seed(Setting{"A", 0.0, 10, 10}, 1));
}

TEST(Sweep, EstimatorFailureBecomesErrorRow) {
  auto j = tiny_config();
  j["estimators"].push_back({{"strategy", "tnet"}, {"name", "blows_up"}, {"lambda1", 1e308}});
  const auto rows = run_experiment(experiment_from_json(j));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_FALSE(rows[2].error.empty());
  EXPECT_FALSE(rows[2].rmse_cate.has_value());
  const std::string text = csv(rows);
  EXPECT_NE(text.find("blows_up"), std::string::npos);
}

TEST(Sweep, IhdpSetupRunsWithoutRho) {
  auto j = tiny_config();
  j["dgp"] = {{"setup", "D"}};
  j.erase("sweep");
  j["network"]["d_r"] = 2;
  j["network"]["d_h"] = 2;
  j["estimators"] = json::parse(R"([{"strategy": "tarnet"}, {"learner": "ra_learner"}])");
  const auto rows = run_experiment(experiment_from_json(j));
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_FALSE(r.rho.has_value());
    EXPECT_EQ(r.n1, 139);
    EXPECT_EQ(r.n0, 608);
  }
  EXPECT_FALSE(rows[1].rmse_mu0.has_value());
}

TEST(ResultsCsv, RoundTrip) {
  std::vector<ResultRow> rows{row("tnet", 0, 0.1), row("flex", 1, 1.0 / 3.0)};
  rows[1].error = "boom, again";
  rows[1].rmse_cate.reset();
  rows[0].rho.reset();
  std::istringstream in(csv(rows));
  const auto back = read_results_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(*back[0].rmse_cate, 0.1);
  EXPECT_FALSE(back[0].rho.has_value());
  EXPECT_EQ(*back[1].normalized_rmse, 1.0 / 6.0);
  EXPECT_EQ(back[1].error, "boom; again");
  std::istringstream again(csv(back));
  EXPECT_EQ(csv(read_results_csv(again)), csv(back));
  std::istringstream bad("a,b\n");
  EXPECT_THROW(read_results_csv(bad), InputError);
}

TEST(Aggregate, MeanAndStandardError) {
  const auto g = aggregate({row("tnet", 0, 1.0), row("tnet", 1, 3.0)});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].rmse_cate.mean, 2.0);
  EXPECT_DOUBLE_EQ(g[0].rmse_cate.se, 1.0);
  EXPECT_EQ(g[0].n_seeds, 2u);
  EXPECT_FALSE(g[0].single_seed);
  EXPECT_EQ(g[0].rmse_mu0.n, 0u);
}

TEST(Aggregate, SingleSeedFlagged) {
  const auto g = aggregate({row("tnet", 0, 1.5)});
  EXPECT_TRUE(g[0].single_seed);
  EXPECT_EQ(g[0].rmse_cate.se, 0.0);
  EXPECT_THROW(aggregate({}), InputError);
}

TEST(Aggregate, PermutationInvariantAndSkipsErrors) {
  std::vector<ResultRow> rows;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (std::uint64_t s = 0; s < 7; ++s) {
    rows.push_back(row("tnet", s, u(rng)));
    rows.push_back(row("flex", s, u(rng)));
  }
  rows.push_back(row("flex", 9, 100.0));
  rows.back().error = "diverged";
  const auto write = [](const std::vector<AggregateRow>& g) {
    std::ostringstream out;
    write_aggregate_csv(g, out);
    return out.str();
  };
  const std::string ref = write(aggregate(rows));
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(write(aggregate(rows)), ref);
  }
  const auto g = aggregate(rows);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].estimator, "flex");
  EXPECT_EQ(g[0].n_seeds, 7u);
  EXPECT_EQ(g[0].n_failed, 1u);
  EXPECT_LT(g[0].rmse_cate.mean, 4.0);
}

TEST(Lambda2, SelectionRule) {
  const std::vector<Lambda2Trial> flat{{1e-4, 1.0}, {1e-3, 1.0}, {1e-2, 1.0}};
  EXPECT_EQ(select_lambda2(flat).lambda2, 1e-2);
  const std::vector<Lambda2Trial> rising{{1e-4, 1.0}, {1e-3, 1.5}, {1e-2, 2.0}};
  EXPECT_EQ(select_lambda2(rising).lambda2, 1e-4);
  const std::vector<Lambda2Trial> ties{{1e-4, 1.2}, {1e-3, 1.0}, {1e-2, 1.0}, {1e-1, 1.01}};
  EXPECT_EQ(select_lambda2(ties, 0.0).lambda2, 1e-2);
  EXPECT_EQ(select_lambda2(ties).lambda2, 1e-1);  // within 2%
  EXPECT_THROW(select_lambda2({}), InputError);
  EXPECT_THROW(check_grid({}), InputError);
  EXPECT_THROW(check_grid({1e-2, 1e-3}), InputError);
}

TEST(Lambda2, DriverTracesEveryGridValue) {
  const auto pool = sim::gen_covariates_synthetic(200, 3, 2, 1);
  sim::DGPConfigAB d;
  d.n0 = d.n1 = 40;
  d.n_test = 40;
  d.rho = 0.5;
  const auto ds = sim::simulate_setup_ab(pool, d);
  EstimatorConfig tmpl;
  tmpl.strategy = Strategy::TNetSoft;
  NetworkSpec spec;
  spec.n_r = 4;
  spec.n_h = 2;
  TrainConfig t;
  t.max_epochs = 5;
  const auto c = tune_lambda2(ds, tmpl, spec, t, {1e-4, 1e-2, 1.0});
  ASSERT_EQ(c.trace.size(), 3u);
  for (const auto& tr : c.trace) EXPECT_GT(tr.factual_rmse, 0.0);
  EXPECT_EQ(c.lambda2, select_lambda2(c.trace).lambda2);
  EXPECT_THROW(tune_lambda2(ds, tmpl, spec, t, {}), InputError);
}

TEST(Models, DumpRoundTripPredictsIdentically) {
  const auto pool = sim::gen_covariates_synthetic(200, 3, 2, 1);
  sim::DGPConfigAB d;
  d.n0 = d.n1 = 40;
  d.n_test = 20;
  const auto ds = sim::simulate_setup_ab(pool, d);
  NetworkSpec spec;
  spec.n_r = 4;
  spec.n_h = 2;
  TrainConfig t;
  t.max_epochs = 3;
  for (const char* text : {R"({"strategy": "offset"})", R"({"learner": "dr_learner"})"}) {
    const auto e = estimator_entry_from_json(json::parse(text), "e");
    const auto est = fit_entry(e, ds, spec, t);
    const auto back = estimator_from_json(json::parse(est->to_json().dump()));
    EXPECT_EQ(back->predict(ds.test.x).tau, est->predict(ds.test.x).tau) << text;
  }
  EXPECT_THROW(estimator_from_json(json{{"kind", "forest"}}), InputError);
}

// Simulate one setup-A dataset, fit a few estimators and compare CATE error.

#include "catenets/harness.hpp"

#include <iomanip>
#include <iostream>

using namespace catenets;

int main() {
  const auto pool = sim::gen_covariates_synthetic(2000, 10, 10, 0);
  sim::DGPConfigAB dgp;
  dgp.rho = 0.5;
  dgp.n0 = 1000;
  dgp.n1 = 300;
  dgp.n_test = 500;
  dgp.seed = 1;
  const auto ds = sim::simulate_setup_a(pool, dgp);

  NetworkSpec spec;
  spec.n_r = 50;
  spec.n_h = 25;
  diff::TrainConfig train;
  train.step_size = 1e-3;
  train.seed = 7;

  std::cout << std::setw(12) << "estimator" << std::setw(12) << "rmse_cate" << std::setw(8) << "steps" << '\n';
  const auto report = [&](const std::string& name, const Estimator& est) {
    const auto m = harness::score(est, ds);
    std::cout << std::setw(12) << name << std::setw(12) << std::setprecision(4) << m.rmse_cate << std::setw(8)
              << est.stop_step() << '\n';
  };

  for (Strategy s : {Strategy::TNet, Strategy::TARNet, Strategy::Offset, Strategy::FlexTENet}) {
    EstimatorConfig cfg;
    cfg.strategy = s;
    report(to_string(s), fit_estimator(cfg, spec, ds.train.batch(), train));
  }

  meta::MetaConfig dr;
  dr.kind = meta::MetaKind::DR;
  report("dr_learner", meta::fit_meta(dr, ds.train.batch(), spec, train, ds.propensity));
}

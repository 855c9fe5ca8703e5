#include "catenets/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

using namespace catenets;
using namespace catenets::sim;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "catenets_sim_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string write_file(const std::string& name, const std::string& body) {
  const auto p = scratch(name);
  std::ofstream(p) << body;
  return p.string();
}

const Covariates& pool() {
  static const Covariates c = gen_covariates_synthetic(1600, 5, 4, 11);
  return c;
}

DGPConfigAB ab(char setup, double rho, std::uint64_t seed) {
  DGPConfigAB c;
  c.setup = setup;
  c.rho = rho;
  c.n0 = 400;
  c.n1 = 200;
  c.n_test = 500;
  c.seed = seed;
  return c;
}

/// Evaluates the stored polynomial coefficients term by term.
std::pair<double, double> replay_polynomial(const SurfaceRecord& s, const Matrix& x, Index i) {
  double m0 = s.intercept, m1 = s.intercept;
  for (Index j = 0; j < x.cols(); ++j) {
    m0 += s.beta(j) * x(i, j);
    m1 += s.setup == "A" ? (s.beta(j) + s.gamma(j)) * x(i, j) : s.beta(j) * (1 - s.omega(j)) * x(i, j);
  }
  for (const auto& t : s.interactions) {
    const double v = x(i, t.j) * x(i, t.l);
    m0 += t.beta * v;
    m1 += (s.setup == "A" ? t.beta : t.beta * (1 - t.omega)) * v;
  }
  return {m0, m1};
}

void expect_consistent(const SimulatedDataset& ds) {
  for (const Split* s : {&ds.train, &ds.test}) {
    ASSERT_EQ(s->tau.size(), s->size());
    EXPECT_LE((s->tau - (s->mu1 - s->mu0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Covariate sources

TEST(LoadCovariates, BinaryAndContinuousTyping) {
  auto cov = load_covariates_csv(write_file("bin.csv", "a,b\n0,1\n1,1\n0,0\n"));
  EXPECT_EQ(cov.rows(), 3);
  EXPECT_EQ(cov.cols(), 2);
  EXPECT_EQ(cov.types[0], ColumnType::Binary);
  EXPECT_EQ(cov.types[1], ColumnType::Binary);
  EXPECT_EQ(cov.names[1], "b");

  cov = load_covariates_csv(write_file("cont.csv", "a\n0\n0.5\n1\n"));
  EXPECT_EQ(cov.types[0], ColumnType::Continuous);
  EXPECT_EQ(cov.x(1, 0), 0.5);
}

TEST(LoadCovariates, Errors) {
  const auto message = [](const std::string& path) {
    try {
      load_covariates_csv(path);
    } catch (const InputError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(scratch("does_not_exist.csv").string()).find("not found"), std::string::npos);
  EXPECT_NE(message(write_file("ragged.csv", "a,b\n1,2\n3\n")).find("ragged"), std::string::npos);
  EXPECT_NE(message(write_file("text.csv", "a,b\n1,x\n")).find("non-numeric"), std::string::npos);
  EXPECT_NE(message(write_file("empty.csv", "")).find("empty"), std::string::npos);
}

TEST(SyntheticCovariates, DeterministicAndShaped) {
  const auto a = gen_covariates_synthetic(200, 3, 2, 5);
  const auto b = gen_covariates_synthetic(200, 3, 2, 5);
  EXPECT_EQ(a.x, b.x);
  EXPECT_NE(a.x, gen_covariates_synthetic(200, 3, 2, 6).x);
  EXPECT_EQ(a.types[2], ColumnType::Continuous);
  EXPECT_EQ(a.types[3], ColumnType::Binary);
  EXPECT_TRUE((a.x.rightCols(2).array() == 0.0 || a.x.rightCols(2).array() == 1.0).all());

  const auto c = gen_covariates_synthetic(50, 4, 0, 1);
  for (auto t : c.types) EXPECT_EQ(t, ColumnType::Continuous);
}

TEST(SyntheticCovariates, ContinuousMeansWithinCltBound) {
  const Index n = 4000;
  const auto c = gen_covariates_synthetic(n, 10, 0, 3);
  const double bound = 3.0 / std::sqrt(static_cast<double>(n));
  for (Index j = 0; j < 10; ++j) EXPECT_LT(std::abs(c.x.col(j).mean()), bound) << j;
}

// ---------------------------------------------------------------------------
// Partition

TEST(AssignTreatment, PartitionContract) {
  const auto p = assign_treatment_random(100, 30, 30, 20, 4);
  EXPECT_EQ(p.propensity, 0.5);
  EXPECT_EQ(p.control.size(), 30u);
  EXPECT_EQ(p.treated.size(), 30u);
  EXPECT_EQ(p.test.size(), 20u);
  std::set<Index> all(p.control.begin(), p.control.end());
  all.insert(p.treated.begin(), p.treated.end());
  all.insert(p.test.begin(), p.test.end());
  EXPECT_EQ(all.size(), 80u);
  const auto q = assign_treatment_random(100, 30, 30, 20, 4);
  EXPECT_EQ(p.control, q.control);
  EXPECT_EQ(p.test, q.test);
  EXPECT_DOUBLE_EQ(assign_treatment_random(100, 60, 20, 0, 1).propensity, 0.25);
  EXPECT_THROW(assign_treatment_random(50, 30, 30, 20, 4), InputError);
}

// ---------------------------------------------------------------------------
// Setup A

TEST(SetupA, NoHeterogeneityAtRhoZero) {
  const auto ds = simulate_setup_a(pool(), ab('A', 0.0, 1));
  EXPECT_TRUE((ds.train.tau.array() == 0.0).all());
  EXPECT_TRUE((ds.test.tau.array() == 0.0).all());
}

TEST(SetupA, FullHeterogeneityIsRowSum) {
  const auto ds = simulate_setup_a(pool(), ab('A', 1.0, 2));
  EXPECT_LE((ds.test.tau - ds.test.x.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SetupA, CoefficientReplayMatches) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = simulate_setup_a(pool(), ab('A', 0.5, seed));
    expect_consistent(ds);
    for (Index i = 0; i < ds.test.size(); ++i) {
      const auto [m0, m1] = replay_polynomial(ds.surface, ds.test.x, i);
      EXPECT_NEAR(ds.test.mu0(i), m0, 1e-12);
      EXPECT_NEAR(ds.test.tau(i), m1 - m0, 1e-12);
    }
  }
}

TEST(SetupA, InteractionStructure) {
  const auto ds = simulate_setup_a(pool(), ab('A', 0.5, 3));
  const Index d = pool().cols();
  std::map<Index, int> pair_count;
  int squares = 0;
  for (std::size_t k = 0; k < ds.surface.interactions.size(); ++k) {
    const auto& t = ds.surface.interactions[k];
    if (k < 5) {
      EXPECT_EQ(t.j, t.l);  // squares of the 5 continuous columns come first
      ++squares;
    } else {
      ++pair_count[t.j];
      if (t.l != t.j) ++pair_count[t.l];
    }
  }
  EXPECT_EQ(squares, 5);
  for (Index j = 0; j < d; ++j) EXPECT_EQ(pair_count[j], 1) << "variable " << j;
}

TEST(SetupA, GammaCountWithinBinomialBand) {
  const double rho = 0.3;
  const Index d = pool().cols();
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    total += draw_polynomial_surface(ab('A', rho, seed), pool().types, rng).gamma.sum();
  }
  const double trials = 100.0 * static_cast<double>(d);
  EXPECT_LE(std::abs(total - rho * trials), 3.0 * std::sqrt(trials * rho * (1 - rho)));
}

TEST(SetupA, NoiseVarianceOnTestResiduals) {
  std::vector<double> resid;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ds = simulate_setup_a(pool(), ab('A', 0.5, seed));
    for (Index i = 0; i < ds.test.size(); ++i)
      resid.push_back(ds.test.y(i) - (ds.test.w(i) == 1.0 ? ds.test.mu1(i) : ds.test.mu0(i)));
  }
  const double mean = std::accumulate(resid.begin(), resid.end(), 0.0) / static_cast<double>(resid.size());
  double var = 0.0;
  for (double r : resid) var += (r - mean) * (r - mean);
  var /= static_cast<double>(resid.size() - 1);
  EXPECT_GE(var, 0.9);
  EXPECT_LE(var, 1.1);
}

TEST(SetupA, ArmSizesAndPropensity) {
  const auto ds = simulate_setup_a(pool(), ab('A', 0.5, 8));
  EXPECT_EQ(ds.train.size(), 600);
  EXPECT_EQ(ds.train.w.sum(), 200.0);
  EXPECT_EQ(ds.test.size(), 500);
  EXPECT_DOUBLE_EQ(*ds.propensity, 200.0 / 600.0);
  EXPECT_EQ(ds.train.arm(1.0).size(), 200);
}

TEST(SetupA, InsufficientPool) {
  auto cfg = ab('A', 0.5, 1);
  cfg.n0 = 2000;
  EXPECT_THROW(simulate_setup_a(pool(), cfg), InputError);
}

TEST(SetupA, SameSeedSameData) {
  const auto a = simulate_setup_a(pool(), ab('A', 0.5, 9));
  const auto b = simulate_setup_a(pool(), ab('A', 0.5, 9));
  EXPECT_EQ(a.train.y, b.train.y);
  EXPECT_EQ(a.test.x, b.test.x);
}

// ---------------------------------------------------------------------------
// Setup B

TEST(SetupB, NoCancellationAtRhoZero) {
  const auto ds = simulate_setup_b(pool(), ab('B', 0.0, 1));
  EXPECT_EQ(ds.test.mu0, ds.test.mu1);
  EXPECT_TRUE((ds.test.tau.array() == 0.0).all());
}

TEST(SetupB, FullCancellationAtRhoOne) {
  auto cfg = ab('B', 1.0, 2);
  cfg.intercept = 1.5;
  const auto ds = simulate_setup_b(pool(), cfg);
  EXPECT_TRUE((ds.test.mu1.array() == 1.5).all());
  EXPECT_LE((ds.test.tau - (1.5 - ds.test.mu0.array()).matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SetupB, EffectSupportIsSubsetOfPrognosticSupport) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = simulate_setup_b(pool(), ab('B', 0.5, seed));
    const auto& s = ds.surface;
    // tau must be exactly representable with the monomials active in mu0.
    std::vector<Vector> feats;
    for (Index j = 0; j < s.beta.size(); ++j)
      if (s.beta(j) != 0.0) feats.push_back(ds.test.x.col(j));
    for (const auto& t : s.interactions)
      if (t.beta != 0.0) feats.push_back(ds.test.x.col(t.j).cwiseProduct(ds.test.x.col(t.l)));
    if (feats.empty()) {
      EXPECT_TRUE((ds.test.tau.array() == 0.0).all());
    } else {
      Matrix f(ds.test.size(), static_cast<Index>(feats.size()));
      for (std::size_t k = 0; k < feats.size(); ++k) f.col(static_cast<Index>(k)) = feats[k];
      const Vector coef = f.completeOrthogonalDecomposition().solve(ds.test.tau);
      EXPECT_LT((f * coef - ds.test.tau).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed;
    }
    expect_consistent(ds);
    for (Index i = 0; i < 20; ++i) {
      const auto [m0, m1] = replay_polynomial(s, ds.test.x, i);
      EXPECT_NEAR(ds.test.tau(i), m1 - m0, 1e-12);
    }
  }
}

// ---------------------------------------------------------------------------
// IHDP-style setups

TEST(Ihdp, SetupDCalibratesTreatedMeanToFour) {
  const auto [cov, w] = synthetic_ihdp_design(1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DGPConfigIHDP cfg;
    cfg.seed = seed;
    const auto ds = simulate_ihdp_d(cov.x, w, cfg);
    expect_consistent(ds);
    double sum = 0.0;
    int n = 0;
    for (const Split* s : {&ds.train, &ds.test})
      for (Index i = 0; i < s->size(); ++i)
        if (s->w(i) == 1.0) sum += s->tau(i), ++n;
    EXPECT_NEAR(sum / n, 4.0, 1e-12);
    // tau = x beta - omega by construction.
    const Vector expect = (ds.test.x * ds.surface.beta).array() - ds.surface.ihdp_omega;
    EXPECT_LE((ds.test.tau - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ihdp, SetupCCalibratedTheSameWay) {
  const auto [cov, w] = synthetic_ihdp_design(2);
  DGPConfigIHDP cfg;
  cfg.seed = 3;
  const auto ds = simulate_ihdp_c(cov.x, w, cfg);
  expect_consistent(ds);
  double sum = 0.0;
  int n = 0;
  for (const Split* s : {&ds.train, &ds.test})
    for (Index i = 0; i < s->size(); ++i)
      if (s->w(i) == 1.0) sum += s->tau(i), ++n;
  EXPECT_NEAR(sum / n, 4.0, 1e-12);
  const Vector mu1 = (ds.test.x * ds.surface.beta).array() - ds.surface.ihdp_omega;
  EXPECT_LE((ds.test.mu1 - mu1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ihdp, BetaSupportAndDegenerateDraw) {
  Rng rng(4);
  const Vector beta = draw_ihdp_beta(10000, rng);
  int zeros = 0;
  for (Index j = 0; j < beta.size(); ++j) {
    const double v = beta(j) * 10.0;
    EXPECT_NEAR(v, std::round(v), 1e-12);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 4.0 + 1e-12);
    zeros += beta(j) == 0.0;
  }
  EXPECT_NEAR(zeros / 10000.0, 0.6, 0.03);

  SurfaceRecord s;
  s.setup = "D";
  s.beta = Vector::Zero(3);
  const auto [mu0, mu1] = ihdp_surfaces(s, Matrix::Random(5, 3));
  EXPECT_TRUE((mu0.array() == 1.0).all());
}

TEST(Ihdp, SplitAndErrors) {
  const auto [cov, w] = synthetic_ihdp_design(5);
  EXPECT_EQ(w.sum(), 139.0);
  EXPECT_EQ(cov.cols(), 25);
  DGPConfigIHDP cfg;
  const auto ds = simulate_ihdp_d(cov.x, w, cfg);
  EXPECT_EQ(ds.test.size(), 74);
  EXPECT_EQ(ds.train.size() + ds.test.size(), 747);
  EXPECT_FALSE(ds.propensity.has_value());
  EXPECT_THROW(simulate_ihdp_d(cov.x, Vector(), cfg), InputError);
  EXPECT_THROW(simulate_ihdp_d(cov.x, Vector::Zero(10), cfg), InputError);
}

// ---------------------------------------------------------------------------
// Dataset CSV

TEST(DatasetCsv, RoundTrip) {
  const auto ds = simulate_setup_b(pool(), ab('B', 0.5, 6));
  const auto path = scratch("roundtrip.csv").string();
  write_dataset_csv(ds, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.substr(0, 9), "id,x_1,x_");
  EXPECT_TRUE(header.ends_with(",w,y,mu0,mu1,tau,split")) << header;
  const auto back = read_dataset_csv(path);
  EXPECT_EQ(back.train.x, ds.train.x);
  EXPECT_EQ(back.train.y, ds.train.y);
  EXPECT_EQ(back.test.tau, ds.test.tau);
  EXPECT_EQ(back.test.ids, ds.test.ids);
}

TEST(DatasetCsv, RejectsWrongColumns) {
  EXPECT_THROW(read_dataset_csv(write_file("bad_ds.csv", "a,b\n1,2\n")), InputError);
}

#include "catenets/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace catenets;
using namespace catenets::eval;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

double pair_count_auc(const Vector& s, const Vector& y) {
  double hits = 0.0, pairs = 0.0;
  for (Index i = 0; i < s.size(); ++i)
    for (Index j = 0; j < s.size(); ++j)
      if (y(i) == 1.0 && y(j) == 0.0) {
        pairs += 1.0;
        hits += s(i) > s(j) ? 1.0 : (s(i) == s(j) ? 0.5 : 0.0);
      }
  return hits / pairs;
}

}  // namespace

TEST(RmseCate, Examples) {
  const Vector t = vec({1.0, -2.0, 0.5});
  EXPECT_EQ(rmse_cate(t, t), 0.0);
  EXPECT_DOUBLE_EQ(rmse_cate((t.array() + 1.0).matrix(), t), 1.0);
  EXPECT_DOUBLE_EQ(rmse_cate(vec({0, 0}), vec({3, 4})), std::sqrt(12.5));
  EXPECT_NEAR(rmse_cate(vec({0, 0}), vec({3, 4})), 3.5355, 1e-4);
}

TEST(RmseCate, Errors) {
  EXPECT_THROW(rmse_cate(vec({1}), vec({1, 2})), ShapeError);
  EXPECT_THROW(rmse_cate(Vector(0), Vector(0)), InputError);
}

TEST(RmseCate, TranslationEquivariant) {
  const Vector a = vec({0.3, 1.2, -4.0, 2.2}), b = vec({0.0, 1.0, -3.0, 2.5});
  EXPECT_NEAR(rmse_cate((a.array() + 7.5).matrix(), (b.array() + 7.5).matrix()), rmse_cate(a, b), 1e-12);
}

TEST(NormalizedRmse, Examples) {
  const Vector y = vec({1.0, 3.0, 5.0});  // sample SD 2
  EXPECT_EQ(normalized_rmse(0.0, y), 0.0);
  EXPECT_DOUBLE_EQ(normalized_rmse(2.0, y), 1.0);
  EXPECT_THROW(normalized_rmse(1.0, vec({2, 2, 2})), InputError);
  EXPECT_THROW(normalized_rmse(1.0, vec({2})), InputError);
}

TEST(NormalizedRmse, JointScaleInvariance) {
  const Vector y = vec({0.1, 2.0, -1.0, 4.0}), th = vec({1, 2, 3}), t = vec({1.5, 1.0, 2.0});
  const double k = 3.7;
  EXPECT_NEAR(normalized_rmse(rmse_cate(k * th, k * t), k * y), normalized_rmse(rmse_cate(th, t), y), 1e-12);
}

TEST(ThreeClass, Examples) {
  auto p = twins_threeclass_probs(0.5, 0.5);
  EXPECT_EQ(p[0], 0.25);
  EXPECT_EQ(p[1], 0.5);
  EXPECT_EQ(p[2], 0.25);
  p = twins_threeclass_probs(0.0, 1.0);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[2], 1.0);
  p = twins_threeclass_probs(1.0, 1.0);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 1.0);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_THROW(twins_threeclass_probs(1.1, 0.5), InputError);
  EXPECT_THROW(twins_threeclass_probs(0.2, -0.01), InputError);
}

TEST(ThreeClass, SumsToOneOnGrid) {
  for (int i = 0; i <= 50; ++i)
    for (int j = 0; j <= 50; ++j) {
      const auto p = twins_threeclass_probs(i / 50.0, j / 50.0);
      EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
    }
}

TEST(RmseCfDiff, Examples) {
  const Vector d = vec({1, 0, -1, 1});
  EXPECT_EQ(rmse_cf_diff(d, d), 0.0);
  EXPECT_DOUBLE_EQ(rmse_cf_diff(vec({0, 0}), vec({1, -1})), 1.0);
  EXPECT_LE(rmse_cf_diff(vec({0, 0, 0}), vec({1, -1, 0})), rmse_cf_diff(vec({0, 0}), vec({1, -1})));
  EXPECT_THROW(rmse_cf_diff(vec({0}), vec({1, -1})), ShapeError);
}

TEST(Auc, Examples) {
  const Vector y = vec({0, 0, 1, 1});
  EXPECT_EQ(auc(vec({0.1, 0.2, 0.8, 0.9}), y), 1.0);
  EXPECT_EQ(auc(vec({0.3, 0.3, 0.3, 0.3}), y), 0.5);
  const Vector s = vec({0.4, 0.1, 0.35, 0.8});
  EXPECT_DOUBLE_EQ(auc(-s, y), 1.0 - auc(s, y));
  EXPECT_THROW(auc(s, vec({1, 1, 1, 1})), InputError);
  EXPECT_THROW(auc(s, vec({0, 2, 1, 1})), InputError);
}

TEST(Auc, MatchesPairCountingOracle) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(2, 200), level(0, 9);
  std::bernoulli_distribution coin(0.4);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = len(rng);
    Vector s(n), y(n);
    for (int i = 0; i < n; ++i) {
      s(i) = level(rng) / 3.0;  // coarse levels force ties
      y(i) = coin(rng) ? 1.0 : 0.0;
    }
    y(0) = 0.0;
    y(1) = 1.0;
    EXPECT_NEAR(auc(s, y), pair_count_auc(s, y), 1e-12) << "instance " << rep;
  }
}

TEST(Auc, ThreeClassMacroAverage) {
  // Perfect probabilities for every class give 1.
  Matrix probs(3, 3);
  probs << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  EXPECT_EQ(auc_threeclass(probs, vec({-1, 0, 1})), 1.0);
  // Uninformative probabilities give 0.5.
  Matrix flat = Matrix::Constant(4, 3, 1.0 / 3.0);
  EXPECT_EQ(auc_threeclass(flat, vec({-1, 0, 1, 0})), 0.5);
  EXPECT_THROW(auc_threeclass(flat, vec({0, 0, 0, 0})), InputError);
}

TEST(Evaluate, FillsOptionalMetricsOnlyWhenAvailable) {
  EvalTarget t;
  t.tau = vec({1, 0});
  t.mu0 = vec({0, 1});
  t.mu1 = vec({1, 1});
  t.factual_train_y = vec({0, 2});
  auto r = evaluate(vec({1, 0}), Vector(), Vector(), t);
  EXPECT_EQ(r.rmse_cate, 0.0);
  EXPECT_FALSE(r.rmse_mu0.has_value());
  EXPECT_FALSE(r.auc_cf_diff.has_value());

  t.y0 = vec({0, 1});
  t.y1 = vec({1, 1});
  r = evaluate(vec({0.5, 0.5}), vec({0.2, 0.9}), vec({0.8, 0.9}), t);
  ASSERT_TRUE(r.rmse_mu0.has_value());
  ASSERT_TRUE(r.rmse_cf_diff.has_value());
  ASSERT_TRUE(r.auc_cf_diff.has_value());
  EXPECT_DOUBLE_EQ(*r.rmse_cf_diff, 0.5);
  EXPECT_EQ(*r.auc_mu0, 1.0);
  EXPECT_FALSE(r.auc_mu1.has_value());  // y1 is single-class
  EXPECT_DOUBLE_EQ(r.normalized_rmse_cate, 0.5 / std::sqrt(2.0));
}

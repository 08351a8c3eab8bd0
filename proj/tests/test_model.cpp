#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "aoi/aoi.hpp"
#include "test_util.hpp"

using namespace aoi;

namespace {

std::vector<double> column(const PanelModel& m, const Covariates& x, std::vector<double> alpha) {
  KernelPlan plan(m, x);
  std::vector<double> col(plan.space().size());
  plan.column(alpha, col);
  return col;
}

double seq_prob(const PanelModel& m, const Covariates& x, const std::vector<int>& y, std::vector<double> alpha) {
  double p = 1.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double F = m.link().cdf(m.index(x, t, alpha));
    p *= y[t] ? F : 1.0 - F;
  }
  return p;
}

}  // namespace

TEST(OutcomeSpace, RawBinaryT2HasFourUnitLabels) {
  auto m = rc_binary_model(2, {}, false);
  Covariates x(2, 1);
  x << 0.3, -0.4;
  const auto space = enumerate_outcomes(*m, x);
  ASSERT_EQ(space.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(space.multiplicity(k), 1.0);
  EXPECT_TRUE(space.is_raw());
}

TEST(OutcomeSpace, TwoBlockT30Has256Labels) {
  auto m = rc_binary_model(30);
  const auto space = enumerate_outcomes(*m, two_block_covariates(30, 1.0));
  ASSERT_EQ(space.size(), 256u);
  double total = 0.0;
  for (std::size_t k = 0; k < space.size(); ++k) {
    const auto l = space.label(k);
    EXPECT_EQ(space.multiplicity(k), binomial_coefficient(15, l[0]) * binomial_coefficient(15, l[1]));
    total += space.multiplicity(k);
  }
  EXPECT_EQ(total, std::pow(2.0, 30));
}

TEST(OutcomeSpace, TwoBlockT4BucketsAllSequences) {
  auto m = rc_binary_model(4);
  const auto space = enumerate_outcomes(*m, two_block_covariates(4, 1.0));
  ASSERT_EQ(space.size(), 9u);
  std::vector<double> count(9, 0.0);
  for (int code = 0; code < 16; ++code) {
    std::vector<int> y{code & 1, (code >> 1) & 1, (code >> 2) & 1, (code >> 3) & 1};
    const auto k = space.index_of_sequence(y);
    ASSERT_TRUE(k);
    count[*k] += 1.0;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < 9; ++k) {
    EXPECT_EQ(count[k], space.multiplicity(k));
    total += space.multiplicity(k);
  }
  EXPECT_EQ(total, 16.0);
}

TEST(OutcomeSpace, OverflowIsRejected) {
  auto m = rc_binary_model(30, {}, false);
  Covariates x = Covariates::Zero(30, 1);
  EXPECT_THROW(KernelPlan(*m, x, std::size_t{1} << 20), ValidationError);
}

TEST(StaticLogit, ScalarExamples) {
  auto m0 = static_logit_model(1, {0.0});
  Covariates x1 = Covariates::Zero(1, 1);
  EXPECT_DOUBLE_EQ(outcome_prob(*m0, x1, std::vector<int>{1}, std::vector<double>{0.0}), 0.5);

  auto m2 = static_logit_model(2, {0.0});
  Covariates x2 = Covariates::Zero(2, 1);
  EXPECT_DOUBLE_EQ(outcome_prob(*m2, x2, std::vector<int>{1, 1}, std::vector<double>{0.0}), 0.25);

  auto m = static_logit_model(2, {1.0});
  Covariates x(2, 1);
  x << 1.0, -1.0;
  EXPECT_NEAR(outcome_prob(*m, x, std::vector<int>{1, 0}, std::vector<double>{0.3}),
              logistic(1.3) * (1.0 - logistic(-0.7)), 1e-15);
}

TEST(BinomialNoCov, ScalarExamples) {
  auto m2 = binomial_nocov_model(2);
  const Covariates none(2, 0);
  EXPECT_DOUBLE_EQ(outcome_prob(*m2, none, std::vector<int>{1}, std::vector<double>{0.0}), 0.5);

  auto m1 = binomial_nocov_model(1);
  EXPECT_LT(outcome_prob(*m1, Covariates(1, 0), std::vector<int>{0}, std::vector<double>{800.0}), 1e-300);

  auto m3 = binomial_nocov_model(3);
  EXPECT_NEAR(outcome_prob(*m3, Covariates(3, 0), std::vector<int>{2}, std::vector<double>{logit(0.4)}), 0.288, 1e-14);
}

TEST(RcBinary, ScalarExamples) {
  auto m = rc_binary_model(2, {}, false);
  Covariates x0 = Covariates::Zero(2, 1);
  EXPECT_NEAR(outcome_prob(*m, x0, std::vector<int>{1, 1}, std::vector<double>{0.0, 5.0}), 0.25, 1e-15);

  auto tb = rc_binary_model(2);
  EXPECT_NEAR(outcome_prob(*tb, two_block_covariates(2, 1.0), std::vector<int>{1, 1}, std::vector<double>{0.0, 0.0}),
              0.25, 1e-15);

  Covariates x(2, 1);
  x << 0.0, 1.0;
  EXPECT_NEAR(outcome_prob(*m, x, std::vector<int>{1, 0}, std::vector<double>{1.0, 1.0}),
              logistic(1.0) * (1.0 - logistic(2.0)), 1e-15);
}

// Collapsed label probabilities equal sums of raw-sequence probabilities.
TEST(Collapse, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t T = 2 + static_cast<std::size_t>(rep % 5);
    Covariates x(static_cast<Eigen::Index>(T), 1);
    for (std::size_t t = 0; t < T; ++t) x(static_cast<Eigen::Index>(t), 0) = (rep % 2 == 0) ? double(t % 2) : nd(rng) > 0 ? 1.0 : 0.0;
    for (LinkKind lk : {LinkKind::logistic, LinkKind::probit}) {
      auto collapsed = rc_binary_model(T, Link{lk}, true);
      const std::vector<double> alpha{nd(rng), nd(rng)};
      KernelPlan plan(*collapsed, x);
      std::vector<double> col(plan.space().size());
      plan.column(alpha, col);
      std::vector<double> brute(plan.space().size(), 0.0);
      for (std::size_t code = 0; code < (std::size_t{1} << T); ++code) {
        std::vector<int> y(T);
        for (std::size_t t = 0; t < T; ++t) y[t] = static_cast<int>((code >> t) & 1);
        brute[*plan.space().index_of_sequence(y)] += seq_prob(*collapsed, x, y, alpha);
      }
      for (std::size_t k = 0; k < col.size(); ++k) EXPECT_NEAR(col[k], brute[k], 1e-14);
    }
  }
}

TEST(Kernel, ColumnsSumToOne) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const auto in = test::random_instance(rng);
    const Eigen::VectorXd sums = in.kernel.matrix().colwise().sum();
    for (Eigen::Index j = 0; j < sums.size(); ++j) EXPECT_NEAR(sums[j], 1.0, 1e-10);
    EXPECT_GE(in.kernel.matrix().minCoeff(), 0.0);
    EXPECT_LE(in.kernel.matrix().maxCoeff(), 1.0);
  }
  // Large blocks and extreme indices.
  auto m = rc_binary_model(60);
  const auto col = column(*m, two_block_covariates(60, 0.3), {4.0, -9.0});
  double total = 0.0;
  for (double v : col) total += v;
  EXPECT_NEAR(total, 1.0, 1e-10);
}

TEST(Kernel, ColumnMatchesLogColumn) {
  auto m = rc_binary_model(20, Link{LinkKind::probit});
  KernelPlan plan(*m, two_block_covariates(20, 0.7));
  std::vector<double> col(plan.space().size()), logc(plan.space().size());
  const std::vector<double> alpha{-0.8, 1.9};
  plan.column(alpha, col);
  plan.log_column(alpha, logc);
  for (std::size_t k = 0; k < col.size(); ++k) EXPECT_NEAR(col[k], std::exp(logc[k]), 1e-13 + 1e-12 * col[k]);
}

TEST(Kernel, BinomialExamples) {
  auto m1 = binomial_nocov_model(1);
  FixedEffectGrid g1(1, {0.0}, {1.0});
  const auto k1 = build_kernel(*m1, Covariates(1, 0), g1);
  EXPECT_DOUBLE_EQ(k1.matrix()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(k1.matrix()(1, 0), 0.5);

  auto m2 = binomial_nocov_model(2);
  FixedEffectGrid g2(1, {logit(0.4)}, {1.0});
  const auto k2 = build_kernel(*m2, Covariates(2, 0), g2);
  EXPECT_NEAR(k2.matrix()(0, 0), 0.36, 1e-15);
  EXPECT_NEAR(k2.matrix()(1, 0), 0.48, 1e-15);
  EXPECT_NEAR(k2.matrix()(2, 0), 0.16, 1e-15);
}

TEST(Kernel, MemoryBudgetIsEnforced) {
  auto m = rc_binary_model(30);
  const auto grid = product_grid(quantile_grid(Distribution1D::normal(0, 1), 100), quantile_grid(Distribution1D::normal(0, 1), 100));
  EXPECT_THROW(build_kernel(*m, two_block_covariates(30, 1.0), grid, 1 << 20), NumericalError);
}

TEST(Effects, CounterfactualProbability) {
  const auto e1 = effect_counterfactual_prob(1.0);
  const Covariates x;
  EXPECT_DOUBLE_EQ(e1(x, std::vector<double>{0.0, 0.0}), 0.5);
  const auto e0 = effect_counterfactual_prob(0.0);
  EXPECT_NEAR(e0(x, std::vector<double>{logit(0.3), 7.0}), 0.3, 1e-15);
}

TEST(Effects, AveragePartialEffect) {
  const auto ape = effect_ape_logistic();
  Covariates x(3, 1);
  x << 0.2, -1.0, 3.0;
  EXPECT_EQ(ape(x, std::vector<double>{0.7, 0.0}), 0.0);
  const Covariates x0 = Covariates::Zero(4, 1);
  EXPECT_DOUBLE_EQ(ape(x0, std::vector<double>{0.0, 1.0}), 0.25);
  const auto ape2 = effect_ape_logistic(1);
  EXPECT_NEAR(ape2(x, std::vector<double>{0.5, 2.0}), 2.0 * logistic_density(0.5 - 2.0), 1e-15);
}

TEST(Effects, TreatmentEffect) {
  auto zero = static_logit_model(2, {0.0});
  const auto ate0 = effect_treatment_effect(*zero);
  Covariates x(2, 1);
  x << 0.4, 1.0;
  EXPECT_EQ(ate0(x, std::vector<double>{0.3}), 0.0);

  auto one = static_logit_model(1, {1.0});
  const auto ate1 = effect_treatment_effect(*one);
  EXPECT_NEAR(ate1(Covariates::Zero(1, 1), std::vector<double>{0.0}), logistic(1.0) - logistic(0.0), 1e-15);
}

// T = 2: the treatment effect equals the expected difference in the number of
// successes per period under x = 1 and x = 0, summed over the 4 outcomes.
TEST(Effects, TreatmentEffectBruteForce) {
  auto m = static_logit_model(2, {1.0});
  const auto ate = effect_treatment_effect(*m);
  const double alpha = 0.5;
  auto mean_y = [&](double xv) {
    Covariates x = Covariates::Constant(2, 1, xv);
    double acc = 0.0;
    for (int code = 0; code < 4; ++code) {
      std::vector<int> y{code & 1, (code >> 1) & 1};
      acc += (y[0] + y[1]) / 2.0 * seq_prob(*m, x, y, {alpha});
    }
    return acc;
  };
  Covariates x(2, 1);
  x << 0.2, 0.9;
  EXPECT_NEAR(ate(x, std::vector<double>{alpha}), mean_y(1.0) - mean_y(0.0), 1e-15);
}

TEST(Registry, ModelAndEffectIds) {
  ModelSpec spec{"rc_binary_logit", 4, {}, true};
  auto m = make_model(spec);
  EXPECT_EQ(m->effect_dim(), 2u);
  EXPECT_NO_THROW(make_effect("ape", *m));
  EXPECT_NO_THROW(make_effect("ape@4", *m));
  EXPECT_THROW(make_effect("ape@5", *m), ValidationError);
  EXPECT_NO_THROW(make_effect("cf_prob:1.0", *m));
  EXPECT_THROW(make_effect("ate", *m), ValidationError);
  EXPECT_THROW(make_effect("nonsense", *m), ValidationError);
  EXPECT_THROW(make_model({"nope", 2, {}, true}), ValidationError);
}

TEST(CovariateVariation, Examples) {
  const std::vector<double> constant(5, 2.5);
  const auto c = covariate_variation(constant);
  EXPECT_EQ(c.l2_sum, 0.0);
  EXPECT_EQ(c.l1_sum, 0.0);

  const std::vector<double> tb{0.0, 0.0, 1.0, 1.0};
  const auto v = covariate_variation(tb);
  EXPECT_DOUBLE_EQ(v.l2_sum, 1.0);
  EXPECT_DOUBLE_EQ(v.l1_sum, 2.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(1 + rep % 9);
    for (auto& e : x) e = nd(rng);
    const auto r = covariate_variation(x);
    EXPECT_GE(r.l1_sum + 1e-12, std::sqrt(r.l2_sum));
  }
}

TEST(Models, LabelProbabilitiesSumToOneAtRandomPoints) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t T = 1 + static_cast<std::size_t>(rep % 8);
    Covariates x(static_cast<Eigen::Index>(T), 1);
    for (std::size_t t = 0; t < T; ++t) x(static_cast<Eigen::Index>(t), 0) = nd(rng);
    const std::vector<std::pair<std::shared_ptr<PanelModel>, Covariates>> cases{
        {static_logit_model(T, {0.8}), x},
        {binomial_nocov_model(T), Covariates(static_cast<Eigen::Index>(T), 0)},
        {binomial_nocov_model(T, Link{LinkKind::probit}), Covariates(static_cast<Eigen::Index>(T), 0)},
        {rc_binary_model(T), x},
        {rc_binary_model(T, Link{LinkKind::probit}, false), x}};
    for (const auto& [m, xx] : cases) {
      std::vector<double> alpha(m->effect_dim());
      for (auto& a : alpha) a = nd(rng);
      double total = 0.0;
      for (double v : column(*m, xx, alpha)) total += v;
      EXPECT_NEAR(total, 1.0, 1e-12) << m->id();
    }
  }
}

TEST(Effects, CounterfactualProbabilityIsMonotoneInIntercept) {
  for (LinkKind lk : {LinkKind::logistic, LinkKind::probit}) {
    const auto e = effect_counterfactual_prob(1.0, Link{lk});
    double prev = -1.0;
    for (double a1 = -6.0; a1 <= 6.0; a1 += 0.25) {
      const double v = e(Covariates(), std::vector<double>{a1, -0.7});
      EXPECT_GT(v, prev);
      prev = v;
    }
  }
}

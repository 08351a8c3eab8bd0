#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "aoi/aoi.hpp"
#include "test_util.hpp"

using namespace aoi;
using aoi::test::dense_transition;
using aoi::test::masses;

namespace {

// w⁽q⁺¹⁾ = m + (I − Qᵀ) w⁽q⁾, w⁽⁰⁾ = m.
Eigen::VectorXd dense_recursion(const Eigen::MatrixXd& Q, const Eigen::VectorXd& m, int q) {
  Eigen::VectorXd w = m;
  const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(Q.rows(), Q.cols()) - Q.transpose();
  for (int r = 0; r < q; ++r) w = m + step * w;
  return w;
}

Eigen::VectorXd random_effect(std::mt19937_64& rng, std::size_t K) {
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(K));
  for (auto& e : v) e = ud(rng);
  return v;
}

double max_abs(const Eigen::MatrixXd& a) { return a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(PriorPredictive, Examples) {
  auto m = binomial_nocov_model(2);
  const FixedEffectGrid one(1, {logit(0.3)}, {1.0});
  const auto k1 = build_kernel(*m, Covariates(2, 0), one);
  const Eigen::VectorXd p1 = prior_predictive(k1, one);
  EXPECT_TRUE(p1.isApprox(k1.matrix().col(0), 1e-15));

  const FixedEffectGrid two(1, {logit(0.3), logit(0.7)}, {0.5, 0.5});
  const auto k2 = build_kernel(*m, Covariates(2, 0), two);
  const Eigen::VectorXd p2 = prior_predictive(k2, two);
  EXPECT_TRUE(p2.isApprox((k2.matrix().col(0) + k2.matrix().col(1)) / 2.0, 1e-15));

  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const auto in = test::random_instance(rng, rep % 2 == 0);
    EXPECT_NEAR(prior_predictive(in.kernel, in.grid).sum(), 1.0, 1e-12);
  }
}

TEST(Posterior, Examples) {
  Eigen::MatrixXd F(2, 2);
  F << 0.3, 0.3, 0.7, 0.7;
  const LikelihoodKernel k(F);
  const FixedEffectGrid g(1, {0.0, 1.0}, {0.5, 0.5});
  const Eigen::VectorXd post = posterior(k, g, 0);
  EXPECT_NEAR(post[0], 0.5, 1e-15);
  EXPECT_NEAR(post[1], 0.5, 1e-15);

  auto m = binomial_nocov_model(2);
  const FixedEffectGrid two(1, {logit(0.3), logit(0.7)}, {0.5, 0.5});
  const auto kb = build_kernel(*m, Covariates(2, 0), two);
  const Eigen::VectorXd pb = posterior(kb, two, 2);
  EXPECT_NEAR(pb[0], 0.09 / 0.58, 1e-14);
  EXPECT_NEAR(pb[1], 0.49 / 0.58, 1e-14);
}

// A grid with a point of (numerically) zero mass behaves as a degenerate
// prior: the posterior stays on the other point.
TEST(Posterior, DegeneratePrior) {
  Eigen::MatrixXd F(2, 2);
  F << 0.2, 0.6, 0.8, 0.4;
  const LikelihoodKernel k(F);
  const FixedEffectGrid g(1, {0.0, 1.0}, {1.0 - 1e-300, 1e-300});
  for (std::size_t lab = 0; lab < 2; ++lab) {
    const Eigen::VectorXd post = posterior(k, g, lab);
    EXPECT_NEAR(post[0], 1.0, 1e-15);
    EXPECT_NEAR(post[1], 0.0, 1e-15);
  }
}

TEST(SpectralTransition, SinglePointIsRankOne) {
  auto m = binomial_nocov_model(4);
  const FixedEffectGrid g(1, {0.4}, {1.0});
  const auto st = spectral_transition(build_kernel(*m, Covariates(4, 0), g), g);
  EXPECT_NEAR(st.eigenvalues[0], 1.0, 1e-14);
  for (Eigen::Index i = 1; i < st.eigenvalues.size(); ++i) EXPECT_NEAR(st.eigenvalues[i], 0.0, 1e-14);
}

TEST(SpectralTransition, GenericKernelHasPositiveSpectrum) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + static_cast<std::size_t>(rep % 5);
    const auto k = test::near_identity_kernel(rng, n, 3 * n);
    const auto g = test::equal_grid(3 * n);
    const auto st = spectral_transition(k, g);
    EXPECT_GT(st.eigenvalues.minCoeff(), 0.0);
    EXPECT_LE(st.eigenvalues.maxCoeff(), 1.0);
  }
}

TEST(SpectralTransition, TraceMatchesGramIdentity) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const auto in = test::random_instance(rng, rep % 2 == 1);
    const auto st = spectral_transition(in.kernel, in.grid);
    const Eigen::MatrixXd& F = in.kernel.matrix();
    const Eigen::VectorXd m = masses(in.grid);
    const Eigen::VectorXd p = F * m;
    double expect = 0.0;
    for (Eigen::Index k = 0; k < F.rows(); ++k) expect += F.row(k).cwiseAbs2().dot(m) / p[k];
    EXPECT_NEAR(st.raw_eigenvalues.sum(), expect, 1e-11);
  }
}

// Spectrum range, reconstruction and column stochasticity.
TEST(SpectralTransition, InvariantsOnRandomInstances) {
  std::mt19937_64 rng(100);
  for (int rep = 0; rep < 100; ++rep) {
    const auto in = test::random_instance(rng, rep % 3 != 0);
    const auto st = spectral_transition(in.kernel, in.grid);
    EXPECT_GE(st.raw_eigenvalues.minCoeff(), -1e-9);
    EXPECT_LE(st.raw_eigenvalues.maxCoeff(), 1.0 + 1e-9);
    EXPECT_GE(st.eigenvalues.minCoeff(), 0.0);
    EXPECT_LE(st.eigenvalues.maxCoeff(), 1.0);

    const Eigen::MatrixXd& F = in.kernel.matrix();
    const Eigen::VectorXd m = masses(in.grid);
    const Eigen::VectorXd p = F * m;
    const Eigen::VectorXd is = p.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd qt = is.asDiagonal() * (F * m.asDiagonal() * F.transpose()) * is.asDiagonal();
    const Eigen::MatrixXd recon = st.eigenvectors * st.raw_eigenvalues.asDiagonal() * st.eigenvectors.transpose();
    EXPECT_LE(max_abs(qt - recon), 1e-10);

    const Eigen::RowVectorXd sums = st.transition().colwise().sum();
    for (Eigen::Index l = 0; l < sums.size(); ++l) EXPECT_NEAR(sums[l], 1.0, 1e-9);
  }
}

// Smallest eigenvalue above the null tolerance.
double smallest_positive(const SpectralTransition& st) {
  const double tol = null_tolerance(st.outcomes());
  double out = 1.0;
  for (const double lam : st.eigenvalues) {
    if (lam > tol) out = std::min(out, lam);
  }
  return out;
}

void expect_drazin_identities(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& D) {
  EXPECT_LE(max_abs(Q * D * Q - Q), 1e-8);
  // Q^D Q Q^D = Q^D relative to the size of Q^D.
  const double scale = std::max(1.0, max_abs(D));
  EXPECT_LE(max_abs(D * Q * D - D), 1e-8 * scale);
  EXPECT_LE(max_abs(Q * D - D * Q), 1e-8 * scale);
}

// Products with Q^D lose about eps/λ₊, so the unregularized identities are
// checked where λ₊ ≥ 1e-6, and the truncated inverse against the truncated Q
// everywhere.
TEST(SpectralTransition, DrazinIdentities) {
  std::mt19937_64 rng(12);
  int exact = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto in = test::random_instance(rng, rep % 2 == 0);
    const auto st = spectral_transition(in.kernel, in.grid);
    ASSERT_LE(st.outcomes(), 16u);
    if (smallest_positive(st) >= 1e-6) {
      ++exact;
      expect_drazin_identities(st.transition(), st.drazin());
    }
    const auto reg = Regularization::truncate(1e-6);
    expect_drazin_identities(st.spectral_matrix(apply_regularization(st.eigenvalues, reg)), st.drazin(reg));
  }
  EXPECT_GE(exact, 30);
}

// G Q^D F Π Fᵀ = Π Fᵀ with G the posterior operator, G(j, k) = m_j F(k, j) / p_k.
TEST(SpectralTransition, PosteriorOperatorIdentity) {
  std::mt19937_64 rng(13);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto in = test::random_instance(rng, rep % 2 == 0);
    const auto st = spectral_transition(in.kernel, in.grid);
    if (smallest_positive(st) < 1e-6) continue;
    ++checked;
    const Eigen::MatrixXd& F = in.kernel.matrix();
    const Eigen::VectorXd m = masses(in.grid);
    Eigen::MatrixXd G(F.cols(), F.rows());
    for (Eigen::Index k = 0; k < F.rows(); ++k) G.col(k) = posterior(in.kernel, in.grid, static_cast<std::size_t>(k));
    const Eigen::MatrixXd PiFt = m.asDiagonal() * F.transpose();
    const Eigen::MatrixXd lhs = G * st.drazin() * F * PiFt;
    EXPECT_LE(max_abs(lhs - PiFt), 1e-8);
  }
  EXPECT_GE(checked, 30);
}

TEST(Regularization, Examples) {
  Eigen::VectorXd e(2);
  e << 0.9, 5e-5;
  const auto t = apply_regularization(e, Regularization::truncate(1e-4));
  EXPECT_EQ(t[0], 0.9);
  EXPECT_EQ(t[1], 0.0);
  const auto c = apply_regularization(e, Regularization::clamp(1e-4));
  EXPECT_EQ(c[0], 0.9);
  EXPECT_EQ(c[1], 1e-4);
  Eigen::VectorXd f(2);
  f << 0.9, 0.5;
  for (const auto& r : {Regularization::truncate(1e-4), Regularization::clamp(1e-4), Regularization::truncate_zero(1e-4)}) {
    EXPECT_EQ(apply_regularization(f, r), f);
  }
  EXPECT_THROW(Regularization::clamp(0.0), ValidationError);
  EXPECT_THROW(Regularization::truncate(1.5), ValidationError);
}

TEST(Regularization, WeightsPerMode) {
  Eigen::VectorXd e(3);
  e << 0.5, 5e-5, 0.0;
  const CorrectionOrder q3(3);
  const auto none = spectral_weights(e, q3, Regularization::none());
  EXPECT_NEAR(none[0], 1.0 + 0.5 + 0.25 + 0.125, 1e-15);
  EXPECT_NEAR(none[1], 4.0, 1e-3);
  EXPECT_EQ(none[2], 4.0);
  const auto tr = spectral_weights(e, q3, Regularization::truncate(1e-4));
  EXPECT_EQ(tr[1], 0.0);
  EXPECT_EQ(tr[2], 0.0);
  const auto tz = spectral_weights(e, q3, Regularization::truncate_zero(1e-4));
  EXPECT_EQ(tz[1], 4.0);
  const auto cl = spectral_weights(e, CorrectionOrder::infinity(), Regularization::clamp(1e-4));
  EXPECT_NEAR(cl[1], 1e4, 1e-8);
  EXPECT_NEAR(cl[2], 1e4, 1e-8);
  const auto inf = spectral_weights(e, CorrectionOrder::infinity(), Regularization::none());
  EXPECT_EQ(inf[2], 0.0);
}

TEST(NeumannWeight, LargeOrdersStayAccurate) {
  // (1 − λ)^{q+1} underflows to 0 for λ = 1e-3, q = 1e6: s = 1/λ.
  EXPECT_NEAR(neumann_weight(1e-3, CorrectionOrder(1000000)), 1e3, 1e-9);
  // Small (q+1)λ: s ≈ (q+1)(1 − qλ/2).
  const double lam = 1e-12;
  const double q = 1e6;
  EXPECT_NEAR(neumann_weight(lam, CorrectionOrder(1000000)), (q + 1) * (1 - q * lam / 2), 1e-6);
  EXPECT_EQ(neumann_weight(1.0, CorrectionOrder(5)), 1.0);
  EXPECT_EQ(neumann_weight(0.0, CorrectionOrder(5)), 6.0);
  EXPECT_EQ(CorrectionOrder::parse("1e6").value(), 1000000u);
  EXPECT_TRUE(CorrectionOrder::parse("inf").is_infinite());
  EXPECT_THROW(CorrectionOrder::parse("-1"), ValidationError);
  EXPECT_THROW(CorrectionOrder::parse("2.5"), ValidationError);
}

TEST(EstimatingFunction, OrderZeroIsPosteriorMean) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 20; ++rep) {
    const auto in = test::random_instance(rng, rep % 2 == 0);
    const auto st = spectral_transition(in.kernel, in.grid);
    const Eigen::VectorXd mu = random_effect(rng, in.grid.size());
    const Eigen::VectorXd m = posterior_mean(in.kernel, in.grid, mu);
    const auto w = estimating_function(st, m, 0);
    EXPECT_LE((w.w - m).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EstimatingFunction, SinglePointGivesConstant) {
  auto m = rc_binary_model(3, {}, false);
  Covariates x(3, 1);
  x << 0.2, -0.5, 1.1;
  const FixedEffectGrid g(2, {0.3, -0.8}, {1.0});
  const auto k = build_kernel(*m, x, g);
  const auto st = spectral_transition(k, g);
  const auto ape = effect_ape_logistic();
  const double target = ape(x, g.point(0));
  const Eigen::VectorXd mvec = posterior_mean(k, g, effect_on_grid(ape, x, g));
  for (const CorrectionOrder q : {CorrectionOrder(0), CorrectionOrder(1), CorrectionOrder(7), CorrectionOrder::infinity()}) {
    const auto w = estimating_function(st, mvec, q);
    for (Eigen::Index i = 0; i < w.w.size(); ++i) EXPECT_NEAR(w.w[i], target, 1e-12);
  }
}

TEST(EstimatingFunction, ThirdOrderMatchesDenseRecursion) {
  std::mt19937_64 rng(15);
  const auto k = test::near_identity_kernel(rng, 4, 9);
  const auto g = test::equal_grid(9);
  const auto st = spectral_transition(k, g);
  const Eigen::VectorXd mu = random_effect(rng, 9);
  const Eigen::VectorXd m = posterior_mean(k, g, mu);
  const Eigen::VectorXd dense = dense_recursion(dense_transition(k.matrix(), masses(g)), m, 3);
  EXPECT_LE((estimating_function(st, m, 3).w - dense).cwiseAbs().maxCoeff(), 1e-12);
}

// The s_q spectral form equals the dense recursion for q ≤ 50
// on well-conditioned instances, and w⁽q⁾ → w⁽∞⁾ geometrically.
TEST(EstimatingFunction, SpectralFormMatchesRecursion) {
  std::mt19937_64 rng(16);
  int checked = 0;
  for (int rep = 0; rep < 40 && checked < 20; ++rep) {
    const std::size_t n = 2 + static_cast<std::size_t>(rep % 7);
    const std::size_t K = n + static_cast<std::size_t>(rep % 5) * 3;
    const auto k = test::near_identity_kernel(rng, n, K);
    const auto g = test::random_grid(rng, 1, K, rep % 2 == 0);
    const auto st = spectral_transition(k, g);
    const double lam_plus = st.eigenvalues.minCoeff();
    if (lam_plus < 0.05) continue;
    ++checked;
    const Eigen::VectorXd m = posterior_mean(k, g, random_effect(rng, K));
    const Eigen::MatrixXd Q = dense_transition(k.matrix(), masses(g));
    const EstimatingSeries series(st, m);
    Eigen::VectorXd w = m;
    const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(Q.rows(), Q.cols()) - Q.transpose();
    const Eigen::VectorXd winf = series.evaluate(CorrectionOrder::infinity(), {}).w;
    const Eigen::VectorXd sq = st.p.cwiseSqrt();
    const double cond = std::sqrt(st.p.maxCoeff() / st.p.minCoeff());
    double prev_weighted = std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (int q = 0; q <= 50; ++q) {
      if (q > 0) w = m + step * w;
      const Eigen::VectorXd wq = series.evaluate(CorrectionOrder(static_cast<std::uint64_t>(q)), {}).w;
      EXPECT_LE((wq - w).cwiseAbs().maxCoeff(), 1e-10) << "q=" << q;
      const Eigen::VectorXd diff = wq - winf;
      const double sup = diff.cwiseAbs().maxCoeff();
      EXPECT_LE(sup, std::pow(1.0 - lam_plus, q + 1) / lam_plus * m.norm() * cond + 1e-12);
      // The distance shrinks monotonically in the √p-weighted norm.
      const double weighted = sq.cwiseProduct(diff).norm();
      EXPECT_LE(weighted, prev_weighted + 1e-14);
      prev_weighted = weighted;
      total += sup;
    }
    EXPECT_LE(total, m.norm() * cond / (lam_plus * lam_plus) + 1e-9);
  }
  EXPECT_GE(checked, 20);
}

// The streamed accumulation gives the dense spectrum, independently of the
// block size, and bit-identical results for any worker count.
TEST(Analyze, StreamedMatchesDense) {
  auto m = rc_binary_model(6);
  const Covariates x = two_block_covariates(6, 0.8);
  const auto grid = product_grid(quantile_grid(Distribution1D::normal(0, 3), 23), quantile_grid(Distribution1D::normal(0, 3), 19));
  const auto ape = effect_counterfactual_prob(1.0);
  const auto dense = spectral_transition(build_kernel(*m, x, grid), grid);
  KernelPlan plan(*m, x);
  for (std::size_t bc : {std::size_t{1}, std::size_t{7}, std::size_t{64}, std::size_t{0}}) {
    const auto sys = analyze(plan, grid, std::span<const EffectFunctional* const>(std::vector<const EffectFunctional*>{&ape}),
                             {}, StreamOptions{bc});
    EXPECT_LE((sys.spectrum.p - dense.p).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((sys.spectrum.eigenvalues - dense.eigenvalues).cwiseAbs().maxCoeff(), 1e-12);
  }
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = analyze(plan, grid, ape);
  omp_set_num_threads(4);
  const auto b = analyze(plan, grid, ape);
  omp_set_num_threads(saved);
  EXPECT_EQ(a.spectrum.p, b.spectrum.p);
  EXPECT_EQ(a.spectrum.eigenvalues, b.spectrum.eigenvalues);
  EXPECT_EQ(a.posterior_means[0], b.posterior_means[0]);
#endif
}

// Relabeling outcomes permutes w; reordering the grid leaves it unchanged.
TEST(EstimatingFunction, PermutationEquivariance) {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const auto in = test::random_instance(rng, true, 20, 40);
    const Eigen::MatrixXd& F = in.kernel.matrix();
    const Eigen::VectorXd mu = random_effect(rng, in.grid.size());
    const auto st = spectral_transition(in.kernel, in.grid);
    const Eigen::VectorXd m = posterior_mean(in.kernel, in.grid, mu);

    std::vector<int> perm(static_cast<std::size_t>(F.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> P(F.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) P.indices()[static_cast<Eigen::Index>(i)] = perm[i];
    const LikelihoodKernel kp(P * F);
    const auto stp = spectral_transition(kp, in.grid);
    const Eigen::VectorXd mp = posterior_mean(kp, in.grid, mu);

    std::vector<int> gperm(in.grid.size());
    std::iota(gperm.begin(), gperm.end(), 0);
    std::shuffle(gperm.begin(), gperm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> PG(static_cast<Eigen::Index>(gperm.size()));
    for (std::size_t i = 0; i < gperm.size(); ++i) PG.indices()[static_cast<Eigen::Index>(i)] = gperm[i];
    const LikelihoodKernel kg(F * PG.transpose());
    const Eigen::VectorXd mug = PG * mu;
    const auto stg = spectral_transition(kg, in.grid);
    const Eigen::VectorXd mg = posterior_mean(kg, in.grid, mug);

    for (const CorrectionOrder q : {CorrectionOrder(0), CorrectionOrder(4), CorrectionOrder::infinity()}) {
      const Regularization reg = Regularization::truncate(1e-6);
      const Eigen::VectorXd w = estimating_function(st, m, q, reg).w;
      const Eigen::VectorXd wp = estimating_function(stp, mp, q, reg).w;
      const Eigen::VectorXd wg = estimating_function(stg, mg, q, reg).w;
      const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
      EXPECT_LE((P * w - wp).cwiseAbs().maxCoeff(), 1e-8 * scale);
      EXPECT_LE((w - wg).cwiseAbs().maxCoeff(), 1e-8 * scale);
    }
  }
}

// A repeated eigenvalue: w depends only on the spectral projectors, so a
// rotated eigenbasis gives the same w.
TEST(EstimatingFunction, DegenerateEigenspaceInvariance) {
  // Two identical blocks of a block-diagonal kernel give a doubled eigenvalue.
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(4, 4);
  F.block(0, 0, 2, 2) << 0.8, 0.3, 0.2, 0.7;
  F.block(2, 2, 2, 2) << 0.8, 0.3, 0.2, 0.7;
  const LikelihoodKernel k(F);
  const auto g = test::equal_grid(4);
  auto st = spectral_transition(k, g);
  Eigen::VectorXd mu(4);
  mu << 0.1, -0.4, 0.9, 0.3;
  const Eigen::VectorXd m = posterior_mean(k, g, mu);
  const Eigen::VectorXd w = estimating_function(st, m, CorrectionOrder::infinity()).w;
  // Rotate within every pair of (numerically) equal eigenvalues.
  for (Eigen::Index i = 0; i + 1 < 4; ++i) {
    if (std::abs(st.eigenvalues[i] - st.eigenvalues[i + 1]) < 1e-12) {
      const double c = std::cos(0.7), s = std::sin(0.7);
      const Eigen::VectorXd a = st.eigenvectors.col(i), b = st.eigenvectors.col(i + 1);
      st.eigenvectors.col(i) = c * a + s * b;
      st.eigenvectors.col(i + 1) = -s * a + c * b;
    }
  }
  const Eigen::VectorXd w2 = estimating_function(st, m, CorrectionOrder::infinity()).w;
  EXPECT_LE((w - w2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpectralTransition, ZeroPredictiveIsReported) {
  Eigen::MatrixXd F(3, 2);
  F << 0.5, 0.5, 0.5, 0.5, 0.0, 0.0;
  const LikelihoodKernel k(F);
  const auto g = test::equal_grid(2);
  EXPECT_THROW(spectral_transition(k, g), ZeroPredictive);
  EXPECT_THROW(spectral_transition(k, g), NumericalError);
}

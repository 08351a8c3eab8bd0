#pragma once

// Exact (n = ∞) bias and standard deviation of estimating functions on finite
// designs, the projection-residual bias identity, and rate sweeps.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aoi/discretize.hpp"
#include "aoi/effect.hpp"
#include "aoi/kernel.hpp"
#include "aoi/model.hpp"
#include "aoi/numeric.hpp"
#include "aoi/spectral.hpp"

namespace aoi {

struct NonUniformPrior : ValidationError {
  NonUniformPrior() : ValidationError("projection identity needs an equal-mass prior grid; uniformize it first") {}
};

/// One covariate value of the design with its probability and the true
/// fixed-effect law given x.
struct DesignPoint {
  Covariates x;
  double prob = 1.0;
  FixedEffectGrid truth;
};

struct DesignSpec {
  std::vector<DesignPoint> support;

  void validate() const {
    if (support.empty()) throw ValidationError("design: empty support");
    CompensatedSum total;
    for (const auto& d : support) {
      if (!(d.prob > 0.0)) throw ValidationError("design: probabilities must be positive");
      total.add(d.prob);
    }
    if (std::abs(total.value() - 1.0) > 1e-12) throw ValidationError("design: probabilities must sum to one");
  }
};

struct PopulationMoments {
  double mu0 = 0.0;
  double bias = 0.0;
  double asd = 0.0;
};

struct ProjectionBias {
  double thm1_bias = 0.0;
  double mu_residual = 0.0;
  double pi_residual = 0.0;
  double cs_bound = 0.0;
};

/// P₀(·|x) = F_truth · truth masses, streamed over the truth grid.
inline Eigen::VectorXd truth_predictive(const KernelPlan& plan, const FixedEffectGrid& truth) {
  if (truth.dim() != plan.model().effect_dim()) throw ValidationError("truth grid dimension does not match model");
  const std::size_t n = plan.space().size();
  const std::size_t K = truth.size();
  const std::size_t bc = default_block_columns(n);
  const std::size_t blocks = (K + bc - 1) / bc;
  constexpr std::size_t parts = PredictiveAccumulator::kPartials;
  std::vector<Eigen::VectorXd> partial(parts, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
#pragma omp parallel for schedule(static, 1)
  for (std::ptrdiff_t part = 0; part < static_cast<std::ptrdiff_t>(parts); ++part) {
    Eigen::MatrixXd block;
    for (std::size_t b = static_cast<std::size_t>(part); b < blocks; b += parts) {
      const std::size_t first = b * bc;
      const std::size_t c = std::min(bc, K - first);
      block.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
      for (std::size_t j = 0; j < c; ++j) {
        plan.column(truth.point(first + j), std::span<double>(block.col(static_cast<Eigen::Index>(j)).data(), n));
      }
      const Eigen::Map<const Eigen::VectorXd> m(truth.masses().data() + first, static_cast<Eigen::Index>(c));
      partial[static_cast<std::size_t>(part)].noalias() += block * m;
    }
  }
  Eigen::VectorXd out = partial[0];
  for (std::size_t i = 1; i < parts; ++i) out += partial[i];
  return out;
}

/// Σ_j μ(x, α_j)·mass_j.
inline double grid_average(const EffectFunctional& effect, const Covariates& x, const FixedEffectGrid& grid) {
  CompensatedSum acc;
  for (std::size_t j = 0; j < grid.size(); ++j) acc.add(grid.mass(j) * effect(x, grid.point(j)));
  return acc.value();
}

/// Moments of w(Y, X) under the true law given per-x predictive vectors.
inline PopulationMoments moments_from_predictive(std::span<const Eigen::VectorXd> w, std::span<const Eigen::VectorXd> p0,
                                                 std::span<const double> design_prob, std::span<const double> mu0_x) {
  CompensatedSum mean, second, mu0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].size() != p0[i].size()) throw ValidationError("estimating function does not match the outcome space");
    mean.add(design_prob[i] * w[i].dot(p0[i]));
    second.add(design_prob[i] * w[i].cwiseAbs2().dot(p0[i]));
    mu0.add(design_prob[i] * mu0_x[i]);
  }
  PopulationMoments out;
  out.mu0 = mu0.value();
  out.bias = mean.value() - out.mu0;
  out.asd = std::sqrt(std::max(second.value() - mean.value() * mean.value(), 0.0));
  return out;
}

/// Exact bias and per-observation s.d. of w(Y, X) under the design.
inline PopulationMoments population_moments(std::span<const Eigen::VectorXd> w, const DesignSpec& design,
                                            const PanelModel& model, const EffectFunctional& effect) {
  design.validate();
  if (w.size() != design.support.size()) throw ValidationError("need one estimating function per design point");
  std::vector<Eigen::VectorXd> p0;
  std::vector<double> prob, mu0;
  for (const auto& d : design.support) {
    KernelPlan plan(model, d.x);
    p0.push_back(truth_predictive(plan, d.truth));
    prob.push_back(d.prob);
    mu0.push_back(grid_average(effect, plan.covariates(), d.truth));
  }
  return moments_from_predictive(w, p0, prob, mu0);
}

/// −⟨μ_{F⊥}, ν_{P⊥}⟩ by dense QR projections onto the row space of F, with
/// the uniform inner product ⟨a, b⟩ = Σ_j a_j b_j / K. `truth_values` is the
/// true law as a density with respect to that measure (masses·K).
inline ProjectionBias projection_bias(const LikelihoodKernel& kernel, const FixedEffectGrid& prior,
                                    const Eigen::VectorXd& truth_values, const Eigen::VectorXd& effect_values) {
  if (!prior.equal_mass()) throw NonUniformPrior();
  const auto K = static_cast<Eigen::Index>(prior.size());
  if (kernel.grid_size() != prior.size() || truth_values.size() != K || effect_values.size() != K) {
    throw ValidationError("projection_bias: size mismatch");
  }
  const Eigen::MatrixXd A = kernel.matrix().transpose();
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  auto residual = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v - A * qr.solve(v); };
  const Eigen::VectorXd mu_perp = residual(effect_values);
  const Eigen::VectorXd nu_perp = residual(truth_values);
  const double k = static_cast<double>(K);
  ProjectionBias r;
  r.thm1_bias = -mu_perp.dot(nu_perp) / k;
  r.mu_residual = std::sqrt(mu_perp.squaredNorm() / k);
  r.pi_residual = std::sqrt(nu_perp.squaredNorm() / k);
  r.cs_bound = r.mu_residual * r.pi_residual;
  return r;
}

// ---------------------------------------------------------------------------
// Exact-bias engine

/// A finite design evaluated against one prior. `truth_on_prior[i]`, when
/// present, is the true law at design point i re-expressed as masses on the
/// prior grid (density ratio π₀/π_prior at the prior points); it feeds the
/// projection identity, which lives on the prior grid.
struct ExactBiasProblem {
  std::shared_ptr<const PanelModel> model;
  DesignSpec design;
  FixedEffectGrid prior;
  EffectFunctional effect;
  std::vector<Eigen::VectorXd> truth_on_prior;
};

struct ExactBiasRow {
  CorrectionOrder q;
  Regularization reg;
  double bias = 0.0;
  double asd = 0.0;
  double mu0 = 0.0;
  double thm1_bias = 0.0;
  double mu_residual = 0.0;
  double pi_residual = 0.0;
  double cs_bound = 0.0;
  /// Largest pre-clip eigenvalue excursion over the design.
  double max_excursion = 0.0;
  std::size_t outcomes = 0;
};

namespace detail {

/// Inverse-eigenvalue weights of the orthogonal projection used for the
/// identity: truncated and null directions are dropped.
inline Eigen::VectorXd projection_weights(const Eigen::VectorXd& eigenvalues, const Regularization& reg) {
  Regularization proj = reg;
  if (reg.mode == RegMode::clamp || reg.mode == RegMode::truncate_zero) proj.mode = RegMode::truncate;
  return spectral_weights(eigenvalues, CorrectionOrder::infinity(), proj);
}

}  // namespace detail

/// Bias, s.d. and projection identity for every (q, reg) combination.
inline std::vector<ExactBiasRow> exact_bias(const ExactBiasProblem& problem, std::span<const CorrectionOrder> orders,
                                            std::span<const Regularization> regs) {
  problem.design.validate();
  const auto& support = problem.design.support;
  const bool with_identity = !problem.truth_on_prior.empty();
  if (with_identity) {
    if (problem.truth_on_prior.size() != support.size()) throw ValidationError("truth_on_prior size mismatch");
    if (!problem.prior.equal_mass()) throw NonUniformPrior();
  }
  const double K = static_cast<double>(problem.prior.size());
  const std::size_t nx = support.size();
  const std::size_t nrows = orders.size() * regs.size();

  std::vector<std::vector<Eigen::VectorXd>> w(nrows, std::vector<Eigen::VectorXd>(nx));
  std::vector<Eigen::VectorXd> p0(nx);
  std::vector<double> prob(nx), mu0(nx);
  // identity pieces per (reg, x): <μ,ν>, ||μ||², ||ν||², <Pμ,Pν>, ||Pμ||², ||Pν||²
  std::vector<std::array<double, 6>> ident(regs.size() * nx);
  double excursion = 0.0;
  std::size_t outcomes = 0;

  for (std::size_t i = 0; i < nx; ++i) {
    const auto& d = support[i];
    KernelPlan plan(*problem.model, d.x);
    const EffectFunctional* effs[] = {&problem.effect};
    std::vector<Eigen::VectorXd> extra;
    if (with_identity) extra.push_back(problem.truth_on_prior[i]);
    const PosteriorSystem sys = analyze(plan, problem.prior, effs, extra);
    excursion = std::max(excursion, sys.spectrum.max_excursion);
    outcomes = std::max(outcomes, sys.spectrum.outcomes());
    p0[i] = truth_predictive(plan, d.truth);
    prob[i] = d.prob;
    mu0[i] = grid_average(problem.effect, plan.covariates(), d.truth);

    const EstimatingSeries series(sys.spectrum, sys.posterior_means[0]);
    for (std::size_t r = 0; r < regs.size(); ++r) {
      for (std::size_t qi = 0; qi < orders.size(); ++qi) {
        w[r * orders.size() + qi][i] = series.evaluate(orders[qi], regs[r]).w;
      }
    }

    if (with_identity) {
      const Eigen::VectorXd& tm = problem.truth_on_prior[i];
      const Eigen::VectorXd inv_sqrt = sys.spectrum.p.cwiseSqrt().cwiseInverse();
      const Eigen::VectorXd a = sys.spectrum.p.cwiseProduct(sys.posterior_means[0]);
      const Eigen::VectorXd u = sys.spectrum.eigenvectors.transpose() * inv_sqrt.cwiseProduct(a);
      const Eigen::VectorXd v = sys.spectrum.eigenvectors.transpose() * inv_sqrt.cwiseProduct(sys.extra_moments[0]);
      const Eigen::VectorXd mu_grid = effect_on_grid(problem.effect, plan.covariates(), problem.prior);
      for (std::size_t r = 0; r < regs.size(); ++r) {
        const Eigen::VectorXd s = detail::projection_weights(sys.spectrum.eigenvalues, regs[r]);
        auto& out = ident[r * nx + i];
        out[0] = tm.dot(mu_grid);
        out[1] = sys.effect_sq_norms[0];
        out[2] = K * tm.squaredNorm();
        out[3] = (s.cwiseProduct(u)).dot(v);
        out[4] = (s.cwiseProduct(u)).dot(u);
        out[5] = (s.cwiseProduct(v)).dot(v);
      }
    }
  }

  std::vector<ExactBiasRow> rows;
  for (std::size_t r = 0; r < regs.size(); ++r) {
    double thm1 = 0.0, mu_res = 0.0, pi_res = 0.0, cs = 0.0;
    if (with_identity) {
      CompensatedSum t, mr, pr, c;
      for (std::size_t i = 0; i < nx; ++i) {
        const auto& v = ident[r * nx + i];
        const double mres = std::sqrt(std::max(v[1] - v[4], 0.0));
        const double pres = std::sqrt(std::max(v[2] - v[5], 0.0));
        t.add(-prob[i] * (v[0] - v[3]));
        mr.add(prob[i] * mres * mres);
        pr.add(prob[i] * pres * pres);
        c.add(prob[i] * mres * pres);
      }
      thm1 = t.value();
      mu_res = std::sqrt(mr.value());
      pi_res = std::sqrt(pr.value());
      cs = c.value();
    }
    for (std::size_t qi = 0; qi < orders.size(); ++qi) {
      const auto m = moments_from_predictive(w[r * orders.size() + qi], p0, prob, mu0);
      ExactBiasRow row;
      row.q = orders[qi];
      row.reg = regs[r];
      row.bias = m.bias;
      row.asd = m.asd;
      row.mu0 = m.mu0;
      row.thm1_bias = thm1;
      row.mu_residual = mu_res;
      row.pi_residual = pi_res;
      row.cs_bound = cs;
      row.max_excursion = excursion;
      row.outcomes = outcomes;
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Shipped designs

/// Product law of two independent one-dimensional distributions.
struct ProductLaw {
  Distribution1D first;
  Distribution1D second;

  double pdf(std::span<const double> a) const { return first.pdf(a[0]) * second.pdf(a[1]); }
};

inline FixedEffectGrid product_quantile_grid(const ProductLaw& law, std::size_t K, PercentileRule rule) {
  return product_grid(quantile_grid(law.first, K, rule), quantile_grid(law.second, K, rule));
}

/// Masses on `prior` proportional to truth_pdf/prior_pdf at the prior points,
/// i.e. the true law seen through the prior's uniformizing transform.
template <class TruthPdf, class PriorPdf>
Eigen::VectorXd density_ratio_masses(const FixedEffectGrid& prior, TruthPdf&& truth_pdf, PriorPdf&& prior_pdf) {
  std::vector<double> w(prior.size());
  for (std::size_t j = 0; j < prior.size(); ++j) {
    const auto a = prior.point(j);
    w[j] = truth_pdf(a) / prior_pdf(a);
  }
  const double total = compensated_sum(w);
  Eigen::VectorXd out(static_cast<Eigen::Index>(prior.size()));
  for (std::size_t j = 0; j < prior.size(); ++j) out[static_cast<Eigen::Index>(j)] = w[j] / total;
  return out;
}

/// Slope multiplier c_T of the two-block design for scenarios 1-3:
/// 1, 1/2 and 1/√T.
inline double two_block_scale(int scenario, std::size_t T) {
  switch (scenario) {
    case 1:
      return 1.0;
    case 2:
      return 0.5;
    case 3:
      return 1.0 / std::sqrt(static_cast<double>(T));
    default:
      throw ValidationError("scenario must be 1, 2 or 3");
  }
}

struct TwoBlockScenarioOptions {
  std::size_t K = 1000;
  PercentileRule rule = PercentileRule::k_plus_one;
  ProductLaw truth{Distribution1D::logistic(1.0, 0.5), Distribution1D::logistic(1.0, 0.5)};
  ProductLaw prior{Distribution1D::normal(0.0, 4.0 * kPi * kPi / 3.0), Distribution1D::normal(0.0, 4.0 * kPi * kPi / 3.0)};
  double target_x = 1.0;
  bool with_identity = true;
};

/// Logistic random-coefficient model on the two-block design, collapsed to
/// block sums; target F(α₁ + α₂).
inline ExactBiasProblem two_block_scenario(int scenario, std::size_t T, const TwoBlockScenarioOptions& opt = {}) {
  const double c = two_block_scale(scenario, T);
  auto model = rc_binary_model(T, Link{LinkKind::logistic}, true);
  ExactBiasProblem p{model, {}, product_quantile_grid(opt.prior, opt.K, opt.rule),
                     effect_counterfactual_prob(opt.target_x, Link{LinkKind::logistic}), {}};
  p.design.support.push_back({two_block_covariates(T, c), 1.0, product_quantile_grid(opt.truth, opt.K, opt.rule)});
  if (opt.with_identity) {
    p.truth_on_prior.push_back(density_ratio_masses(
        p.prior, [&](std::span<const double> a) { return opt.truth.pdf(a); },
        [&](std::span<const double> a) { return opt.prior.pdf(a); }));
  }
  return p;
}

struct BinomialScenarioOptions {
  std::size_t K = 400;
  PercentileRule rule = PercentileRule::k_plus_one;
  Distribution1D truth = Distribution1D::normal(0.5, 1.0);
  Distribution1D prior = Distribution1D::normal(0.0, 4.0);
  /// Target F(scale·α).
  double scale = 2.0;
  Link link{LinkKind::logistic};
};

/// Successes out of T trials with no covariates; a smooth target that is not
/// a polynomial in the success probability.
inline ExactBiasProblem binomial_scenario(std::size_t T, const BinomialScenarioOptions& opt = {}) {
  auto model = binomial_nocov_model(T, opt.link);
  ExactBiasProblem p{model, {}, quantile_grid(opt.prior, opt.K, opt.rule), effect_index_prob(opt.scale, opt.link), {}};
  p.design.support.push_back({Covariates(static_cast<Eigen::Index>(T), 0), 1.0, quantile_grid(opt.truth, opt.K, opt.rule)});
  p.truth_on_prior.push_back(density_ratio_masses(
      p.prior, [&](std::span<const double> a) { return opt.truth.pdf(a[0]); },
      [&](std::span<const double> a) { return opt.prior.pdf(a[0]); }));
  return p;
}

// ---------------------------------------------------------------------------
// Sweeps and diagnostics

struct RateSweepRow {
  std::size_t T = 0;
  ExactBiasRow row;
};

struct RateSweep {
  std::vector<RateSweepRow> rows;
  /// Least-squares slope of log|bias| on T; empty when fewer than two
  /// nonzero biases.
  std::optional<double> bias_decay_slope;
};

/// Least-squares slope of y on x.
inline double ls_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("slope fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = compensated_sum(x) / n;
  const double my = compensated_sum(y) / n;
  CompensatedSum sxy, sxx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy.add((x[i] - mx) * (y[i] - my));
    sxx.add((x[i] - mx) * (x[i] - mx));
  }
  if (sxx.value() <= 0.0) throw ValidationError("slope fit needs distinct abscissae");
  return sxy.value() / sxx.value();
}

template <class ProblemFactory>
RateSweep rate_sweep(std::span<const std::size_t> Ts, ProblemFactory&& make, CorrectionOrder q, const Regularization& reg) {
  RateSweep out;
  std::vector<double> xs, ys;
  for (std::size_t T : Ts) {
    const ExactBiasProblem problem = make(T);
    const CorrectionOrder qs[] = {q};
    const Regularization rs[] = {reg};
    const auto rows = exact_bias(problem, qs, rs);
    out.rows.push_back({T, rows[0]});
    if (rows[0].bias != 0.0) {
      xs.push_back(static_cast<double>(T));
      ys.push_back(std::log(std::abs(rows[0].bias)));
    }
  }
  if (xs.size() >= 2) out.bias_decay_slope = ls_slope(xs, ys);
  return out;
}

struct CovariateVariation {
  double l2_sum = 0.0;
  double l1_sum = 0.0;
};

/// Σ(x_t − x̄)² and Σ|x_t − x̄|.
inline CovariateVariation covariate_variation(std::span<const double> x) {
  if (x.empty()) throw ValidationError("covariate_variation: need at least one period");
  const double mean = compensated_sum(x) / static_cast<double>(x.size());
  CompensatedSum l2, l1;
  for (double v : x) {
    l2.add((v - mean) * (v - mean));
    l1.add(std::abs(v - mean));
  }
  return {l2.value(), l1.value()};
}

}  // namespace aoi

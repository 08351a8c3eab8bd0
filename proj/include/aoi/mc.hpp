#pragma once

// Monte Carlo harness for the continuous-covariate random-coefficient logit
// design: simulation, replication loop and coverage metrics.

#include <boost/math/distributions/normal.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "aoi/discretize.hpp"
#include "aoi/estimator.hpp"
#include "aoi/model.hpp"
#include "aoi/numeric.hpp"
#include "aoi/population.hpp"
#include "aoi/registry.hpp"
#include "aoi/rng.hpp"
#include "aoi/spectral.hpp"

namespace aoi {

/// A₁ ~ N(a1_mean, a1_var), A₂ ~ N(a2_mean, a2_var),
/// X_t | A ~ N(A₁ + A₂, x_var), Y_t = 1{X_t A₂ + A₁ ≥ ε_t}, ε_t standard logistic.
struct DgpParams {
  double a1_mean = 0.0;
  double a1_var = 1.0;
  double a2_mean = 1.0;
  double a2_var = 1.0;
  double x_var = 1.0;
  /// Pins A₁ = A₂ = 0 (sanity checks only).
  bool zero_effects = false;
};

enum class DrawTag : std::uint32_t { a1 = 0, a2 = 1, x = 2, eps = 3 };

inline double standard_normal_quantile(double u) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), u);
}

/// Draws for unit `unit` of replication `rep`; every variable has its own
/// counter (rep, unit, period, tag) under key `seed`.
inline Unit simulate_unit(const DgpParams& dgp, std::size_t T, std::uint64_t seed, std::uint32_t rep, std::uint32_t unit) {
  auto u = [&](std::uint32_t t, DrawTag tag) { return uniform_at(seed, rep, unit, t, static_cast<std::uint32_t>(tag)); };
  double a1 = dgp.a1_mean + std::sqrt(dgp.a1_var) * standard_normal_quantile(u(0, DrawTag::a1));
  double a2 = dgp.a2_mean + std::sqrt(dgp.a2_var) * standard_normal_quantile(u(0, DrawTag::a2));
  if (dgp.zero_effects) a1 = a2 = 0.0;
  Unit out;
  out.id = std::to_string(unit);
  out.y.resize(T);
  out.x.resize(static_cast<Eigen::Index>(T), 1);
  for (std::size_t t = 0; t < T; ++t) {
    const auto tt = static_cast<std::uint32_t>(t);
    const double x = a1 + a2 + std::sqrt(dgp.x_var) * standard_normal_quantile(u(tt, DrawTag::x));
    const double eps = logit(u(tt, DrawTag::eps));
    out.x(static_cast<Eigen::Index>(t), 0) = x;
    out.y[t] = x * a2 + a1 >= eps ? 1 : 0;
  }
  return out;
}

inline Dataset simulate_dataset(const DgpParams& dgp, std::size_t n, std::size_t T, std::uint64_t seed, std::uint32_t rep) {
  if (n < 1 || T < 1) throw ValidationError("simulate: n and T must be at least 1");
  Dataset data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = simulate_unit(dgp, T, seed, rep, static_cast<std::uint32_t>(i));
  return data;
}

// ---------------------------------------------------------------------------
// Quadrature

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss–Hermite rule for the standard normal (weights sum to one), by the
/// Golub–Welsch eigenvalue method.
inline GaussRule gauss_hermite(std::size_t n) {
  if (n < 1) throw ValidationError("gauss_hermite: need at least one node");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const double b = std::sqrt(static_cast<double>(k));
    J(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = b;
    J(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k)) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussRule r;
  for (std::size_t i = 0; i < n; ++i) {
    r.nodes.push_back(es.eigenvalues()[static_cast<Eigen::Index>(i)]);
    const double v = es.eigenvectors()(0, static_cast<Eigen::Index>(i));
    r.weights.push_back(v * v);
  }
  return r;
}

/// E[μ(X, A)] under the DGP by tensor Gauss–Hermite quadrature over (A₁, A₂)
/// and, when μ depends on x, over X | A. Node counts double from 8 until
/// successive values differ by less than `tol`.
inline double true_effect_value(const DgpParams& dgp, const EffectFunctional& effect, std::size_t T = 1,
                                double tol = 1e-7, std::size_t max_nodes = 256) {
  auto integrate = [&](std::size_t n) {
    const GaussRule g = gauss_hermite(n);
    const std::size_t nz = effect.depends_on_x() ? n : 1;
    CompensatedSum acc;
    Covariates x(static_cast<Eigen::Index>(std::max<std::size_t>(T, 1)), 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double a[2] = {dgp.a1_mean + std::sqrt(dgp.a1_var) * g.nodes[i], dgp.a2_mean + std::sqrt(dgp.a2_var) * g.nodes[j]};
        if (dgp.zero_effects) a[0] = a[1] = 0.0;
        for (std::size_t k = 0; k < nz; ++k) {
          const double xv = a[0] + a[1] + (nz > 1 ? std::sqrt(dgp.x_var) * g.nodes[k] : 0.0);
          x.setConstant(xv);
          const double w = g.weights[i] * g.weights[j] * (nz > 1 ? g.weights[k] : 1.0);
          acc.add(w * effect(x, a));
        }
      }
    }
    return acc.value();
  };
  double prev = integrate(8);
  for (std::size_t n = 16; n <= max_nodes; n *= 2) {
    const double cur = integrate(n);
    if (std::abs(cur - prev) < tol) return cur;
    prev = cur;
  }
  throw NumericalError("true_effect_value: quadrature did not converge for " + effect.name());
}

// ---------------------------------------------------------------------------
// Study

/// The three product priors of the continuous design:
/// 1: Logit(1,1) x Logit(0,1), 2: Logit(1,2) x Logit(0,2), 3: N(0,1) x N(1,1).
inline ProductLaw study_prior(int id) {
  switch (id) {
    case 1:
      return {Distribution1D::logistic(1.0, 1.0), Distribution1D::logistic(0.0, 1.0)};
    case 2:
      return {Distribution1D::logistic(1.0, 2.0), Distribution1D::logistic(0.0, 2.0)};
    case 3:
      return {Distribution1D::normal(0.0, 1.0), Distribution1D::normal(1.0, 1.0)};
    default:
      throw ValidationError("prior id must be 1, 2 or 3");
  }
}

struct StudyConfig {
  std::size_t n = 500;
  std::size_t T = 6;
  std::size_t reps = 1000;
  std::uint64_t seed = 1;
  DgpParams dgp;
  std::string prior_id = "3";
  ProductLaw prior = study_prior(3);
  std::vector<std::string> effects{"ape"};
  std::vector<CorrectionOrder> orders{CorrectionOrder::infinity()};
  Regularization reg = Regularization::clamp(1e-4);
  std::size_t L = 99;
  PercentileRule rule = PercentileRule::k_plus_one;
  double level = 0.95;

  void validate() const {
    if (n < 1 || T < 1 || reps < 1) throw ValidationError("study: n, T and reps must be at least 1");
    if (L < 1) throw ValidationError("study: L must be at least 1");
    if (effects.empty() || orders.empty()) throw ValidationError("study: need at least one effect and one q");
    if (reps > std::numeric_limits<std::uint32_t>::max() || n > std::numeric_limits<std::uint32_t>::max()) {
      throw ValidationError("study: reps and n must fit in 32 bits");
    }
  }
};

struct StudyRow {
  std::string effect;
  std::string prior;
  std::size_t T = 0;
  CorrectionOrder q;
  double true_value = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  /// Missing when sd is zero (e.g. one replication).
  std::optional<double> se_sd_ratio;
  double coverage95 = 0.0;
  std::size_t reps_used = 0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::size_t failed_reps = 0;
  std::vector<std::string> failure_messages;
};

inline StudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  const auto model = rc_binary_model(cfg.T, Link{LinkKind::logistic}, true);
  const FixedEffectGrid grid = product_quantile_grid(cfg.prior, cfg.L, cfg.rule);
  std::vector<EffectFunctional> effects;
  for (const auto& id : cfg.effects) effects.push_back(make_effect(id, *model));
  std::vector<const EffectFunctional*> eptr;
  std::vector<double> truth;
  for (const auto& e : effects) {
    eptr.push_back(&e);
    truth.push_back(true_effect_value(cfg.dgp, e, cfg.T));
  }
  const std::size_t ne = effects.size();
  const std::size_t nq = cfg.orders.size();
  EstimatorOptions opts;
  opts.reg = cfg.reg;
  opts.level = cfg.level;
  const PriorFactory prior = [&grid](const Covariates&) { return grid; };

  std::vector<std::vector<double>> est(ne * nq), se(ne * nq);
  std::vector<std::vector<int>> covered(ne * nq);
  StudyResult result;
  for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
    const Dataset data = simulate_dataset(cfg.dgp, cfg.n, cfg.T, cfg.seed, static_cast<std::uint32_t>(rep));
    try {
      const auto reports = aoi_estimate_many(data, *model, prior, eptr, cfg.orders, opts);
      for (std::size_t e = 0; e < ne; ++e) {
        for (std::size_t q = 0; q < nq; ++q) {
          const auto& r = reports[e][q];
          est[e * nq + q].push_back(r.estimate);
          se[e * nq + q].push_back(r.se);
          covered[e * nq + q].push_back(r.ci_lo <= truth[e] && truth[e] <= r.ci_hi ? 1 : 0);
        }
      }
    } catch (const NumericalError& ex) {
      ++result.failed_reps;
      result.failure_messages.push_back("rep " + std::to_string(rep) + ": " + ex.what());
    }
  }

  for (std::size_t e = 0; e < ne; ++e) {
    for (std::size_t q = 0; q < nq; ++q) {
      const auto& v = est[e * nq + q];
      StudyRow row;
      row.effect = cfg.effects[e];
      row.prior = cfg.prior_id;
      row.T = cfg.T;
      row.q = cfg.orders[q];
      row.true_value = truth[e];
      row.reps_used = v.size();
      if (!v.empty()) {
        const double m = compensated_sum(v) / static_cast<double>(v.size());
        row.bias = m - truth[e];
        if (v.size() > 1) {
          CompensatedSum ss;
          for (double x : v) ss.add((x - m) * (x - m));
          row.sd = std::sqrt(ss.value() / static_cast<double>(v.size() - 1));
        }
        const double mean_se = compensated_sum(se[e * nq + q]) / static_cast<double>(v.size());
        if (row.sd > 0.0) row.se_sd_ratio = mean_se / row.sd;
        std::size_t hits = 0;
        for (int c : covered[e * nq + q]) hits += static_cast<std::size_t>(c);
        row.coverage95 = static_cast<double>(hits) / static_cast<double>(v.size());
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

}  // namespace aoi

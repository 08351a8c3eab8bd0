#pragma once

// AOI point estimator and feasible inference on a panel dataset.

#include <boost/math/distributions/normal.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstring>
#include <exception>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aoi/discretize.hpp"
#include "aoi/effect.hpp"
#include "aoi/model.hpp"
#include "aoi/numeric.hpp"
#include "aoi/spectral.hpp"

namespace aoi {

/// One unit: outcome sequence y (length T, entries 0/1) and covariates x (T x k).
struct Unit {
  std::vector<int> y;
  Covariates x;
  std::string id;
};

using Dataset = std::vector<Unit>;

struct EstimatorReport {
  double estimate = 0.0;
  std::vector<double> influences;
  double sigma2_hat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.95;

  CorrectionOrder q;
  Regularization reg;
  std::size_t grid_size = 0;
  std::size_t distinct_x = 0;
  std::string model_id;
  std::string effect_id;

  std::size_t n() const { return influences.size(); }
};

/// Prior over the fixed effects, possibly depending on x.
using PriorFactory = std::function<FixedEffectGrid(const Covariates&)>;

inline PriorFactory fixed_prior(FixedEffectGrid grid) {
  return [g = std::move(grid)](const Covariates&) { return g; };
}

inline double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0,1)");
  if (level == 0.95) return kZ95;
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
}

/// Fills estimate, variance, SE and CI from the influences.
inline void summarize(EstimatorReport& r) {
  const std::size_t n = r.influences.size();
  if (n == 0) throw ValidationError("empty dataset");
  r.estimate = compensated_sum(r.influences) / static_cast<double>(n);
  CompensatedSum ss;
  for (double v : r.influences) ss.add((v - r.estimate) * (v - r.estimate));
  r.sigma2_hat = ss.value() / static_cast<double>(n);
  r.se = std::sqrt(r.sigma2_hat / static_cast<double>(n));
  const double z = normal_critical_value(r.level);
  r.ci_lo = r.estimate - z * r.se;
  r.ci_hi = r.estimate + z * r.se;
}

struct EstimatorOptions {
  Regularization reg;
  double level = 0.95;
  std::size_t outcome_cap = kDefaultOutcomeCap;
};

namespace detail {

struct CovariateKeyLess {
  bool operator()(const Covariates& a, const Covariates& b) const {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    if (a.cols() != b.cols()) return a.cols() < b.cols();
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) < 0;
  }
};

/// Units grouped by bitwise-identical x, groups ordered by first occurrence.
inline std::vector<std::vector<std::size_t>> group_by_covariates(const Dataset& data) {
  std::map<Covariates, std::size_t, CovariateKeyLess> index;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [it, inserted] = index.try_emplace(data[i].x, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

inline std::string unit_name(const Dataset& data, std::size_t i) {
  return data[i].id.empty() ? "unit " + std::to_string(i) : "unit '" + data[i].id + "' (index " + std::to_string(i) + ")";
}

}  // namespace detail

/// AOI estimates for several effects and correction orders at once. Each
/// distinct x is analyzed once; only the spectral weights change with q.
/// Result is indexed [effect][q].
inline std::vector<std::vector<EstimatorReport>> aoi_estimate_many(
    const Dataset& data, const PanelModel& model, const PriorFactory& prior,
    std::span<const EffectFunctional* const> effects, std::span<const CorrectionOrder> orders,
    const EstimatorOptions& opts = {}) {
  if (data.empty()) throw ValidationError("empty dataset");
  if (effects.empty() || orders.empty()) throw ValidationError("need at least one effect and one correction order");
  const std::size_t n = data.size();
  const std::size_t ne = effects.size();
  const std::size_t nq = orders.size();
  const auto groups = detail::group_by_covariates(data);
  const std::size_t ng = groups.size();

  // influence[(e * nq + qi) * n + i]
  std::vector<double> influence(ne * nq * n, 0.0);
  std::vector<std::size_t> grid_sizes(ng, 0);
  std::vector<std::exception_ptr> errors(ng);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(ng); ++gi) {
    const auto& members = groups[static_cast<std::size_t>(gi)];
    std::size_t current = members.front();
    try {
      const Covariates& x = data[current].x;
      KernelPlan plan(model, x, opts.outcome_cap);
      std::vector<std::size_t> labels;
      labels.reserve(members.size());
      for (std::size_t i : members) {
        current = i;
        const auto k = plan.space().index_of_sequence(data[i].y);
        if (!k) throw ValidationError("outcome sequence outside the outcome space of " + model.id());
        labels.push_back(*k);
      }
      current = members.front();
      const FixedEffectGrid grid = prior(x);
      grid_sizes[static_cast<std::size_t>(gi)] = grid.size();
      const PosteriorSystem sys = analyze(plan, grid, effects);
      for (std::size_t qi = 0; qi < nq; ++qi) {
        const Eigen::VectorXd s = spectral_weights(sys.spectrum.eigenvalues, orders[qi], opts.reg);
        for (std::size_t e = 0; e < ne; ++e) {
          EstimatingSeries series(sys.spectrum, sys.posterior_means[e]);
          for (std::size_t u = 0; u < members.size(); ++u) {
            influence[(e * nq + qi) * n + members[u]] = series.label_coefficients(labels[u]).dot(s);
          }
        }
      }
    } catch (const ValidationError& ex) {
      errors[static_cast<std::size_t>(gi)] =
          std::make_exception_ptr(ValidationError(detail::unit_name(data, current) + ": " + ex.what()));
    } catch (const NumericalError& ex) {
      errors[static_cast<std::size_t>(gi)] =
          std::make_exception_ptr(NumericalError(detail::unit_name(data, current) + ": " + ex.what()));
    } catch (...) {
      errors[static_cast<std::size_t>(gi)] = std::current_exception();
    }
  }
  // Report the failure belonging to the earliest unit, independent of scheduling.
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::size_t max_grid = 0;
  for (std::size_t g : grid_sizes) max_grid = std::max(max_grid, g);
  std::vector<std::vector<EstimatorReport>> out(ne, std::vector<EstimatorReport>(nq));
  for (std::size_t e = 0; e < ne; ++e) {
    for (std::size_t qi = 0; qi < nq; ++qi) {
      EstimatorReport& r = out[e][qi];
      const double* first = influence.data() + (e * nq + qi) * n;
      r.influences.assign(first, first + n);
      r.level = opts.level;
      r.q = orders[qi];
      r.reg = opts.reg;
      r.grid_size = max_grid;
      r.distinct_x = ng;
      r.model_id = model.id();
      r.effect_id = effects[e]->name();
      summarize(r);
    }
  }
  return out;
}

inline EstimatorReport aoi_estimate(const Dataset& data, const PanelModel& model, const FixedEffectGrid& prior,
                                    const EffectFunctional& effect, CorrectionOrder q,
                                    const EstimatorOptions& opts = {}) {
  const EffectFunctional* e[] = {&effect};
  const CorrectionOrder qs[] = {q};
  return aoi_estimate_many(data, model, fixed_prior(prior), e, qs, opts)[0][0];
}

}  // namespace aoi

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "aoi/model.hpp"
#include "aoi/numeric.hpp"

namespace aoi {

/// Known average-effect function μ(x, α).
class EffectFunctional {
 public:
  using Fn = std::function<double(const Covariates&, std::span<const double>)>;

  EffectFunctional(std::string name, Fn fn, bool depends_on_x = true)
      : name_(std::move(name)), fn_(std::move(fn)), depends_on_x_(depends_on_x) {}

  const std::string& name() const { return name_; }
  bool depends_on_x() const { return depends_on_x_; }

  double operator()(const Covariates& x, std::span<const double> alpha) const { return fn_(x, alpha); }
  double evaluate(const Covariates& x, std::span<const double> alpha) const { return fn_(x, alpha); }

 private:
  std::string name_;
  Fn fn_;
  bool depends_on_x_;
};

/// F(α₁ + target_x·α₂): predicted probability with the covariate set to target_x.
inline EffectFunctional effect_counterfactual_prob(double target_x, Link link = {}) {
  return EffectFunctional(
      "cf_prob:" + std::to_string(target_x),
      [target_x, link](const Covariates&, std::span<const double> a) { return link.cdf(a[0] + target_x * a[1]); },
      false);
}

/// F(scale·α₁) for one-dimensional fixed effects; a smooth target outside
/// the span of the binomial likelihood rows.
inline EffectFunctional effect_index_prob(double scale, Link link = {}) {
  return EffectFunctional(
      "index_prob:" + std::to_string(scale),
      [scale, link](const Covariates&, std::span<const double> a) { return link.cdf(scale * a[0]); }, false);
}

/// Average partial effect of x_t in the logistic random-coefficient model:
/// mean over t of α₂Λ'(α₁ + x_t α₂). With `period` set, the single-period
/// derivative is returned instead of the time average.
inline EffectFunctional effect_ape_logistic(std::optional<std::size_t> period = std::nullopt) {
  std::string name = period ? "ape@" + std::to_string(*period) : "ape";
  return EffectFunctional(std::move(name), [period](const Covariates& x, std::span<const double> a) {
    if (period) return a[1] * logistic_density(a[0] + x(static_cast<Eigen::Index>(*period), 0) * a[1]);
    CompensatedSum acc;
    for (Eigen::Index t = 0; t < x.rows(); ++t) acc.add(a[1] * logistic_density(a[0] + x(t, 0) * a[1]));
    return acc.value() / static_cast<double>(x.rows());
  });
}

/// Average treatment effect of a binary first regressor on ȳ in the static
/// logit model: Σ_y ȳ [f(y | x̃⁽¹⁾, α) − f(y | x̃⁽⁰⁾, α)].
inline EffectFunctional effect_treatment_effect(const StaticLogitModel& model) {
  auto beta = model.beta();
  if (beta.empty()) throw ValidationError("treatment effect needs at least one regressor");
  return EffectFunctional("ate", [beta](const Covariates& x, std::span<const double> a) {
    // E[ȳ | x, α] is the mean of the per-period success probabilities.
    CompensatedSum acc;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      double rest = a[0];
      for (std::size_t p = 1; p < beta.size(); ++p) rest += x(t, static_cast<Eigen::Index>(p)) * beta[p];
      acc.add(logistic(beta[0] + rest) - logistic(rest));
    }
    return acc.value() / static_cast<double>(x.rows());
  });
}

/// Average marginal effect of the first (continuous) regressor on ȳ in the
/// static logit model, time-averaged unless `period` is given.
inline EffectFunctional effect_ame_logit(const StaticLogitModel& model,
                                         std::optional<std::size_t> period = std::nullopt) {
  auto beta = model.beta();
  if (beta.empty()) throw ValidationError("marginal effect needs at least one regressor");
  std::string name = period ? "ame@" + std::to_string(*period) : "ame";
  return EffectFunctional(std::move(name), [beta, period](const Covariates& x, std::span<const double> a) {
    auto index = [&](Eigen::Index t) {
      double z = a[0];
      for (std::size_t p = 0; p < beta.size(); ++p) z += x(t, static_cast<Eigen::Index>(p)) * beta[p];
      return z;
    };
    if (period) return beta[0] * logistic_density(index(static_cast<Eigen::Index>(*period)));
    CompensatedSum acc;
    for (Eigen::Index t = 0; t < x.rows(); ++t) acc.add(beta[0] * logistic_density(index(t)));
    return acc.value() / static_cast<double>(x.rows());
  });
}

}  // namespace aoi

#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aoi/numeric.hpp"

namespace aoi {

enum class Family { logistic, normal, uniform };

/// One-dimensional distribution used for priors and true fixed-effect laws.
/// Parameters: logistic(location, scale), normal(mean, variance), uniform(lo, hi).
struct Distribution1D {
  Family family = Family::normal;
  double a = 0.0;
  double b = 1.0;

  static Distribution1D logistic(double location, double scale) { return checked({Family::logistic, location, scale}); }
  static Distribution1D normal(double mean, double variance) { return checked({Family::normal, mean, variance}); }
  static Distribution1D uniform(double lo, double hi) { return checked({Family::uniform, lo, hi}); }

  double quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw ValidationError("quantile: u must lie in (0,1)");
    switch (family) {
      case Family::logistic:
        return a + b * aoi::logit(u);
      case Family::normal:
        return a + std::sqrt(b) * boost::math::quantile(boost::math::normal_distribution<double>(), u);
      case Family::uniform:
        return a + (b - a) * u;
    }
    return 0.0;
  }

  double cdf(double x) const {
    switch (family) {
      case Family::logistic:
        return aoi::logistic((x - a) / b);
      case Family::normal:
        return normal_cdf((x - a) / std::sqrt(b));
      case Family::uniform:
        return x <= a ? 0.0 : x >= b ? 1.0 : (x - a) / (b - a);
    }
    return 0.0;
  }

  double pdf(double x) const {
    switch (family) {
      case Family::logistic:
        return logistic_density((x - a) / b) / b;
      case Family::normal: {
        const double sd = std::sqrt(b);
        return normal_pdf((x - a) / sd) / sd;
      }
      case Family::uniform:
        return x < a || x > b ? 0.0 : 1.0 / (b - a);
    }
    return 0.0;
  }

  std::string describe() const {
    switch (family) {
      case Family::logistic:
        return "logistic(" + std::to_string(a) + "," + std::to_string(b) + ")";
      case Family::normal:
        return "normal(" + std::to_string(a) + "," + std::to_string(b) + ")";
      case Family::uniform:
        return "uniform(" + std::to_string(a) + "," + std::to_string(b) + ")";
    }
    return {};
  }

 private:
  static Distribution1D checked(Distribution1D d) {
    const bool ok = d.family == Family::uniform ? d.b > d.a : d.b > 0.0;
    if (!ok || !std::isfinite(d.a) || !std::isfinite(d.b)) throw ValidationError("invalid distribution parameters");
    return d;
  }
};

/// Percentile placement for quantile grids: i/(K+1) or (i − ½)/K, i = 1..K.
enum class PercentileRule { k_plus_one, midpoint };

/// Discrete stand-in for a fixed-effect distribution: K points in R^d with
/// positive masses summing to one. Points are stored row-major.
class FixedEffectGrid {
 public:
  FixedEffectGrid() = default;

  FixedEffectGrid(std::size_t dim, std::vector<double> points, std::vector<double> masses)
      : dim_(dim), points_(std::move(points)), masses_(std::move(masses)) {
    if (dim_ == 0 || points_.size() != dim_ * masses_.size() || masses_.empty()) {
      throw ValidationError("grid: points/masses shape mismatch");
    }
    for (double m : masses_) {
      if (!(m > 0.0)) throw ValidationError("grid: masses must be positive");
    }
    if (std::abs(compensated_sum(masses_) - 1.0) > 1e-12) throw ValidationError("grid: masses must sum to one");
    equal_mass_ = true;
    for (double m : masses_) {
      if (m != masses_.front()) {
        equal_mass_ = false;
        break;
      }
    }
  }

  std::size_t size() const { return masses_.size(); }
  std::size_t dim() const { return dim_; }
  bool equal_mass() const { return equal_mass_; }

  std::span<const double> point(std::size_t j) const { return {points_.data() + j * dim_, dim_}; }
  double mass(std::size_t j) const { return masses_[j]; }
  std::span<const double> masses() const { return masses_; }
  std::span<const double> points() const { return points_; }

 private:
  std::size_t dim_ = 1;
  std::vector<double> points_;
  std::vector<double> masses_;
  bool equal_mass_ = true;
};

inline constexpr std::size_t kDefaultGridCap = std::size_t{1} << 24;

inline double percentile(std::size_t i, std::size_t K, PercentileRule rule) {
  return rule == PercentileRule::k_plus_one ? static_cast<double>(i) / static_cast<double>(K + 1)
                                            : (static_cast<double>(i) - 0.5) / static_cast<double>(K);
}

/// K equal-mass points at equi-spaced percentiles of d.
inline FixedEffectGrid quantile_grid(const Distribution1D& d, std::size_t K,
                                     PercentileRule rule = PercentileRule::k_plus_one) {
  if (K < 1) throw ValidationError("quantile_grid: K must be at least 1");
  std::vector<double> points(K);
  for (std::size_t i = 1; i <= K; ++i) points[i - 1] = d.quantile(percentile(i, K, rule));
  for (std::size_t i = 1; i < K; ++i) {
    if (!(points[i] > points[i - 1])) throw NumericalError("quantile_grid: quantiles not strictly increasing");
  }
  return FixedEffectGrid(1, std::move(points), std::vector<double>(K, 1.0 / static_cast<double>(K)));
}

/// Tensor product of two one-dimensional grids; point (i, j) has index i·K₂ + j.
inline FixedEffectGrid product_grid(const FixedEffectGrid& g1, const FixedEffectGrid& g2,
                                    std::size_t cap = kDefaultGridCap) {
  if (g1.dim() != 1 || g2.dim() != 1) throw ValidationError("product_grid: inputs must be one-dimensional");
  const std::size_t K1 = g1.size();
  const std::size_t K2 = g2.size();
  if (K1 > cap / K2) throw ValidationError("product_grid: size cap exceeded");
  std::vector<double> points(2 * K1 * K2);
  std::vector<double> masses(K1 * K2);
  for (std::size_t i = 0; i < K1; ++i) {
    for (std::size_t j = 0; j < K2; ++j) {
      const std::size_t k = i * K2 + j;
      points[2 * k] = g1.point(i)[0];
      points[2 * k + 1] = g2.point(j)[0];
      masses[k] = g1.mass(i) * g2.mass(j);
    }
  }
  return FixedEffectGrid(2, std::move(points), std::move(masses));
}

/// Same points with equal masses. For a quantile grid this is the discrete
/// image of the prior-CDF transform, under which the prior is uniform.
inline FixedEffectGrid uniformize(const FixedEffectGrid& grid) {
  std::vector<double> pts(grid.points().begin(), grid.points().end());
  return FixedEffectGrid(grid.dim(), std::move(pts),
                         std::vector<double>(grid.size(), 1.0 / static_cast<double>(grid.size())));
}

/// Reweights `grid` in proportion to weights[j] (normalized to sum to one).
inline FixedEffectGrid reweight(const FixedEffectGrid& grid, std::span<const double> weights) {
  if (weights.size() != grid.size()) throw ValidationError("reweight: size mismatch");
  const double total = compensated_sum(weights);
  std::vector<double> masses(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) masses[j] = weights[j] / total;
  std::vector<double> pts(grid.points().begin(), grid.points().end());
  return FixedEffectGrid(grid.dim(), std::move(pts), std::move(masses));
}

}  // namespace aoi

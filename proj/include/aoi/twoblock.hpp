#pragma once

// Explicit estimator for the two-block design: Chebyshev interpolation of
// g_T on [ε, 1−ε]², with each monomial p^s replaced by its unbiased
// falling-factorial estimate.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "aoi/numeric.hpp"

namespace aoi {

inline constexpr double kDefaultTwoBlockEps = 0.05;

/// Degrees above this use quad precision for the monomial expansion.
inline constexpr std::size_t kDoublePrecisionDegree = 8;

using Quad = boost::multiprecision::cpp_bin_float_quad;

inline void check_eps(double eps) {
  if (!(eps >= 0.0 && eps < 0.5)) throw ValidationError("eps must lie in [0, 1/2)");
}

/// t_m = ½ + ((1 − 2ε)/2)·cos((2m + 1)π / (2(S + 1))), m = 0..S.
template <class Real = double>
std::vector<Real> chebyshev_nodes(std::size_t S, double eps) {
  check_eps(eps);
  using std::cos;
  const Real pi = boost::math::constants::pi<Real>();
  std::vector<Real> t(S + 1);
  const Real half_width = (Real(1) - Real(2) * static_cast<Real>(eps)) / Real(2);
  for (std::size_t m = 0; m <= S; ++m) {
    t[m] = Real(0.5) + half_width * cos(static_cast<Real>(2 * m + 1) * pi / static_cast<Real>(2 * (S + 1)));
  }
  return t;
}

/// Row m holds the monomial coefficients of the Lagrange basis polynomial ℓ_m
/// (constant term first).
template <class Real = double>
std::vector<std::vector<Real>> lagrange_coeffs(std::span<const Real> nodes) {
  const std::size_t n = nodes.size();
  if (n == 0) throw ValidationError("lagrange_coeffs: no nodes");
  std::vector<std::vector<Real>> c(n, std::vector<Real>(n, Real(0)));
  for (std::size_t m = 0; m < n; ++m) {
    std::vector<Real> poly{Real(1)};
    Real denom = Real(1);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == m) continue;
      const Real diff = nodes[m] - nodes[r];
      if (diff == Real(0)) throw ValidationError("lagrange_coeffs: nodes must be distinct");
      denom *= diff;
      // poly *= (p − t_r)
      std::vector<Real> next(poly.size() + 1, Real(0));
      for (std::size_t s = 0; s < poly.size(); ++s) {
        next[s + 1] += poly[s];
        next[s] -= nodes[r] * poly[s];
      }
      poly = std::move(next);
    }
    for (std::size_t s = 0; s < n; ++s) c[m][s] = poly[s] / denom;
  }
  return c;
}

/// (y)_r / (n)_r = Π_{i<r} (y − i)/(n − i); zero when y < r.
template <class Real = double>
Real falling_factorial_ratio(std::size_t y, std::size_t r, std::size_t n) {
  if (r > n || y > n) throw ValidationError("falling_factorial_ratio: need r <= n and y <= n");
  if (y < r) return Real(0);
  Real v = Real(1);
  for (std::size_t i = 0; i < r; ++i) v *= static_cast<Real>(y - i) / static_cast<Real>(n - i);
  return v;
}

/// Λ((1 − √T)·logit p₁ + √T·logit p₂).
template <class Real = double>
Real g_T(Real p1, Real p2, std::size_t T) {
  if (!(p1 > 0 && p1 < 1 && p2 > 0 && p2 < 1)) throw ValidationError("g_T: probabilities must lie in (0,1)");
  if (T < 1) throw ValidationError("g_T: T must be at least 1");
  using std::exp, std::log, std::sqrt;
  const Real rt = sqrt(static_cast<Real>(T));
  const Real z = (Real(1) - rt) * log(p1 / (Real(1) - p1)) + rt * log(p2 / (Real(1) - p2));
  if (z >= 0) return Real(1) / (Real(1) + exp(-z));
  const Real e = exp(z);
  return e / (Real(1) + e);
}

/// Chebyshev interpolant of degree S on [ε, 1−ε] with its unbiased
/// binomial implementation L_m(y) = Σ_s c[m][s]·(y)_s/(S)_s.
template <class Real = double>
class ChebInterpolant {
 public:
  ChebInterpolant(std::size_t S, double eps)
      : S_(S), eps_(eps), nodes_(chebyshev_nodes<Real>(S, eps)), coeffs_(lagrange_coeffs<Real>(nodes_)) {
    L_.assign(S_ + 1, std::vector<Real>(S_ + 1, Real(0)));
    for (std::size_t m = 0; m <= S_; ++m) {
      for (std::size_t y = 0; y <= S_; ++y) {
        Real acc = Real(0);
        for (std::size_t s = 0; s <= S_; ++s) acc += coeffs_[m][s] * falling_factorial_ratio<Real>(y, s, S_);
        L_[m][y] = acc;
      }
    }
  }

  std::size_t degree() const { return S_; }
  double eps() const { return eps_; }
  const std::vector<Real>& nodes() const { return nodes_; }
  const std::vector<std::vector<Real>>& coeffs() const { return coeffs_; }

  /// ℓ_m(p) by Horner on the monomial coefficients.
  Real basis(std::size_t m, Real p) const {
    Real v = Real(0);
    for (std::size_t s = S_ + 1; s-- > 0;) v = v * p + coeffs_[m][s];
    return v;
  }

  /// L_m(y), the unbiased estimator of ℓ_m(p) from y ~ Bin(S, p).
  Real unbiased(std::size_t m, std::size_t y) const {
    if (y > S_) throw ValidationError("unbiased: y exceeds the degree");
    return L_[m][y];
  }

 private:
  std::size_t S_;
  double eps_;
  std::vector<Real> nodes_;
  std::vector<std::vector<Real>> coeffs_;
  std::vector<std::vector<Real>> L_;
};

/// m_T(y₁, y₂) for all (y₁, y₂) ∈ {0..S}² with target h(p₁, p₂) interpolated at
/// the node pairs: M = Lᵀ·H·L with H_ml = h(t_m, t_l).
template <class Real, class Target>
std::vector<std::vector<Real>> estimator_table(const ChebInterpolant<Real>& ci, Target&& target) {
  const std::size_t n = ci.degree() + 1;
  std::vector<std::vector<Real>> H(n, std::vector<Real>(n));
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t l = 0; l < n; ++l) H[m][l] = target(ci.nodes()[m], ci.nodes()[l]);
  }
  std::vector<std::vector<Real>> HL(n, std::vector<Real>(n, Real(0)));  // HL[m][y2] = Σ_l H_ml L_l(y2)
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t y2 = 0; y2 < n; ++y2) {
      Real acc = Real(0);
      for (std::size_t l = 0; l < n; ++l) acc += H[m][l] * ci.unbiased(l, y2);
      HL[m][y2] = acc;
    }
  }
  std::vector<std::vector<Real>> M(n, std::vector<Real>(n, Real(0)));
  for (std::size_t y1 = 0; y1 < n; ++y1) {
    for (std::size_t y2 = 0; y2 < n; ++y2) {
      Real acc = Real(0);
      for (std::size_t m = 0; m < n; ++m) acc += ci.unbiased(m, y1) * HL[m][y2];
      M[y1][y2] = acc;
    }
  }
  return M;
}

/// m_T(y₁, y₂) with S = T/2. Double requests above kDoublePrecisionDegree
/// are evaluated in quad precision.
template <class Real = double>
Real m_T(std::size_t y1, std::size_t y2, std::size_t T, double eps = kDefaultTwoBlockEps) {
  if (T % 2 != 0 || T == 0) throw ValidationError("m_T: T must be even and positive");
  const std::size_t S = T / 2;
  if (y1 > S || y2 > S) throw ValidationError("m_T: counts exceed T/2");
  if constexpr (std::is_same_v<Real, double>) {
    if (S > kDoublePrecisionDegree) return static_cast<double>(m_T<Quad>(y1, y2, T, eps));
  }
  const ChebInterpolant<Real> ci(S, eps);
  Real acc = Real(0);
  for (std::size_t m = 0; m <= S; ++m) {
    for (std::size_t l = 0; l <= S; ++l) {
      acc += g_T<Real>(ci.nodes()[m], ci.nodes()[l], T) * ci.unbiased(m, y1) * ci.unbiased(l, y2);
    }
  }
  return acc;
}

template <class Real>
std::vector<Real> binomial_pmf_real(std::size_t n, Real p) {
  std::vector<Real> out(n + 1);
  const Real q = Real(1) - p;
  for (std::size_t k = 0; k <= n; ++k) {
    Real v = static_cast<Real>(binomial_coefficient(n, k));
    for (std::size_t i = 0; i < k; ++i) v *= p;
    for (std::size_t i = k; i < n; ++i) v *= q;
    out[k] = v;
  }
  return out;
}

/// Equally spaced points on [ε, 1−ε], `count` ≥ 2 (a single point sits at ½).
inline std::vector<double> probability_grid(double eps, std::size_t count) {
  check_eps(eps);
  if (count == 0) throw ValidationError("probability grid needs at least one point");
  std::vector<double> p(count);
  if (count == 1) {
    p[0] = 0.5;
    return p;
  }
  const double lo = std::max(eps, 1e-6);
  const double hi = 1.0 - lo;
  for (std::size_t i = 0; i < count; ++i) p[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return p;
}

/// sup over p₁, p₂ ∈ grid of |E[m(Y₁, Y₂)] − target(p₁, p₂)|, Y_b ~ Bin(S, p_b),
/// where m interpolates `target` at the Chebyshev node pairs.
template <class Real, class Target>
double exact_bias_surface(std::size_t S, double eps, std::span<const double> p1_grid, std::span<const double> p2_grid,
                          Target&& target) {
  const ChebInterpolant<Real> ci(S, eps);
  const auto M = estimator_table(ci, target);
  const std::size_t n = S + 1;
  std::vector<std::vector<Real>> pmf2;
  for (double p2 : p2_grid) pmf2.push_back(binomial_pmf_real<Real>(S, static_cast<Real>(p2)));
  Real sup = Real(0);
  for (double p1 : p1_grid) {
    const auto b1 = binomial_pmf_real<Real>(S, static_cast<Real>(p1));
    std::vector<Real> v(n, Real(0));  // v[y2] = Σ_y1 b1[y1] M[y1][y2]
    for (std::size_t y1 = 0; y1 < n; ++y1) {
      for (std::size_t y2 = 0; y2 < n; ++y2) v[y2] += b1[y1] * M[y1][y2];
    }
    for (std::size_t j = 0; j < p2_grid.size(); ++j) {
      Real e = Real(0);
      for (std::size_t y2 = 0; y2 < n; ++y2) e += v[y2] * pmf2[j][y2];
      using std::abs;
      const Real d = abs(Real(e - target(static_cast<Real>(p1), static_cast<Real>(p2_grid[j]))));
      if (d > sup) sup = d;
    }
  }
  return static_cast<double>(sup);
}

/// Sup bias of m_T for g_T on a grid_points² grid over [ε, 1−ε]². Degrees
/// above kDoublePrecisionDegree are computed in quad precision.
inline double two_block_sup_bias(std::size_t T, double eps = kDefaultTwoBlockEps, std::size_t grid_points = 21) {
  if (T % 2 != 0 || T == 0) throw ValidationError("two-block sweep needs even positive T, got " + std::to_string(T));
  check_eps(eps);
  const std::size_t S = T / 2;
  const auto grid = probability_grid(eps, grid_points);
  if (S > kDoublePrecisionDegree) {
    return exact_bias_surface<Quad>(S, eps, grid, grid, [T](const Quad& a, const Quad& b) { return g_T<Quad>(a, b, T); });
  }
  return exact_bias_surface<double>(S, eps, grid, grid, [T](double a, double b) { return g_T<double>(a, b, T); });
}

struct TwoBlockRow {
  std::size_t T = 0;
  double eps = kDefaultTwoBlockEps;
  double sup_bias = 0.0;
};

struct TwoBlockSweep {
  std::vector<TwoBlockRow> rows;
  /// Least-squares slope of log(sup bias) on √T.
  std::optional<double> fitted_slope;
};

inline TwoBlockSweep two_block_sweep(std::span<const std::size_t> Ts, double eps = kDefaultTwoBlockEps,
                                     std::size_t grid_points = 21) {
  if (Ts.empty()) throw ValidationError("two-block sweep: empty T list");
  for (std::size_t T : Ts) {
    if (T % 2 != 0 || T == 0) throw ValidationError("two-block sweep needs even positive T, got " + std::to_string(T));
  }
  check_eps(eps);
  TwoBlockSweep out;
  out.rows.resize(Ts.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(Ts.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out.rows[k] = {Ts[k], eps, two_block_sup_bias(Ts[k], eps, grid_points)};
  }
  std::vector<double> x, y;
  for (const auto& r : out.rows) {
    if (r.sup_bias > 0.0) {
      x.push_back(std::sqrt(static_cast<double>(r.T)));
      y.push_back(std::log(r.sup_bias));
    }
  }
  if (x.size() >= 2) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mx += x[i] / n;
      my += y[i] / n;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx > 0) out.fitted_slope = sxy / sxx;
  }
  return out;
}

}  // namespace aoi

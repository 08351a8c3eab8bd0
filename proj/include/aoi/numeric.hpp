#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aoi {

// Error hierarchy. ValidationError maps to CLI exit code 2, NumericalError to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

inline constexpr double kPi = 3.14159265358979323846;

/// Two-sided 95% standard normal critical value.
inline constexpr double kZ95 = 1.959963984540054;

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log Λ(z), accurate in both tails.
inline double log_logistic(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

/// Λ'(z) = Λ(z)(1 − Λ(z)).
inline double logistic_density(double z) {
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }

/// log Φ(z) with an asymptotic branch once erfc underflows.
inline double log_normal_cdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * kPi) + std::log(series);
}

/// Neumaier-compensated accumulator. Summation order is the caller's order,
/// so results are reproducible for a fixed input sequence.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double v) {
    add(v);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> values) {
  CompensatedSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

/// log C(n, s) for s = 0..n.
inline std::vector<double> log_binomial_row(std::size_t n) {
  std::vector<double> row(n + 1, 0.0);
  for (std::size_t s = 1; s <= n; ++s) {
    row[s] = row[s - 1] + std::log(static_cast<double>(n - s + 1)) - std::log(static_cast<double>(s));
  }
  // Symmetrize to remove drift in the upper half.
  for (std::size_t s = 0; s <= n / 2; ++s) row[n - s] = row[s];
  return row;
}

inline double binomial_coefficient(std::size_t n, std::size_t s) {
  if (s > n) return 0.0;
  s = std::min(s, n - s);
  double c = 1.0;
  for (std::size_t i = 1; i <= s; ++i) {
    c = c * static_cast<double>(n - s + i) / static_cast<double>(i);
  }
  // Intermediate values are C(n-s+i, i), exact below 2^53.
  return c < 9.0e15 ? std::round(c) : c;
}

/// Binomial pmf for k = 0..n at success probability p.
inline std::vector<double> binomial_pmf(std::size_t n, double p) {
  std::vector<double> pmf(n + 1);
  const auto lc = log_binomial_row(n);
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  for (std::size_t k = 0; k <= n; ++k) {
    double v = lc[k];
    if (k > 0) v += static_cast<double>(k) * lp;
    if (k < n) v += static_cast<double>(n - k) * lq;
    pmf[k] = std::exp(v);
  }
  return pmf;
}

}  // namespace aoi

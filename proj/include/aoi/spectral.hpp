#pragma once

// Prior predictive, posterior, the posterior-predictive transition matrix Q(x)
// in its symmetric form Q̃ = diag(p)^{-1/2} Q diag(p)^{1/2}, and spectral
// (Drazin / regularized / truncated-Neumann) inversion.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aoi/discretize.hpp"
#include "aoi/effect.hpp"
#include "aoi/kernel.hpp"
#include "aoi/model.hpp"
#include "aoi/numeric.hpp"

namespace aoi {

/// Prior predictive probability of some label is at or below the floor, so
/// the posterior given that label is undefined.
struct ZeroPredictive : NumericalError {
  ZeroPredictive(std::size_t label, double value)
      : NumericalError("prior predictive probability of label " + std::to_string(label) + " is " +
                       std::to_string(value) + "; the prior violates the positivity condition"),
        label(label) {}
  std::size_t label;
};

struct EigenFailure : NumericalError {
  explicit EigenFailure(std::size_t outcomes)
      : NumericalError("symmetric eigensolver did not converge (n_Y = " + std::to_string(outcomes) + ")"),
        outcomes(outcomes) {}
  std::size_t outcomes;
};

inline constexpr double kPredictiveFloor = 1e-300;
inline constexpr double kEigenvalueSlack = 1e-9;

// ---------------------------------------------------------------------------
// Correction order and regularization

/// Number of bias-correction rounds q; infinity denotes the AOI limit.
class CorrectionOrder {
 public:
  constexpr CorrectionOrder(std::uint64_t q = 0) : q_(q), infinite_(false) {}  // NOLINT(implicit)
  static constexpr CorrectionOrder infinity() {
    CorrectionOrder c;
    c.infinite_ = true;
    return c;
  }

  constexpr bool is_infinite() const { return infinite_; }
  constexpr std::uint64_t value() const { return q_; }

  std::string to_string() const { return infinite_ ? "inf" : std::to_string(q_); }

  /// Accepts "inf", "infinity", plain integers and integral scientific
  /// notation such as "1e6".
  static CorrectionOrder parse(std::string_view text) {
    if (text == "inf" || text == "infinity" || text == "Inf") return infinity();
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !(v >= 0.0) || v != std::floor(v) ||
        v > 1e18) {
      throw ValidationError("invalid correction order '" + std::string(text) + "'");
    }
    return CorrectionOrder(static_cast<std::uint64_t>(v));
  }

  friend constexpr bool operator==(const CorrectionOrder& a, const CorrectionOrder& b) {
    return a.infinite_ == b.infinite_ && (a.infinite_ || a.q_ == b.q_);
  }

 private:
  std::uint64_t q_;
  bool infinite_;
};

/// truncate drops eigen-directions below λ_min for every q; truncate_zero sets
/// them to zero and lets the null-space rule apply (q + 1 for finite q).
enum class RegMode { none, truncate, truncate_zero, clamp };

inline std::string to_string(RegMode m) {
  switch (m) {
    case RegMode::none:
      return "none";
    case RegMode::truncate:
      return "truncate";
    case RegMode::truncate_zero:
      return "truncate_zero";
    case RegMode::clamp:
      return "clamp";
  }
  return {};
}

struct Regularization {
  RegMode mode = RegMode::none;
  double lambda_min = 0.0;

  static Regularization none() { return {}; }
  static Regularization truncate(double lambda_min) { return checked({RegMode::truncate, lambda_min}); }
  static Regularization truncate_zero(double lambda_min) { return checked({RegMode::truncate_zero, lambda_min}); }
  static Regularization clamp(double lambda_min) { return checked({RegMode::clamp, lambda_min}); }

  friend bool operator==(const Regularization&, const Regularization&) = default;

 private:
  static Regularization checked(Regularization r) {
    if (!(r.lambda_min > 0.0) || !(r.lambda_min < 1.0)) {
      throw ValidationError("regularization threshold must lie in (0,1)");
    }
    return r;
  }
};

/// truncate: λ < λ_min → 0; clamp: λ < λ_min → λ_min; none: unchanged.
inline Eigen::VectorXd apply_regularization(const Eigen::VectorXd& eigenvalues, const Regularization& reg) {
  Eigen::VectorXd out = eigenvalues;
  if (reg.mode == RegMode::none) return out;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out[i] < reg.lambda_min) out[i] = reg.mode == RegMode::clamp ? reg.lambda_min : 0.0;
  }
  return out;
}

/// Eigenvalues at or below this level are the numerical null space of Q̃.
inline double null_tolerance(std::size_t outcomes) {
  return 10.0 * static_cast<double>(std::max<std::size_t>(outcomes, 1)) * std::numeric_limits<double>::epsilon();
}

/// s_q(λ) = Σ_{r=0}^{q} (1 − λ)^r = (1 − (1 − λ)^{q+1}) / λ, with s_q(0) = q + 1
/// and s_∞(λ) = 1/λ, s_∞(0) = 0.
inline double neumann_weight(double lambda, CorrectionOrder q) {
  if (lambda <= 0.0) return q.is_infinite() ? 0.0 : static_cast<double>(q.value()) + 1.0;
  if (q.is_infinite()) return 1.0 / lambda;
  const double reps = static_cast<double>(q.value()) + 1.0;
  if (lambda >= 1.0) return 1.0;
  // (1 − λ)^{q+1} = exp((q+1) log1p(−λ)); expm1 keeps full precision when
  // (q+1)λ is small.
  return -std::expm1(reps * std::log1p(-lambda)) / lambda;
}

/// Per-direction inversion weights after regularization. Null directions
/// get 0 at q = ∞ and q + 1 otherwise; truncated directions get 0.
inline Eigen::VectorXd spectral_weights(const Eigen::VectorXd& eigenvalues, CorrectionOrder q,
                                        const Regularization& reg) {
  const double tol = null_tolerance(static_cast<std::size_t>(eigenvalues.size()));
  Eigen::VectorXd s(eigenvalues.size());
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    const double lam = eigenvalues[i];
    switch (reg.mode) {
      case RegMode::none:
        s[i] = neumann_weight(lam <= tol ? 0.0 : lam, q);
        break;
      case RegMode::truncate:
        s[i] = lam < reg.lambda_min ? 0.0 : neumann_weight(lam, q);
        break;
      case RegMode::truncate_zero:
        s[i] = neumann_weight(lam < reg.lambda_min ? 0.0 : lam, q);
        break;
      case RegMode::clamp:
        s[i] = neumann_weight(std::max(lam, reg.lambda_min), q);
        break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dense operations on a materialized kernel

inline void check_grid(const LikelihoodKernel& kernel, const FixedEffectGrid& grid) {
  if (kernel.grid_size() != grid.size()) throw ValidationError("kernel and grid sizes differ");
}

inline Eigen::Map<const Eigen::VectorXd> mass_vector(const FixedEffectGrid& grid) {
  return {grid.masses().data(), static_cast<Eigen::Index>(grid.size())};
}

inline void check_predictive(const Eigen::VectorXd& p, double floor = kPredictiveFloor) {
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (!(p[k] > floor)) throw ZeroPredictive(static_cast<std::size_t>(k), p[k]);
  }
}

/// p = F · masses.
inline Eigen::VectorXd prior_predictive(const LikelihoodKernel& kernel, const FixedEffectGrid& grid,
                                        double floor = kPredictiveFloor) {
  check_grid(kernel, grid);
  Eigen::VectorXd p = kernel.matrix() * mass_vector(grid);
  check_predictive(p, floor);
  return p;
}

/// Posterior masses over the grid given label k (Bayes' rule).
inline Eigen::VectorXd posterior(const LikelihoodKernel& kernel, const FixedEffectGrid& grid, std::size_t k) {
  const Eigen::VectorXd p = prior_predictive(kernel, grid);
  return mass_vector(grid).cwiseProduct(kernel.matrix().row(static_cast<Eigen::Index>(k)).transpose()) / p[static_cast<Eigen::Index>(k)];
}

/// Posterior mean of μ for every label: (F · diag(masses) · μ) / p.
inline Eigen::VectorXd posterior_mean(const LikelihoodKernel& kernel, const FixedEffectGrid& grid,
                                      const Eigen::VectorXd& effect_values) {
  const Eigen::VectorXd p = prior_predictive(kernel, grid);
  return (kernel.matrix() * mass_vector(grid).cwiseProduct(effect_values)).cwiseQuotient(p);
}

inline Eigen::VectorXd effect_on_grid(const EffectFunctional& effect, const Covariates& x, const FixedEffectGrid& grid) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < grid.size(); ++j) v[static_cast<Eigen::Index>(j)] = effect(x, grid.point(j));
  return v;
}

// ---------------------------------------------------------------------------
// Spectral transition

/// Prior predictive p and the eigendecomposition of the symmetric form Q̃.
struct SpectralTransition {
  Eigen::VectorXd p;
  /// Descending, clipped to [0, 1].
  Eigen::VectorXd eigenvalues;
  /// Orthonormal columns, aligned with `eigenvalues`.
  Eigen::MatrixXd eigenvectors;
  /// Pre-clip eigenvalues.
  Eigen::VectorXd raw_eigenvalues;
  /// Largest pre-clip distance of an eigenvalue outside [0, 1].
  double max_excursion = 0.0;

  std::size_t outcomes() const { return static_cast<std::size_t>(p.size()); }

  /// Ũ diag(λ) Ũᵀ.
  Eigen::MatrixXd symmetric_form() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  }

  /// Q = diag(p)^{1/2} Q̃ diag(p)^{-1/2}, reconstructed densely.
  Eigen::MatrixXd transition() const {
    const Eigen::VectorXd sq = p.cwiseSqrt();
    return sq.asDiagonal() * symmetric_form() * sq.cwiseInverse().asDiagonal();
  }

  /// diag(p)^{1/2} Ũ diag(s) Ũᵀ diag(p)^{-1/2} for weights s.
  Eigen::MatrixXd spectral_matrix(const Eigen::VectorXd& weights) const {
    const Eigen::VectorXd sq = p.cwiseSqrt();
    return sq.asDiagonal() * eigenvectors * weights.asDiagonal() * eigenvectors.transpose() *
           sq.cwiseInverse().asDiagonal();
  }

  /// Drazin inverse Q^D (regularized if requested), reconstructed densely.
  Eigen::MatrixXd drazin(const Regularization& reg = {}) const {
    return spectral_matrix(spectral_weights(eigenvalues, CorrectionOrder::infinity(), reg));
  }
};

/// Eigendecomposition of Q̃ = diag(p)^{-1/2} G diag(p)^{-1/2} where
/// G = F diag(masses) Fᵀ.
inline SpectralTransition spectral_from_gram(const Eigen::MatrixXd& gram, Eigen::VectorXd p) {
  check_predictive(p);
  const Eigen::Index n = p.size();
  const Eigen::VectorXd inv_sqrt = p.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd qt(n, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    for (Eigen::Index k = l; k < n; ++k) {
      const double v = gram(k, l) * (inv_sqrt[k] * inv_sqrt[l]);
      qt(k, l) = v;
      qt(l, k) = v;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(qt);
  if (solver.info() != Eigen::Success) throw EigenFailure(static_cast<std::size_t>(n));

  SpectralTransition st;
  st.p = std::move(p);
  st.raw_eigenvalues = solver.eigenvalues().reverse();
  st.eigenvectors = solver.eigenvectors().rowwise().reverse();
  st.eigenvalues = st.raw_eigenvalues;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lam = st.raw_eigenvalues[i];
    st.max_excursion = std::max({st.max_excursion, -lam, lam - 1.0});
    st.eigenvalues[i] = std::clamp(lam, 0.0, 1.0);
  }
  if (st.max_excursion > kEigenvalueSlack) {
    std::clog << "aoi: warning: eigenvalue of Q outside [0,1] by " << st.max_excursion << " (clipped)\n";
  }
  return st;
}

inline SpectralTransition spectral_transition(const LikelihoodKernel& kernel, const FixedEffectGrid& grid) {
  check_grid(kernel, grid);
  Eigen::VectorXd p = prior_predictive(kernel, grid);
  const Eigen::MatrixXd B = kernel.matrix() * mass_vector(grid).cwiseSqrt().asDiagonal();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(B.rows(), B.rows());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(B);
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  return spectral_from_gram(gram, std::move(p));
}

// ---------------------------------------------------------------------------
// Streaming accumulation

/// One pass over the prior grid: p = F m, G = F diag(m) Fᵀ and moment
/// vectors F h_r for caller-supplied column weights h_r. Blocks are assigned
/// to a fixed number of partial accumulators so results do not depend on the
/// number of worker threads.
class PredictiveAccumulator {
 public:
  static constexpr std::size_t kPartials = 8;

  PredictiveAccumulator(std::size_t outcomes, std::size_t moments)
      : n_(static_cast<Eigen::Index>(outcomes)), moments_(static_cast<Eigen::Index>(moments)) {}

  /// All grid masses equal `mass`: the Gram update needs no column scaling.
  void set_equal_mass(double mass) {
    equal_mass_ = true;
    equal_mass_value_ = mass;
  }

  struct Result {
    Eigen::MatrixXd gram;
    Eigen::VectorXd p;
    /// n_Y x moments.
    Eigen::MatrixXd moments;
  };

  /// `weights` is a K x (1 + moments) matrix: column 0 holds the grid masses,
  /// the rest the moment weights h_r.
  template <class BlockSource>
  Result run(std::size_t K, std::size_t block_cols, const Eigen::MatrixXd& weights, BlockSource&& fill) const {
    const std::size_t blocks = (K + block_cols - 1) / block_cols;
    std::vector<Result> partial(kPartials);
    for (auto& r : partial) {
      r.gram = Eigen::MatrixXd::Zero(n_, n_);
      r.p = Eigen::VectorXd::Zero(n_);
      r.moments = Eigen::MatrixXd::Zero(n_, moments_);
    }
    std::vector<int> failed(kPartials, 0);
#pragma omp parallel for schedule(static, 1)
    for (std::ptrdiff_t part = 0; part < static_cast<std::ptrdiff_t>(kPartials); ++part) {
      try {
        Eigen::MatrixXd block;
        Eigen::MatrixXd scaled;
        auto& acc = partial[static_cast<std::size_t>(part)];
        for (std::size_t b = static_cast<std::size_t>(part); b < blocks; b += kPartials) {
          const std::size_t first = b * block_cols;
          const std::size_t c = std::min(block_cols, K - first);
          block.resize(n_, static_cast<Eigen::Index>(c));
          fill(first, block);
          const auto w = weights.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(c));
          acc.p.noalias() += block * w.col(0);
          if (moments_ > 0) acc.moments.noalias() += block * w.rightCols(moments_);
          if (equal_mass_) {
            acc.gram.selfadjointView<Eigen::Lower>().rankUpdate(block, equal_mass_value_);
          } else {
            scaled = block * w.col(0).cwiseSqrt().asDiagonal();
            acc.gram.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
          }
        }
      } catch (...) {
        failed[static_cast<std::size_t>(part)] = 1;
      }
    }
    for (int f : failed) {
      if (f) throw NumericalError("kernel accumulation failed");
    }
    Result out = std::move(partial[0]);
    for (std::size_t i = 1; i < kPartials; ++i) {
      out.gram += partial[i].gram;
      out.p += partial[i].p;
      out.moments += partial[i].moments;
    }
    out.gram.triangularView<Eigen::StrictlyUpper>() = out.gram.transpose();
    return out;
  }

 private:
  Eigen::Index n_;
  Eigen::Index moments_;
  bool equal_mass_ = false;
  double equal_mass_value_ = 0.0;
};

/// Spectral transition plus posterior means of several effects for one
/// covariate value, built in a single streamed pass over the prior grid.
struct PosteriorSystem {
  OutcomeSpace space;
  SpectralTransition spectrum;
  /// One posterior-mean vector per effect.
  std::vector<Eigen::VectorXd> posterior_means;
  /// F h for each extra weight vector h.
  std::vector<Eigen::VectorXd> extra_moments;
  /// Σ_j mass_j μ(x, α_j)² per effect.
  std::vector<double> effect_sq_norms;
};

struct StreamOptions {
  std::size_t block_columns = 0;  // 0 = automatic
};

inline PosteriorSystem analyze(const KernelPlan& plan, const FixedEffectGrid& grid,
                               std::span<const EffectFunctional* const> effects,
                               std::span<const Eigen::VectorXd> extra_weights = {}, StreamOptions opts = {}) {
  if (grid.dim() != plan.model().effect_dim()) throw ValidationError("kernel: grid dimension does not match model");
  const std::size_t K = grid.size();
  const std::size_t n = plan.space().size();
  const std::size_t ne = effects.size();
  const std::size_t nx = extra_weights.size();
  Eigen::MatrixXd weights(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(1 + ne + nx));
  PosteriorSystem sys;
  sys.effect_sq_norms.assign(ne, 0.0);
  for (std::size_t j = 0; j < K; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    weights(jj, 0) = grid.mass(j);
    for (std::size_t e = 0; e < ne; ++e) {
      weights(jj, static_cast<Eigen::Index>(1 + e)) = grid.mass(j) * (*effects[e])(plan.covariates(), grid.point(j));
    }
  }
  for (std::size_t e = 0; e < ne; ++e) {
    CompensatedSum acc;
    for (std::size_t j = 0; j < K; ++j) {
      const double mu = weights(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(1 + e)) / grid.mass(j);
      acc.add(grid.mass(j) * mu * mu);
    }
    sys.effect_sq_norms[e] = acc.value();
  }
  for (std::size_t r = 0; r < nx; ++r) {
    if (static_cast<std::size_t>(extra_weights[r].size()) != K) throw ValidationError("extra weight size mismatch");
    weights.col(static_cast<Eigen::Index>(1 + ne + r)) = extra_weights[r];
  }

  const std::size_t bc = opts.block_columns ? opts.block_columns : default_block_columns(n);
  PredictiveAccumulator accumulator(n, ne + nx);
  if (grid.equal_mass()) accumulator.set_equal_mass(grid.mass(0));
  auto result = accumulator.run(K, bc, weights, [&](std::size_t first, Eigen::MatrixXd& block) {
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
      plan.column(grid.point(first + static_cast<std::size_t>(c)), std::span<double>(block.col(c).data(), n));
    }
  });

  sys.space = plan.space();
  sys.spectrum = spectral_from_gram(result.gram, result.p);
  for (std::size_t e = 0; e < ne; ++e) {
    sys.posterior_means.push_back(result.moments.col(static_cast<Eigen::Index>(e)).cwiseQuotient(sys.spectrum.p));
  }
  for (std::size_t r = 0; r < nx; ++r) {
    sys.extra_moments.push_back(result.moments.col(static_cast<Eigen::Index>(ne + r)));
  }
  return sys;
}

inline PosteriorSystem analyze(const KernelPlan& plan, const FixedEffectGrid& grid, const EffectFunctional& effect) {
  const EffectFunctional* e[] = {&effect};
  return analyze(plan, grid, e);
}

// ---------------------------------------------------------------------------
// Estimating functions

/// w over outcome labels for one correction order and regularization.
struct EstimatingFunction {
  Eigen::VectorXd w;
  CorrectionOrder q;
  Regularization reg;
};

/// The family {w⁽q⁾} for one posterior-mean vector m: stores v = Ũᵀ(√p ∘ m)
/// so each order costs one weighted back-transform.
class EstimatingSeries {
 public:
  EstimatingSeries(const SpectralTransition& st, const Eigen::VectorXd& m) : st_(&st) {
    if (m.size() != st.p.size()) throw ValidationError("posterior-mean vector has the wrong length");
    v_ = st.eigenvectors.transpose() * st.p.cwiseSqrt().cwiseProduct(m);
  }

  /// wᵀ = mᵀ diag(p)^{1/2} Ũ diag(s_q(λ)) Ũᵀ diag(p)^{-1/2}.
  EstimatingFunction evaluate(CorrectionOrder q, const Regularization& reg) const {
    const Eigen::VectorXd s = spectral_weights(st_->eigenvalues, q, reg);
    Eigen::VectorXd w = (st_->eigenvectors * s.cwiseProduct(v_)).cwiseQuotient(st_->p.cwiseSqrt());
    return {std::move(w), q, reg};
  }

  /// Per-label coefficients c_i with w_k = Σ_i c_i s_i.
  Eigen::VectorXd label_coefficients(std::size_t k) const {
    const auto kk = static_cast<Eigen::Index>(k);
    return st_->eigenvectors.row(kk).transpose().cwiseProduct(v_) / std::sqrt(st_->p[kk]);
  }

  const SpectralTransition& spectrum() const { return *st_; }

 private:
  const SpectralTransition* st_;
  Eigen::VectorXd v_;
};

inline EstimatingFunction estimating_function(const SpectralTransition& st, const Eigen::VectorXd& m,
                                              CorrectionOrder q, const Regularization& reg = {}) {
  return EstimatingSeries(st, m).evaluate(q, reg);
}

}  // namespace aoi

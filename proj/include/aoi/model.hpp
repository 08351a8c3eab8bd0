#pragma once

// Binary-choice panel models f(y | x, α) = Π_t p_t^{y_t} (1 − p_t)^{1 − y_t}
// and their (optionally sufficient-statistic collapsed) outcome spaces.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aoi/numeric.hpp"

namespace aoi {

/// Covariate value for one unit: one row per period, one column per regressor.
/// Models without covariates take a T x 0 matrix.
using Covariates = Eigen::MatrixXd;

/// Periods grouped into blocks; outcomes are exchangeable within a block.
using BlockPartition = std::vector<std::vector<std::size_t>>;

inline constexpr std::size_t kDefaultOutcomeCap = std::size_t{1} << 20;

/// Finite outcome space. A label is the vector of success counts per block;
/// with singleton blocks it is the raw 0/1 sequence. Labels are indexed in
/// mixed-radix order with the first block most significant.
class OutcomeSpace {
 public:
  OutcomeSpace() = default;

  explicit OutcomeSpace(BlockPartition blocks, std::size_t cap = kDefaultOutcomeCap)
      : blocks_(std::move(blocks)) {
    std::size_t periods = 0;
    for (const auto& b : blocks_) {
      if (b.empty()) throw ValidationError("outcome space: empty block");
      periods += b.size();
    }
    std::vector<bool> seen(periods, false);
    for (const auto& b : blocks_) {
      for (std::size_t t : b) {
        if (t >= periods || seen[t]) throw ValidationError("outcome space: blocks do not partition the periods");
        seen[t] = true;
      }
    }
    periods_ = periods;

    const std::size_t nb = blocks_.size();
    strides_.assign(nb, 1);
    std::size_t n = 1;
    for (std::size_t g = nb; g-- > 0;) {
      strides_[g] = n;
      const std::size_t radix = blocks_[g].size() + 1;
      if (n > cap / radix) {
        throw ValidationError("outcome space overflow: more than " + std::to_string(cap) + " labels");
      }
      n *= radix;
    }
    size_ = n;

    labels_.resize(size_ * nb);
    multiplicity_.resize(size_);
    for (std::size_t k = 0; k < size_; ++k) {
      std::size_t rest = k;
      double m = 1.0;
      for (std::size_t g = 0; g < nb; ++g) {
        const auto s = static_cast<int>(rest / strides_[g]);
        rest %= strides_[g];
        labels_[k * nb + g] = s;
        m *= binomial_coefficient(blocks_[g].size(), static_cast<std::size_t>(s));
      }
      multiplicity_[k] = m;
    }
  }

  std::size_t size() const { return size_; }
  std::size_t periods() const { return periods_; }
  std::size_t block_count() const { return blocks_.size(); }
  const BlockPartition& blocks() const { return blocks_; }
  std::size_t block_size(std::size_t g) const { return blocks_[g].size(); }
  bool is_raw() const { return blocks_.size() == periods_; }

  std::span<const int> label(std::size_t k) const {
    return {labels_.data() + k * blocks_.size(), blocks_.size()};
  }

  /// Number of raw sequences mapped to label k.
  double multiplicity(std::size_t k) const { return multiplicity_[k]; }

  std::optional<std::size_t> index_of(std::span<const int> label) const {
    if (label.size() != blocks_.size()) return std::nullopt;
    std::size_t k = 0;
    for (std::size_t g = 0; g < label.size(); ++g) {
      if (label[g] < 0 || static_cast<std::size_t>(label[g]) > blocks_[g].size()) return std::nullopt;
      k += static_cast<std::size_t>(label[g]) * strides_[g];
    }
    return k;
  }

  /// Maps a raw 0/1 outcome sequence to its label index.
  std::optional<std::size_t> index_of_sequence(std::span<const int> y) const {
    if (y.size() != periods_) return std::nullopt;
    std::size_t k = 0;
    for (std::size_t g = 0; g < blocks_.size(); ++g) {
      std::size_t s = 0;
      for (std::size_t t : blocks_[g]) {
        if (y[t] != 0 && y[t] != 1) return std::nullopt;
        s += static_cast<std::size_t>(y[t]);
      }
      k += s * strides_[g];
    }
    return k;
  }

  /// Label of a raw sequence as block counts.
  std::vector<int> statistic(std::span<const int> y) const {
    std::vector<int> s(blocks_.size(), 0);
    for (std::size_t g = 0; g < blocks_.size(); ++g) {
      for (std::size_t t : blocks_[g]) s[g] += y[t];
    }
    return s;
  }

 private:
  BlockPartition blocks_;
  std::vector<std::size_t> strides_;
  std::vector<int> labels_;
  std::vector<double> multiplicity_;
  std::size_t size_ = 0;
  std::size_t periods_ = 0;
};

enum class LinkKind { logistic, probit };

/// Strictly increasing CDF mapping the linear index to a success probability.
struct Link {
  LinkKind kind = LinkKind::logistic;

  double cdf(double z) const { return kind == LinkKind::logistic ? logistic(z) : normal_cdf(z); }
  double log_cdf(double z) const { return kind == LinkKind::logistic ? log_logistic(z) : log_normal_cdf(z); }
  double log_sf(double z) const { return log_cdf(-z); }
  double density(double z) const { return kind == LinkKind::logistic ? logistic_density(z) : normal_pdf(z); }

  /// (F(z), 1 − F(z)), each accurate in its own tail.
  std::pair<double, double> prob_pair(double z) const {
    if (kind == LinkKind::probit) return {normal_cdf(z), normal_cdf(-z)};
    const double e = std::exp(-std::abs(z));
    const double small = e / (1.0 + e);
    const double large = 1.0 / (1.0 + e);
    return z >= 0.0 ? std::pair{large, small} : std::pair{small, large};
  }
  std::string name() const { return kind == LinkKind::logistic ? "logit" : "probit"; }
};

/// Binary-choice panel model: outcomes are independent across periods given
/// (x, α) with success probability link(index(x_t, α)).
class PanelModel {
 public:
  virtual ~PanelModel() = default;

  virtual std::string id() const = 0;
  virtual std::size_t periods() const = 0;
  /// Fixed-effect dimension d_a.
  virtual std::size_t effect_dim() const = 0;
  virtual std::size_t covariate_dim() const = 0;
  virtual const Link& link() const = 0;

  /// Linear index of period t.
  virtual double index(const Covariates& x, std::size_t t, std::span<const double> alpha) const = 0;

  /// Exchangeable blocks for this covariate value. The default groups periods
  /// with identical covariate rows when collapsing is enabled.
  virtual BlockPartition collapse_rule(const Covariates& x) const {
    const std::size_t T = periods();
    BlockPartition blocks;
    if (!collapse_) {
      for (std::size_t t = 0; t < T; ++t) blocks.push_back({t});
      return blocks;
    }
    std::vector<bool> used(T, false);
    for (std::size_t t = 0; t < T; ++t) {
      if (used[t]) continue;
      std::vector<std::size_t> block{t};
      used[t] = true;
      for (std::size_t s = t + 1; s < T; ++s) {
        if (!used[s] && (x.cols() == 0 || x.row(s) == x.row(t))) {
          block.push_back(s);
          used[s] = true;
        }
      }
      blocks.push_back(std::move(block));
    }
    return blocks;
  }

  bool collapses() const { return collapse_; }

  void check_covariates(const Covariates& x) const {
    if (covariate_dim() == 0 && x.size() == 0) return;
    if (static_cast<std::size_t>(x.rows()) != periods() || static_cast<std::size_t>(x.cols()) != covariate_dim()) {
      throw ValidationError(id() + ": covariates must be " + std::to_string(periods()) + " x " +
                            std::to_string(covariate_dim()) + ", got " + std::to_string(x.rows()) + " x " +
                            std::to_string(x.cols()));
    }
  }

  void check_alpha(std::span<const double> alpha) const {
    if (alpha.size() != effect_dim()) {
      throw ValidationError(id() + ": fixed effect must have dimension " + std::to_string(effect_dim()));
    }
  }

 protected:
  explicit PanelModel(bool collapse) : collapse_(collapse) {}

 private:
  bool collapse_;
};

/// Precomputed evaluation plan for one covariate value: the outcome space and
/// one representative period per block. Column evaluation is pure.
class KernelPlan {
 public:
  KernelPlan(const PanelModel& model, Covariates x, std::size_t cap = kDefaultOutcomeCap)
      : model_(&model), x_(std::move(x)) {
    if (model.periods() < 1) throw ValidationError(model.id() + ": need at least one period");
    model.check_covariates(x_);
    if (x_.size() == 0) x_.resize(static_cast<Eigen::Index>(model.periods()), 0);
    space_ = OutcomeSpace(model.collapse_rule(x_), cap);
    for (const auto& b : space_.blocks()) {
      representative_.push_back(b.front());
      log_binom_.push_back(log_binomial_row(b.size()));
    }
  }

  const OutcomeSpace& space() const { return space_; }
  const Covariates& covariates() const { return x_; }
  const PanelModel& model() const { return *model_; }

  /// log f(label | x, α) for every label, multiplicity included.
  void log_column(std::span<const double> alpha, std::span<double> out) const {
    std::size_t size = 1;
    out[0] = 0.0;
    const Link& link = model_->link();
    for (std::size_t g = 0; g < representative_.size(); ++g) {
      const double z = model_->index(x_, representative_[g], alpha);
      const double lp = link.log_cdf(z);
      const double lq = link.log_sf(z);
      const std::size_t n = space_.block_size(g);
      const std::size_t radix = n + 1;
      // Expand in place from the back so sources are read before being overwritten.
      for (std::size_t i = size; i-- > 0;) {
        const double base = out[i];
        for (std::size_t s = radix; s-- > 0;) {
          double v = base + log_binom_[g][s];
          if (s > 0) v += static_cast<double>(s) * lp;
          if (s < n) v += static_cast<double>(n - s) * lq;
          out[i * radix + s] = v;
        }
      }
      size *= radix;
    }
  }

  /// f(label | x, α) for every label. Each block probability is exponentiated
  /// from its log-space value, then blocks are combined by products.
  void column(std::span<const double> alpha, std::span<double> out) const {
    std::size_t size = 1;
    out[0] = 1.0;
    const Link& link = model_->link();
    double block_prob[kMaxInlineBlock + 1];
    std::vector<double> heap;
    for (std::size_t g = 0; g < representative_.size(); ++g) {
      const double z = model_->index(x_, representative_[g], alpha);
      const std::size_t n = space_.block_size(g);
      const std::size_t radix = n + 1;
      double* pb = block_prob;
      if (n > kMaxInlineBlock) {
        heap.resize(radix);
        pb = heap.data();
      }
      if (n == 1) {
        const auto [p, q] = link.prob_pair(z);
        pb[0] = q;
        pb[1] = p;
      } else {
        const double lp = link.log_cdf(z);
        const double lq = link.log_sf(z);
        for (std::size_t s = 0; s < radix; ++s) {
          double v = log_binom_[g][s];
          if (s > 0) v += static_cast<double>(s) * lp;
          if (s < n) v += static_cast<double>(n - s) * lq;
          pb[s] = std::exp(v);
        }
      }
      for (std::size_t i = size; i-- > 0;) {
        const double base = out[i];
        for (std::size_t s = radix; s-- > 0;) out[i * radix + s] = base * pb[s];
      }
      size *= radix;
    }
  }

 private:
  static constexpr std::size_t kMaxInlineBlock = 63;

  const PanelModel* model_;
  Covariates x_;
  OutcomeSpace space_;
  std::vector<std::size_t> representative_;
  std::vector<std::vector<double>> log_binom_;
};

inline OutcomeSpace enumerate_outcomes(const PanelModel& model, const Covariates& x,
                                       std::size_t cap = kDefaultOutcomeCap) {
  return KernelPlan(model, x, cap).space();
}

/// Probability of label k (multiplicity-inclusive).
inline double outcome_prob(const PanelModel& model, const Covariates& x, std::span<const int> label,
                           std::span<const double> alpha) {
  model.check_alpha(alpha);
  KernelPlan plan(model, x);
  const auto k = plan.space().index_of(label);
  if (!k) throw ValidationError(model.id() + ": label outside the outcome space");
  std::vector<double> col(plan.space().size());
  plan.column(alpha, col);
  return col[*k];
}

class StaticLogitModel final : public PanelModel {
 public:
  StaticLogitModel(std::size_t T, std::vector<double> beta, bool collapse = false)
      : PanelModel(collapse), T_(T), beta_(std::move(beta)) {
    if (T_ < 1) throw ValidationError("static_logit: T must be at least 1");
  }

  std::string id() const override { return "static_logit"; }
  std::size_t periods() const override { return T_; }
  std::size_t effect_dim() const override { return 1; }
  std::size_t covariate_dim() const override { return beta_.size(); }
  const Link& link() const override { return link_; }
  const std::vector<double>& beta() const { return beta_; }

  double index(const Covariates& x, std::size_t t, std::span<const double> alpha) const override {
    double z = alpha[0];
    for (std::size_t p = 0; p < beta_.size(); ++p) z += x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p)) * beta_[p];
    return z;
  }

 private:
  std::size_t T_;
  std::vector<double> beta_;
  Link link_{LinkKind::logistic};
};

/// Number of successes out of T trials with success probability link(α).
class BinomialNoCovModel final : public PanelModel {
 public:
  BinomialNoCovModel(std::size_t T, Link link) : PanelModel(true), T_(T), link_(link) {
    if (T_ < 1) throw ValidationError("binomial_nocov: T must be at least 1");
  }

  std::string id() const override { return "binomial_nocov_" + link_.name(); }
  std::size_t periods() const override { return T_; }
  std::size_t effect_dim() const override { return 1; }
  std::size_t covariate_dim() const override { return 0; }
  const Link& link() const override { return link_; }

  double index(const Covariates&, std::size_t, std::span<const double> alpha) const override { return alpha[0]; }

  BlockPartition collapse_rule(const Covariates&) const override {
    std::vector<std::size_t> all(T_);
    for (std::size_t t = 0; t < T_; ++t) all[t] = t;
    return {all};
  }

 private:
  std::size_t T_;
  Link link_;
};

/// Random-coefficient binary choice: index α₁ + x_t α₂ with scalar x_t.
class RcBinaryModel final : public PanelModel {
 public:
  RcBinaryModel(std::size_t T, Link link, bool collapse = true) : PanelModel(collapse), T_(T), link_(link) {
    if (T_ < 1) throw ValidationError("rc_binary: T must be at least 1");
  }

  std::string id() const override { return "rc_binary_" + link_.name(); }
  std::size_t periods() const override { return T_; }
  std::size_t effect_dim() const override { return 2; }
  std::size_t covariate_dim() const override { return 1; }
  const Link& link() const override { return link_; }

  double index(const Covariates& x, std::size_t t, std::span<const double> alpha) const override {
    return alpha[0] + x(static_cast<Eigen::Index>(t), 0) * alpha[1];
  }

 private:
  std::size_t T_;
  Link link_;
};

inline std::shared_ptr<StaticLogitModel> static_logit_model(std::size_t T, std::vector<double> beta) {
  return std::make_shared<StaticLogitModel>(T, std::move(beta));
}

inline std::shared_ptr<BinomialNoCovModel> binomial_nocov_model(std::size_t T, Link link = {}) {
  return std::make_shared<BinomialNoCovModel>(T, link);
}

inline std::shared_ptr<RcBinaryModel> rc_binary_model(std::size_t T, Link link = {}, bool collapse = true) {
  return std::make_shared<RcBinaryModel>(T, link, collapse);
}

/// Two-block covariate design: 0 for the first T/2 periods, c afterwards.
inline Covariates two_block_covariates(std::size_t T, double c) {
  if (T % 2 != 0) throw ValidationError("two-block design needs even T, got " + std::to_string(T));
  Covariates x(static_cast<Eigen::Index>(T), 1);
  for (std::size_t t = 0; t < T; ++t) x(static_cast<Eigen::Index>(t), 0) = t < T / 2 ? 0.0 : c;
  return x;
}

inline Covariates column_covariates(std::span<const double> values) {
  Covariates x(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t t = 0; t < values.size(); ++t) x(static_cast<Eigen::Index>(t), 0) = values[t];
  return x;
}

}  // namespace aoi

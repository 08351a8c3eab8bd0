#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aoi/discretize.hpp"
#include "aoi/model.hpp"

namespace aoi {

inline constexpr std::size_t kDefaultMemoryBudget = std::size_t{512} << 20;

/// Dense likelihood matrix F with F(k, j) = f(label k | x, α_j).
class LikelihoodKernel {
 public:
  LikelihoodKernel() = default;

  explicit LikelihoodKernel(Eigen::MatrixXd F, OutcomeSpace space = {}, Covariates x = {})
      : F_(std::move(F)), space_(std::move(space)), x_(std::move(x)) {}

  const Eigen::MatrixXd& matrix() const { return F_; }
  std::size_t outcomes() const { return static_cast<std::size_t>(F_.rows()); }
  std::size_t grid_size() const { return static_cast<std::size_t>(F_.cols()); }
  const OutcomeSpace& space() const { return space_; }
  const Covariates& covariates() const { return x_; }

 private:
  Eigen::MatrixXd F_;
  OutcomeSpace space_;
  Covariates x_;
};

/// Columns per streamed block, sized so one block stays near 8 MB.
inline std::size_t default_block_columns(std::size_t outcomes) {
  const std::size_t target = (std::size_t{8} << 20) / (sizeof(double) * std::max<std::size_t>(outcomes, 1));
  return std::clamp<std::size_t>(target, 256, 65536);
}

/// Fills columns [first, first + block.cols()) of F for `grid` into `block`.
inline void fill_kernel_block(const KernelPlan& plan, const FixedEffectGrid& grid, std::size_t first,
                              Eigen::MatrixXd& block) {
  const auto cols = static_cast<std::ptrdiff_t>(block.cols());
  const std::size_t n = plan.space().size();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < cols; ++c) {
    plan.column(grid.point(first + static_cast<std::size_t>(c)), std::span<double>(block.col(c).data(), n));
  }
}

/// Streams F in column blocks: fn(first_column, block) with block an
/// n_Y x c matrix. F is never materialized as a whole.
template <class Fn>
void for_each_column_block(const KernelPlan& plan, const FixedEffectGrid& grid, std::size_t block_cols, Fn&& fn) {
  if (grid.size() == 0) throw ValidationError("kernel: empty grid");
  if (grid.dim() != plan.model().effect_dim()) throw ValidationError("kernel: grid dimension does not match model");
  const std::size_t n = plan.space().size();
  const std::size_t K = grid.size();
  Eigen::MatrixXd block;
  for (std::size_t first = 0; first < K; first += block_cols) {
    const std::size_t c = std::min(block_cols, K - first);
    block.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
    fill_kernel_block(plan, grid, first, block);
    fn(first, static_cast<const Eigen::MatrixXd&>(block));
  }
}

/// Materializes F. Fails when n_Y x K doubles exceed the memory budget; use
/// for_each_column_block for large grids.
inline LikelihoodKernel build_kernel(const KernelPlan& plan, const FixedEffectGrid& grid,
                                     std::size_t memory_budget = kDefaultMemoryBudget) {
  if (grid.size() == 0) throw ValidationError("kernel: empty grid");
  if (grid.dim() != plan.model().effect_dim()) throw ValidationError("kernel: grid dimension does not match model");
  const std::size_t n = plan.space().size();
  if (grid.size() > memory_budget / sizeof(double) / n) {
    throw NumericalError("kernel: " + std::to_string(n) + " x " + std::to_string(grid.size()) +
                         " exceeds the memory budget; stream it in column blocks");
  }
  Eigen::MatrixXd F(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  fill_kernel_block(plan, grid, 0, F);
  return LikelihoodKernel(std::move(F), plan.space(), plan.covariates());
}

inline LikelihoodKernel build_kernel(const PanelModel& model, const Covariates& x, const FixedEffectGrid& grid,
                                     std::size_t memory_budget = kDefaultMemoryBudget) {
  return build_kernel(KernelPlan(model, x), grid, memory_budget);
}

}  // namespace aoi

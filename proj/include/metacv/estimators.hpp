#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metacv/autodiff.hpp"
#include "metacv/network.hpp"
#include "metacv/stein.hpp"

namespace metacv {

/// Normal 97.5% quantile used for every confidence interval.
inline constexpr double kCi95 = 1.96;

/// Rows of (x, grad log pi(x), f(x)).
struct Samples {
  Matrix points;  // n x d
  Matrix scores;  // n x d
  Vector values;  // n

  Eigen::Index size() const { return values.size(); }
  Eigen::Index dim() const { return points.cols(); }
  Samples rows(Eigen::Index begin, Eigen::Index count) const;
  Samples select(std::span<const Eigen::Index> indices) const;
};

/// Per-task data. The first `support_size` rows are the support set S, the
/// rest the query set Q.
class TaskDataset {
 public:
  TaskDataset() = default;
  TaskDataset(Samples samples, Eigen::Index support_size);

  const Samples& samples() const { return samples_; }
  Eigen::Index size() const { return samples_.size(); }
  Eigen::Index dim() const { return samples_.dim(); }
  Eigen::Index support_size() const { return support_size_; }
  Samples support() const { return samples_.rows(0, support_size_); }
  Samples query() const { return samples_.rows(support_size_, size() - support_size_); }

 private:
  Samples samples_;
  Eigen::Index support_size_ = 0;
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  double ci95_halfwidth = 0.0;
};

/// Sample mean with CLT standard error (sample std with n - 1, over sqrt n).
Estimate mc_estimate(std::span<const double> values);
Estimate mc_estimate(const Vector& values);

/// gamma0 + mean over Q of (f - g), with g = gamma0 + Stein term, i.e. the
/// mean of f minus the zero-mean Stein term. Reads only the query set.
Estimate cv_estimate(const SteinCV& cv, const CVParameters& params, const TaskDataset& data);

/// Mean squared residual of f - g over `subset` plus lambda |gamma_{1:p}|^2.
double empirical_loss(const SteinCV& cv, const CVParameters& params, const Samples& subset,
                      double lambda);

/// The same loss as a differentiable program of the flat (p + 1) parameters.
ad::ScalarProgram loss_program(const SteinCV& cv, const Samples& subset, double lambda);

struct TaskErrorSummary {
  double mae = 0.0;
  double mae_ci95 = 0.0;
  std::vector<double> per_task;
};

/// Mean absolute error over tasks with a CLT interval across tasks.
TaskErrorSummary task_errors(std::span<const Estimate> estimates, std::span<const double> truths);

}  // namespace metacv

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "metacv/estimators.hpp"
#include "metacv/network.hpp"

namespace metacv {

/// Stein-kernel interpolant g(x) = beta0 + sum_i c_i k0(x, x_i) fitted on a
/// support set, with beta0 the generalized least squares offset.
struct CFModel {
  Matrix points;
  Matrix scores;
  Vector values;
  double lengthscale = 1.0;
  double nugget = 0.0;
  BoundaryCorrection boundary = BoundaryCorrection::none;
  Vector coefficients;
  double beta0 = 0.0;

  /// g(x) - beta0 for each row of `x`.
  Vector zero_mean_part(const Matrix& x, const Matrix& scores_x) const;
  Vector predict(const Matrix& x, const Matrix& scores_x) const;
};

/// Default nugget: 1e-8 times the mean diagonal of the Stein Gram matrix.
double default_nugget(const Matrix& gram);

/// Solves (K0 + tau I) c = y - beta0 1. `nugget` defaults to default_nugget.
/// Throws NumericalError when the system is numerically singular.
CFModel cf_fit(const Samples& support, double lengthscale, std::optional<double> nugget = {},
               BoundaryCorrection boundary = BoundaryCorrection::none);

/// beta0 + mean over Q of (f - g), with the standard error of the residuals.
Estimate cf_estimate(const CFModel& model, const Samples& query);

/// GP log marginal likelihood of the offset-centered support values under
/// the Stein kernel; nullopt when the Gram matrix is numerically singular.
std::optional<double> cf_log_marginal_likelihood(const Samples& support, double lengthscale,
                                                 std::optional<double> nugget = {},
                                                 BoundaryCorrection boundary = BoundaryCorrection::none);

/// 20 log-spaced candidates over [1e-2, 1e2] times the median pairwise squared
/// distance of the support points.
std::vector<double> default_lengthscale_grid(const Samples& support, int count = 20,
                                             double low = 1e-2, double high = 1e2);

/// Grid maximizer of the log marginal likelihood; the first maximizer wins ties.
double tune_lengthscale(const Samples& support, std::span<const double> grid,
                        std::optional<double> nugget = {},
                        BoundaryCorrection boundary = BoundaryCorrection::none);

}  // namespace metacv

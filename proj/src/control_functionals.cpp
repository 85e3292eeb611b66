#include "metacv/control_functionals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "metacv/error.hpp"
#include "metacv/stein.hpp"

namespace metacv {

namespace {

struct Factorized {
  Eigen::LDLT<Matrix> ldlt;
  double nugget = 0.0;
};

// Returns nullopt when the LDL^T factorization is numerically singular or
// indefinite; `rcond` receives the reciprocal condition estimate.
std::optional<Factorized> factorize(const Matrix& gram, std::optional<double> nugget, double& rcond) {
  Factorized f;
  f.nugget = nugget.value_or(default_nugget(gram));
  if (!(f.nugget >= 0.0)) throw ConfigError("CF nugget must be non-negative");
  const Matrix a = gram + f.nugget * Matrix::Identity(gram.rows(), gram.cols());
  f.ldlt.compute(a);
  rcond = f.ldlt.info() == Eigen::Success ? f.ldlt.rcond() : 0.0;
  const Vector d = f.ldlt.vectorD().cwiseAbs();
  if (d.size() > 0 && d.maxCoeff() > 0.0) rcond = std::min(rcond, d.minCoeff() / d.maxCoeff());
  if (f.ldlt.info() != Eigen::Success || !(rcond > 1e-15)) return std::nullopt;
  return f;
}

Matrix gram_of(const Samples& s, double lengthscale, BoundaryCorrection bc) {
  return stein_kernel_matrix(lengthscale, s.points, s.scores, s.points, s.scores, bc);
}

}  // namespace

double default_nugget(const Matrix& gram) {
  if (gram.rows() == 0) return 0.0;
  return 1e-8 * gram.trace() / static_cast<double>(gram.rows());
}

Vector CFModel::zero_mean_part(const Matrix& x, const Matrix& scores_x) const {
  return stein_kernel_matrix(lengthscale, x, scores_x, points, scores, boundary) * coefficients;
}

Vector CFModel::predict(const Matrix& x, const Matrix& scores_x) const {
  return (zero_mean_part(x, scores_x).array() + beta0).matrix();
}

CFModel cf_fit(const Samples& support, double lengthscale, std::optional<double> nugget,
               BoundaryCorrection boundary) {
  if (support.size() < 1) throw DimensionError("cf_fit: empty support set");
  if (!(lengthscale > 0.0)) throw ConfigError("cf_fit: lengthscale must be positive");
  const Matrix gram = gram_of(support, lengthscale, boundary);
  double rcond = 0.0;
  auto f = factorize(gram, nugget, rcond);
  if (!f) {
    std::ostringstream msg;
    msg << "cf_fit: singular Stein Gram system (reciprocal condition estimate " << rcond << ")";
    throw NumericalError(msg.str());
  }
  const Eigen::Index m = support.size();
  const Vector ones = Vector::Ones(m);
  const Vector ainv_one = f->ldlt.solve(ones);
  const Vector ainv_y = f->ldlt.solve(support.values);
  const double denom = ones.dot(ainv_one);
  if (!(std::abs(denom) > 0.0) || !std::isfinite(denom)) {
    throw NumericalError("cf_fit: degenerate offset estimate");
  }

  CFModel model;
  model.points = support.points;
  model.scores = support.scores;
  model.values = support.values;
  model.lengthscale = lengthscale;
  model.nugget = f->nugget;
  model.boundary = boundary;
  model.beta0 = ones.dot(ainv_y) / denom;
  model.coefficients = ainv_y - model.beta0 * ainv_one;
  if (!model.coefficients.allFinite() || !std::isfinite(model.beta0)) {
    throw NumericalError("cf_fit: non-finite solution");
  }
  return model;
}

Estimate cf_estimate(const CFModel& model, const Samples& query) {
  if (query.size() == 0) throw DimensionError("cf_estimate: empty query set");
  // beta0 + mean(f - beta0 - h) = mean(f - h), h the zero-mean kernel part.
  const Vector residual = query.values - model.zero_mean_part(query.points, query.scores);
  return mc_estimate(residual);
}

std::optional<double> cf_log_marginal_likelihood(const Samples& support, double lengthscale,
                                                 std::optional<double> nugget,
                                                 BoundaryCorrection boundary) {
  const Matrix gram = gram_of(support, lengthscale, boundary);
  double rcond = 0.0;
  auto f = factorize(gram, nugget, rcond);
  if (!f) return std::nullopt;
  const Vector diag = f->ldlt.vectorD();
  if ((diag.array() <= 0.0).any()) return std::nullopt;

  const Eigen::Index m = support.size();
  const Vector ones = Vector::Ones(m);
  const Vector ainv_one = f->ldlt.solve(ones);
  const double beta0 = ones.dot(f->ldlt.solve(support.values)) / ones.dot(ainv_one);
  const Vector centered = (support.values.array() - beta0).matrix();
  const double quad = centered.dot(f->ldlt.solve(centered));
  const double logdet = diag.array().log().sum();
  const double ll = -0.5 * quad - 0.5 * logdet -
                    0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(ll)) return std::nullopt;
  return ll;
}

std::vector<double> default_lengthscale_grid(const Samples& support, int count, double low,
                                             double high) {
  if (count < 1) throw ConfigError("lengthscale grid needs at least one point");
  std::vector<double> d2;
  for (Eigen::Index i = 0; i < support.size(); ++i) {
    for (Eigen::Index j = i + 1; j < support.size(); ++j) {
      d2.push_back((support.points.row(i) - support.points.row(j)).squaredNorm());
    }
  }
  double scale = 1.0;
  if (!d2.empty()) {
    std::sort(d2.begin(), d2.end());
    const std::size_t n = d2.size();
    scale = n % 2 == 1 ? d2[n / 2] : 0.5 * (d2[n / 2 - 1] + d2[n / 2]);
    if (!(scale > 0.0)) scale = 1.0;
  }
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    grid.push_back(scale * low * std::pow(high / low, t));
  }
  return grid;
}

double tune_lengthscale(const Samples& support, std::span<const double> grid,
                        std::optional<double> nugget, BoundaryCorrection boundary) {
  if (grid.empty()) throw ConfigError("tune_lengthscale: empty candidate grid");
  std::optional<double> best_v;
  double best_ll = 0.0;
  for (double v : grid) {
    if (!(v > 0.0)) throw ConfigError("tune_lengthscale: candidate lengthscales must be positive");
    const auto ll = cf_log_marginal_likelihood(support, v, nugget, boundary);
    if (ll && (!best_v || *ll > best_ll)) {
      best_v = v;
      best_ll = *ll;
    }
  }
  if (!best_v) throw NumericalError("tune_lengthscale: every candidate is numerically singular");
  return *best_v;
}

}  // namespace metacv

#include "metacv/estimators.hpp"

#include <cmath>
#include <string>

#include "metacv/error.hpp"

namespace metacv {

Samples Samples::rows(Eigen::Index begin, Eigen::Index count) const {
  return {points.middleRows(begin, count), scores.middleRows(begin, count),
          values.segment(begin, count)};
}

Samples Samples::select(std::span<const Eigen::Index> indices) const {
  Samples out{Matrix(indices.size(), points.cols()), Matrix(indices.size(), scores.cols()),
              Vector(indices.size())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.points.row(r) = points.row(indices[i]);
    out.scores.row(r) = scores.row(indices[i]);
    out.values[r] = values[indices[i]];
  }
  return out;
}

TaskDataset::TaskDataset(Samples samples, Eigen::Index support_size)
    : samples_(std::move(samples)), support_size_(support_size) {
  const auto n = samples_.values.size();
  if (samples_.points.rows() != n || samples_.scores.rows() != n ||
      samples_.scores.cols() != samples_.points.cols()) {
    throw DimensionError("TaskDataset: points, scores and values must have equal lengths");
  }
  if (support_size_ < 0 || support_size_ > n) {
    throw DimensionError("TaskDataset: support size out of range");
  }
  if (!samples_.points.allFinite() || !samples_.scores.allFinite() ||
      !samples_.values.allFinite()) {
    throw NumericalError("TaskDataset: non-finite entry");
  }
}

Estimate mc_estimate(std::span<const double> values) {
  if (values.empty()) throw DimensionError("mc_estimate: empty sample");
  const auto n = values.size();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  Estimate e;
  e.value = mean;
  e.n = n;
  if (n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    e.std_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  e.ci95_halfwidth = kCi95 * e.std_error;
  if (!std::isfinite(e.value) || !std::isfinite(e.std_error)) {
    throw NumericalError("mc_estimate: non-finite result");
  }
  return e;
}

Estimate mc_estimate(const Vector& values) {
  return mc_estimate(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

Estimate cv_estimate(const SteinCV& cv, const CVParameters& params, const TaskDataset& data) {
  const Samples q = data.query();
  if (q.size() == 0) throw DimensionError("cv_estimate: empty query set");
  if (params.weights.size() != param_count(cv.spec)) {
    throw DimensionError("cv_estimate: parameter length mismatch");
  }
  ad::NoGradGuard no_grad;
  const ad::Var g = stein_batch(cv.spec, cv.boundary, ad::Var::constant(Matrix(params.weights)), 0,
                                q.points, q.scores);
  // f - (gamma0 + g) + gamma0, written without the offset so the result does
  // not depend on gamma0 even in floating point.
  const Vector residual = q.values - g.value().col(0);
  return mc_estimate(residual);
}

ad::ScalarProgram loss_program(const SteinCV& cv, const Samples& subset, double lambda) {
  if (subset.size() == 0) throw DimensionError("empirical loss over an empty subset");
  if (!(lambda >= 0.0)) throw ConfigError("penalty lambda must be non-negative");
  const Eigen::Index p = param_count(cv.spec);
  return [cv, subset, lambda, p](const ad::Var& params) {
    if (params.rows() != p + 1 || params.cols() != 1) {
      throw DimensionError("loss: expected " + std::to_string(p + 1) + " parameters");
    }
    const Eigen::Index m = subset.size();
    ad::Var offset = ad::broadcast(ad::block(params, 0, 1, 1), m, 1);
    ad::Var g = ad::add(offset, stein_batch(cv.spec, cv.boundary, params, 1, subset.points,
                                            subset.scores));
    ad::Var residual = ad::sub(ad::Var::constant(Matrix(subset.values)), g);
    ad::Var loss = ad::affine(ad::sum(ad::cmul(residual, residual)), 1.0 / static_cast<double>(m), 0.0);
    if (lambda > 0.0) {
      ad::Var w = ad::block(params, 1, p, 1);
      loss = ad::add(loss, ad::affine(ad::sum(ad::cmul(w, w)), lambda, 0.0));
    }
    return loss;
  };
}

double empirical_loss(const SteinCV& cv, const CVParameters& params, const Samples& subset,
                      double lambda) {
  ad::NoGradGuard no_grad;
  return loss_program(cv, subset, lambda)(ad::Var::constant(Matrix(params.flat()))).scalar();
}

TaskErrorSummary task_errors(std::span<const Estimate> estimates, std::span<const double> truths) {
  if (estimates.size() != truths.size()) {
    throw DimensionError("task_errors: " + std::to_string(estimates.size()) + " estimates vs " +
                         std::to_string(truths.size()) + " truths");
  }
  if (estimates.empty()) throw DimensionError("task_errors: no tasks");
  TaskErrorSummary s;
  s.per_task.reserve(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    s.per_task.push_back(std::abs(estimates[i].value - truths[i]));
  }
  const Estimate agg = mc_estimate(s.per_task);
  s.mae = agg.value;
  s.mae_ci95 = agg.ci95_halfwidth;
  return s;
}

}  // namespace metacv

#include "metacv/stein.hpp"

#include <cmath>
#include <string>

#include "metacv/error.hpp"

namespace metacv {

ad::Var stein_batch(const NetworkSpec& spec, BoundaryCorrection boundary, const ad::Var& params,
                    ad::Index offset, const Matrix& points, const Matrix& scores) {
  const ad::Index m = points.rows();
  const ad::Index d = spec.input_dim;
  if (points.cols() != d || scores.rows() != m || scores.cols() != d) {
    throw DimensionError("stein_batch: points/scores must be " + std::to_string(m) + " x " +
                         std::to_string(d));
  }
  if (!scores.allFinite()) throw NumericalError("stein_batch: non-finite score");

  std::vector<ad::Var> directions;
  directions.reserve(static_cast<std::size_t>(d));
  for (ad::Index k = 0; k < d; ++k) {
    Matrix e = Matrix::Zero(m, d);
    e.col(k).setOnes();
    directions.push_back(ad::Var::constant(std::move(e)));
  }
  const ad::Jet out = network_forward(spec, params, offset,
                                      ad::Jet(ad::Var::constant(points), std::move(directions)));
  const BoundaryFactor delta = boundary_factor(boundary, points);
  const ad::Var delta_var = ad::Var::constant(delta.value);

  if (spec.output_mode == OutputMode::replicate_scalar) {
    // u_j = u~ delta for every j, so
    // g = u~ (delta sum_j s_j + sum_j d_j delta) + delta sum_j d u~ / d x_j.
    Matrix coeff = delta.value.cwiseProduct(scores.rowwise().sum()) + delta.gradient.rowwise().sum();
    ad::Var g = ad::cmul(out.value, ad::Var::constant(std::move(coeff)));
    ad::Var div;
    for (ad::Index k = 0; k < d; ++k) {
      ad::Var t = out.tangent(static_cast<std::size_t>(k));
      if (!t) continue;
      div = div ? ad::add(div, t) : t;
    }
    if (div) g = ad::add(g, ad::cmul(div, delta_var));
    return g;
  }

  // direct: u_j = u~_j delta.
  Matrix coeff = scores.array().colwise() * delta.value.col(0).array();
  coeff += delta.gradient;
  ad::Var g = ad::matmul(ad::cmul(out.value, ad::Var::constant(std::move(coeff))),
                         ad::Var::constant(Matrix::Ones(d, 1)));
  ad::Var div;
  for (ad::Index k = 0; k < d; ++k) {
    ad::Var t = out.tangent(static_cast<std::size_t>(k));
    if (!t) continue;
    Matrix e = Matrix::Zero(d, 1);
    e(k, 0) = 1.0;
    ad::Var column = ad::matmul(t, ad::Var::constant(std::move(e)));
    div = div ? ad::add(div, column) : column;
  }
  if (div) g = ad::add(g, ad::cmul(div, delta_var));
  return g;
}

double stein_operator(const ad::FieldProgram& field, const Vector& params, const Vector& score_x,
                      const Vector& x) {
  if (score_x.size() != x.size()) throw DimensionError("stein_operator: score dimension mismatch");
  ad::NoGradGuard no_grad;
  const ad::Jet u = field(ad::Var::constant(Matrix(params)), ad::Jet(ad::Var::constant(Matrix(x.transpose()))));
  if (u.value.rows() != 1 || u.value.cols() != x.size()) {
    throw DimensionError("stein_operator: field must return a 1 x d row");
  }
  const Matrix jacobian = ad::grad_inputs(field, params, x);
  return u.value.value().row(0).dot(score_x.transpose()) + jacobian.trace();
}

double stein_apply(const SteinCV& cv, const Vector& weights, const Vector& x) {
  if (x.size() != cv.dim()) throw DimensionError("stein_apply: input dimension mismatch");
  if (weights.size() != param_count(cv.spec)) {
    throw DimensionError("stein_apply: weight vector length mismatch");
  }
  const Vector s = cv.score(x);
  if (s.size() != cv.dim()) throw DimensionError("stein_apply: score dimension mismatch");
  if (!s.allFinite()) throw NumericalError("stein_apply: non-finite score");
  ad::NoGradGuard no_grad;
  ad::Var g = stein_batch(cv.spec, cv.boundary, ad::Var::constant(Matrix(weights)), 0,
                          Matrix(x.transpose()), Matrix(s.transpose()));
  return g.value()(0, 0);
}

double cv_value(const SteinCV& cv, const CVParameters& params, const Vector& x) {
  return params.gamma0 + stein_apply(cv, params.weights, x);
}

double stein_kernel(double lengthscale, const Vector& x, const Vector& sx, const Vector& y,
                    const Vector& sy, BoundaryCorrection boundary) {
  if (!(lengthscale > 0.0)) throw ConfigError("stein_kernel: lengthscale must be positive");
  const auto d = x.size();
  if (y.size() != d || sx.size() != d || sy.size() != d) {
    throw DimensionError("stein_kernel: dimension mismatch");
  }
  const double v = lengthscale;
  const Vector r = x - y;
  const double k = std::exp(-r.squaredNorm() / (2.0 * v));

  const Matrix xm = x.transpose();
  const Matrix ym = y.transpose();
  const BoundaryFactor bx = boundary_factor(boundary, xm);
  const BoundaryFactor by = boundary_factor(boundary, ym);
  const double dx = bx.value(0, 0);
  const double dy = by.value(0, 0);

  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double kx = -r[j] / v * k;                        // d k / d x_j
    const double ky = r[j] / v * k;                         // d k / d y_j
    const double kxy = k * (1.0 / v - r[j] * r[j] / (v * v));  // d^2 k / d x_j d y_j
    const double gx = bx.gradient(0, j);
    const double gy = by.gradient(0, j);

    const double base_x = dy * (gx * k + dx * kx);
    const double base_y = dx * (gy * k + dy * ky);
    const double base_xy = gx * gy * k + gx * dy * ky + dx * gy * kx + dx * dy * kxy;
    const double base = dx * dy * k;
    total += base_xy + base_x * sy[j] + base_y * sx[j] + base * sx[j] * sy[j];
  }
  return total;
}

double stein_kernel(double lengthscale, const ScoreFunction& score, const Vector& x,
                    const Vector& y, BoundaryCorrection boundary) {
  const Vector sx = score(x);
  const Vector sy = score(y);
  if (!sx.allFinite() || !sy.allFinite()) throw NumericalError("stein_kernel: non-finite score");
  return stein_kernel(lengthscale, x, sx, y, sy, boundary);
}

Matrix stein_kernel_matrix(double lengthscale, const Matrix& a, const Matrix& scores_a,
                           const Matrix& b, const Matrix& scores_b, BoundaryCorrection boundary) {
  if (a.cols() != b.cols() || scores_a.rows() != a.rows() || scores_b.rows() != b.rows()) {
    throw DimensionError("stein_kernel_matrix: dimension mismatch");
  }
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Vector xi = a.row(i).transpose();
    const Vector si = scores_a.row(i).transpose();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      out(i, j) = stein_kernel(lengthscale, xi, si, b.row(j).transpose(),
                               scores_b.row(j).transpose(), boundary);
    }
  }
  return out;
}

}  // namespace metacv

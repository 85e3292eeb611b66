#pragma once

#include <functional>

#include "metacv/autodiff.hpp"
#include "metacv/network.hpp"

namespace metacv {

/// x -> grad log pi(x). Must be pure.
using ScoreFunction = std::function<Vector(const Vector&)>;

/// Langevin-Stein control variate built on a network vector field.
struct SteinCV {
  NetworkSpec spec;
  BoundaryCorrection boundary = BoundaryCorrection::none;
  ScoreFunction score;

  int dim() const { return spec.input_dim; }
};

/// g(x_i) = u(x_i) . s(x_i) + div u(x_i) for each row of `points`, as an
/// m x 1 graph node. Network weights are read from `params` at `offset`.
/// The divergence is exact: one forward-mode direction per input coordinate.
ad::Var stein_batch(const NetworkSpec& spec, BoundaryCorrection boundary, const ad::Var& params,
                    ad::Index offset, const Matrix& points, const Matrix& scores);

/// u(x) . s(x) + div u(x) for an arbitrary field program, with the
/// divergence taken by forward mode.
double stein_operator(const ad::FieldProgram& field, const Vector& params, const Vector& score_x,
                      const Vector& x);

/// Zero-mean part of the control variate at a single point.
double stein_apply(const SteinCV& cv, const Vector& weights, const Vector& x);

/// gamma0 + stein_apply.
double cv_value(const SteinCV& cv, const CVParameters& params, const Vector& x);

/// Langevin-Stein reproducing kernel k0 built on the RBF base kernel
/// exp(-|x - y|^2 / (2 v)). With the unit-cube correction, the base kernel is
/// delta(x) delta(y) k(x, y), so every section vanishes in mean on [0,1]^d.
double stein_kernel(double lengthscale, const Vector& x, const Vector& score_x, const Vector& y,
                    const Vector& score_y, BoundaryCorrection boundary = BoundaryCorrection::none);
double stein_kernel(double lengthscale, const ScoreFunction& score, const Vector& x,
                    const Vector& y, BoundaryCorrection boundary = BoundaryCorrection::none);

/// k0 between every row of `a` and every row of `b` (a.rows() x b.rows()).
Matrix stein_kernel_matrix(double lengthscale, const Matrix& a, const Matrix& scores_a,
                           const Matrix& b, const Matrix& scores_b,
                           BoundaryCorrection boundary = BoundaryCorrection::none);

}  // namespace metacv

#include <doctest.h>

#include <random>

#include "metacv/control_functionals.hpp"
#include "metacv/error.hpp"
#include "metacv/seeding.hpp"
#include "metacv/stein.hpp"
#include "metacv/tasks.hpp"
#include "oracles.hpp"

using namespace metacv;

namespace {

Samples gaussian_samples(std::mt19937_64& rng, int n, int d) {
  Samples s;
  s.points = oracle::normal_points(rng, n, d);
  s.scores = -s.points;
  s.values = (s.points.rowwise().squaredNorm().array() + s.points.col(0).array().sin()).matrix();
  return s;
}

// Log marginal likelihood computed from scratch with a Cholesky factor.
double reference_lml(const Samples& s, double v, double nugget) {
  const Matrix K = stein_kernel_matrix(v, s.points, s.scores, s.points, s.scores) +
                   nugget * Matrix::Identity(s.size(), s.size());
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success) return -INFINITY;
  const Vector ones = Vector::Ones(s.size());
  const double beta = ones.dot(llt.solve(s.values)) / ones.dot(llt.solve(ones));
  const Vector r = (s.values.array() - beta).matrix();
  const Matrix L = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
  return -0.5 * r.dot(llt.solve(r)) - 0.5 * logdet - 0.5 * s.size() * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST_CASE("one support point is interpolated exactly") {
  std::mt19937_64 rng(1);
  const Samples s = gaussian_samples(rng, 1, 2);
  const CFModel m = cf_fit(s, 0.8, 0.0);
  CHECK(m.predict(s.points, s.scores)[0] == doctest::Approx(s.values[0]).epsilon(1e-14));
  CHECK(std::abs(m.coefficients[0]) <= 1e-14);
}

TEST_CASE("constant integrand is absorbed by the offset") {
  std::mt19937_64 rng(2);
  Samples s = gaussian_samples(rng, 6, 2);
  s.values.setConstant(3.5);
  const CFModel m = cf_fit(s, 1.0);
  CHECK(m.beta0 == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(m.coefficients.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("interpolation with a tiny nugget") {
  std::mt19937_64 rng(3);
  const Samples s = gaussian_samples(rng, 5, 1);
  const CFModel m = cf_fit(s, 1.0, 1e-8);
  CHECK((m.predict(s.points, s.scores) - s.values).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(m.nugget == 1e-8);
  const CFModel d = cf_fit(s, 1.0);
  const Matrix K = stein_kernel_matrix(1.0, s.points, s.scores, s.points, s.scores);
  CHECK(d.nugget == doctest::Approx(1e-8 * K.trace() / 5));
}

TEST_CASE("cf_estimate identities") {
  std::mt19937_64 rng(4);
  const Samples s = gaussian_samples(rng, 5, 2);
  const CFModel m = cf_fit(s, 0.9);

  // f equals the interpolant on Q: the estimate is beta0 with zero spread.
  Samples q = gaussian_samples(rng, 7, 2);
  q.values = m.predict(q.points, q.scores);
  const Estimate e = cf_estimate(m, q);
  CHECK(e.value == doctest::Approx(m.beta0).epsilon(1e-12));
  CHECK(e.std_error <= 1e-12);

  // Zero coefficients: the estimate is plain Monte Carlo on Q.
  CFModel zero = m;
  zero.coefficients.setZero();
  const Samples q2 = gaussian_samples(rng, 9, 2);
  const Estimate z = cf_estimate(zero, q2);
  const Estimate mc = mc_estimate(q2.values);
  CHECK(z.value == mc.value);
  CHECK(z.std_error == mc.std_error);
}

TEST_CASE("CF on an oscillatory task") {
  OscillatoryEnvironment env;
  env.dim = 1;
  const auto tasks = sample_oscillatory_tasks(env, 5, 10, 8, streams::kTestTasks);
  for (const auto& t : tasks) {
    const Samples s = t.data.support();
    const auto grid = default_lengthscale_grid(s);
    const double v = tune_lengthscale(s, grid, std::nullopt, BoundaryCorrection::unit_cube_product);
    const CFModel m = cf_fit(s, v, std::nullopt, BoundaryCorrection::unit_cube_product);
    CHECK(std::isfinite(cf_estimate(m, t.data.query()).value));
  }
}

TEST_CASE("singular systems are reported") {
  std::mt19937_64 rng(5);
  Samples s = gaussian_samples(rng, 3, 1);
  s.points.row(1) = s.points.row(0);
  s.scores.row(1) = s.scores.row(0);
  CHECK_THROWS_AS(cf_fit(s, 1.0, 0.0), NumericalError);
  CHECK_FALSE(cf_log_marginal_likelihood(s, 1.0, 0.0).has_value());
  CHECK_THROWS_AS(cf_fit(s, -1.0), ConfigError);
  CHECK_THROWS_AS(cf_fit(Samples{}, 1.0), DimensionError);
}

TEST_CASE("lengthscale grid") {
  std::mt19937_64 rng(6);
  const Samples s = gaussian_samples(rng, 5, 2);
  const auto grid = default_lengthscale_grid(s);
  REQUIRE(grid.size() == 20);
  std::vector<double> d2;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) d2.push_back((s.points.row(i) - s.points.row(j)).squaredNorm());
  std::sort(d2.begin(), d2.end());
  const double median = 0.5 * (d2[4] + d2[5]);
  CHECK(grid.front() == doctest::Approx(1e-2 * median));
  CHECK(grid.back() == doctest::Approx(1e2 * median));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] / grid[i - 1] == doctest::Approx(std::pow(1e4, 1.0 / 19)));
}

TEST_CASE("tune_lengthscale") {
  std::mt19937_64 rng(7);
  const Samples s = gaussian_samples(rng, 6, 1);
  const std::vector<double> one{0.37};
  CHECK(tune_lengthscale(s, one) == 0.37);
  const std::vector<double> dup{0.5, 0.5, 0.5};
  CHECK(tune_lengthscale(s, dup) == 0.5);
  CHECK_THROWS_AS(tune_lengthscale(s, std::vector<double>{}), ConfigError);
}

TEST_CASE("tuned lengthscale agrees with a dense-grid likelihood oracle") {
  // Draw f on a 1-d grid from the Stein-kernel GP with lengthscale v0.
  const int m = 15;
  const double v0 = 0.6, nugget = 1e-6;
  Samples s;
  s.points = Vector::LinSpaced(m, -2.0, 2.0);
  s.scores = -s.points;
  const Matrix K = stein_kernel_matrix(v0, s.points, s.scores, s.points, s.scores) +
                   nugget * Matrix::Identity(m, m);
  std::mt19937_64 rng(8);
  const Vector z = oracle::normal_vector(rng, m, 1.0);
  s.values = (Eigen::LLT<Matrix>(K).matrixL() * z).array() + 1.0;

  const auto grid = default_lengthscale_grid(s);
  const double chosen = tune_lengthscale(s, grid, nugget);

  double best_v = 0.0, best = -INFINITY;
  const int dense = 2000;
  for (int i = 0; i < dense; ++i) {
    const double v = grid.front() * std::pow(grid.back() / grid.front(), double(i) / (dense - 1));
    const double ll = reference_lml(s, v, nugget);
    if (ll > best) best = ll, best_v = v;
  }
  const double step = std::log(grid[1] / grid[0]);
  CHECK(std::abs(std::log(chosen / best_v)) <= step * 1.0000001);

  for (double v : grid) {
    const auto ll = cf_log_marginal_likelihood(s, v, nugget);
    REQUIRE(ll.has_value());
    CHECK(*ll == doctest::Approx(reference_lml(s, v, nugget)).epsilon(1e-8));
  }
}

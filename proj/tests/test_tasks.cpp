#include <doctest.h>

#include <filesystem>
#include <numbers>
#include <random>

#include "metacv/error.hpp"
#include "metacv/seeding.hpp"
#include "metacv/tasks.hpp"
#include "oracles.hpp"

using namespace metacv;

TEST_CASE("oscillatory closed form: special cases") {
  CHECK(oscillatory_truth(Vector::Zero(2), 1).value == doctest::Approx(1.0).epsilon(1e-15));
  const Vector period = (Vector(2) << 0.5, 2 * std::numbers::pi).finished();
  CHECK(std::abs(oscillatory_truth(period, 1).value) <= 1e-15);
  CHECK(oscillatory_truth(Vector::Zero(2), 1).method == "analytic");
  CHECK_THROWS_AS(oscillatory_truth(Vector::Zero(3), 1), DimensionError);
  // Near-zero frequencies use the limit.
  const Vector tiny = (Vector(3) << 0.1, 1e-12, 5.0).finished();
  const double integral = oracle::cube_integral(
      [&](const oracle::Vector& x) { return oscillatory_integrand(tiny, x); }, 2, 60);
  CHECK(oscillatory_truth(tiny, 2).value == doctest::Approx(integral).epsilon(1e-12));
}

TEST_CASE("oscillatory closed form against tensor quadrature") {
  OscillatoryEnvironment env;
  std::mt19937_64 rng(12);
  for (int d = 1; d <= 3; ++d) {
    env.dim = d;
    const int tasks = d == 3 ? 3 : 20;
    for (int t = 0; t < tasks; ++t) {
      const Vector a = env.sample_params(rng);
      const double q = oracle::cube_integral([&](const oracle::Vector& x) { return oscillatory_integrand(a, x); }, d, 200);
      CHECK(std::abs(oscillatory_truth(a, d).value - q) <= 1e-8);
    }
  }
}

TEST_CASE("oscillatory task sampling") {
  OscillatoryEnvironment env;
  env.dim = 2;
  const auto a = sample_oscillatory_tasks(env, 50, 10, 99, streams::kTrainTasks);
  const auto b = sample_oscillatory_tasks(env, 50, 10, 99, streams::kTrainTasks);
  REQUIRE(a.size() == 50);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].params == b[t].params);
    CHECK(a[t].data.samples().points == b[t].data.samples().points);
    CHECK(a[t].params[0] >= 0.4);
    CHECK(a[t].params[0] <= 0.6);
    for (int j = 1; j <= 2; ++j) {
      CHECK(a[t].params[j] >= 4.0);
      CHECK(a[t].params[j] <= 6.0);
    }
    const Samples& s = a[t].data.samples();
    CHECK(a[t].data.support_size() == 5);
    CHECK(s.scores.isZero(0.0));
    CHECK(s.points.minCoeff() >= 0.0);
    CHECK(s.points.maxCoeff() <= 1.0);
    for (int i = 0; i < 10; ++i) {
      CHECK(s.values[i] == oscillatory_integrand(a[t].params, s.points.row(i).transpose()));
    }
    CHECK(a[t].truth.value == oscillatory_truth(a[t].params, 2).value);
  }
  // Tasks are indexed by seed, so a larger set extends a smaller one.
  const auto big = sample_oscillatory_tasks(env, 20000, 10, 99, streams::kTrainTasks);
  CHECK(big.size() == 20000);
  CHECK(big[49].params == a[49].params);
  const auto test = sample_oscillatory_tasks(env, 50, 10, 99, streams::kTestTasks);
  CHECK_FALSE(test[0].params == a[0].params);
  CHECK_THROWS_AS(sample_oscillatory_tasks(env, 0, 10, 1, 1), ConfigError);
}

TEST_CASE("ODE solver") {
  // a = 0: u = 25 x^2 s (1 - s), integral 25 x^2 / 6.
  for (double x : {0.5, 1.0, 2.0}) {
    const double exact = 25.0 * x * x / 6.0;
    CHECK(std::abs(ode_solve(0.0, x, 256) - exact) <= 1e-4 * exact);
  }
  for (double a : {0.0, 0.3, 1.0}) {
    CHECK(ode_solve(a, 0.0, 64) == 0.0);
    CHECK(ode_solve(a, 2.6, 128) == 4.0 * ode_solve(a, 1.3, 128));
  }
  CHECK_THROWS_AS(ode_solve(0.5, 1.0, 1), ConfigError);
}

TEST_CASE("ODE solver converges at second order") {
  for (double a : {0.25, 0.5, 0.9}) {
    const double f1 = ode_solve(a, 1.0, 32), f2 = ode_solve(a, 1.0, 64), f3 = ode_solve(a, 1.0, 128);
    const double ratio = (f1 - f2) / (f2 - f3);
    CAPTURE(a);
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
  }
}

TEST_CASE("ODE ground truth") {
  const GroundTruth t0 = ode_truth(0.0, 8192);
  CHECK(std::abs(t0.value - 25.0 / 6.0) <= 1e-5);
  CHECK(t0.method == "quadrature_oracle");
  CHECK(t0.resolution == 8192);
  CHECK(t0.error_estimate <= 1e-6);

  double previous = INFINITY;
  for (int i = 0; i < 20; ++i) {
    const double v = ode_truth(i / 19.0, 2048).value;
    CHECK(v < previous);
    previous = v;
  }
  CHECK(std::abs(ode_truth(0.5, 16384).value - ode_truth(0.5, 8192).value) <= 1e-6);
}

TEST_CASE("ODE task sampling") {
  OdeEnvironment env;
  const auto tasks = sample_ode_tasks(env, 5, 10, 4, streams::kTestTasks);
  for (const auto& t : tasks) {
    CHECK(t.params[0] >= 0.0);
    CHECK(t.params[0] <= 1.0);
    const Samples& s = t.data.samples();
    CHECK(s.scores == Matrix(-s.points));
    CHECK(s.values[3] == ode_solve(t.params[0], s.points(3, 0), env.grid));
    CHECK(t.truth.value == ode_truth(t.params[0], env.truth_grid).value);
  }
}

TEST_CASE("scores") {
  CHECK(gaussian_score(Vector::Zero(1))[0] == 0.0);
  CHECK(gaussian_score(Vector::Constant(1, 2.0))[0] == -2.0);
  CHECK(uniform_score(Vector::Ones(3)).isZero(0.0));
}

TEST_CASE("task bundles round-trip") {
  OscillatoryEnvironment env;
  env.dim = 3;
  auto tasks = sample_oscillatory_tasks(env, 4, 7, 5, streams::kTestTasks);
  const auto ode = sample_ode_tasks(OdeEnvironment{}, 2, 6, 5, streams::kTestTasks);
  tasks.insert(tasks.end(), ode.begin(), ode.end());
  const auto path = std::filesystem::temp_directory_path() / "metacv_bundle_test.jsonl";
  write_task_bundle(path, tasks);
  const auto back = read_task_bundle(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == tasks.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].kind == tasks[i].kind);
    CHECK(back[i].seed == tasks[i].seed);
    CHECK(back[i].params == tasks[i].params);
    CHECK(back[i].data.samples().points == tasks[i].data.samples().points);
    CHECK(back[i].data.samples().scores == tasks[i].data.samples().scores);
    CHECK(back[i].data.samples().values == tasks[i].data.samples().values);
    CHECK(back[i].data.support_size() == tasks[i].data.support_size());
    CHECK(back[i].truth.value == tasks[i].truth.value);
    CHECK(back[i].truth.method == tasks[i].truth.method);
  }
  CHECK_THROWS_AS(decode_task_record("{\"version\": 2}"), ConfigError);
  CHECK_THROWS_AS(decode_task_record("not json"), ConfigError);
}

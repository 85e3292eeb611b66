// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "metacv/autodiff.hpp"
#include "metacv/control_functionals.hpp"
#include "metacv/estimators.hpp"
#include "metacv/harness.hpp"
#include "metacv/seeding.hpp"
#include "metacv/stein.hpp"
#include "metacv/tasks.hpp"
#include "oracles.hpp"

using namespace metacv;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Samples random_subset(std::mt19937_64& rng, int n, int d, bool cube) {
  Samples s;
  s.points = cube ? oracle::uniform_points(rng, n, d) : oracle::normal_points(rng, n, d);
  s.scores = cube ? Matrix::Zero(n, d) : Matrix(-s.points);
  s.values = oracle::normal_vector(rng, n, 1.0);
  return s;
}

SteinCV make_small_cv(int d, std::vector<int> widths, BoundaryCorrection bc, Activation act = Activation::sigmoid) {
  NetworkSpec spec;
  spec.input_dim = d;
  spec.hidden_widths = std::move(widths);
  spec.activation = act;
  return SteinCV{spec, bc, bc == BoundaryCorrection::none ? ScoreFunction(gaussian_score)
                                                            : ScoreFunction(uniform_score)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const harness::EstimatorSummary& summary_of(const harness::RunResult& r, harness::Estimator e) {
  for (const auto& s : r.summary)
    if (s.estimator == e) return s;
  throw std::runtime_error("estimator missing from summary");
}

Verdict gradient_checks() {
  std::mt19937_64 rng(101);
  double worst_params = 0.0, worst_meta = 0.0;
  int n_params = 0, n_meta = 0;
  for (int draw = 0; draw < 40; ++draw) {
    const int d = 1 + draw % 3;
    const auto bc = draw % 2 ? BoundaryCorrection::unit_cube_product : BoundaryCorrection::none;
    const auto act = (draw / 2) % 2 ? Activation::tanh : Activation::sigmoid;
    const SteinCV cv = make_small_cv(d, {5, 4}, bc, act);
    const bool cube = bc != BoundaryCorrection::none;
    const Samples s = random_subset(rng, 5, d, cube), q = random_subset(rng, 5, d, cube);
    const double lambda = 1e-3;
    const auto inner = loss_program(cv, s, lambda);
    const auto outer = loss_program(cv, q, lambda);
    const Vector theta = oracle::normal_vector(rng, param_count(cv.spec) + 1, 0.7);
    // Inner step length at most 0.2 so the unrolled map stays smooth at the FD scale.
    const double alpha = 0.2 / std::max(1.0, ad::grad_params(inner, theta).norm());

    const Vector g = ad::grad_params(outer, theta);
    const oracle::Vector fd = oracle::gradient(
        [&](const oracle::Vector& t) { return empirical_loss(cv, CVParameters::from_flat(t), q, lambda); }, theta);
    worst_params = std::max(worst_params, oracle::relative_error(g, fd));
    ++n_params;

    if (draw < 24) {
      const int steps = 1 + draw % 3;
      const Vector m = ad::meta_grad_exact(inner, outer, theta, alpha, steps);
      auto composed = [&](const oracle::Vector& t) {
        Vector cur = t;
        for (int j = 0; j < steps; ++j) cur -= alpha * ad::grad_params(inner, cur);
        return empirical_loss(cv, CVParameters::from_flat(cur), q, lambda);
      };
      worst_meta = std::max(worst_meta, oracle::relative_error(m, oracle::gradient(composed, theta)));
      ++n_meta;
    }
  }
  return {n_params >= 20 && n_meta >= 20 && worst_params <= 1e-5 && worst_meta <= 1e-4,
          fmt("grad_params %d instances worst rel err %.2e; meta_grad_exact %d instances worst %.2e",
              n_params, worst_params, n_meta, worst_meta)};
}

Verdict stein_zero_mean() {
  int within = 0, total = 0;
  for (int d : {1, 2}) {
    const SteinCV cv = make_small_cv(d, {16, 16}, BoundaryCorrection::none);
    for (int k = 0; k < 50; ++k) {
      const Vector w = init_params(cv.spec, 0.5, 0.0, derive_seed(7, d, k)).weights;
      std::mt19937_64 rng(derive_seed(8, d, k));
      const int n = 100000;
      const Matrix pts = oracle::normal_points(rng, n, d);
      ad::NoGradGuard guard;
      const Matrix g = stein_batch(cv.spec, cv.boundary, ad::Var::constant(Matrix(w)), 0, pts, -pts).value();
      const double mean = g.mean();
      const double se = std::sqrt((g.array() - mean).square().sum() / (n - 1) / n);
      within += std::abs(mean) <= 4.0 * se;
      ++total;
    }
  }
  double worst_cube = 0.0;
  for (int d : {1, 2}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const SteinCV cv = make_small_cv(d, {8, 8}, BoundaryCorrection::unit_cube_product);
      const Vector w = init_params(cv.spec, 1.0, 0.0, seed).weights;
      const double integral =
          oracle::cube_integral([&](const oracle::Vector& x) { return stein_apply(cv, w, x); }, d, 40);
      worst_cube = std::max(worst_cube, std::abs(integral));
    }
  }
  const double frac = double(within) / total;
  return {frac >= 0.95 && worst_cube <= 1e-6,
          fmt("Gaussian: %d/%d networks within 4 SE (%.0f%%); cube quadrature worst |mean| %.2e", within,
              total, 100 * frac, worst_cube)};
}

Verdict estimator_identities() {
  std::mt19937_64 rng(303);
  bool ok = true;
  int checks = 0;
  for (int t = 0; t < 20; ++t) {
    const int d = 1 + t % 2;
    const SteinCV cv = make_small_cv(d, {6, 6}, BoundaryCorrection::none);
    Samples s = random_subset(rng, 10, d, false);
    const TaskDataset task(s, 5);
    const Estimate mc = mc_estimate(task.query().values);

    // Zero output layer: equals plain Monte Carlo for any gamma0.
    const Estimate zero = cv_estimate(cv, init_params(cv.spec, 0.0, 3.0 * t, 0), task);
    ok &= zero.value == mc.value && zero.std_error == mc.std_error;

    // The estimate does not depend on gamma0.
    CVParameters p = init_params(cv.spec, 0.5, 0.0, t);
    const double v = cv_estimate(cv, p, task).value;
    p.gamma0 = -11.0;
    ok &= cv_estimate(cv, p, task).value == v;

    // f = g + c on Q: zero spread, value gamma0 + c.
    Samples exact = s;
    for (int i = 0; i < 10; ++i) exact.values[i] = cv_value(cv, p, exact.points.row(i).transpose()) + 0.25;
    const Estimate e = cv_estimate(cv, p, TaskDataset(exact, 5));
    ok &= std::abs(e.value - (p.gamma0 + 0.25)) <= 1e-10 && e.std_error <= 1e-10;

    // CF with zero coefficients is Monte Carlo on Q.
    CFModel m = cf_fit(task.support(), 1.0);
    m.coefficients.setZero();
    const Estimate cf0 = cf_estimate(m, task.query());
    ok &= cf0.value == mc.value && cf0.std_error == mc.std_error;
    checks += 4;
  }
  return {ok, fmt("%d identity checks over 20 tasks", checks)};
}

Verdict ground_truth() {
  OscillatoryEnvironment env;
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    env.dim = d;
    for (int t = 0; t < 100; ++t) {
      const Vector a = env.sample_params(rng);
      const double q =
          oracle::cube_integral([&](const oracle::Vector& x) { return oscillatory_integrand(a, x); }, d, d == 3 ? 40 : 200);
      worst = std::max(worst, std::abs(oscillatory_truth(a, d).value - q));
    }
  }
  const double f1 = ode_solve(0.5, 1.0, 64), f2 = ode_solve(0.5, 1.0, 128), f3 = ode_solve(0.5, 1.0, 256);
  const double ratio = (f1 - f2) / (f2 - f3);
  const double t0 = ode_truth(0.0, 8192).value;
  return {worst <= 1e-8 && ratio >= 3.5 && ratio <= 4.5 && std::abs(t0 - 25.0 / 6.0) <= 1e-5,
          fmt("oscillatory 300 tasks worst |closed form - quadrature| %.2e; ODE convergence ratio %.3f; "
              "ODE truth at a=0 off by %.2e",
              worst, ratio, std::abs(t0 - 25.0 / 6.0))};
}

double task_win_rate(const harness::RunResult& r) {
  std::vector<double> mc, mcv;
  for (const auto& t : r.per_task) {
    if (t.estimator == harness::Estimator::mc) mc.push_back(t.abs_error);
    if (t.estimator == harness::Estimator::mcv) mcv.push_back(t.abs_error);
  }
  int wins = 0;
  for (std::size_t i = 0; i < mc.size() && i < mcv.size(); ++i) wins += mcv[i] < mc[i];
  return mc.empty() ? 0.0 : double(wins) / mc.size();
}

Verdict accuracy(const harness::RunResult& r) {
  if (r.exit_code() != 0) return {false, fmt("run exited with status %d", r.exit_code())};
  const auto& mc = summary_of(r, harness::Estimator::mc);
  const auto& ncv = summary_of(r, harness::Estimator::ncv);
  const auto& cf = summary_of(r, harness::Estimator::cf);
  const auto& mcv = summary_of(r, harness::Estimator::mcv);
  const bool separated = mcv.mae + mcv.ci95 < mc.mae - mc.ci95;
  return {mcv.mae < mc.mae && separated && mcv.mae < ncv.mae,
          fmt("MAE mc %.4f+-%.4f ncv %.4f+-%.4f cf %.4f+-%.4f mcv %.4f+-%.4f; mcv beats mc on %.0f%% of tasks",
              mc.mae, mc.ci95, ncv.mae, ncv.ci95, cf.mae, cf.ci95, mcv.mae, mcv.ci95, 100 * task_win_rate(r))};
}

Verdict adaptation_cost(const harness::RunResult& r) {
  const auto& ncv = summary_of(r, harness::Estimator::ncv);
  const auto& mcv = summary_of(r, harness::Estimator::mcv);
  return {ncv.n_tasks >= 200 && mcv.total_fit_ms * 10.0 <= ncv.total_fit_ms,
          fmt("%zu tasks: mcv fit %.1f ms, ncv fit %.1f ms (ratio 1/%.1f)", ncv.n_tasks, mcv.total_fit_ms,
              ncv.total_fit_ms, ncv.total_fit_ms / std::max(mcv.total_fit_ms, 1e-12))};
}

Verdict reproducibility(const harness::RunResult& first, const harness::RunResult& second) {
  const std::string a = harness::strip_timing_columns(slurp(first.directory / "summary.csv"));
  const std::string b = harness::strip_timing_columns(slurp(second.directory / "summary.csv"));
  return {!a.empty() && a == b && first.directory != second.directory,
          fmt("summary.csv without timing columns: %zu bytes, %s", a.size(), a == b ? "identical" : "different")};
}

Verdict training_trend(const std::vector<TraceRow>& trace) {
  const std::size_t n = trace.size(), w = 50;
  if (n < 4 * w) return {false, fmt("trace too short (%zu rows)", n)};
  std::vector<double> smooth;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += trace[i].grad_norm;
    if (i >= w) acc -= trace[i - w].grad_norm;
    if (i + 1 >= w) smooth.push_back(acc / w);
  }
  const std::size_t q = smooth.size() / 4;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) first += smooth[i], last += smooth[smooth.size() - q + i];
  first /= q, last /= q;
  return {last < first, fmt("smoothed grad norm: first quarter %.4g, final quarter %.4g", first, last)};
}

}  // namespace

int main() {
  const fs::path out = fs::temp_directory_path() / "metacv_acceptance";
  fs::remove_all(out);
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail
              << fmt(" [%.1fs]", s) << std::endl;
  };

  report(1, "gradient checks", gradient_checks);
  report(2, "Stein zero mean", stein_zero_mean);
  report(3, "estimator identities", estimator_identities);
  report(4, "ground-truth oracles", ground_truth);

  auto run = [&](const char* file, const std::string& sub) {
    harness::ExperimentConfig c = harness::load_config(fs::path(METACV_CONFIG_DIR) / file);
    c.output_dir = (out / sub).string();
    c.threads = 1;
    return harness::run_experiment(c);
  };

  std::optional<harness::RunResult> osc;
  report(5, "oscillatory accuracy", [&] {
    osc = run("oscillatory_desk.json", "oscillatory");
    return accuracy(*osc);
  });
  report(6, "ODE accuracy", [&] { return accuracy(run("ode_desk.json", "ode")); });
  report(7, "adaptation cost", [&] {
    if (!osc) return Verdict{false, "oscillatory run unavailable"};
    return adaptation_cost(*osc);
  });
  report(8, "reproducibility", [&] {
    if (!osc) return Verdict{false, "oscillatory run unavailable"};
    return reproducibility(*osc, run("oscillatory_desk.json", "oscillatory_repeat"));
  });
  report(9, "training trend", [&] {
    if (!osc) return Verdict{false, "oscillatory run unavailable"};
    return training_trend(osc->trace);
  });

  fs::remove_all(out);
  std::cout << (failures == 0 ? "all criteria passed" : fmt("%d criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}

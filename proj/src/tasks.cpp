#include "metacv/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "metacv/error.hpp"
#include "metacv/seeding.hpp"

namespace metacv {

namespace {

constexpr int kBundleVersion = 1;

// Shuffles rows once with the task RNG, then builds the S/Q split.
TaskDataset finalize_dataset(Samples samples, std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(samples.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Samples shuffled = samples.select(order);
  const Eigen::Index m = default_support_size(shuffled.size());
  return TaskDataset(std::move(shuffled), m);
}

void require_counts(int count, int samples_per_task) {
  if (count < 1) throw ConfigError("task count must be >= 1");
  if (samples_per_task < 1) throw ConfigError("samples per task must be >= 1");
}

}  // namespace

std::string to_string(TaskKind k) { return k == TaskKind::oscillatory ? "oscillatory" : "ode"; }

TaskKind parse_task_kind(const std::string& s) {
  if (s == "oscillatory") return TaskKind::oscillatory;
  if (s == "ode") return TaskKind::ode;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Oscillatory

Vector OscillatoryEnvironment::sample_params(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> phase(phase_low, phase_high);
  std::uniform_real_distribution<double> frequency(frequency_low, frequency_high);
  Vector a(dim + 1);
  a[0] = phase(rng);
  for (int i = 1; i <= dim; ++i) a[i] = frequency(rng);
  return a;
}

double oscillatory_integrand(const Vector& a, const Vector& x) {
  if (a.size() != x.size() + 1) throw DimensionError("oscillatory: parameter length must be d + 1");
  return std::cos(2.0 * std::numbers::pi * a[0] + a.tail(x.size()).dot(x));
}

GroundTruth oscillatory_truth(const Vector& a, int dim) {
  if (a.size() != dim + 1) throw DimensionError("oscillatory_truth: parameter length must be d + 1");
  using C = std::complex<double>;
  const C i(0.0, 1.0);
  C value = std::exp(i * (2.0 * std::numbers::pi * a[0]));
  for (int j = 1; j <= dim; ++j) {
    const double b = a[j];
    // (e^{ib} - 1) / (ib), with limit 1 at b = 0; series near zero.
    C factor = std::abs(b) < 1e-8 ? C(1.0, b / 2.0) : (std::exp(i * b) - 1.0) / (i * b);
    value *= factor;
  }
  return {value.real(), "analytic", 0.0, 0};
}

std::vector<TaskRecord> sample_oscillatory_tasks(const OscillatoryEnvironment& env, int count,
                                                 int samples_per_task, std::uint64_t master_seed,
                                                 std::uint64_t stream) {
  require_counts(count, samples_per_task);
  if (env.dim < 1) throw ConfigError("oscillatory dimension must be >= 1");
  std::vector<TaskRecord> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    TaskRecord rec;
    rec.kind = TaskKind::oscillatory;
    rec.index = static_cast<std::size_t>(t);
    rec.seed = derive_seed(master_seed, stream, rec.index);
    std::mt19937_64 rng(rec.seed);
    rec.params = env.sample_params(rng);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Samples s{Matrix(samples_per_task, env.dim), Matrix::Zero(samples_per_task, env.dim),
              Vector(samples_per_task)};
    for (int n = 0; n < samples_per_task; ++n) {
      for (int j = 0; j < env.dim; ++j) s.points(n, j) = unit(rng);
      s.values[n] = oscillatory_integrand(rec.params, s.points.row(n).transpose());
    }
    rec.data = finalize_dataset(std::move(s), rng);
    rec.truth = oscillatory_truth(rec.params, env.dim);
    tasks.push_back(std::move(rec));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Boundary-value ODE

double ode_solve(double a, double x, int grid) {
  if (grid < 2) throw ConfigError("ode_solve: grid must have at least 2 intervals");
  const int n = grid - 1;  // interior nodes
  const double h = 1.0 / grid;
  const double rhs = 50.0 * x * x * h * h;
  auto c = [a](double s) { return 1.0 + a * s; };

  // -(c_{k+1/2}(u_{k+1} - u_k) - c_{k-1/2}(u_k - u_{k-1})) = 50 x^2 h^2,
  // solved by the Thomas algorithm.
  std::vector<double> diag(n), upper(n), rhs_v(n, rhs);
  for (int k = 0; k < n; ++k) {
    const double s = (k + 1) * h;
    const double left = c(s - 0.5 * h);
    const double right = c(s + 0.5 * h);
    diag[k] = left + right;
    upper[k] = -right;  // coefficient of u_{k+1}; the lower one of row k+1 equals it
  }
  for (int k = 1; k < n; ++k) {
    const double w = upper[k - 1] / diag[k - 1];
    diag[k] -= w * upper[k - 1];
    rhs_v[k] -= w * rhs_v[k - 1];
  }
  std::vector<double> u(n);
  u[n - 1] = rhs_v[n - 1] / diag[n - 1];
  for (int k = n - 2; k >= 0; --k) u[k] = (rhs_v[k] - upper[k] * u[k + 1]) / diag[k];

  double integral = 0.0;
  for (double v : u) integral += v;
  integral *= h;
  if (!std::isfinite(integral)) throw NumericalError("ode_solve: non-finite solution");
  return integral;
}

GroundTruth ode_truth(double a, int grid) {
  if (grid < 4) throw ConfigError("ode_truth: grid must be >= 4");
  const double fine = ode_solve(a, 1.0, grid);
  const double coarse = ode_solve(a, 1.0, grid / 2);
  // Second-order scheme: error(fine) ~ (coarse - fine) / 3.
  return {fine, "quadrature_oracle", std::abs(coarse - fine) / 3.0, grid};
}

std::vector<TaskRecord> sample_ode_tasks(const OdeEnvironment& env, int count, int samples_per_task,
                                         std::uint64_t master_seed, std::uint64_t stream) {
  require_counts(count, samples_per_task);
  std::vector<TaskRecord> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    TaskRecord rec;
    rec.kind = TaskKind::ode;
    rec.index = static_cast<std::size_t>(t);
    rec.seed = derive_seed(master_seed, stream, rec.index);
    std::mt19937_64 rng(rec.seed);
    std::uniform_real_distribution<double> coefficient(env.a_low, env.a_high);
    rec.params = Vector::Constant(1, coefficient(rng));

    std::normal_distribution<double> normal(0.0, 1.0);
    Samples s{Matrix(samples_per_task, 1), Matrix(samples_per_task, 1), Vector(samples_per_task)};
    for (int n = 0; n < samples_per_task; ++n) {
      const double x = normal(rng);
      s.points(n, 0) = x;
      s.scores(n, 0) = -x;
      s.values[n] = ode_solve(rec.params[0], x, env.grid);
    }
    rec.data = finalize_dataset(std::move(s), rng);
    rec.truth = ode_truth(rec.params[0], env.truth_grid);
    tasks.push_back(std::move(rec));
  }
  return tasks;
}

Vector gaussian_score(const Vector& x) { return -x; }

Vector uniform_score(const Vector& x) { return Vector::Zero(x.size()); }

// ---------------------------------------------------------------------------
// Bundles

namespace {

nlohmann::json rows_to_json(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
    out.push_back(row);
  }
  return out;
}

Matrix json_to_rows(const nlohmann::json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = j[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError("task bundle: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = row[c];
  }
  return m;
}

}  // namespace

std::string encode_task_record(const TaskRecord& r) {
  const Samples& s = r.data.samples();
  nlohmann::json j = {
      {"version", kBundleVersion},
      {"kind", to_string(r.kind)},
      {"index", r.index},
      {"seed", r.seed},
      {"params", std::vector<double>(r.params.data(), r.params.data() + r.params.size())},
      {"n", s.size()},
      {"dim", s.dim()},
      {"support_size", r.data.support_size()},
      {"points", rows_to_json(s.points)},
      {"scores", rows_to_json(s.scores)},
      {"values", std::vector<double>(s.values.data(), s.values.data() + s.values.size())},
      {"truth",
       {{"value", r.truth.value},
        {"method", r.truth.method},
        {"error_estimate", r.truth.error_estimate},
        {"resolution", r.truth.resolution}}},
  };
  return j.dump();
}

TaskRecord decode_task_record(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.at("version").get<int>() != kBundleVersion) {
      throw ConfigError("task bundle: unsupported schema version");
    }
    TaskRecord r;
    r.kind = parse_task_kind(j.at("kind").get<std::string>());
    r.index = j.at("index").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto params = j.at("params").get<std::vector<double>>();
    r.params = Eigen::Map<const Vector>(params.data(), static_cast<Eigen::Index>(params.size()));
    const auto dim = j.at("dim").get<Eigen::Index>();
    Samples s;
    s.points = json_to_rows(j.at("points"), dim);
    s.scores = json_to_rows(j.at("scores"), dim);
    const auto values = j.at("values").get<std::vector<double>>();
    s.values = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    if (s.size() != j.at("n").get<Eigen::Index>()) throw ConfigError("task bundle: n mismatch");
    r.data = TaskDataset(std::move(s), j.at("support_size").get<Eigen::Index>());
    const auto& t = j.at("truth");
    r.truth = {t.at("value").get<double>(), t.at("method").get<std::string>(),
               t.at("error_estimate").get<double>(), t.at("resolution").get<int>()};
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task bundle: malformed record: ") + e.what());
  }
}

void write_task_bundle(const std::filesystem::path& path, const std::vector<TaskRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write task bundle " + path.string());
  for (const auto& r : records) out << encode_task_record(r) << '\n';
}

std::vector<TaskRecord> read_task_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read task bundle " + path.string());
  std::vector<TaskRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) records.push_back(decode_task_record(line));
  }
  return records;
}

}  // namespace metacv

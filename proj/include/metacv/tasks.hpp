#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "metacv/estimators.hpp"

namespace metacv {

enum class TaskKind { oscillatory, ode };
std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

struct GroundTruth {
  double value = 0.0;
  std::string method;           // "analytic" or "quadrature_oracle"
  double error_estimate = 0.0;  // 0 for closed forms
  int resolution = 0;           // grid size for quadrature oracles
};

/// One integration task with its data and cached truth.
struct TaskRecord {
  TaskKind kind = TaskKind::oscillatory;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  Vector params;  // oscillatory: a (length d + 1); ode: (a)
  TaskDataset data;
  GroundTruth truth;
};

// Oscillatory family: f(x; a) = cos(2 pi a_1 + sum_i a_{i+1} x_i), x ~ U[0,1]^d.

struct OscillatoryEnvironment {
  int dim = 2;
  double phase_low = 0.4;
  double phase_high = 0.6;
  double frequency_low = 4.0;
  double frequency_high = 6.0;

  Vector sample_params(std::mt19937_64& rng) const;
};

double oscillatory_integrand(const Vector& a, const Vector& x);

/// Closed form Re[e^{i 2 pi a_1} prod_j (e^{i b_j} - 1) / (i b_j)].
GroundTruth oscillatory_truth(const Vector& a, int dim);

/// T tasks of N samples each. Task t uses seed derive_seed(master, stream, t).
std::vector<TaskRecord> sample_oscillatory_tasks(const OscillatoryEnvironment& env, int count,
                                                 int samples_per_task, std::uint64_t master_seed,
                                                 std::uint64_t stream);

// Boundary-value ODE family: d/ds (c(s) du/ds) = -50 x^2 on (0, 1),
// u(0) = u(1) = 0, c(s) = 1 + a s, f(x; a) = int_0^1 u(s) ds, x ~ N(0, 1).

struct OdeEnvironment {
  double a_low = 0.0;
  double a_high = 1.0;
  int grid = 256;
  int truth_grid = 8192;
};

/// Conservative finite differences on `grid` uniform intervals (face-centred
/// coefficients, tridiagonal solve), then the trapezoid rule in s.
double ode_solve(double a, double x, int grid);

/// E[f(X; a)] for X ~ N(0,1). Since f(x; a) = x^2 C(a) and E[X^2] = 1 this is
/// C(a) = ode_solve(a, 1, grid); the error estimate compares grid and grid/2.
GroundTruth ode_truth(double a, int grid);

std::vector<TaskRecord> sample_ode_tasks(const OdeEnvironment& env, int count, int samples_per_task,
                                         std::uint64_t master_seed, std::uint64_t stream);

/// Score of N(0, I): -x.
Vector gaussian_score(const Vector& x);
/// Score of the uniform density on the cube: 0.
Vector uniform_score(const Vector& x);

/// Support size used for every generated task: floor(N / 2).
inline Eigen::Index default_support_size(Eigen::Index n) { return n / 2; }

// Task bundles: one JSON object per line, schema version 1.

std::string encode_task_record(const TaskRecord& record);
TaskRecord decode_task_record(const std::string& line);
void write_task_bundle(const std::filesystem::path& path, const std::vector<TaskRecord>& records);
std::vector<TaskRecord> read_task_bundle(const std::filesystem::path& path);

}  // namespace metacv

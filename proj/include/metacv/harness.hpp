#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "metacv/network.hpp"
#include "metacv/tasks.hpp"
#include "metacv/training.hpp"

namespace metacv::harness {

inline constexpr int kConfigSchemaVersion = 1;

enum class Estimator { mc, ncv, cf, mcv };
std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& s);
/// Comma-separated list such as "mc,ncv,cf,mcv". Order is normalized.
std::vector<Estimator> parse_estimator_list(const std::string& csv);

struct CfSettings {
  int grid_size = 20;
  double grid_low = 1e-2;
  double grid_high = 1e2;
  std::optional<double> nugget;  // null selects default_nugget
};

struct ExperimentConfig {
  TaskKind kind = TaskKind::oscillatory;
  int dim = 2;
  int train_tasks = 2000;
  int test_tasks = 200;
  int samples_per_task = 10;
  int ode_grid = 256;
  int ode_truth_grid = 8192;

  NetworkSpec network;  // input/output dims follow dim and output_mode
  BoundaryCorrection boundary = BoundaryCorrection::unit_cube_product;
  MetaConfig meta;
  int checkpoint_every = 0;
  int adapt_steps = 1;  // L used at test time
  NeuralCvSettings neural_cv;
  CfSettings cf;
  std::vector<Estimator> estimators{Estimator::mc, Estimator::ncv, Estimator::cf, Estimator::mcv};
  std::string output_dir = "runs";
  std::uint64_t seed = 0;
  int threads = 1;

  /// Re-derives network dims and copies seed/threads into the meta config.
  void normalize();
  void validate() const;
  bool wants(Estimator e) const;
};

/// Strict parse: every key is required, unknown keys are rejected, and
/// errors name the offending JSON pointer.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Hash of everything that affects results (output_dir and threads excluded).
std::string config_hash(const ExperimentConfig& config);
/// Hash of the fields that affect meta-training only.
std::string train_hash(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Running

struct TaskResult {
  Estimator estimator = Estimator::mc;
  std::size_t task = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double truth = 0.0;
  double abs_error = 0.0;
  bool ok = true;
  std::string failure;
  double fit_ms = 0.0;   // adaptation / training / kernel fit
  double wall_ms = 0.0;  // fit plus estimation
};

struct EstimatorSummary {
  Estimator estimator = Estimator::mc;
  std::size_t n_tasks = 0;
  std::size_t n_failed = 0;
  double mae = 0.0;
  double ci95 = 0.0;
  double total_fit_ms = 0.0;
  double total_wall_ms = 0.0;
};

struct TrainedMeta {
  CVParameters params;
  std::vector<TraceRow> trace;
  std::string train_hash;
  double wall_ms = 0.0;
};

struct RunResult {
  std::filesystem::path directory;  // empty when outputs are disabled
  std::string config_hash;
  std::string train_hash;
  std::uint64_t seed = 0;
  std::string axis;        // empty outside sweeps
  std::string axis_value;  // empty outside sweeps
  std::vector<TaskResult> per_task;
  std::vector<EstimatorSummary> summary;
  std::vector<TraceRow> trace;
  std::optional<std::string> meta_failure;

  bool partial() const;
  /// 0 success, 2 meta-training aborted, 3 some estimator failed on some task.
  int exit_code() const;
};

struct RunOptions {
  bool write_outputs = true;
  std::ostream* log = nullptr;
  std::string axis;
  std::string axis_value;
};

struct TaskSets {
  std::vector<TaskRecord> train;
  std::vector<TaskRecord> test;
};

/// Training tasks use the kTrainTasks seed stream, test tasks kTestTasks.
/// Throws NumericalError if any test parameter vector equals a training one.
TaskSets generate_tasks(const ExperimentConfig& config, bool include_train = true);

SteinCV make_cv(const ExperimentConfig& config);

/// Intermediate checkpoints go to `checkpoint_dir` when it is non-empty and
/// checkpoint_every > 0.
TrainedMeta train_meta(const ExperimentConfig& config, std::span<const TaskRecord> train,
                       std::ostream* log = nullptr,
                       const std::filesystem::path& checkpoint_dir = {});

/// Evaluates the selected estimators on the test tasks. Meta-CV rows are
/// marked failed when `meta` is empty.
RunResult evaluate(const ExperimentConfig& config, std::span<const TaskRecord> test,
                   const std::optional<TrainedMeta>& meta, const RunOptions& options);

/// Meta-training followed by evaluation, with result files in a new run directory.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Meta-training only; writes config, trace and checkpoint.
RunResult run_meta_train(const ExperimentConfig& config, const RunOptions& options = {});

/// Evaluation from a saved meta-parameter checkpoint.
RunResult run_evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                       const RunOptions& options = {});

enum class SweepAxis { N, L, B, I_tr, d };
std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& s);
std::vector<double> parse_value_list(const std::string& csv);

/// One run per value. L sweeps share a single meta-trained parameter.
std::vector<RunResult> sweep(const ExperimentConfig& config, SweepAxis axis,
                             const std::vector<double>& values, const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Output files

std::string per_task_csv(const RunResult& result);
std::string summary_csv(const RunResult& result);
std::string trace_csv(const std::vector<TraceRow>& trace);
std::string format_number(double v);

/// Drops the trailing timing columns of a summary CSV.
std::string strip_timing_columns(const std::string& summary_csv_text);

struct ReportRow {
  std::string config_hash;
  std::string axis;
  std::string axis_value;
  std::string estimator;
  double mae = 0.0;
  double ci95 = 0.0;
};

/// Reads summary CSVs (directories are searched recursively), deduplicating
/// by (config hash, estimator). Throws ConfigError when nothing is found or a
/// file is malformed.
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& inputs);
/// One CSV per axis: columns axis_value, estimator, mae, ci95.
std::vector<std::filesystem::path> write_report(const std::vector<ReportRow>& rows,
                                                const std::filesystem::path& out_dir);
std::string format_report_table(const std::vector<ReportRow>& rows);

}  // namespace metacv::harness

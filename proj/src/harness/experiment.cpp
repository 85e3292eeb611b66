#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "metacv/control_functionals.hpp"
#include "metacv/error.hpp"
#include "metacv/harness.hpp"
#include "metacv/seeding.hpp"

namespace metacv::harness {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return out.str();
}

fs::path fresh_directory(const fs::path& parent, const std::string& stem) {
  fs::create_directories(parent);
  fs::path dir = parent / stem;
  for (int k = 2; fs::exists(dir); ++k) dir = parent / (stem + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

fs::path make_run_directory(const ExperimentConfig& config, const std::string& hash) {
  return fresh_directory(config.output_dir, hash.substr(0, 8) + "-" + timestamp());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

Checkpoint make_checkpoint(const ExperimentConfig& config, const CVParameters& params,
                           const std::string& note) {
  Checkpoint ck;
  ck.spec = config.network;
  ck.boundary = config.boundary;
  ck.params = params;
  ck.metadata.seed = config.seed;
  ck.metadata.config_hash = train_hash(config);
  ck.metadata.created_by = std::string("metacv ") + METACV_VERSION;
  ck.metadata.note = note;
  return ck;
}

std::vector<TaskDataset> datasets(std::span<const TaskRecord> records) {
  std::vector<TaskDataset> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.data);
  return out;
}

std::vector<TaskRecord> sample(const ExperimentConfig& c, int count, std::uint64_t stream) {
  if (c.kind == TaskKind::oscillatory) {
    OscillatoryEnvironment env;
    env.dim = c.dim;
    return sample_oscillatory_tasks(env, count, c.samples_per_task, c.seed, stream);
  }
  OdeEnvironment env;
  env.grid = c.ode_grid;
  env.truth_grid = c.ode_truth_grid;
  return sample_ode_tasks(env, count, c.samples_per_task, c.seed, stream);
}

std::vector<std::uint64_t> param_bits(const Vector& v) {
  std::vector<std::uint64_t> bits;
  for (double x : v) bits.push_back(std::bit_cast<std::uint64_t>(x));
  return bits;
}

UpdateRule adaptation_rule(const ExperimentConfig& c) {
  return c.meta.inner_rule == RuleKind::gd ? UpdateRule::gd(c.meta.inner_step_size)
                                           : UpdateRule::adam(c.meta.inner_step_size);
}

TaskResult run_one(const ExperimentConfig& config, const SteinCV& cv, Estimator which,
                   const TaskRecord& task, const std::optional<TrainedMeta>& meta,
                   const std::string& meta_failure) {
  TaskResult r;
  r.estimator = which;
  r.task = task.index;
  r.truth = task.truth.value;
  const auto start = Clock::now();
  try {
    Estimate e;
    switch (which) {
      case Estimator::mc:
        e = mc_estimate(task.data.query().values);
        r.fit_ms = 0.0;
        break;
      case Estimator::ncv: {
        const CVParameters p = train_neural_cv(cv, task.data, config.neural_cv, task.seed);
        r.fit_ms = ms_since(start);
        e = cv_estimate(cv, p, task.data);
        break;
      }
      case Estimator::cf: {
        const Samples support = task.data.support();
        const auto grid = default_lengthscale_grid(support, config.cf.grid_size, config.cf.grid_low,
                                                   config.cf.grid_high);
        const double v = tune_lengthscale(support, grid, config.cf.nugget, config.boundary);
        const CFModel model = cf_fit(support, v, config.cf.nugget, config.boundary);
        r.fit_ms = ms_since(start);
        e = cf_estimate(model, task.data.query());
        break;
      }
      case Estimator::mcv: {
        if (!meta) throw NumericalError("no meta-parameter: " + meta_failure);
        const CVParameters p = adapt(cv, meta->params, task.data.support(), config.adapt_steps,
                                     adaptation_rule(config), config.meta.lambda);
        r.fit_ms = ms_since(start);
        e = cv_estimate(cv, p, task.data);
        break;
      }
    }
    if (!std::isfinite(e.value)) throw NumericalError("non-finite estimate");
    r.estimate = e.value;
    r.std_error = e.std_error;
    r.abs_error = std::abs(e.value - r.truth);
  } catch (const std::exception& ex) {
    r.ok = false;
    r.failure = ex.what();
    r.estimate = std::nan("");
    r.std_error = std::nan("");
    r.abs_error = std::nan("");
  }
  r.wall_ms = ms_since(start);
  return r;
}

std::vector<EstimatorSummary> summarize(const ExperimentConfig& config,
                                        const std::vector<TaskResult>& rows) {
  std::vector<EstimatorSummary> out;
  for (Estimator which : config.estimators) {
    EstimatorSummary s;
    s.estimator = which;
    std::vector<Estimate> estimates;
    std::vector<double> truths;
    for (const auto& r : rows) {
      if (r.estimator != which) continue;
      ++s.n_tasks;
      s.total_fit_ms += r.fit_ms;
      s.total_wall_ms += r.wall_ms;
      if (!r.ok) {
        ++s.n_failed;
        continue;
      }
      estimates.push_back({r.estimate, r.std_error, 0, 0.0});
      truths.push_back(r.truth);
    }
    if (estimates.empty()) {
      s.mae = s.ci95 = std::nan("");
    } else {
      const auto errors = task_errors(estimates, truths);
      s.mae = errors.mae;
      s.ci95 = errors.mae_ci95;
    }
    out.push_back(s);
  }
  return out;
}

void write_run_outputs(const ExperimentConfig& config, const RunResult& result,
                       const std::optional<TrainedMeta>& meta) {
  write_text(result.directory / "config.json", to_json(config).dump(2) + "\n");
  if (meta) {
    save_checkpoint(result.directory / "checkpoint.mcv",
                    make_checkpoint(config, meta->params, "meta-parameter"));
  }
  if (!result.trace.empty()) write_text(result.directory / "trace.csv", trace_csv(result.trace));
  if (!result.per_task.empty()) {
    write_text(result.directory / "per_task.csv", per_task_csv(result));
    write_text(result.directory / "summary.csv", summary_csv(result));
  }
}

void log_summary(std::ostream* log, const RunResult& r) {
  if (!log) return;
  for (const auto& s : r.summary) {
    *log << "  " << std::left << std::setw(4) << to_string(s.estimator) << " mae "
         << format_number(s.mae) << " +/- " << format_number(s.ci95) << "  failed " << s.n_failed
         << "/" << s.n_tasks << "  time " << std::fixed << std::setprecision(1)
         << s.total_wall_ms << " ms" << std::defaultfloat << "\n";
  }
  if (!r.directory.empty()) *log << "results in " << r.directory.string() << "\n";
}

}  // namespace

bool RunResult::partial() const {
  if (meta_failure) return true;
  for (const auto& s : summary) {
    if (s.n_failed > 0) return true;
  }
  return false;
}

int RunResult::exit_code() const {
  if (meta_failure) return 2;
  return partial() ? 3 : 0;
}

TaskSets generate_tasks(const ExperimentConfig& config, bool include_train) {
  TaskSets sets;
  sets.test = sample(config, config.test_tasks, streams::kTestTasks);
  if (!include_train) return sets;
  sets.train = sample(config, config.train_tasks, streams::kTrainTasks);
  std::set<std::vector<std::uint64_t>> seen;
  for (const auto& t : sets.train) seen.insert(param_bits(t.params));
  for (const auto& t : sets.test) {
    if (seen.count(param_bits(t.params))) {
      throw NumericalError("test task " + std::to_string(t.index) +
                           " duplicates a training task parameter vector");
    }
  }
  return sets;
}

SteinCV make_cv(const ExperimentConfig& config) {
  ScoreFunction score = config.kind == TaskKind::oscillatory ? ScoreFunction(uniform_score)
                                                             : ScoreFunction(gaussian_score);
  return SteinCV{config.network, config.boundary, score};
}

TrainedMeta train_meta(const ExperimentConfig& config, std::span<const TaskRecord> train,
                       std::ostream* log, const fs::path& checkpoint_dir) {
  const SteinCV cv = make_cv(config);
  const auto data = datasets(train);
  MetaTrainHooks hooks;
  const int every = std::max(1, config.meta.iterations / 10);
  if (log) {
    hooks.on_iteration = [&](const TraceRow& row) {
      if (row.iteration % every == 0 || row.iteration == config.meta.iterations) {
        *log << "meta-train " << row.iteration << "/" << config.meta.iterations << "  outer loss "
             << format_number(row.mean_outer_loss) << "  |grad| " << format_number(row.grad_norm)
             << "\n";
      }
    };
  }
  if (!checkpoint_dir.empty() && config.checkpoint_every > 0) {
    hooks.checkpoint_every = config.checkpoint_every;
    hooks.on_checkpoint = [&](int iteration, const CVParameters& p) {
      save_checkpoint(checkpoint_dir / ("checkpoint-" + std::to_string(iteration) + ".mcv"),
                      make_checkpoint(config, p, "iteration " + std::to_string(iteration)));
    };
  }
  const auto start = Clock::now();
  MetaParameter m = meta_train([&cv](std::size_t) { return cv; }, data, config.network,
                               config.meta, std::nullopt, hooks);
  return {std::move(m.params), std::move(m.trace), train_hash(config), ms_since(start)};
}

RunResult evaluate(const ExperimentConfig& config, std::span<const TaskRecord> test,
                   const std::optional<TrainedMeta>& meta, const RunOptions& options) {
  RunResult result;
  result.config_hash = config_hash(config);
  result.train_hash = meta ? meta->train_hash : train_hash(config);
  result.seed = config.seed;
  result.axis = options.axis;
  result.axis_value = options.axis_value;
  if (meta) result.trace = meta->trace;
  const std::string meta_failure = "meta-training did not produce a parameter";

  const SteinCV cv = make_cv(config);
  const std::size_t n = test.size();
  const std::size_t k = config.estimators.size();
  std::vector<TaskResult> grid(n * k);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t t = first; t < n; t += stride) {
      for (std::size_t e = 0; e < k; ++e) {
        grid[e * n + t] = run_one(config, cv, config.estimators[e], test[t], meta, meta_failure);
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, config.threads));
  if (workers > 1 && n > 1) {
    std::vector<std::future<void>> pending;
    for (std::size_t w = 0; w < workers; ++w) pending.push_back(std::async(std::launch::async, work, w, workers));
    for (auto& f : pending) f.get();
  } else {
    work(0, 1);
  }
  result.per_task = std::move(grid);
  result.summary = summarize(config, result.per_task);
  return result;
}

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const TaskSets tasks = generate_tasks(config);
  const std::string hash = config_hash(config);
  fs::path dir;
  if (options.write_outputs) {
    dir = make_run_directory(config, hash);
    write_task_bundle(dir / "train_tasks.jsonl", tasks.train);
    write_task_bundle(dir / "test_tasks.jsonl", tasks.test);
  }

  std::optional<TrainedMeta> meta;
  std::optional<std::string> failure;
  if (config.wants(Estimator::mcv)) {
    try {
      meta = train_meta(config, tasks.train, options.log, dir);
    } catch (const NumericalError& e) {
      failure = e.what();
      if (options.log) *options.log << "meta-training failed: " << e.what() << "\n";
    }
  }
  RunResult result = evaluate(config, tasks.test, meta, options);
  result.meta_failure = failure;
  result.directory = dir;
  if (options.write_outputs) write_run_outputs(config, result, meta);
  log_summary(options.log, result);
  return result;
}

RunResult run_meta_train(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const TaskSets tasks = generate_tasks(config);
  RunResult result;
  result.config_hash = config_hash(config);
  result.train_hash = train_hash(config);
  result.seed = config.seed;
  fs::path dir;
  if (options.write_outputs) {
    dir = make_run_directory(config, result.config_hash);
    write_text(dir / "config.json", to_json(config).dump(2) + "\n");
    write_task_bundle(dir / "train_tasks.jsonl", tasks.train);
  }
  const TrainedMeta meta = train_meta(config, tasks.train, options.log, dir);
  result.trace = meta.trace;
  result.directory = dir;
  if (options.write_outputs) write_run_outputs(config, result, meta);
  if (options.log && !dir.empty()) *options.log << "checkpoint in " << (dir / "checkpoint.mcv").string() << "\n";
  return result;
}

RunResult run_evaluate(const ExperimentConfig& config, const fs::path& checkpoint,
                       const RunOptions& options) {
  config.validate();
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (!(ck.spec == config.network) || ck.boundary != config.boundary) {
    throw ConfigError("checkpoint " + checkpoint.string() +
                      " does not match the network/boundary of the config");
  }
  if (options.log && ck.metadata.config_hash != train_hash(config)) {
    *options.log << "note: checkpoint was trained under a different configuration ("
                 << ck.metadata.config_hash << ")\n";
  }
  const TaskSets tasks = generate_tasks(config);
  TrainedMeta meta{ck.params, {}, ck.metadata.config_hash, 0.0};
  RunResult result = evaluate(config, tasks.test, meta, options);
  if (options.write_outputs) {
    result.directory = make_run_directory(config, result.config_hash);
    write_task_bundle(result.directory / "test_tasks.jsonl", tasks.test);
    write_run_outputs(config, result, meta);
  }
  log_summary(options.log, result);
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::N: return "N";
    case SweepAxis::L: return "L";
    case SweepAxis::B: return "B";
    case SweepAxis::I_tr: return "I_tr";
    case SweepAxis::d: return "d";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "N") return SweepAxis::N;
  if (s == "L") return SweepAxis::L;
  if (s == "B") return SweepAxis::B;
  if (s == "I_tr") return SweepAxis::I_tr;
  if (s == "d") return SweepAxis::d;
  throw ConfigError("unknown sweep axis '" + s + "' (expected N, L, B, I_tr or d)");
}

std::vector<double> parse_value_list(const std::string& csv) {
  std::vector<double> values;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("sweep value '" + item + "' is not a number");
    values.push_back(v);
  }
  if (values.empty()) throw ConfigError("sweep value list is empty");
  return values;
}

namespace {

int integral_value(SweepAxis axis, double v) {
  if (v != std::floor(v) || v < 0 || v > 1e9) {
    throw ConfigError("sweep axis " + to_string(axis) + " needs integer values, got " +
                      format_number(v));
  }
  return static_cast<int>(v);
}

ExperimentConfig apply_axis(ExperimentConfig c, SweepAxis axis, double v) {
  const int x = integral_value(axis, v);
  switch (axis) {
    case SweepAxis::N: c.samples_per_task = x; break;
    case SweepAxis::L: c.adapt_steps = x; break;
    case SweepAxis::B: c.meta.batch_size = x; break;
    case SweepAxis::I_tr: c.meta.iterations = x; break;
    case SweepAxis::d: c.dim = x; break;
  }
  c.normalize();
  c.validate();
  return c;
}

}  // namespace

std::vector<RunResult> sweep(const ExperimentConfig& config, SweepAxis axis,
                             const std::vector<double>& values, const RunOptions& options) {
  if (values.empty()) throw ConfigError("sweep value list is empty");
  std::vector<ExperimentConfig> configs;
  for (double v : values) configs.push_back(apply_axis(config, axis, v));

  ExperimentConfig base = config;
  if (options.write_outputs) {
    const fs::path dir = fresh_directory(
        config.output_dir,
        "sweep-" + to_string(axis) + "-" + config_hash(config).substr(0, 8) + "-" + timestamp());
    base.output_dir = dir.string();
    for (auto& c : configs) c.output_dir = base.output_dir;
  }

  std::vector<RunResult> results;
  if (axis != SweepAxis::L) {
    for (std::size_t i = 0; i < configs.size(); ++i) {
      RunOptions o = options;
      o.axis = to_string(axis);
      o.axis_value = std::to_string(integral_value(axis, values[i]));
      if (options.log) *options.log << "== " << o.axis << " = " << o.axis_value << "\n";
      results.push_back(run_experiment(configs[i], o));
    }
    return results;
  }

  // Adaptation steps do not change meta-training: train once, evaluate per value.
  const TaskSets tasks = generate_tasks(base);
  std::optional<TrainedMeta> meta;
  std::optional<std::string> failure;
  if (base.wants(Estimator::mcv)) {
    try {
      meta = train_meta(base, tasks.train, options.log);
    } catch (const NumericalError& e) {
      failure = e.what();
    }
  }
  for (std::size_t i = 0; i < configs.size(); ++i) {
    RunOptions o = options;
    o.axis = to_string(axis);
    o.axis_value = std::to_string(integral_value(axis, values[i]));
    if (options.log) *options.log << "== L = " << o.axis_value << "\n";
    RunResult r = evaluate(configs[i], tasks.test, meta, o);
    r.meta_failure = failure;
    if (options.write_outputs) {
      r.directory = make_run_directory(configs[i], r.config_hash);
      write_run_outputs(configs[i], r, meta);
    }
    log_summary(options.log, r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace metacv::harness

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metacv/error.hpp"
#include "metacv/harness.hpp"

namespace h = metacv::harness;

namespace {

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kNumericalAbort = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> estimators;
  std::optional<int> threads;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
  cmd->add_option("--estimators", o.estimators, "Comma-separated subset of mc,ncv,cf,mcv");
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
}

h::ExperimentConfig load(const std::string& path, const Overrides& o) {
  h::ExperimentConfig c = h::load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.estimators) c.estimators = h::parse_estimator_list(*o.estimators);
  if (o.threads) c.threads = *o.threads;
  c.normalize();
  c.validate();
  return c;
}

int worst(const std::vector<h::RunResult>& runs) {
  int code = kOk;
  for (const auto& r : runs) code = std::max(code, r.exit_code());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned Stein control variates: training, evaluation and reporting"};
  app.set_version_flag("--version", std::string(METACV_VERSION));
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint;
  std::string axis;
  std::string values;
  std::vector<std::string> report_inputs;
  std::string report_out = "report";
  Overrides o;

  auto* train_cmd = app.add_subcommand("meta-train", "Meta-train on the training tasks and save a checkpoint");
  train_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  add_overrides(train_cmd, o);

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate all estimators from a saved meta-parameter");
  eval_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", checkpoint, "Meta-parameter checkpoint")->required()->check(CLI::ExistingFile);
  add_overrides(eval_cmd, o);

  auto* run_cmd = app.add_subcommand("run", "Meta-train, then evaluate on the test tasks");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  add_overrides(run_cmd, o);

  auto* sweep_cmd = app.add_subcommand("sweep", "Run one experiment per value of an axis");
  sweep_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--axis", axis, "One of N, L, B, I_tr, d")->required();
  sweep_cmd->add_option("--values", values, "Comma-separated values, e.g. 6,10,20")->required();
  add_overrides(sweep_cmd, o);

  auto* report_cmd = app.add_subcommand("report", "Aggregate summary CSVs into plot data");
  report_cmd->add_option("inputs", report_inputs, "Run directories or summary.csv files")->required();
  report_cmd->add_option("--out", report_out, "Directory for report_<axis>.csv files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  h::RunOptions options;
  options.log = &std::cerr;
  try {
    if (*report_cmd) {
      std::vector<std::filesystem::path> inputs(report_inputs.begin(), report_inputs.end());
      const auto rows = h::collect_report(inputs);
      const auto files = h::write_report(rows, report_out);
      std::cout << h::format_report_table(rows);
      for (const auto& f : files) std::cerr << "wrote " << f.string() << "\n";
      return kOk;
    }
    const h::ExperimentConfig config = load(config_path, o);
    if (*train_cmd) return h::run_meta_train(config, options).exit_code();
    if (*eval_cmd) return h::run_evaluate(config, checkpoint, options).exit_code();
    if (*run_cmd) return h::run_experiment(config, options).exit_code();
    if (*sweep_cmd) {
      return worst(h::sweep(config, h::parse_sweep_axis(axis), h::parse_value_list(values), options));
    }
  } catch (const metacv::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const metacv::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const metacv::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  }
  return kOk;
}

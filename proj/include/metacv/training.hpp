#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metacv/autodiff.hpp"
#include "metacv/estimators.hpp"
#include "metacv/network.hpp"
#include "metacv/stein.hpp"

namespace metacv {

enum class RuleKind { gd, adam };
enum class GradMode { exact, first_order };

std::string to_string(RuleKind k);
std::string to_string(GradMode m);
RuleKind parse_rule(const std::string& s);
GradMode parse_grad_mode(const std::string& s);

/// A gradient-based update rule with its (possibly empty) optimizer state.
struct UpdateRule {
  RuleKind kind = RuleKind::gd;
  double step_size = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Adam state.
  Vector first_moment;
  Vector second_moment;
  std::int64_t steps_taken = 0;

  static UpdateRule gd(double step_size);
  static UpdateRule adam(double step_size);

  /// Clears optimizer state.
  void reset();
  /// Applies one step in place and advances the state.
  void apply(Vector& params, const Vector& grad);
};

/// Functional form: (new parameters, new rule state).
std::pair<Vector, UpdateRule> update_step(UpdateRule rule, const Vector& params, const Vector& grad);

/// Meta step sizes eta_i for i = 1..I_tr: constant, or multiplied by
/// `decay_factor` every `decay_every` iterations.
struct StepSchedule {
  double initial = 0.002;
  int decay_every = 0;
  double decay_factor = 1.0;

  double at(int iteration) const;
};

struct MetaConfig {
  int inner_steps = 1;            // L
  double inner_step_size = 0.01;  // alpha
  StepSchedule meta_step;         // eta_1..eta_I
  int batch_size = 5;             // B
  int iterations = 2000;          // I_tr
  double lambda = 0.0;
  GradMode grad_mode = GradMode::exact;
  RuleKind inner_rule = RuleKind::gd;
  RuleKind outer_rule = RuleKind::adam;
  double init_sigma = 0.01;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct TraceRow {
  int iteration = 0;
  double mean_outer_loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct MetaParameter {
  CVParameters params;
  std::vector<TraceRow> trace;
};

struct MetaTrainHooks {
  int checkpoint_every = 0;
  std::function<void(int iteration, const CVParameters&)> on_checkpoint;
  std::function<void(const TraceRow&)> on_iteration;
};

/// Builds the control variate for training task `index`.
using CvFactory = std::function<SteinCV(std::size_t index)>;

/// Meta-gradient contribution of one task: inner steps on S, outer loss on Q.
ad::MetaGradient task_meta_gradient(const SteinCV& cv, const TaskDataset& task,
                                    const Vector& params, const MetaConfig& config);

/// Learns the shared meta-parameter over `tasks`. The initial parameter has
/// gamma0 = 0 and weights N(0, init_sigma^2) unless `initial` is given.
MetaParameter meta_train(const CvFactory& cv_factory, std::span<const TaskDataset> tasks,
                         const NetworkSpec& spec, const MetaConfig& config,
                         const std::optional<CVParameters>& initial = std::nullopt,
                         const MetaTrainHooks& hooks = {});

/// Task-specific parameters: `steps` updates of the support loss starting at
/// the meta-parameter, with fresh optimizer state.
CVParameters adapt(const SteinCV& cv, const CVParameters& meta, const Samples& support, int steps,
                   UpdateRule rule, double lambda);

struct NeuralCvSettings {
  int epochs = 20;
  int batch_size = 5;
  UpdateRule rule = UpdateRule::adam(0.002);
  double lambda = 0.0;
  double init_sigma = 0.01;
  std::optional<double> gamma0_init;  // defaults to the support mean of f
};

/// Per-task Neural-CV: shuffled mini-batch training on the support set only.
CVParameters train_neural_cv(const SteinCV& cv, const TaskDataset& data,
                             const NeuralCvSettings& settings, std::uint64_t seed);

}  // namespace metacv

#include "metacv/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "metacv/error.hpp"
#include "metacv/seeding.hpp"

namespace metacv {

std::string to_string(RuleKind k) { return k == RuleKind::gd ? "gd" : "adam"; }
std::string to_string(GradMode m) { return m == GradMode::exact ? "exact" : "first_order"; }

RuleKind parse_rule(const std::string& s) {
  if (s == "gd") return RuleKind::gd;
  if (s == "adam") return RuleKind::adam;
  throw ConfigError("unknown update rule '" + s + "'");
}

GradMode parse_grad_mode(const std::string& s) {
  if (s == "exact") return GradMode::exact;
  if (s == "first_order") return GradMode::first_order;
  throw ConfigError("unknown gradient mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Update rules

UpdateRule UpdateRule::gd(double step_size) {
  UpdateRule r;
  r.kind = RuleKind::gd;
  r.step_size = step_size;
  return r;
}

UpdateRule UpdateRule::adam(double step_size) {
  UpdateRule r;
  r.kind = RuleKind::adam;
  r.step_size = step_size;
  return r;
}

void UpdateRule::reset() {
  first_moment.resize(0);
  second_moment.resize(0);
  steps_taken = 0;
}

void UpdateRule::apply(Vector& params, const Vector& grad) {
  if (params.size() != grad.size()) {
    throw DimensionError("update: parameter length " + std::to_string(params.size()) +
                         " vs gradient length " + std::to_string(grad.size()));
  }
  if (!(step_size > 0.0)) throw ConfigError("update: step size must be positive");
  if (kind == RuleKind::gd) {
    params -= step_size * grad;
    return;
  }
  if (steps_taken == 0) {
    first_moment = Vector::Zero(params.size());
    second_moment = Vector::Zero(params.size());
  } else if (first_moment.size() != params.size()) {
    throw DimensionError("update: Adam state does not match parameter length");
  }
  ++steps_taken;
  first_moment = beta1 * first_moment + (1.0 - beta1) * grad;
  second_moment = beta2 * second_moment + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_taken));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_taken));
  params.array() -= step_size * (first_moment.array() / c1) /
                    ((second_moment.array() / c2).sqrt() + epsilon);
}

std::pair<Vector, UpdateRule> update_step(UpdateRule rule, const Vector& params, const Vector& grad) {
  Vector next = params;
  rule.apply(next, grad);
  return {std::move(next), std::move(rule)};
}

double StepSchedule::at(int iteration) const {
  if (decay_every <= 0) return initial;
  const int decays = (iteration - 1) / decay_every;
  return initial * std::pow(decay_factor, decays);
}

void MetaConfig::validate() const {
  if (inner_steps < 0) throw ConfigError("meta: inner_steps (L) must be >= 0");
  if (!(inner_step_size > 0.0)) throw ConfigError("meta: inner step size alpha must be > 0");
  if (!(meta_step.initial > 0.0)) throw ConfigError("meta: meta step size eta must be > 0");
  if (meta_step.decay_every < 0 || !(meta_step.decay_factor > 0.0)) {
    throw ConfigError("meta: invalid step size decay");
  }
  if (batch_size < 1) throw ConfigError("meta: batch size B must be >= 1");
  if (iterations < 1) throw ConfigError("meta: iterations I_tr must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("meta: lambda must be >= 0");
  if (!(init_sigma >= 0.0)) throw ConfigError("meta: init_sigma must be >= 0");
  if (threads < 1) throw ConfigError("meta: threads must be >= 1");
  if (grad_mode == GradMode::exact && inner_rule != RuleKind::gd) {
    throw ConfigError(
        "meta: exact meta-gradients are only defined for gradient-descent inner updates; "
        "use grad_mode = first_order with an Adam inner rule");
  }
}

// ---------------------------------------------------------------------------
// Meta-training

ad::MetaGradient task_meta_gradient(const SteinCV& cv, const TaskDataset& task,
                                    const Vector& params, const MetaConfig& config) {
  const Samples support = task.support();
  const Samples query = task.query();
  if (support.size() == 0 || query.size() == 0) {
    throw DimensionError("meta-training task needs non-empty support and query sets");
  }
  const ad::ScalarProgram inner = loss_program(cv, support, config.lambda);
  const ad::ScalarProgram outer = loss_program(cv, query, config.lambda);

  if (config.grad_mode == GradMode::exact) {
    if (config.inner_rule != RuleKind::gd) {
      throw ConfigError("exact meta-gradient requested with a stateful inner optimizer");
    }
    return ad::meta_gradient_exact(inner, outer, params, config.inner_step_size, config.inner_steps);
  }
  if (config.inner_rule == RuleKind::gd) {
    return ad::meta_gradient_first_order(inner, outer, params, config.inner_step_size,
                                         config.inner_steps);
  }
  UpdateRule rule = UpdateRule::adam(config.inner_step_size);
  Vector current = params;
  for (int j = 0; j < config.inner_steps; ++j) rule.apply(current, ad::grad_params(inner, current));
  ad::ValueAndGrad o = ad::value_and_grad(outer, current);
  return {o.gradient, o.value, current};
}

MetaParameter meta_train(const CvFactory& cv_factory, std::span<const TaskDataset> tasks,
                         const NetworkSpec& spec, const MetaConfig& config,
                         const std::optional<CVParameters>& initial, const MetaTrainHooks& hooks) {
  config.validate();
  spec.validate();
  if (tasks.empty()) throw ConfigError("meta_train: no training tasks");

  MetaParameter result;
  result.params = initial ? *initial
                          : init_params(spec, config.init_sigma, 0.0,
                                        derive_seed(config.seed, streams::kMetaInit, 0));
  if (result.params.weights.size() != param_count(spec)) {
    throw DimensionError("meta_train: initial parameter length does not match the network");
  }
  Vector theta = result.params.flat();

  UpdateRule outer = config.outer_rule == RuleKind::gd ? UpdateRule::gd(config.meta_step.initial)
                                                       : UpdateRule::adam(config.meta_step.initial);
  std::mt19937_64 rng(derive_seed(config.seed, streams::kMetaBatches, 0));
  std::uniform_int_distribution<std::size_t> pick(0, tasks.size() - 1);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> indices(batch);
  std::vector<ad::MetaGradient> grads(batch);
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  const auto started = std::chrono::steady_clock::now();
  for (int i = 1; i <= config.iterations; ++i) {
    for (auto& t : indices) t = pick(rng);
    try {
      auto work = [&](std::size_t b) {
        grads[b] = task_meta_gradient(cv_factory(indices[b]), tasks[indices[b]], theta, config);
      };
      if (config.threads > 1 && batch > 1) {
        std::vector<std::future<void>> pending;
        for (std::size_t b = 0; b < batch; ++b) pending.push_back(std::async(std::launch::async, work, b));
        for (auto& f : pending) f.get();
      } else {
        for (std::size_t b = 0; b < batch; ++b) work(b);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("meta-training aborted at iteration " + std::to_string(i) + ": " +
                           e.what());
    }

    Vector mean_grad = Vector::Zero(theta.size());
    double mean_loss = 0.0;
    for (const auto& g : grads) {
      mean_grad += g.gradient;
      mean_loss += g.outer_loss;
    }
    mean_grad /= static_cast<double>(batch);
    mean_loss /= static_cast<double>(batch);
    if (!mean_grad.allFinite() || !std::isfinite(mean_loss)) {
      throw NumericalError("meta-training aborted at iteration " + std::to_string(i) +
                           ": non-finite meta-gradient or loss");
    }

    outer.step_size = config.meta_step.at(i);
    outer.apply(theta, mean_grad);

    TraceRow row;
    row.iteration = i;
    row.mean_outer_loss = mean_loss;
    row.grad_norm = mean_grad.norm();
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                      .count();
    result.trace.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(row);
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && i % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(i, CVParameters::from_flat(theta));
    }
  }
  result.params = CVParameters::from_flat(theta);
  return result;
}

CVParameters adapt(const SteinCV& cv, const CVParameters& meta, const Samples& support, int steps,
                   UpdateRule rule, double lambda) {
  if (support.size() == 0) throw DimensionError("adapt: empty support set");
  if (steps < 0) throw ConfigError("adapt: negative step count");
  if (steps == 0) return meta;
  rule.reset();
  const ad::ScalarProgram loss = loss_program(cv, support, lambda);
  Vector theta = meta.flat();
  for (int j = 0; j < steps; ++j) rule.apply(theta, ad::grad_params(loss, theta));
  return CVParameters::from_flat(theta);
}

// ---------------------------------------------------------------------------
// Per-task Neural-CV

CVParameters train_neural_cv(const SteinCV& cv, const TaskDataset& data,
                             const NeuralCvSettings& settings, std::uint64_t seed) {
  const Samples support = data.support();
  if (support.size() == 0) throw DimensionError("train_neural_cv: empty support set");
  if (settings.epochs < 0) throw ConfigError("train_neural_cv: negative epoch count");
  if (settings.batch_size < 1) throw ConfigError("train_neural_cv: batch size must be >= 1");

  const double gamma0 = settings.gamma0_init.value_or(support.values.mean());
  CVParameters init =
      init_params(cv.spec, settings.init_sigma, gamma0, derive_seed(seed, streams::kNeuralCv, 0));
  if (settings.epochs == 0) return init;

  UpdateRule rule = settings.rule;
  rule.reset();
  std::mt19937_64 rng(derive_seed(seed, streams::kNeuralCv, 1));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(support.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Vector theta = init.flat();
  const auto batch = static_cast<std::size_t>(settings.batch_size);
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t count = std::min(batch, order.size() - begin);
      const Samples mini = support.select(std::span<const Eigen::Index>(order.data() + begin, count));
      rule.apply(theta, ad::grad_params(loss_program(cv, mini, settings.lambda), theta));
    }
  }
  return CVParameters::from_flat(theta);
}

}  // namespace metacv

#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "metacv/error.hpp"
#include "metacv/harness.hpp"

namespace metacv::harness {

using nlohmann::json;

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::mc: return "mc";
    case Estimator::ncv: return "ncv";
    case Estimator::cf: return "cf";
    case Estimator::mcv: return "mcv";
  }
  return "?";
}

Estimator parse_estimator(const std::string& s) {
  if (s == "mc") return Estimator::mc;
  if (s == "ncv") return Estimator::ncv;
  if (s == "cf") return Estimator::cf;
  if (s == "mcv") return Estimator::mcv;
  throw ConfigError("unknown estimator '" + s + "' (expected mc, ncv, cf or mcv)");
}

std::vector<Estimator> parse_estimator_list(const std::string& csv) {
  std::set<Estimator> chosen;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) chosen.insert(parse_estimator(item));
  }
  if (chosen.empty()) throw ConfigError("estimator set is empty");
  return {chosen.begin(), chosen.end()};
}

// ---------------------------------------------------------------------------
// Strict JSON reader

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "/" : path_, "expected an object");
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) fail(at(key), "missing required key");
    return *it;
  }

  std::int64_t integer(const std::string& key, std::int64_t min,
                       std::int64_t max = std::numeric_limits<std::int64_t>::max()) {
    const json& v = raw(key);
    if (!v.is_number_integer()) fail(at(key), "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < min || x > max) {
      fail(at(key), "value " + std::to_string(x) + " outside [" + std::to_string(min) + ", " +
                        std::to_string(max) + "]");
    }
    return x;
  }

  std::uint64_t unsigned_integer(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail(at(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    return v.get<double>();
  }

  double positive(const std::string& key) {
    const double x = number(key);
    if (!(x > 0.0)) fail(at(key), "must be > 0");
    return x;
  }

  double non_negative(const std::string& key) {
    const double x = number(key);
    if (!(x >= 0.0)) fail(at(key), "must be >= 0");
    return x;
  }

  std::optional<double> nullable_number(const std::string& key) {
    const json& v = raw(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) fail(at(key), "expected a number or null");
    return v.get<double>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  // Runs `parse` on a string value, re-raising errors with the location.
  template <class F>
  auto choice(const std::string& key, F parse) {
    const std::string s = string(key);
    try {
      return parse(s);
    } catch (const ConfigError& e) {
      fail(at(key), e.what());
    }
  }

  Section child(const std::string& key) { return Section(raw(key), at(key)); }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
    }
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config " + where + ": " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::normalize() {
  network.input_dim = dim;
  network.output_dim = network.output_mode == OutputMode::replicate_scalar ? 1 : dim;
  meta.seed = seed;
  meta.threads = threads;
}

void ExperimentConfig::validate() const {
  if (kind == TaskKind::ode && dim != 1) throw ConfigError("config: the ode experiment requires dim = 1");
  if (kind == TaskKind::ode && boundary != BoundaryCorrection::none) {
    throw ConfigError("config: the ode experiment has unbounded support; use boundary = none");
  }
  if (kind == TaskKind::oscillatory && boundary != BoundaryCorrection::unit_cube_product) {
    throw ConfigError("config: the oscillatory experiment requires boundary = unit_cube_product");
  }
  if (samples_per_task < 2) throw ConfigError("config: samples_per_task must be >= 2");
  if (estimators.empty()) throw ConfigError("config: estimator set is empty");
  network.validate();
  meta.validate();
  if (adapt_steps < 0) throw ConfigError("config: adaptation steps must be >= 0");
}

bool ExperimentConfig::wants(Estimator e) const {
  for (auto x : estimators) {
    if (x == e) return true;
  }
  return false;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  const auto version = root.integer("schema_version", 0);
  if (version != kConfigSchemaVersion) {
    Section::fail("/schema_version", "unsupported schema version " + std::to_string(version));
  }

  Section ex = root.child("experiment");
  c.kind = ex.choice("kind", parse_task_kind);
  c.dim = static_cast<int>(ex.integer("dim", 1, 64));
  c.train_tasks = static_cast<int>(ex.integer("train_tasks", 1, 10'000'000));
  c.test_tasks = static_cast<int>(ex.integer("test_tasks", 1, 10'000'000));
  c.samples_per_task = static_cast<int>(ex.integer("samples_per_task", 2, 1'000'000));
  c.ode_grid = static_cast<int>(ex.integer("ode_grid", 2, 1 << 24));
  c.ode_truth_grid = static_cast<int>(ex.integer("ode_truth_grid", 4, 1 << 24));
  ex.finish();

  Section net = root.child("network");
  const json& widths = net.raw("hidden_widths");
  if (!widths.is_array() || widths.empty()) {
    Section::fail("/network/hidden_widths", "expected a non-empty array of positive integers");
  }
  c.network.hidden_widths.clear();
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (!widths[i].is_number_integer() || widths[i].get<std::int64_t>() < 1) {
      Section::fail("/network/hidden_widths/" + std::to_string(i), "expected a positive integer");
    }
    c.network.hidden_widths.push_back(widths[i].get<int>());
  }
  c.network.activation = net.choice("activation", parse_activation);
  c.network.output_mode = net.choice("output_mode", parse_output_mode);
  c.boundary = net.choice("boundary", parse_boundary);
  net.finish();

  Section meta = root.child("meta");
  c.meta.inner_steps = static_cast<int>(meta.integer("inner_steps", 0, 1000));
  c.meta.inner_step_size = meta.positive("inner_step_size");
  c.meta.meta_step.initial = meta.positive("meta_step_size");
  c.meta.meta_step.decay_every = static_cast<int>(meta.integer("meta_step_decay_every", 0));
  c.meta.meta_step.decay_factor = meta.positive("meta_step_decay_factor");
  c.meta.batch_size = static_cast<int>(meta.integer("batch_size", 1, 1'000'000));
  c.meta.iterations = static_cast<int>(meta.integer("iterations", 1, 100'000'000));
  c.meta.lambda = meta.non_negative("lambda");
  c.meta.grad_mode = meta.choice("grad_mode", parse_grad_mode);
  c.meta.inner_rule = meta.choice("inner_rule", parse_rule);
  c.meta.outer_rule = meta.choice("outer_rule", parse_rule);
  c.meta.init_sigma = meta.non_negative("init_sigma");
  c.checkpoint_every = static_cast<int>(meta.integer("checkpoint_every", 0));
  meta.finish();

  Section adaptation = root.child("adaptation");
  c.adapt_steps = static_cast<int>(adaptation.integer("steps", 0, 1000));
  adaptation.finish();

  Section ncv = root.child("neural_cv");
  c.neural_cv.epochs = static_cast<int>(ncv.integer("epochs", 0, 1'000'000));
  c.neural_cv.batch_size = static_cast<int>(ncv.integer("batch_size", 1, 1'000'000));
  const RuleKind ncv_rule = ncv.choice("rule", parse_rule);
  const double ncv_step = ncv.positive("step_size");
  c.neural_cv.rule = ncv_rule == RuleKind::gd ? UpdateRule::gd(ncv_step) : UpdateRule::adam(ncv_step);
  c.neural_cv.lambda = ncv.non_negative("lambda");
  c.neural_cv.init_sigma = ncv.non_negative("init_sigma");
  ncv.finish();

  Section cf = root.child("cf");
  c.cf.grid_size = static_cast<int>(cf.integer("grid_size", 1, 10'000));
  c.cf.grid_low = cf.positive("grid_low");
  c.cf.grid_high = cf.positive("grid_high");
  c.cf.nugget = cf.nullable_number("nugget");
  if (c.cf.nugget && !(*c.cf.nugget >= 0.0)) Section::fail("/cf/nugget", "must be >= 0 or null");
  cf.finish();

  const json& est = root.raw("estimators");
  if (!est.is_array() || est.empty()) {
    Section::fail("/estimators", "expected a non-empty array of estimator names");
  }
  std::set<Estimator> chosen;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (!est[i].is_string()) Section::fail("/estimators/" + std::to_string(i), "expected a string");
    try {
      chosen.insert(parse_estimator(est[i].get<std::string>()));
    } catch (const ConfigError& e) {
      Section::fail("/estimators/" + std::to_string(i), e.what());
    }
  }
  c.estimators.assign(chosen.begin(), chosen.end());

  c.output_dir = root.string("output_dir");
  c.seed = root.unsigned_integer("seed");
  c.threads = static_cast<int>(root.integer("threads", 1, 1024));
  root.finish();

  c.normalize();
  c.validate();
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return parse_config(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json to_json(const ExperimentConfig& c) {
  std::vector<std::string> est;
  for (auto e : c.estimators) est.push_back(to_string(e));
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"experiment",
       {{"kind", to_string(c.kind)},
        {"dim", c.dim},
        {"train_tasks", c.train_tasks},
        {"test_tasks", c.test_tasks},
        {"samples_per_task", c.samples_per_task},
        {"ode_grid", c.ode_grid},
        {"ode_truth_grid", c.ode_truth_grid}}},
      {"network",
       {{"hidden_widths", c.network.hidden_widths},
        {"activation", to_string(c.network.activation)},
        {"output_mode", to_string(c.network.output_mode)},
        {"boundary", to_string(c.boundary)}}},
      {"meta",
       {{"inner_steps", c.meta.inner_steps},
        {"inner_step_size", c.meta.inner_step_size},
        {"meta_step_size", c.meta.meta_step.initial},
        {"meta_step_decay_every", c.meta.meta_step.decay_every},
        {"meta_step_decay_factor", c.meta.meta_step.decay_factor},
        {"batch_size", c.meta.batch_size},
        {"iterations", c.meta.iterations},
        {"lambda", c.meta.lambda},
        {"grad_mode", to_string(c.meta.grad_mode)},
        {"inner_rule", to_string(c.meta.inner_rule)},
        {"outer_rule", to_string(c.meta.outer_rule)},
        {"init_sigma", c.meta.init_sigma},
        {"checkpoint_every", c.checkpoint_every}}},
      {"adaptation", {{"steps", c.adapt_steps}}},
      {"neural_cv",
       {{"epochs", c.neural_cv.epochs},
        {"batch_size", c.neural_cv.batch_size},
        {"rule", to_string(c.neural_cv.rule.kind)},
        {"step_size", c.neural_cv.rule.step_size},
        {"lambda", c.neural_cv.lambda},
        {"init_sigma", c.neural_cv.init_sigma}}},
      {"cf",
       {{"grid_size", c.cf.grid_size},
        {"grid_low", c.cf.grid_low},
        {"grid_high", c.cf.grid_high},
        {"nugget", c.cf.nugget ? json(*c.cf.nugget) : json(nullptr)}}},
      {"estimators", est},
      {"output_dir", c.output_dir},
      {"seed", c.seed},
      {"threads", c.threads},
  };
}

std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("threads");
  j.erase("estimators");
  return fnv1a_hex(j.dump());
}

std::string train_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  json t{{"schema_version", j["schema_version"]},
         {"network", j["network"]},
         {"meta", j["meta"]},
         {"seed", j["seed"]}};
  t["experiment"] = j["experiment"];
  t["experiment"].erase("test_tasks");
  t["meta"].erase("checkpoint_every");
  return fnv1a_hex(t.dump());
}

}  // namespace metacv::harness

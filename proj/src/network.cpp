#include "metacv/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "metacv/error.hpp"

namespace metacv {

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'C', 'V', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw ConfigError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 8;
  return v;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::sigmoid ? "sigmoid" : "tanh"; }

std::string to_string(OutputMode m) {
  return m == OutputMode::replicate_scalar ? "replicate_scalar" : "direct";
}

std::string to_string(BoundaryCorrection b) {
  return b == BoundaryCorrection::none ? "none" : "unit_cube_product";
}

Activation parse_activation(const std::string& s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

OutputMode parse_output_mode(const std::string& s) {
  if (s == "replicate_scalar") return OutputMode::replicate_scalar;
  if (s == "direct") return OutputMode::direct;
  throw ConfigError("unknown output mode '" + s + "'");
}

BoundaryCorrection parse_boundary(const std::string& s) {
  if (s == "none") return BoundaryCorrection::none;
  if (s == "unit_cube_product") return BoundaryCorrection::unit_cube_product;
  throw ConfigError("unknown boundary correction '" + s + "'");
}

void NetworkSpec::validate() const {
  if (input_dim < 1) throw ConfigError("network input_dim must be positive");
  if (output_dim < 1) throw ConfigError("network output_dim must be positive");
  if (hidden_widths.empty()) throw ConfigError("network needs at least one hidden layer");
  for (int w : hidden_widths) {
    if (w < 1) throw ConfigError("hidden layer widths must be positive");
  }
  if (output_mode == OutputMode::replicate_scalar && output_dim != 1) {
    throw ConfigError("replicate_scalar output mode requires output_dim = 1");
  }
  if (output_mode == OutputMode::direct && output_dim != input_dim) {
    throw ConfigError("direct output mode requires output_dim = input_dim");
  }
}

std::int64_t param_count(const NetworkSpec& spec) {
  std::int64_t total = 0;
  std::int64_t in = spec.input_dim;
  for (int width : spec.hidden_widths) {
    total += in * width + width;
    in = width;
  }
  total += in * spec.output_dim + spec.output_dim;
  return total;
}

Vector CVParameters::flat() const {
  Vector out(weights.size() + 1);
  out[0] = gamma0;
  out.tail(weights.size()) = weights;
  return out;
}

CVParameters CVParameters::from_flat(const Vector& flat) {
  if (flat.size() < 1) throw DimensionError("flat parameter vector is empty");
  return {flat[0], flat.tail(flat.size() - 1)};
}

bool CVParameters::operator==(const CVParameters& other) const {
  if (weights.size() != other.weights.size()) return false;
  if (std::bit_cast<std::uint64_t>(gamma0) != std::bit_cast<std::uint64_t>(other.gamma0)) {
    return false;
  }
  return std::memcmp(weights.data(), other.weights.data(),
                     static_cast<std::size_t>(weights.size()) * sizeof(double)) == 0;
}

CVParameters init_params(const NetworkSpec& spec, double sigma, double gamma0, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("init_params: sigma must be non-negative");
  spec.validate();
  CVParameters params{gamma0, Vector::Zero(param_count(spec))};
  if (sigma == 0.0) return params;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index i = 0; i < params.weights.size(); ++i) params.weights[i] = normal(rng);
  return params;
}

ad::Jet network_forward(const NetworkSpec& spec, const ad::Var& params, ad::Index offset,
                        const ad::Jet& inputs) {
  const ad::Index m = inputs.value.rows();
  if (inputs.value.cols() != spec.input_dim) {
    throw DimensionError("network input has " + std::to_string(inputs.value.cols()) +
                         " columns, expected " + std::to_string(spec.input_dim));
  }
  if (params.cols() != 1 || offset + param_count(spec) > params.rows()) {
    throw DimensionError("network parameter vector too short");
  }
  const ad::Var ones = ad::Var::constant(Matrix::Ones(m, 1));

  ad::Jet h = inputs;
  ad::Index in = spec.input_dim;
  ad::Index cursor = offset;
  auto dense = [&](ad::Index out) {
    ad::Var w = ad::block(params, cursor, out, in);
    cursor += out * in;
    ad::Var b = ad::block(params, cursor, out, 1);
    cursor += out;
    in = out;
    return ad::add(ad::matmul_nt(h, ad::Jet(w)), ad::Jet(ad::matmul_nt(ones, b)));
  };

  for (int width : spec.hidden_widths) {
    ad::Jet z = dense(width);
    h = spec.activation == Activation::sigmoid ? ad::sigmoid(z) : ad::tanh(z);
  }
  return dense(spec.output_dim);
}

BoundaryFactor boundary_factor(BoundaryCorrection bc, const Matrix& points) {
  const auto m = points.rows();
  const auto d = points.cols();
  BoundaryFactor f{Matrix::Ones(m, 1), Matrix::Zero(m, d)};
  if (bc == BoundaryCorrection::none) return f;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double x = points(i, j);
      f.value(i, 0) *= x * (1.0 - x);
      double partial = 1.0 - 2.0 * x;
      for (Eigen::Index k = 0; k < d; ++k) {
        if (k != j) partial *= points(i, k) * (1.0 - points(i, k));
      }
      f.gradient(i, j) = partial;
    }
  }
  return f;
}

ad::FieldProgram field_program(const NetworkSpec& spec, BoundaryCorrection bc) {
  spec.validate();
  return [spec, bc](const ad::Var& weights, const ad::Jet& x) {
    const ad::Index d = spec.input_dim;
    if (x.value.rows() != 1 || x.value.cols() != d) {
      throw DimensionError("field program expects a 1 x " + std::to_string(d) + " input");
    }
    ad::Jet out = network_forward(spec, weights, 0, x);
    if (spec.output_mode == OutputMode::replicate_scalar) {
      out = ad::matmul(out, ad::Jet(ad::Var::constant(Matrix::Ones(1, d))));
    }
    if (bc == BoundaryCorrection::none) return out;

    // delta(x) as a jet; its tangent in direction k is d delta / d x_k, chained
    // through whatever tangent x carries.
    const BoundaryFactor f = boundary_factor(bc, x.value.value());
    ad::Jet delta(ad::Var::constant(f.value));
    delta.tangents.resize(x.width());
    for (std::size_t k = 0; k < x.width(); ++k) {
      if (!x.tangents[k]) continue;
      const double rate = (f.gradient * x.tangents[k].value().transpose())(0, 0);
      delta.tangents[k] = ad::Var::constant(rate);
    }
    return ad::cmul(out, ad::broadcast(delta, 1, d));
  };
}

Vector vector_field(const NetworkSpec& spec, const Vector& weights, BoundaryCorrection bc,
                    const Vector& x) {
  if (weights.size() != param_count(spec)) {
    throw DimensionError("vector_field: expected " + std::to_string(param_count(spec)) +
                         " weights, got " + std::to_string(weights.size()));
  }
  if (x.size() != spec.input_dim) throw DimensionError("vector_field: input dimension mismatch");
  ad::NoGradGuard no_grad;
  ad::Jet u = field_program(spec, bc)(ad::Var::constant(Matrix(weights)),
                                      ad::Jet(ad::Var::constant(Matrix(x.transpose()))));
  return u.value.value().row(0).transpose();
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const NetworkSpec& spec = checkpoint.spec;
  nlohmann::json header = {
      {"format_version", 1},
      {"network",
       {{"input_dim", spec.input_dim},
        {"hidden_widths", spec.hidden_widths},
        {"output_dim", spec.output_dim},
        {"activation", to_string(spec.activation)},
        {"output_mode", to_string(spec.output_mode)}}},
      {"boundary", to_string(checkpoint.boundary)},
      {"metadata",
       {{"seed", checkpoint.metadata.seed},
        {"config_hash", checkpoint.metadata.config_hash},
        {"created_by", checkpoint.metadata.created_by},
        {"note", checkpoint.metadata.note}}},
  };
  const std::string text = header.dump();
  const Vector flat = checkpoint.params.flat();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u64(out, text.size());
  out += text;
  put_u64(out, static_cast<std::uint64_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(flat[i]));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw ConfigError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const std::uint64_t header_len = get_u64(bytes, pos);
  if (pos + header_len > bytes.size()) throw ConfigError("checkpoint truncated");
  const auto header = nlohmann::json::parse(bytes.substr(pos, header_len));
  pos += header_len;

  Checkpoint c;
  try {
    if (header.at("format_version").get<int>() != 1) {
      throw ConfigError("unsupported checkpoint format version");
    }
    const auto& net = header.at("network");
    c.spec.input_dim = net.at("input_dim").get<int>();
    c.spec.hidden_widths = net.at("hidden_widths").get<std::vector<int>>();
    c.spec.output_dim = net.at("output_dim").get<int>();
    c.spec.activation = parse_activation(net.at("activation").get<std::string>());
    c.spec.output_mode = parse_output_mode(net.at("output_mode").get<std::string>());
    c.boundary = parse_boundary(header.at("boundary").get<std::string>());
    const auto& meta = header.at("metadata");
    c.metadata.seed = meta.at("seed").get<std::uint64_t>();
    c.metadata.config_hash = meta.at("config_hash").get<std::string>();
    c.metadata.created_by = meta.at("created_by").get<std::string>();
    c.metadata.note = meta.at("note").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  c.spec.validate();

  const std::uint64_t count = get_u64(bytes, pos);
  if (count != static_cast<std::uint64_t>(param_count(c.spec) + 1)) {
    throw ConfigError("checkpoint parameter count does not match its network spec");
  }
  Vector flat(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    flat[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_u64(bytes, pos));
  }
  if (pos != bytes.size()) throw ConfigError("trailing bytes after checkpoint payload");
  c.params = CVParameters::from_flat(flat);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_checkpoint(buffer.str());
}

}  // namespace metacv

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metacv/autodiff.hpp"

namespace metacv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { sigmoid, tanh };
enum class OutputMode {
  replicate_scalar,  // one network output, broadcast to all d components
  direct,            // output_dim == input_dim
};
enum class BoundaryCorrection {
  none,
  unit_cube_product,  // multiply the field by prod_j x_j (1 - x_j)
};

std::string to_string(Activation a);
std::string to_string(OutputMode m);
std::string to_string(BoundaryCorrection b);
Activation parse_activation(const std::string& s);
OutputMode parse_output_mode(const std::string& s);
BoundaryCorrection parse_boundary(const std::string& s);

/// Fully connected architecture of the vector field network.
struct NetworkSpec {
  int input_dim = 1;
  std::vector<int> hidden_widths{80, 80};
  int output_dim = 1;
  Activation activation = Activation::sigmoid;
  OutputMode output_mode = OutputMode::replicate_scalar;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// Number of network weights and biases (excludes the offset gamma0).
std::int64_t param_count(const NetworkSpec& spec);

/// gamma = (gamma0, weights). Weights are stored layer-major, each layer's
/// row-major weight matrix (out x in) followed by its bias.
struct CVParameters {
  double gamma0 = 0.0;
  Vector weights;

  /// Flat (p + 1) vector, gamma0 first.
  Vector flat() const;
  static CVParameters from_flat(const Vector& flat);
  bool operator==(const CVParameters& other) const;
};

/// Gaussian initialization: weights and biases i.i.d. N(0, sigma^2).
CVParameters init_params(const NetworkSpec& spec, double sigma, double gamma0, std::uint64_t seed);

/// Batched network output u~(X) for X with one point per row (m x d). The
/// weights are read from `params` starting at `offset`.
ad::Jet network_forward(const NetworkSpec& spec, const ad::Var& params, ad::Index offset,
                        const ad::Jet& inputs);

/// delta(x) and its gradient for a batch of points (m x d).
struct BoundaryFactor {
  Matrix value;     // m x 1
  Matrix gradient;  // m x d
};
BoundaryFactor boundary_factor(BoundaryCorrection bc, const Matrix& points);

/// u(x) = u~(x) delta(x) for a single point; length d.
Vector vector_field(const NetworkSpec& spec, const Vector& weights, BoundaryCorrection bc,
                    const Vector& x);

/// The vector field as a differentiable program of (weights, x), for use with
/// ad::grad_inputs.
ad::FieldProgram field_program(const NetworkSpec& spec, BoundaryCorrection bc);

struct CheckpointMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string created_by;
  std::string note;
  bool operator==(const CheckpointMetadata&) const = default;
};

struct Checkpoint {
  NetworkSpec spec;
  BoundaryCorrection boundary = BoundaryCorrection::none;
  CVParameters params;
  CheckpointMetadata metadata;
};

/// Binary container: magic, JSON header (spec, boundary, metadata), then the
/// parameters as raw little-endian IEEE-754 doubles. Round-trips bit-exactly.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metacv

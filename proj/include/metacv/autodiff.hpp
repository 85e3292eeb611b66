#pragma once

// Tensor-level automatic differentiation with arbitrary nesting.
//
// Every primitive's backward rule is itself written in terms of primitives,
// so a gradient computed with `create_graph = true` is an ordinary graph node
// and can be differentiated again. This is what the meta-gradient needs: the
// loss contains input derivatives of the network (forward-mode, via Jet), the
// inner update contains the parameter gradient of that loss (reverse-mode with
// create_graph), and the meta-gradient is a reverse pass over all of it.
//
// Graphs are built per invocation and owned by the returned handles; there is
// no global tape, so independent computations may run on different threads.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace metacv::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Node;

/// Handle to a node in a computation graph. A default-constructed Var is a
/// structural zero: ops treat it as "no contribution".
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Matrix value);
  static Var constant(double value);
  /// A leaf the gradient can be taken with respect to.
  static Var leaf(Matrix value);

  explicit operator bool() const { return static_cast<bool>(node_); }
  const Matrix& value() const;
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Matrix value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Maps the cotangent of this node to one cotangent per parent (null Var for
  // "no contribution"). Only set when requires_grad and parents is non-empty.
  std::function<std::vector<Var>(const Var&)> backward;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Primitives. All shapes are checked; mismatches throw DimensionError and
// non-finite results throw NumericalError.
Var matmul(const Var& a, const Var& b);     // A B
Var matmul_nt(const Var& a, const Var& b);  // A B^T
Var matmul_tn(const Var& a, const Var& b);  // A^T B
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);  // elementwise product
Var affine(const Var& a, double scale, double shift);  // scale * A + shift
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var sum(const Var& a);  // 1x1
Var broadcast(const Var& s, Index rows, Index cols);  // 1x1 -> rows x cols
/// Row-major view of v[offset, offset + rows*cols) as a rows x cols matrix.
/// `v` must be a column vector.
Var block(const Var& v, Index offset, Index rows, Index cols);
/// Inverse of block: places `a` (row-major) at `offset` inside a zero column
/// vector of the given length.
Var embed(const Var& a, Index offset, Index length);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double s, const Var& a);

/// Reverse accumulation. `output` must be 1x1. Returns one gradient per entry
/// of `wrt`, shaped like it (zeros when unreachable). With `create_graph` the
/// results are differentiable graph nodes.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);
Var grad(const Var& output, const Var& wrt, bool create_graph = false);

/// Forward-mode value with a bundle of tangents. An empty tangent list, or a
/// null entry, is an exact zero. Jet arithmetic is built from the Var
/// primitives, so tangents stay differentiable by reverse mode.
struct Jet {
  Var value;
  std::vector<Var> tangents;

  Jet() = default;
  Jet(Var v) : value(std::move(v)) {}  // NOLINT: constants promote implicitly
  Jet(Var v, std::vector<Var> t) : value(std::move(v)), tangents(std::move(t)) {}

  std::size_t width() const { return tangents.size(); }
  /// Tangent k, or a null Var when it is structurally zero.
  Var tangent(std::size_t k) const { return k < tangents.size() ? tangents[k] : Var{}; }
};

Jet matmul(const Jet& a, const Jet& b);
Jet matmul_nt(const Jet& a, const Jet& b);
Jet add(const Jet& a, const Jet& b);
Jet sub(const Jet& a, const Jet& b);
Jet cmul(const Jet& a, const Jet& b);
Jet affine(const Jet& a, double scale, double shift);
Jet sigmoid(const Jet& a);
Jet tanh(const Jet& a);
Jet sum(const Jet& a);
Jet broadcast(const Jet& s, Index rows, Index cols);
Jet block(const Jet& v, Index offset, Index rows, Index cols);

/// A scalar-valued program of a flat parameter column vector.
using ScalarProgram = std::function<Var(const Var& params)>;
/// A vector-valued program u(params, x); `x` arrives as a 1 x d row jet and
/// the result must be a 1 x k row jet.
using FieldProgram = std::function<Jet(const Var& params, const Jet& x)>;

/// Exact Jacobian (k x d) of a field program with respect to its input, by d
/// forward-mode directions.
Matrix grad_inputs(const FieldProgram& program, const Vector& params, const Vector& x);

/// Exact gradient of a scalar program with respect to its parameters.
Vector grad_params(const ScalarProgram& loss, const Vector& params);

/// Value and gradient in one pass.
struct ValueAndGrad {
  double value = 0.0;
  Vector gradient;
};
ValueAndGrad value_and_grad(const ScalarProgram& loss, const Vector& params);

struct MetaGradient {
  Vector gradient;
  double outer_loss = 0.0;   // outer loss at the adapted parameters
  Vector adapted;            // parameters after the inner steps
};

/// Gradient of params -> outer(GD_L(params)) where GD_L applies `steps`
/// plain gradient-descent steps of size `step_size` on `inner`, including all
/// second-order terms of the unrolled inner loop.
MetaGradient meta_gradient_exact(const ScalarProgram& inner, const ScalarProgram& outer,
                                 const Vector& params, double step_size, int steps);
Vector meta_grad_exact(const ScalarProgram& inner, const ScalarProgram& outer,
                       const Vector& params, double step_size, int steps);

/// First-order approximation: the outer gradient evaluated at the adapted
/// parameters, treating the inner update's Jacobian as the identity.
MetaGradient meta_gradient_first_order(const ScalarProgram& inner, const ScalarProgram& outer,
                                       const Vector& params, double step_size, int steps);

/// Central-difference gradient estimate. Used as a test oracle.
Vector finite_diff_grad(const std::function<double(const Vector&)>& fn, const Vector& point,
                        double step);

}  // namespace metacv::ad

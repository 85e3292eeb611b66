#include "metacv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "metacv/error.hpp"

namespace metacv::ad {

namespace {

thread_local bool t_grad_enabled = true;

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Backward = std::function<std::vector<Var>(const Var&)>;

void require(bool condition, const char* op, const std::string& what) {
  if (!condition) throw DimensionError(std::string(op) + ": " + what);
}

std::string shape(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a && b, op, "null operand");
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + shape(a) + " vs " + shape(b));
}

std::shared_ptr<Node> make_node(Matrix value, const char* op, std::initializer_list<Var> inputs) {
  if (!value.allFinite()) throw NumericalError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (t_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Var& in) { return in && in.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node());
    }
  }
  return node;
}

Var make(Matrix value, const char* op, std::initializer_list<Var> inputs, Backward backward) {
  auto node = make_node(std::move(value), op, inputs);
  if (node->requires_grad) node->backward = std::move(backward);
  return Var(std::move(node));
}

bool wants(const Var& v) { return v && v.requires_grad(); }

Var add_opt(const Var& a, const Var& b) {
  if (!a) return b;
  if (!b) return a;
  return add(a, b);
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

Var Var::constant(Matrix value) {
  if (!value.allFinite()) throw NumericalError("non-finite constant");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var Var::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Var::leaf(Matrix value) {
  Var v = constant(std::move(value));
  v.node_->requires_grad = true;
  v.node_->op = "leaf";
  return v;
}

const Matrix& Var::value() const {
  if (!node_) throw DimensionError("value of a null Var");
  return node_->value;
}

double Var::scalar() const {
  const Matrix& m = value();
  if (m.size() != 1) throw DimensionError("scalar() on a " + shape(*this) + " value");
  return m(0, 0);
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Primitives

Var matmul(const Var& a, const Var& b) {
  require(a && b, "matmul", "null operand");
  require(a.cols() == b.rows(), "matmul", shape(a) + " * " + shape(b));
  Matrix out;
  out.noalias() = a.value() * b.value();
  return make(std::move(out), "matmul", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{wants(a) ? matmul_nt(g, b) : Var{}, wants(b) ? matmul_tn(a, g) : Var{}};
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a && b, "matmul_nt", "null operand");
  require(a.cols() == b.cols(), "matmul_nt", shape(a) + " * " + shape(b) + "^T");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return make(std::move(out), "matmul_nt", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{wants(a) ? matmul(g, b) : Var{}, wants(b) ? matmul_tn(g, a) : Var{}};
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  require(a && b, "matmul_tn", "null operand");
  require(a.rows() == b.rows(), "matmul_tn", shape(a) + "^T * " + shape(b));
  Matrix out;
  out.noalias() = a.value().transpose() * b.value();
  return make(std::move(out), "matmul_tn", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{wants(a) ? matmul_nt(b, g) : Var{}, wants(b) ? matmul(a, g) : Var{}};
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make(a.value() + b.value(), "add", {a, b},
              [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make(a.value() - b.value(), "sub", {a, b}, [b](const Var& g) {
    return std::vector<Var>{g, wants(b) ? affine(g, -1.0, 0.0) : Var{}};
  });
}

Var cmul(const Var& a, const Var& b) {
  require_same_shape(a, b, "cmul");
  return make(a.value().cwiseProduct(b.value()), "cmul", {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{wants(a) ? cmul(g, b) : Var{}, wants(b) ? cmul(g, a) : Var{}};
  });
}

Var affine(const Var& a, double scale, double shift) {
  require(static_cast<bool>(a), "affine", "null operand");
  Matrix out = (scale * a.value().array() + shift).matrix();
  return make(std::move(out), "affine", {a},
              [scale](const Var& g) { return std::vector<Var>{affine(g, scale, 0.0)}; });
}

Var sigmoid(const Var& a) {
  require(static_cast<bool>(a), "sigmoid", "null operand");
  Matrix out = a.value().unaryExpr([](double z) {
    // Split by sign so exp never overflows.
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
  auto node = make_node(std::move(out), "sigmoid", {a});
  if (node->requires_grad) {
    std::weak_ptr<Node> self = node;
    node->backward = [self](const Var& g) {
      Var s(self.lock());
      return std::vector<Var>{cmul(g, cmul(s, affine(s, -1.0, 1.0)))};
    };
  }
  return Var(std::move(node));
}

Var tanh(const Var& a) {
  require(static_cast<bool>(a), "tanh", "null operand");
  Matrix out = a.value().array().tanh().matrix();
  auto node = make_node(std::move(out), "tanh", {a});
  if (node->requires_grad) {
    std::weak_ptr<Node> self = node;
    node->backward = [self](const Var& g) {
      Var t(self.lock());
      return std::vector<Var>{cmul(g, affine(cmul(t, t), -1.0, 1.0))};
    };
  }
  return Var(std::move(node));
}

Var sum(const Var& a) {
  require(static_cast<bool>(a), "sum", "null operand");
  const Index rows = a.rows();
  const Index cols = a.cols();
  return make(Matrix::Constant(1, 1, a.value().sum()), "sum", {a},
              [rows, cols](const Var& g) { return std::vector<Var>{broadcast(g, rows, cols)}; });
}

Var broadcast(const Var& s, Index rows, Index cols) {
  require(static_cast<bool>(s), "broadcast", "null operand");
  require(s.rows() == 1 && s.cols() == 1, "broadcast", "operand must be 1x1, got " + shape(s));
  return make(Matrix::Constant(rows, cols, s.value()(0, 0)), "broadcast", {s},
              [](const Var& g) { return std::vector<Var>{sum(g)}; });
}

Var block(const Var& v, Index offset, Index rows, Index cols) {
  require(static_cast<bool>(v), "block", "null operand");
  require(v.cols() == 1, "block", "operand must be a column vector, got " + shape(v));
  require(offset >= 0 && rows >= 0 && cols >= 0 && offset + rows * cols <= v.rows(), "block",
          "range out of bounds");
  Matrix out = Eigen::Map<const RowMajorMatrix>(v.value().data() + offset, rows, cols);
  const Index length = v.rows();
  return make(std::move(out), "block", {v}, [offset, length](const Var& g) {
    return std::vector<Var>{embed(g, offset, length)};
  });
}

Var embed(const Var& a, Index offset, Index length) {
  require(static_cast<bool>(a), "embed", "null operand");
  require(offset >= 0 && offset + a.rows() * a.cols() <= length, "embed", "range out of bounds");
  Matrix out = Matrix::Zero(length, 1);
  Eigen::Map<RowMajorMatrix>(out.data() + offset, a.rows(), a.cols()) = a.value();
  const Index rows = a.rows();
  const Index cols = a.cols();
  return make(std::move(out), "embed", {a}, [offset, rows, cols](const Var& g) {
    return std::vector<Var>{block(g, offset, rows, cols)};
  });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator-(const Var& a) { return affine(a, -1.0, 0.0); }
Var operator*(double s, const Var& a) { return affine(a, s, 0.0); }

// ---------------------------------------------------------------------------
// Reverse accumulation

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
  if (!output) throw DimensionError("grad: null output");
  if (output.value().size() != 1) {
    throw DimensionError("grad: output must be scalar, got " + shape(output));
  }

  std::unordered_set<const Node*> targets;
  for (const auto& w : wrt) {
    if (w) targets.insert(w.node().get());
  }

  // Post-order DFS over recorded nodes, keeping only those from which some
  // target is reachable.
  std::vector<Node*> order;
  std::unordered_map<const Node*, bool> reaches;
  if (output.requires_grad()) {
    struct Frame {
      Node* node;
      std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({output.node().get(), 0});
    reaches[output.node().get()] = false;
    while (!stack.empty()) {
      Frame& top = stack.back();
      if (top.next < top.node->parents.size()) {
        Node* parent = top.node->parents[top.next++].get();
        if (parent->requires_grad && !reaches.contains(parent)) {
          reaches[parent] = false;
          stack.push_back({parent, 0});
        }
        continue;
      }
      Node* node = top.node;
      bool r = targets.contains(node);
      for (const auto& p : node->parents) {
        if (p->requires_grad && reaches[p.get()]) r = true;
      }
      reaches[node] = r;
      if (r) order.push_back(node);
      stack.pop_back();
    }
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const Node*, Var> adjoint;
  if (!order.empty()) adjoint[output.node().get()] = Var::constant(1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = adjoint.find(node);
    if (found == adjoint.end() || !node->backward) continue;
    const Var g = found->second;
    std::vector<Var> parent_grads = node->backward(g);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const auto& parent = node->parents[i];
      if (!parent->requires_grad || !reaches[parent.get()] || !parent_grads[i]) continue;
      Var& slot = adjoint[parent.get()];
      slot = add_opt(slot, parent_grads[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = w ? adjoint.find(w.node().get()) : adjoint.end();
    if (found != adjoint.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(Var::constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

Var grad(const Var& output, const Var& wrt, bool create_graph) {
  return grad(output, std::span<const Var>(&wrt, 1), create_graph)[0];
}

// ---------------------------------------------------------------------------
// Forward mode

namespace {

std::size_t width(const Jet& a, const Jet& b) { return std::max(a.width(), b.width()); }

template <typename F>
Jet linear_map(const Jet& a, F&& f) {
  Jet out(f(a.value));
  out.tangents.resize(a.width());
  for (std::size_t k = 0; k < a.width(); ++k) {
    if (a.tangents[k]) out.tangents[k] = f(a.tangents[k]);
  }
  return out;
}

}  // namespace

Jet matmul(const Jet& a, const Jet& b) {
  Jet out(matmul(a.value, b.value));
  out.tangents.resize(width(a, b));
  for (std::size_t k = 0; k < out.tangents.size(); ++k) {
    Var ta = a.tangent(k);
    Var tb = b.tangent(k);
    out.tangents[k] = add_opt(ta ? matmul(ta, b.value) : Var{}, tb ? matmul(a.value, tb) : Var{});
  }
  return out;
}

Jet matmul_nt(const Jet& a, const Jet& b) {
  Jet out(matmul_nt(a.value, b.value));
  out.tangents.resize(width(a, b));
  for (std::size_t k = 0; k < out.tangents.size(); ++k) {
    Var ta = a.tangent(k);
    Var tb = b.tangent(k);
    out.tangents[k] =
        add_opt(ta ? matmul_nt(ta, b.value) : Var{}, tb ? matmul_nt(a.value, tb) : Var{});
  }
  return out;
}

Jet add(const Jet& a, const Jet& b) {
  Jet out(add(a.value, b.value));
  out.tangents.resize(width(a, b));
  for (std::size_t k = 0; k < out.tangents.size(); ++k) {
    out.tangents[k] = add_opt(a.tangent(k), b.tangent(k));
  }
  return out;
}

Jet sub(const Jet& a, const Jet& b) {
  Jet out(sub(a.value, b.value));
  out.tangents.resize(width(a, b));
  for (std::size_t k = 0; k < out.tangents.size(); ++k) {
    Var ta = a.tangent(k);
    Var tb = b.tangent(k);
    if (ta && tb) {
      out.tangents[k] = sub(ta, tb);
    } else if (ta) {
      out.tangents[k] = ta;
    } else if (tb) {
      out.tangents[k] = affine(tb, -1.0, 0.0);
    }
  }
  return out;
}

Jet cmul(const Jet& a, const Jet& b) {
  Jet out(cmul(a.value, b.value));
  out.tangents.resize(width(a, b));
  for (std::size_t k = 0; k < out.tangents.size(); ++k) {
    Var ta = a.tangent(k);
    Var tb = b.tangent(k);
    out.tangents[k] = add_opt(ta ? cmul(ta, b.value) : Var{}, tb ? cmul(a.value, tb) : Var{});
  }
  return out;
}

Jet affine(const Jet& a, double scale, double shift) {
  Jet out(affine(a.value, scale, shift));
  out.tangents.resize(a.width());
  for (std::size_t k = 0; k < a.width(); ++k) {
    if (a.tangents[k]) out.tangents[k] = affine(a.tangents[k], scale, 0.0);
  }
  return out;
}

Jet sigmoid(const Jet& a) {
  Jet out(sigmoid(a.value));
  if (a.width() == 0) return out;
  Var slope = cmul(out.value, affine(out.value, -1.0, 1.0));
  out.tangents.resize(a.width());
  for (std::size_t k = 0; k < a.width(); ++k) {
    if (a.tangents[k]) out.tangents[k] = cmul(slope, a.tangents[k]);
  }
  return out;
}

Jet tanh(const Jet& a) {
  Jet out(tanh(a.value));
  if (a.width() == 0) return out;
  Var slope = affine(cmul(out.value, out.value), -1.0, 1.0);
  out.tangents.resize(a.width());
  for (std::size_t k = 0; k < a.width(); ++k) {
    if (a.tangents[k]) out.tangents[k] = cmul(slope, a.tangents[k]);
  }
  return out;
}

Jet sum(const Jet& a) {
  return linear_map(a, [](const Var& v) { return sum(v); });
}

Jet broadcast(const Jet& s, Index rows, Index cols) {
  return linear_map(s, [rows, cols](const Var& v) { return broadcast(v, rows, cols); });
}

Jet block(const Jet& v, Index offset, Index rows, Index cols) {
  return linear_map(v, [=](const Var& x) { return block(x, offset, rows, cols); });
}

// ---------------------------------------------------------------------------
// Derivative drivers

Matrix grad_inputs(const FieldProgram& program, const Vector& params, const Vector& x) {
  NoGradGuard no_grad;
  const Index d = x.size();
  std::vector<Var> directions;
  directions.reserve(static_cast<std::size_t>(d));
  for (Index k = 0; k < d; ++k) {
    Matrix e = Matrix::Zero(1, d);
    e(0, k) = 1.0;
    directions.push_back(Var::constant(std::move(e)));
  }
  Jet input(Var::constant(Matrix(x.transpose())), std::move(directions));
  Jet out = program(Var::constant(Matrix(params)), input);
  if (out.value.rows() != 1) {
    throw DimensionError("grad_inputs: program must return a row, got " + shape(out.value));
  }
  Matrix jacobian = Matrix::Zero(out.value.cols(), d);
  for (Index k = 0; k < d; ++k) {
    Var t = out.tangent(static_cast<std::size_t>(k));
    if (t) jacobian.col(k) = t.value().row(0).transpose();
  }
  return jacobian;
}

ValueAndGrad value_and_grad(const ScalarProgram& loss, const Vector& params) {
  Var p = Var::leaf(Matrix(params));
  Var value = loss(p);
  if (!value || value.value().size() != 1) throw DimensionError("loss is not scalar");
  Var g = grad(value, p);
  return {value.scalar(), g.value().col(0)};
}

Vector grad_params(const ScalarProgram& loss, const Vector& params) {
  return value_and_grad(loss, params).gradient;
}

MetaGradient meta_gradient_exact(const ScalarProgram& inner, const ScalarProgram& outer,
                                 const Vector& params, double step_size, int steps) {
  if (steps < 0) throw ConfigError("meta_gradient_exact: negative step count");
  Var start = Var::leaf(Matrix(params));
  Var current = start;
  for (int j = 0; j < steps; ++j) {
    Var inner_loss = inner(current);
    Var inner_grad = grad(inner_loss, current, /*create_graph=*/true);
    current = sub(current, affine(inner_grad, step_size, 0.0));
  }
  Var outer_loss = outer(current);
  Var meta = grad(outer_loss, start);
  return {meta.value().col(0), outer_loss.scalar(), current.value().col(0)};
}

Vector meta_grad_exact(const ScalarProgram& inner, const ScalarProgram& outer, const Vector& params,
                       double step_size, int steps) {
  return meta_gradient_exact(inner, outer, params, step_size, steps).gradient;
}

MetaGradient meta_gradient_first_order(const ScalarProgram& inner, const ScalarProgram& outer,
                                       const Vector& params, double step_size, int steps) {
  if (steps < 0) throw ConfigError("meta_gradient_first_order: negative step count");
  Vector current = params;
  for (int j = 0; j < steps; ++j) {
    current -= step_size * grad_params(inner, current);
  }
  ValueAndGrad o = value_and_grad(outer, current);
  return {o.gradient, o.value, current};
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& fn, const Vector& point,
                        double step) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  Vector g(point.size());
  Vector probe = point;
  for (Index i = 0; i < point.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = fn(probe);
    probe[i] = saved - step;
    const double down = fn(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2.0 * step);
    if (!std::isfinite(g[i])) throw NumericalError("finite_diff_grad: non-finite evaluation");
  }
  return g;
}

}  // namespace metacv::ad

#pragma once

// Minimal dense-tensor computation graph with reverse-mode differentiation.
//
// Tensors are row-major arrays of doubles. Every primitive treats its input as
// a matrix whose column count is the last dimension and whose row count is the
// product of the remaining dimensions. Broadcasting is limited to a second
// operand that is either a scalar or a single row (bias-add).

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dagvae::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& data() noexcept { return values_; }
  const std::vector<double>& data() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  bool all_finite() const noexcept;
  bool operator==(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
};

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  concat_lastdim,
  slice_lastdim,
  reduce_sum,
  reduce_sum_lastdim,
  reduce_mean,
  exp,
  log,
  softplus,
  sigmoid,
  swish,
  sqrt,
  square,
  lgamma,
  logaddexp,
  layer_norm,
  logsumexp_lastdim,
  log_softmax_lastdim,
  softmax_lastdim,
  gather_rows,
  scalar_affine,
  pairwise_normal_log_density,
};

const char* op_name(OpKind op);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

// Gradients of a scalar root with respect to every requires_grad leaf.
class GradientMap {
 public:
  bool contains(Var v) const { return grads_.contains(v.id); }
  const Tensor& at(Var v) const;
  std::size_t size() const { return grads_.size(); }
  void insert(std::size_t id, Tensor grad) { grads_.insert_or_assign(id, std::move(grad)); }

 private:
  std::map<std::size_t, Tensor> grads_;
};

// Passed to each node's backward rule.
class BackwardContext {
 public:
  BackwardContext(Graph& graph, std::size_t node) : graph_(graph), node_(node) {}
  std::span<const double> out_grad() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool wants(std::size_t i) const;
  // Zero-initialized on first access; empty span if the input needs no gradient.
  std::span<double> input_grad(std::size_t i);

 private:
  Graph& graph_;
  std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar root. Visits each node once, highest id first.
  GradientMap backward(Var root);

  Var record(OpKind op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

 private:
  friend class BackwardContext;
  friend struct Var;

  struct Node {
    OpKind op = OpKind::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<double> grad;
  };

  std::vector<Node> nodes_;
};

// Primitives.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var concat_lastdim(std::span<const Var> parts);
Var slice_lastdim(Var x, std::size_t begin, std::size_t end);
Var reduce_sum(Var x);
Var reduce_sum_lastdim(Var x);
Var reduce_mean(Var x);
Var exp(Var x);
Var log(Var x);
Var softplus(Var x);
Var sigmoid(Var x);
Var swish(Var x);
Var sqrt(Var x);
Var square(Var x);
Var lgamma(Var x);
Var logaddexp(Var a, Var b);
inline constexpr double kLayerNormEpsilon = 1e-5;
Var layer_norm(Var x, Var gain, Var bias);
Var logsumexp_lastdim(Var x);
Var log_softmax_lastdim(Var x);
Var softmax_lastdim(Var x);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var scalar_affine(Var x, double scale, double shift);
// out(i, k) = sum_d log N(z(i, d); mean(k, d), var(k, d)).
Var pairwise_normal_log_density(Var z, Var mean, Var var);

inline Var neg(Var x) { return scalar_affine(x, -1.0, 0.0); }
// Row-wise mean of equally shaped tensors.
Var average(std::span<const Var> parts);

// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// for a scalar function, using central differences with step h.
double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double h = 1e-5);

double softplus_value(double x) noexcept;
double sigmoid_value(double x) noexcept;

}  // namespace dagvae::ad

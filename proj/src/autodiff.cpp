#include "dagvae/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "dagvae/error.hpp"

namespace dagvae::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

enum class Broadcast { same, scalar, row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (a.size() == b.size() && a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::same;
  throw ShapeError(std::string(op) + ": cannot combine " + shape_to_string(a.shape()) + " with " +
                   shape_to_string(b.shape()));
}

inline std::size_t bindex(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::same:
      return i;
    case Broadcast::scalar:
      return 0;
    case Broadcast::row:
      return i % cols;
  }
  return i;
}

template <typename Forward, typename DA, typename DB>
Var binary(OpKind op, Var a, Var b, Forward forward, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op_name(op));
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i], bv[bindex(kind, i, cols)]);
  return a.graph->record(op, {a, b}, std::move(out), [kind, cols, da, db](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    auto gx = ctx.input_grad(0);
    auto gy = ctx.input_grad(1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = bindex(kind, i, cols);
      if (!gx.empty()) gx[i] += g[i] * da(x[i], y[j]);
      if (!gy.empty()) gy[j] += g[i] * db(x[i], y[j]);
    }
  });
}

template <typename Forward, typename Derivative>
Var unary(OpKind op, Var x, Forward forward, Derivative derivative) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  return x.graph->record(op, {x}, std::move(out), [derivative](BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    const auto g = ctx.out_grad();
    const Tensor& in = ctx.input(0);
    const Tensor& y = ctx.output();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(in[i], y[i]);
  });
}

Shape with_last(const Shape& shape, std::size_t last) {
  Shape out = shape;
  if (out.empty()) out.push_back(last);
  else out.back() = last;
  return out;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size())
    throw ShapeError("shape " + shape_to_string(shape_) + " does not hold " +
                     std::to_string(values_.size()) + " values");
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }
Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}
Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}
Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }
Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.values_.begin(), t.values_.end(), value);
  return t;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
std::size_t Tensor::rows() const noexcept {
  const std::size_t c = cols();
  return c == 0 ? 0 : values_.size() / c;
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::concat_lastdim: return "concat_lastdim";
    case OpKind::slice_lastdim: return "slice_lastdim";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_sum_lastdim: return "reduce_sum_lastdim";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::softplus: return "softplus";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::swish: return "swish";
    case OpKind::sqrt: return "sqrt";
    case OpKind::square: return "square";
    case OpKind::lgamma: return "lgamma";
    case OpKind::logaddexp: return "logaddexp";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::logsumexp_lastdim: return "logsumexp_lastdim";
    case OpKind::log_softmax_lastdim: return "log_softmax_lastdim";
    case OpKind::softmax_lastdim: return "softmax_lastdim";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scalar_affine: return "scalar_affine";
    case OpKind::pairwise_normal_log_density: return "pairwise_normal_log_density";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(*this); }
bool Var::requires_grad() const { return graph->nodes_.at(id).requires_grad; }

const Tensor& GradientMap::at(Var v) const {
  auto it = grads_.find(v.id);
  if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(v.id));
  return it->second;
}

std::span<const double> BackwardContext::out_grad() const { return graph_.nodes_[node_].grad; }
const Tensor& BackwardContext::output() const { return graph_.nodes_[node_].value; }
const Tensor& BackwardContext::input(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs[i]].value;
}
bool BackwardContext::wants(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs[i]].requires_grad;
}
std::span<double> BackwardContext::input_grad(std::size_t i) {
  auto& in = graph_.nodes_[graph_.nodes_[node_].inputs[i]];
  if (!in.requires_grad) return {};
  if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
  return in.grad;
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericsError("non-finite value in constant leaf");
  value.requires_grad = false;
  value.grad.reset();
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), false, {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  if (!value.all_finite()) throw NumericsError("non-finite value in variable leaf");
  value.requires_grad = true;
  value.grad.reset();
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), true, {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  if (!value.all_finite()) throw NumericsError(std::string(op_name(op)) + " produced a non-finite value");
  Node node;
  node.op = op;
  node.requires_grad = false;
  for (const Var& v : inputs) {
    if (v.graph != this) throw ContractError("input belongs to a different graph");
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  node.value = std::move(value);
  node.value.requires_grad = node.requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

GradientMap Graph::backward(Var root) {
  if (root.graph != this) throw ContractError("root belongs to a different graph");
  if (nodes_.at(root.id).value.size() != 1)
    throw ContractError("backward requires a scalar root, got shape " +
                        shape_to_string(nodes_[root.id].value.shape()));
  for (auto& n : nodes_) n.grad.clear();
  if (nodes_[root.id].requires_grad) {
    nodes_[root.id].grad.assign(1, 1.0);
    for (std::size_t k = root.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      BackwardContext ctx(*this, k);
      n.backward(ctx);
    }
  }
  GradientMap result;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& n = nodes_[k];
    if (n.op != OpKind::leaf || !n.requires_grad) continue;
    Tensor g(n.value.shape());
    if (!n.grad.empty()) std::copy(n.grad.begin(), n.grad.end(), g.values().begin());
    result.insert(k, std::move(g));
  }
  return result;
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.shape().size() != 2 || av.cols() != bv.rows())
    throw ShapeError("matmul: " + shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
  Tensor out(Shape{av.rows(), bv.cols()});
  MutMap(out.values().data(), static_cast<Eigen::Index>(av.rows()), static_cast<Eigen::Index>(bv.cols())).noalias() =
      as_matrix(av) * as_matrix(bv);
  return a.graph->record(OpKind::matmul, {a, b}, std::move(out), [](BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    const Tensor& w = ctx.input(1);
    ConstMap g(ctx.out_grad().data(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(w.cols()));
    if (auto gx = ctx.input_grad(0); !gx.empty())
      MutMap(gx.data(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols())).noalias() +=
          g * as_matrix(w).transpose();
    if (auto gw = ctx.input_grad(1); !gw.empty())
      MutMap(gw.data(), static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols())).noalias() +=
          as_matrix(x).transpose() * g;
  });
}

Var add(Var a, Var b) {
  return binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      OpKind::div, a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var concat_lastdim(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_lastdim: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out(Shape{rows, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.values().begin() + static_cast<std::ptrdiff_t>(r * v.cols()), v.cols(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].graph->record(OpKind::concat_lastdim, std::move(inputs), std::move(out),
                                [widths, rows, total](BackwardContext& ctx) {
                                  const auto g = ctx.out_grad();
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto gk = ctx.input_grad(k);
                                    if (!gk.empty())
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < widths[k]; ++c)
                                          gk[r * widths[k] + c] += g[r * total + offset + c];
                                    offset += widths[k];
                                  }
                                });
}

Var slice_lastdim(Var x, std::size_t begin, std::size_t end) {
  const Tensor& v = x.value();
  if (begin > end || end > v.cols())
    throw ShapeError("slice_lastdim: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_to_string(v.shape()));
  const std::size_t rows = v.rows();
  const std::size_t width = end - begin;
  const std::size_t cols = v.cols();
  Tensor out(with_last(v.shape(), width));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = v[r * cols + begin + c];
  return x.graph->record(OpKind::slice_lastdim, {x}, std::move(out), [=](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) gx[r * cols + begin + c] += g[r * width + c];
  });
}

Var reduce_sum(Var x) {
  const Tensor& v = x.value();
  double s = 0.0;
  for (double e : v.values()) s += e;
  return x.graph->record(OpKind::reduce_sum, {x}, Tensor::scalar(s), [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    for (double& e : ctx.input_grad(0)) e += g;
  });
}

Var reduce_sum_lastdim(Var x) {
  const Tensor& v = x.value();
  const std::size_t rows = v.rows();
  const std::size_t cols = v.cols();
  Tensor out(Shape{rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c];
    out[r] = s;
  }
  return x.graph->record(OpKind::reduce_sum_lastdim, {x}, std::move(out), [rows, cols](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
  });
}

Var reduce_mean(Var x) {
  const Tensor& v = x.value();
  if (v.size() == 0) throw ShapeError("reduce_mean of empty tensor");
  double s = 0.0;
  for (double e : v.values()) s += e;
  const double n = static_cast<double>(v.size());
  return x.graph->record(OpKind::reduce_mean, {x}, Tensor::scalar(s / n), [n](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0] / n;
    for (double& e : ctx.input_grad(0)) e += g;
  });
}

double softplus_value(double x) noexcept {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid_value(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var exp(Var x) {
  return unary(
      OpKind::exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().values())
    if (!(v > 0.0)) throw NumericsError("log of non-positive value");
  return unary(
      OpKind::log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var softplus(Var x) {
  return unary(
      OpKind::softplus, x, softplus_value, [](double v, double) { return sigmoid_value(v); });
}

Var sigmoid(Var x) {
  return unary(
      OpKind::sigmoid, x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var swish(Var x) {
  return unary(
      OpKind::swish, x, [](double v) { return v * sigmoid_value(v); },
      [](double v, double) {
        const double s = sigmoid_value(v);
        return s + v * s * (1.0 - s);
      });
}

Var sqrt(Var x) {
  for (double v : x.value().values())
    if (v < 0.0) throw DomainError("sqrt of negative value");
  return unary(
      OpKind::sqrt, x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var x) {
  return unary(
      OpKind::square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var lgamma(Var x) {
  for (double v : x.value().values())
    if (!(v > 0.0)) throw DomainError("lgamma requires positive arguments");
  return unary(
      OpKind::lgamma, x, [](double v) { return boost::math::lgamma(v); },
      [](double v, double) { return boost::math::digamma(v); });
}

Var logaddexp(Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError("logaddexp: shapes differ");
  return binary(
      OpKind::logaddexp, a, b,
      [](double x, double y) {
        const double m = std::max(x, y);
        return m + std::log1p(std::exp(-std::abs(x - y)));
      },
      [](double x, double y) { return sigmoid_value(x - y); },
      [](double x, double y) { return sigmoid_value(y - x); });
}

Var layer_norm(Var x, Var gain, Var bias) {
  const Tensor& v = x.value();
  const std::size_t rows = v.rows();
  const std::size_t cols = v.cols();
  if (gain.value().size() != cols || bias.value().size() != cols)
    throw ShapeError("layer_norm: gain/bias width must equal " + std::to_string(cols));
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(v.shape());
  std::vector<double> xhat(v.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += v[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = v[r * cols + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (v[i] - mean) * inv_std[r];
      out[i] = xhat[i] * gv[c] + bv[c];
    }
  }
  return x.graph->record(
      OpKind::layer_norm, {x, gain, bias}, std::move(out),
      [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        const Tensor& gv = ctx.input(1);
        auto gx = ctx.input_grad(0);
        auto gg = ctx.input_grad(1);
        auto gb = ctx.input_grad(2);
        const double n = static_cast<double>(cols);
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (!gg.empty()) gg[c] += g[i] * xhat[i];
            if (!gb.empty()) gb[c] += g[i];
            dxhat[c] = g[i] * gv[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * xhat[i];
          }
          if (gx.empty()) continue;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gx[i] += inv_std[r] / n * (n * dxhat[c] - sum_d - xhat[i] * sum_dx);
          }
        }
      });
}

Var logsumexp_lastdim(Var x) {
  const Tensor& v = x.value();
  const std::size_t rows = v.rows();
  const std::size_t cols = v.cols();
  if (cols == 0) throw ShapeError("logsumexp over empty dimension");
  Tensor out(Shape{rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.values().subspan(r * cols, cols);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double e : row) s += std::exp(e - m);
    out[r] = m + std::log(s);
  }
  return x.graph->record(OpKind::logsumexp_lastdim, {x}, std::move(out), [rows, cols](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const Tensor& in = ctx.input(0);
    const Tensor& y = ctx.output();
    auto gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r] * std::exp(in[r * cols + c] - y[r]);
  });
}

Var log_softmax_lastdim(Var x) {
  const Tensor& v = x.value();
  const std::size_t rows = v.rows();
  const std::size_t cols = v.cols();
  if (cols == 0) throw ShapeError("log_softmax over empty dimension");
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.values().subspan(r * cols, cols);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double e : row) s += std::exp(e - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  return x.graph->record(OpKind::log_softmax_lastdim, {x}, std::move(out), [rows, cols](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const Tensor& y = ctx.output();
    auto gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double sg = 0.0;
      for (std::size_t c = 0; c < cols; ++c) sg += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        gx[i] += g[i] - std::exp(y[i]) * sg;
      }
    }
  });
}

Var softmax_lastdim(Var x) {
  const Tensor& v = x.value();
  const std::size_t rows = v.rows();
  const std::size_t cols = v.cols();
  if (cols == 0) throw ShapeError("softmax over empty dimension");
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.values().subspan(r * cols, cols);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double e : row) s += std::exp(e - m);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(row[c] - m) / s;
  }
  return x.graph->record(OpKind::softmax_lastdim, {x}, std::move(out), [rows, cols](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const Tensor& y = ctx.output();
    auto gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        gx[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& v = x.value();
  const std::size_t cols = v.cols();
  const std::size_t n_in = v.rows();
  std::vector<std::size_t> index(rows.begin(), rows.end());
  for (std::size_t r : index)
    if (r >= n_in) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range");
  Tensor out(Shape{index.size(), cols});
  for (std::size_t k = 0; k < index.size(); ++k)
    std::copy_n(v.values().begin() + static_cast<std::ptrdiff_t>(index[k] * cols), cols,
                out.values().begin() + static_cast<std::ptrdiff_t>(k * cols));
  return x.graph->record(OpKind::gather_rows, {x}, std::move(out), [index, cols](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t k = 0; k < index.size(); ++k)
      for (std::size_t c = 0; c < cols; ++c) gx[index[k] * cols + c] += g[k * cols + c];
  });
}

Var scalar_affine(Var x, double scale, double shift) {
  return unary(
      OpKind::scalar_affine, x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

Var pairwise_normal_log_density(Var z, Var mean, Var var) {
  const Tensor& zv = z.value();
  const Tensor& mv = mean.value();
  const Tensor& vv = var.value();
  const std::size_t n = zv.rows();
  const std::size_t d = zv.cols();
  const std::size_t k = mv.rows();
  if (mv.cols() != d || vv.shape() != mv.shape())
    throw ShapeError("pairwise_normal_log_density: z " + shape_to_string(zv.shape()) + ", mean " +
                     shape_to_string(mv.shape()) + ", var " + shape_to_string(vv.shape()));
  for (double v : vv.values())
    if (!(v > 0.0)) throw DomainError("normal variance must be positive");
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  std::vector<double> log_norm(k, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < d; ++c) log_norm[j] += -0.5 * (log_2pi + std::log(vv[j * d + c]));
  Tensor out(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = log_norm[j];
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = zv[i * d + c] - mv[j * d + c];
        s -= diff * diff / (2.0 * vv[j * d + c]);
      }
      out[i * k + j] = s;
    }
  return z.graph->record(OpKind::pairwise_normal_log_density, {z, mean, var}, std::move(out),
                         [n, d, k](BackwardContext& ctx) {
                           const auto g = ctx.out_grad();
                           const Tensor& zv = ctx.input(0);
                           const Tensor& mv = ctx.input(1);
                           const Tensor& vv = ctx.input(2);
                           auto gz = ctx.input_grad(0);
                           auto gm = ctx.input_grad(1);
                           auto gv = ctx.input_grad(2);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < k; ++j) {
                               const double gij = g[i * k + j];
                               for (std::size_t c = 0; c < d; ++c) {
                                 const double v = vv[j * d + c];
                                 const double diff = zv[i * d + c] - mv[j * d + c];
                                 if (!gz.empty()) gz[i * d + c] -= gij * diff / v;
                                 if (!gm.empty()) gm[j * d + c] += gij * diff / v;
                                 if (!gv.empty()) gv[j * d + c] += gij * (diff * diff / (2.0 * v * v) - 0.5 / v);
                               }
                             }
                         });
}

Var average(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("average of no tensors");
  if (parts.size() == 1) return parts[0];
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scalar_affine(acc, 1.0 / static_cast<double>(parts.size()), 0.0);
}

double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double h) {
  Graph graph;
  const Var xv = graph.variable(x);
  const Var root = f(graph, xv);
  const Tensor analytic = graph.backward(root).at(xv);

  auto evaluate = [&f](const Tensor& point) {
    Graph g;
    return f(g, g.constant(point)).value().item();
  };

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = evaluate(probe);
    probe[i] = original - h;
    const double down = evaluate(probe);
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric)));
  }
  return worst;
}

}  // namespace dagvae::ad

// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "ambig/errors.hpp"

namespace ambig::num {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0f); }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddRow: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Gelu: return "gelu";
    case OpKind::LogSigmoid: return "log_sigmoid";
    case OpKind::Clamp: return "clamp";
    case OpKind::Minimum: return "minimum";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::DivScalar: return "div_scalar";
    case OpKind::Embedding: return "embedding";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Gather: return "gather";
    case OpKind::SelectRows: return "select_rows";
    case OpKind::SelectCols: return "select_cols";
    case OpKind::CausalAttention: return "causal_attention";
    case OpKind::Custom: return "custom";
  }
  return "?";
}

// ---- Var -------------------------------------------------------------------

const Shape& Var::shape() const { return graph_->node(id_).shape; }

std::span<const double> Var::values() const { return graph_->value(id_); }

double Var::item() const {
  const auto& v = graph_->value(id_);
  if (v.size() != 1) {
    throw ContractError("item() on non-scalar of shape " + shape_str(shape()));
  }
  return v[0];
}

bool Var::requires_grad() const { return graph_->needs_grad(id_); }

std::span<const double> Var::grad() const { return graph_->upstream(id_); }

// ---- Graph -----------------------------------------------------------------

Var Graph::param(Tensor& t) {
  if (numel(t.shape) != t.data.size()) {
    throw DimensionError("param shape " + shape_str(t.shape) + " mismatches its data");
  }
  Node n;
  n.kind = OpKind::Leaf;
  n.shape = t.shape;
  n.value.assign(t.data.begin(), t.data.end());
  n.requires_grad = t.requires_grad;
  n.sink = t.requires_grad ? &t : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(const Tensor& t) {
  return constant(t.shape, std::vector<double>(t.data.begin(), t.data.end()));
}

Var Graph::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw DimensionError("constant shape " + shape_str(shape) + " mismatches its data");
  }
  Node n;
  n.kind = OpKind::Constant;
  n.shape = std::move(shape);
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::scalar(double v) { return constant(Shape{}, {v}); }

Var Graph::record(OpKind kind, std::vector<int> inputs, Shape shape, std::vector<double> value,
                  BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](int i) { return nodes_[static_cast<std::size_t>(i)].requires_grad; });
  if (n.requires_grad) {
    n.backward = std::move(backward);
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<double>& Graph::grad_buffer(int id) {
  auto& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.empty()) {
    n.grad.assign(n.value.size(), 0.0);
  }
  return n.grad;
}

void Graph::backward(const Var& root) {
  if (root.graph() != this) {
    throw ContractError("backward root belongs to another graph");
  }
  if (numel(root.shape()) != 1) {
    throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    return;
  }
  grad_buffer(root.id())[0] += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) {
      continue;
    }
    if (n.backward) {
      n.backward(*this, id);
    }
    if (n.sink != nullptr) {
      auto& g = n.sink->grad;
      if (g.empty()) {
        g.assign(n.sink->data.size(), 0.0f);
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = static_cast<float>(static_cast<double>(g[i]) + n.grad[i]);
      }
    }
  }
}

// ---- ops -------------------------------------------------------------------

namespace {

Graph& same_graph(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw ContractError("operands live on different graphs");
  }
  return *a.graph();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_2d(const Var& x, const char* op) {
  if (x.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(x.shape()));
  }
}

// Elementwise unary op; `deriv(x, y)` gives dy/dx.
template <typename F, typename D>
Var unary(const Var& x, OpKind kind, F f, D deriv) {
  Graph& g = *x.graph();
  const auto& xv = g.value(x.id());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = f(xv[i]);
  }
  const int xi = x.id();
  return g.record(kind, {xi}, x.shape(), std::move(out), [xi, deriv](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    const auto& xv = gr.value(xi);
    const auto& yv = gr.value(self);
    auto& dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < up.size(); ++i) {
      dx[i] += up[i] * deriv(xv[i], yv[i]);
    }
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Graph& g = same_graph(a, b);
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const auto& av = g.value(a.id());
  const auto& bv = g.value(b.id());
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] += s * brow[j];
      }
    }
  }
  const int ai = a.id(), bi = b.id();
  return g.record(OpKind::MatMul, {ai, bi}, {m, n}, std::move(out), [ai, bi, m, k, n](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    const auto& av = gr.value(ai);
    const auto& bv = gr.value(bi);
    if (gr.needs_grad(ai)) {
      auto& da = gr.grad_buffer(ai);
      // da = up · bᵀ, written as row updates over a transposed b so the
      // inner loop is a contiguous axpy.
      std::vector<double> bt(k * n);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bv[p * n + j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double* urow = up.data() + i * n;
        double* drow = da.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double s = urow[j];
          const double* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) {
            drow[p] += s * btrow[p];
          }
        }
      }
    }
    if (gr.needs_grad(bi)) {
      auto& db = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < m; ++i) {
        const double* urow = up.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          double* drow = db.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) {
            drow[j] += s * urow[j];
          }
        }
      }
    }
  });
}

namespace {

template <typename Combine, typename DA, typename DB>
Var binary(const Var& a, const Var& b, OpKind kind, const char* name, Combine f, DA da_fn, DB db_fn) {
  Graph& g = same_graph(a, b);
  require_same_shape(a, b, name);
  const auto& av = g.value(a.id());
  const auto& bv = g.value(b.id());
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = f(av[i], bv[i]);
  }
  const int ai = a.id(), bi = b.id();
  return g.record(kind, {ai, bi}, a.shape(), std::move(out), [ai, bi, da_fn, db_fn](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    const auto& av = gr.value(ai);
    const auto& bv = gr.value(bi);
    if (gr.needs_grad(ai)) {
      auto& da = gr.grad_buffer(ai);
      for (std::size_t i = 0; i < up.size(); ++i) {
        da[i] += up[i] * da_fn(av[i], bv[i]);
      }
    }
    if (gr.needs_grad(bi)) {
      auto& db = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < up.size(); ++i) {
        db[i] += up[i] * db_fn(av[i], bv[i]);
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, OpKind::Add, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, OpKind::Sub, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, OpKind::Mul, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var minimum(const Var& a, const Var& b) {
  // Ties route the gradient to `a`.
  return binary(
      a, b, OpKind::Minimum, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var add_row(const Var& x, const Var& bias) {
  Graph& g = same_graph(x, bias);
  require_2d(x, "add_row");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (numel(bias.shape()) != c) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  const auto& xv = g.value(x.id());
  const auto& bv = g.value(bias.id());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = xv[i * c + j] + bv[j];
    }
  }
  const int xi = x.id(), bi = bias.id();
  return g.record(OpKind::AddRow, {xi, bi}, x.shape(), std::move(out), [xi, bi, r, c](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    if (gr.needs_grad(xi)) {
      auto& dx = gr.grad_buffer(xi);
      for (std::size_t i = 0; i < up.size(); ++i) {
        dx[i] += up[i];
      }
    }
    if (gr.needs_grad(bi)) {
      auto& db = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          db[j] += up[i * c + j];
        }
      }
    }
  });
}

Var scale(const Var& x, double s) {
  return unary(
      x, OpKind::Scale, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(
      x, OpKind::AddScalar, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var exp(const Var& x) {
  return unary(
      x, OpKind::Exp, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) {
      throw ContractError("log of non-positive value");
    }
  }
  return unary(
      x, OpKind::Log, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      x, OpKind::Gelu,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kC * (v + kA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      });
}

Var log_sigmoid(const Var& x) {
  return unary(
      x, OpKind::LogSigmoid,
      [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        // d/dv log σ(v) = σ(−v)
        if (v >= 0.0) {
          const double e = std::exp(-v);
          return e / (1.0 + e);
        }
        return 1.0 / (1.0 + std::exp(v));
      });
}

Var clamp(const Var& x, double lo, double hi) {
  if (lo > hi) {
    throw ContractError("clamp: lo > hi");
  }
  return unary(
      x, OpKind::Clamp, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
  Graph& g = *x.graph();
  const auto& xv = g.value(x.id());
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  const int xi = x.id();
  return g.record(OpKind::Sum, {xi}, {}, {s}, [xi](Graph& gr, int self) {
    const double up = gr.upstream(self)[0];
    for (auto& d : gr.grad_buffer(xi)) {
      d += up;
    }
  });
}

Var mean(const Var& x) {
  Graph& g = *x.graph();
  const auto& xv = g.value(x.id());
  if (xv.empty()) {
    throw EmptyInputError("mean of empty tensor");
  }
  const double n = static_cast<double>(xv.size());
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
  const int xi = x.id();
  return g.record(OpKind::Mean, {xi}, {}, {s}, [xi, n](Graph& gr, int self) {
    const double up = gr.upstream(self)[0] / n;
    for (auto& d : gr.grad_buffer(xi)) {
      d += up;
    }
  });
}

Var div_scalar(const Var& x, const Var& s) {
  Graph& g = same_graph(x, s);
  if (numel(s.shape()) != 1) {
    throw DimensionError("div_scalar: divisor must be scalar, got " + shape_str(s.shape()));
  }
  const double sv = s.item();
  if (sv == 0.0) {
    throw ContractError("div_scalar: division by zero");
  }
  const auto& xv = g.value(x.id());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = xv[i] / sv;
  }
  const int xi = x.id(), si = s.id();
  return g.record(OpKind::DivScalar, {xi, si}, x.shape(), std::move(out), [xi, si](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    const auto& xv = gr.value(xi);
    const double sv = gr.value(si)[0];
    if (gr.needs_grad(xi)) {
      auto& dx = gr.grad_buffer(xi);
      for (std::size_t i = 0; i < up.size(); ++i) {
        dx[i] += up[i] / sv;
      }
    }
    if (gr.needs_grad(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < up.size(); ++i) {
        acc += up[i] * xv[i];
      }
      gr.grad_buffer(si)[0] += -acc / (sv * sv);
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  Graph& g = *table.graph();
  require_2d(table, "embedding");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw DimensionError("embedding: id " + std::to_string(id) + " outside table of " +
                           std::to_string(v) + " rows");
    }
  }
  const auto& tv = g.value(table.id());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const int ti = table.id();
  Shape shape{idx.size(), d};  // before idx is moved into the closure
  return g.record(OpKind::Embedding, {ti}, std::move(shape), std::move(out),
                  [ti, idx = std::move(idx), d](Graph& gr, int self) {
                    const auto& up = gr.upstream(self);
                    auto& dt = gr.grad_buffer(ti);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      const std::size_t base = static_cast<std::size_t>(idx[i]) * d;
                      for (std::size_t j = 0; j < d; ++j) {
                        dt[base + j] += up[i * d + j];
                      }
                    }
                  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  require_2d(x, "layer_norm");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (numel(gamma.shape()) != c || numel(beta.shape()) != c) {
    throw DimensionError("layer_norm: affine parameters do not match " + shape_str(x.shape()));
  }
  const auto& xv = g.value(x.id());
  const auto& gv = g.value(gamma.id());
  const auto& bv = g.value(beta.id());
  std::vector<double> xhat(xv.size()), rstd(r), out(xv.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * rstd[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  const int xi = x.id(), gi = gamma.id(), bi = beta.id();
  return g.record(OpKind::LayerNorm, {xi, gi, bi}, x.shape(), std::move(out),
                  [xi, gi, bi, r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& gr, int self) {
                    const auto& up = gr.upstream(self);
                    const auto& gv = gr.value(gi);
                    if (gr.needs_grad(gi)) {
                      auto& dg = gr.grad_buffer(gi);
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) dg[j] += up[i * c + j] * xhat[i * c + j];
                    }
                    if (gr.needs_grad(bi)) {
                      auto& db = gr.grad_buffer(bi);
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) db[j] += up[i * c + j];
                    }
                    if (gr.needs_grad(xi)) {
                      auto& dx = gr.grad_buffer(xi);
                      const double inv_c = 1.0 / static_cast<double>(c);
                      for (std::size_t i = 0; i < r; ++i) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = up[i * c + j] * gv[j];
                          m1 += dxh;
                          m2 += dxh * xhat[i * c + j];
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = up[i * c + j] * gv[j];
                          dx[i * c + j] += rstd[i] * (dxh - m1 - xhat[i * c + j] * m2);
                        }
                      }
                    }
                  });
}

Var log_softmax(const Var& x, std::size_t axis) {
  Graph& g = *x.graph();
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("log_softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  const auto& xv = g.value(x.id());
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += std::exp(xv[base + j * inner] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = xv[base + j * inner] - lse;
    }
  }
  const int xi = x.id();
  return g.record(OpKind::LogSoftmax, {xi}, shape, std::move(out), [xi, outer, inner, len](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    const auto& yv = gr.value(self);
    auto& dx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += up[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t k = base + j * inner;
          dx[k] += up[k] - std::exp(yv[k]) * s;
        }
      }
    }
  });
}

Var gather(const Var& x, std::span<const int> index) {
  Graph& g = *x.graph();
  require_2d(x, "gather");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (index.size() != r) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for " + std::to_string(r) + " rows");
  }
  std::vector<int> idx(index.begin(), index.end());
  const auto& xv = g.value(x.id());
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= c) {
      throw DimensionError("gather: index " + std::to_string(idx[i]) + " outside " + std::to_string(c) + " columns");
    }
    out[i] = xv[i * c + static_cast<std::size_t>(idx[i])];
  }
  const int xi = x.id();
  return g.record(OpKind::Gather, {xi}, {r}, std::move(out), [xi, c, idx = std::move(idx)](Graph& gr, int self) {
    const auto& up = gr.upstream(self);
    auto& dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      dx[i * c + static_cast<std::size_t>(idx[i])] += up[i];
    }
  });
}

Var select_rows(const Var& x, std::span<const int> rows) {
  Graph& g = *x.graph();
  require_2d(x, "select_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<int> idx(rows.begin(), rows.end());
  const auto& xv = g.value(x.id());
  std::vector<double> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= r) {
      throw DimensionError("select_rows: row " + std::to_string(idx[i]) + " outside " + std::to_string(r));
    }
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[i]) * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const int xi = x.id();
  Shape shape{idx.size(), c};  // before idx is moved into the closure
  return g.record(OpKind::SelectRows, {xi}, std::move(shape), std::move(out),
                  [xi, c, idx = std::move(idx)](Graph& gr, int self) {
                    const auto& up = gr.upstream(self);
                    auto& dx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      const std::size_t base = static_cast<std::size_t>(idx[i]) * c;
                      for (std::size_t j = 0; j < c; ++j) dx[base + j] += up[i * c + j];
                    }
                  });
}

Var select_cols(const Var& x, std::span<const int> cols) {
  Graph& g = *x.graph();
  require_2d(x, "select_cols");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<int> idx(cols.begin(), cols.end());
  for (int j : idx) {
    if (j < 0 || static_cast<std::size_t>(j) >= c) {
      throw DimensionError("select_cols: column " + std::to_string(j) + " outside " + std::to_string(c));
    }
  }
  const std::size_t n = idx.size();
  const auto& xv = g.value(x.id());
  std::vector<double> out(r * n);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * c + static_cast<std::size_t>(idx[j])];
  const int xi = x.id();
  return g.record(OpKind::SelectCols, {xi}, {r, n}, std::move(out),
                  [xi, r, c, n, idx = std::move(idx)](Graph& gr, int self) {
                    const auto& up = gr.upstream(self);
                    auto& dx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < n; ++j) dx[i * c + static_cast<std::size_t>(idx[j])] += up[i * n + j];
                  });
}

Var causal_attention(const Var& qkv, std::size_t n_heads) {
  Graph& g = *qkv.graph();
  require_2d(qkv, "causal_attention");
  const std::size_t t_len = qkv.shape()[0], w = qkv.shape()[1];
  if (n_heads == 0 || w % 3 != 0 || (w / 3) % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(w) + " incompatible with " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t d = w / 3, dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& xv = g.value(qkv.id());
  // probs[h][t][u], u <= t
  std::vector<double> probs(n_heads * t_len * t_len, 0.0);
  std::vector<double> out(t_len * d, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    for (std::size_t t = 0; t < t_len; ++t) {
      double* p = probs.data() + (h * t_len + t) * t_len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t i = 0; i < dh; ++i) s += xv[t * w + qo + i] * xv[u * w + ko + i];
        p[u] = s * inv_sqrt;
        mx = std::max(mx, p[u]);
      }
      double z = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        p[u] = std::exp(p[u] - mx);
        z += p[u];
      }
      for (std::size_t u = 0; u <= t; ++u) {
        p[u] /= z;
        for (std::size_t i = 0; i < dh; ++i) out[t * d + h * dh + i] += p[u] * xv[u * w + vo + i];
      }
    }
  }
  const int xi = qkv.id();
  return g.record(OpKind::CausalAttention, {xi}, {t_len, d}, std::move(out),
                  [xi, t_len, w, d, dh, n_heads, inv_sqrt, probs = std::move(probs)](Graph& gr, int self) {
                    const auto& up = gr.upstream(self);
                    const auto& xv = gr.value(xi);
                    auto& dx = gr.grad_buffer(xi);
                    std::vector<double> dp(t_len);
                    for (std::size_t h = 0; h < n_heads; ++h) {
                      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
                      for (std::size_t t = 0; t < t_len; ++t) {
                        const double* p = probs.data() + (h * t_len + t) * t_len;
                        const double* dout = up.data() + t * d + h * dh;
                        double dot = 0.0;
                        for (std::size_t u = 0; u <= t; ++u) {
                          double a = 0.0;
                          for (std::size_t i = 0; i < dh; ++i) {
                            a += dout[i] * xv[u * w + vo + i];
                            dx[u * w + vo + i] += p[u] * dout[i];
                          }
                          dp[u] = a;
                          dot += p[u] * a;
                        }
                        for (std::size_t u = 0; u <= t; ++u) {
                          const double ds = p[u] * (dp[u] - dot) * inv_sqrt;
                          for (std::size_t i = 0; i < dh; ++i) {
                            dx[t * w + qo + i] += ds * xv[u * w + ko + i];
                            dx[u * w + ko + i] += ds * xv[t * w + qo + i];
                          }
                        }
                      }
                    }
                  });
}

// ---- gradient check --------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Var(Graph&)>& loss, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) {
    throw ContractError("grad_check: eps must be positive");
  }
  GradCheckReport report;
  for (Tensor* p : params) {
    p->zero_grad();
  }
  {
    Graph g;
    Var root = loss(g);
    if (!std::isfinite(root.item())) {
      report.passed = false;
      report.non_finite = true;
      report.message = "loss is non-finite at the base point";
      return report;
    }
    g.backward(root);
  }
  auto eval = [&]() {
    Graph g;
    return loss(g).item();
  };
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    Tensor& p = *params[ti];
    std::vector<std::size_t> coords(p.data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      std::mt19937_64 rng(options.seed * 0x9E3779B97F4A7C15ULL + ti);
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const float orig = p.data[i];
      const float plus = static_cast<float>(static_cast<double>(orig) + options.eps);
      const float minus = static_cast<float>(static_cast<double>(orig) - options.eps);
      p.data[i] = plus;
      const double f_plus = eval();
      p.data[i] = minus;
      const double f_minus = eval();
      p.data[i] = orig;
      ++report.coords_checked;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.passed = false;
        report.non_finite = true;
        report.worst_tensor = ti;
        report.worst_index = i;
        report.message = "loss is non-finite at tensor " + std::to_string(ti) + " coordinate " + std::to_string(i);
        return report;
      }
      const double numeric = (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double analytic = p.grad.empty() ? 0.0 : static_cast<double>(p.grad[i]);
      const double err = relative_error(analytic, numeric);
      if (err > report.max_rel_error || report.coords_checked == 1) {
        report.max_rel_error = err;
        report.worst_tensor = ti;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol_rel;
  std::ostringstream os;
  os << "max rel error " << report.max_rel_error << " over " << report.coords_checked << " coords (worst: tensor "
     << report.worst_tensor << " index " << report.worst_index << ", analytic " << report.worst_analytic
     << ", numeric " << report.worst_numeric << ")";
  report.message = os.str();
  return report;
}

}  // namespace ambig::num

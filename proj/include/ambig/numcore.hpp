// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with a dynamic reverse-mode tape.
//
// Parameters live in `Tensor` (row-major float32 with an optional gradient
// buffer). A `Graph` is rebuilt for every forward pass: binding a Tensor
// copies it onto the tape in float64, every op appends one node, and
// `backward` walks the tape once in reverse creation order. Gradients of
// bound parameters are accumulated (+=) into `Tensor::grad`.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ambig::num {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first accumulation

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  std::size_t size() const { return data.size(); }
  bool has_grad() const { return !grad.empty(); }
  void zero_grad();
  bool operator==(const Tensor& other) const = default;
};

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  Scale,
  AddScalar,
  Exp,
  Log,
  Gelu,
  LogSigmoid,
  Clamp,
  Minimum,
  Sum,
  Mean,
  DivScalar,
  Embedding,
  LayerNorm,
  LogSoftmax,
  Gather,
  SelectRows,
  SelectCols,
  CausalAttention,
  Custom,
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node on a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  std::span<const double> values() const;
  double item() const;  // scalar value; throws unless numel == 1
  bool requires_grad() const;
  // Gradient w.r.t. this node after backward (empty if none reached it).
  std::span<const double> grad() const;

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<int> inputs;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* sink = nullptr;  // bound parameter receiving gradients
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Binds a parameter; gradients flow into t.grad when t.requires_grad.
  Var param(Tensor& t);
  // Read-only input, never differentiated.
  Var constant(const Tensor& t);
  Var constant(Shape shape, std::vector<double> values);
  Var scalar(double v);

  // Appends a node. Used by the built-in ops and available for custom ops
  // (tests use it to inject deliberately wrong gradient rules).
  Var record(OpKind kind, std::vector<int> inputs, Shape shape,
             std::vector<double> value, BackwardFn backward);

  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<double>& value(int id) const { return node(id).value; }
  const std::vector<double>& upstream(int id) const { return node(id).grad; }
  bool needs_grad(int id) const { return node(id).requires_grad; }
  // Zero-initialised gradient buffer of node `id`, allocated on first use.
  std::vector<double>& grad_buffer(int id);
  Var var(int id) { return Var(this, id); }

 private:
  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------
// All binary ops require both operands on the same graph.

Var matmul(const Var& a, const Var& b);                 // [m×k]·[k×n]
Var add(const Var& a, const Var& b);                    // same shape
Var sub(const Var& a, const Var& b);                    // same shape
Var mul(const Var& a, const Var& b);                    // same shape
Var add_row(const Var& x, const Var& bias);             // [r×c] + [c]
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var exp(const Var& x);
Var log(const Var& x);                                  // requires x > 0
Var gelu(const Var& x);                                 // tanh approximation
Var log_sigmoid(const Var& x);
Var clamp(const Var& x, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var sum(const Var& x);                                  // -> scalar
Var mean(const Var& x);                                 // -> scalar
Var div_scalar(const Var& x, const Var& s);             // x / s, s scalar
Var embedding(const Var& table, std::span<const int> ids);        // [V×d] -> [n×d]
Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
               double eps = 1e-5);                      // normalise rows of [r×c]
Var log_softmax(const Var& x, std::size_t axis);
Var gather(const Var& x, std::span<const int> index);   // [r×c] -> [r], x[i, index[i]]
Var select_rows(const Var& x, std::span<const int> rows);  // [r×c] -> [n×c]
Var select_cols(const Var& x, std::span<const int> cols);  // [r×c] -> [r×n]
// Multi-head causal self-attention over a fused [T×3d] q|k|v projection.
Var causal_attention(const Var& qkv, std::size_t n_heads);

// ---- finite-difference gradient check --------------------------------------

struct GradCheckOptions {
  double eps = 1e-3;
  double tol_rel = 1e-3;
  // Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  // Worst coordinate: tensor index into the params span plus flat offset.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool non_finite = false;
  std::string message;
};

double relative_error(double analytic, double numeric);

// `loss` builds the scalar on the given graph, binding the params itself.
// Analytic gradients come from one backward pass; numeric ones from central
// differences (f(θ+h) − f(θ−h)) / (2h), where 2h is the float32-representable
// step actually taken.
GradCheckReport grad_check(const std::function<Var(Graph&)>& loss,
                           std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace ambig::num

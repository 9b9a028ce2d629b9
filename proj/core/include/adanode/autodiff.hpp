#pragma once

// Define-by-run reverse-mode automatic differentiation over dense tensors.
//
// A Graph is an append-only tape. Every op appends one node holding its
// forward value and, when any input requires a gradient, a closure that
// pushes the node's adjoint into its parents. Because nodes can only refer
// to earlier nodes, the tape order is already a topological order and
// backward() is a single reverse sweep.
//
// Binary elementwise ops broadcast a size-1 operand against anything and a
// single row (1 x c, or a rank-1 tensor of c entries) against an r x c
// matrix.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adanode/tensor.hpp"

namespace adanode {

enum class Activation { tanh, relu, softplus };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double value) { return leaf(Tensor::scalar(value), false); }

  // Appends an op result. The closure is kept only when gradients are enabled
  // and at least one parent requires a gradient.
  Var emit(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var emit(Tensor value, std::span<const Var> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  // Adjoint buffer of a node, zero-filled on first access during backward.
  std::span<double> grad_slot(std::size_t id);
  // Adjoint of `v` after backward(); zeros if nothing reached it.
  Tensor grad(Var v) const;

  struct Seed {
    Var output;
    Tensor cotangent;
  };
  void backward(Var output, const Tensor& seed);
  // Seeds a scalar output with 1.
  void backward(Var output);
  // Several outputs at once; their contributions add.
  void backward(std::span<const Seed> seeds);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t mark() const noexcept { return nodes_.size(); }
  // Drops every node appended after `mark`. Vars pointing past it become
  // invalid; using one in backward() is a state error.
  void rewind(std::size_t mark);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }

  // Set when a relu sees an input exactly at its kink.
  void note_kink() noexcept { kink_seen_ = true; }
  bool kink_seen() const noexcept { return kink_seen_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool kink_seen_ = false;
};

// RAII switch for evaluation-only passes.
class NoGradGuard {
 public:
  explicit NoGradGuard(Graph& g) : graph_(g), previous_(g.grad_enabled()) { g.set_grad_enabled(false); }
  ~NoGradGuard() { graph_.set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph& graph_;
  bool previous_;
};

// --- primitives -----------------------------------------------------------

// x: [B x n] (or [n]), W: [m x n], b: [m] -> [B x m] (or [m] for rank-1 x).
Var affine(Var x, Var W, Var b);
// a: [p x q], b: [q x r] -> [p x r]
Var matmul(Var a, Var b);

Var activation(Var x, Activation kind);
Var tanh(Var x);
Var relu(Var x);
Var softplus(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double c);
Var shift(Var x, double c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator-(Var x) { return scale(x, -1.0); }

// sum_i coeffs[i] * terms[i]; all terms share one shape.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);

Var sum(Var x);
Var mean(Var x);
// [B x c] -> [1 x c]
Var mean_rows(Var x);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
// Stacks rows; every part is [1 x c] or [c] or [r_i x c].
Var concat_rows(std::span<const Var> parts);
Var reshape(Var x, Tensor::Shape shape);

// Elementwise -log N(x; mu, sigma), with broadcasting across the three inputs.
Var gaussian_nll(Var x, Var mu, Var sigma);

// Scalar log-density of N(mu, sigma^2) at x. Throws DomainError for sigma <= 0.
double gaussian_log_density(double x, double mu, double sigma);

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Broadcast output shape of a binary elementwise op; DimensionError names both
// shapes on mismatch.
Tensor::Shape broadcast_shape(const Tensor::Shape& a, const Tensor::Shape& b);

}  // namespace adanode

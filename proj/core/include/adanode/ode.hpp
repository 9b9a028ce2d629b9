#pragma once

// Integrators for the adapted latent dynamics
//
//     dz/dt = f(alpha * z + gamma * 1, t; theta)
//
// `alpha` multiplies every latent coordinate and `gamma` is broadcast as a
// constant vector. (alpha, gamma) = (1, 0) leaves the dynamics untouched.
//
// The fixed-step RK4 path is written on the autodiff tape so the same code
// serves plain evaluation and exact backprop through the unrolled steps.
// Dormand-Prince 5(4) is forward-only.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "adanode/autodiff.hpp"
#include "adanode/parameters.hpp"
#include "adanode/tensor.hpp"

namespace adanode {

using GraphDynamicsFn = std::function<Var(Graph&, Var state, double t, const ParamVars& theta)>;
using PlainDynamicsFn = std::function<Tensor(const Tensor& state, double t, const ParameterSet& theta)>;

// f(state, t; theta). States may be batched ([B x d]); f maps rows
// independently. Provide graph_fn for anything that must be differentiated;
// plain_fn alone is enough for forward solves.
struct DynamicsSpec {
  std::size_t dim = 0;
  GraphDynamicsFn graph_fn;
  PlainDynamicsFn plain_fn;
};

enum class SolverMethod { rk4_fixed, dopri45_adaptive };

struct SolveConfig {
  SolverMethod method = SolverMethod::rk4_fixed;
  // RK4 step in time units; 0 means (t_N - t_0) / 100.
  double step_size = 0.0;
  double rtol = 1e-6;
  double atol = 1e-8;
  int max_steps = 10000;
  // Dormand-Prince starting step; 0 picks one from the local derivative scale.
  double initial_step = 0.0;

  void validate() const;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;
};

// Latent hook on the tape. Both Vars are single-element tensors.
struct LatentShift {
  Var alpha;
  Var gamma;
};

// Classical RK4 on the tape. Returns one state Var per entry of `times`
// (the first is z0 itself). Between consecutive output times the interval is
// split into ceil(dt / step_size) equal steps. `shift == nullptr` integrates
// f directly without the hook.
std::vector<Var> rk4_unroll(Graph& graph, const GraphDynamicsFn& f, const ParamVars& theta, Var z0,
                            std::span<const double> times, const LatentShift* shift, double step_size);

Trajectory solve_fixed_rk4(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                           std::span<const double> times, double alpha, double gamma, double step_size = 0.0);

// Same integrator without the (alpha, gamma) hook.
Trajectory solve_fixed_rk4(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                           std::span<const double> times, double step_size = 0.0);

// Dormand-Prince 5(4) with PI step control and 4th-order dense output.
// Every output time must lie in [t0, t_end]; they must be non-decreasing.
Trajectory solve_adaptive_dopri45(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0, double t0,
                                  double t_end, std::span<const double> output_times, const SolveConfig& config,
                                  double alpha = 1.0, double gamma = 0.0);

struct SolveSensitivities {
  GradMap theta;
  Tensor z0;
  double alpha = 0.0;
  double gamma = 0.0;
};

// An RK4 solve kept on its own tape so cotangents on the states can be
// pulled back to (theta, z0, alpha, gamma) any number of times.
class DifferentiableSolve {
 public:
  const Trajectory& trajectory() const noexcept { return trajectory_; }
  // One cotangent per output state, each shaped like the state.
  SolveSensitivities pullback(std::span<const Tensor> state_cotangents);

 private:
  friend DifferentiableSolve solve_with_grad(const DynamicsSpec&, const ParameterSet&, const Tensor&,
                                             std::span<const double>, double, double, double);
  DifferentiableSolve() = default;

  std::unique_ptr<Graph> graph_;
  ParameterSet params_;
  ParamVars theta_;
  Var z0_, alpha_, gamma_;
  std::vector<Var> states_;
  Trajectory trajectory_;
};

// Requires dyn.graph_fn (UsageError otherwise). Gradients are exact for the
// RK4 discretisation, not for the continuous flow.
DifferentiableSolve solve_with_grad(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                                    std::span<const double> times, double alpha, double gamma,
                                    double step_size = 0.0);

}  // namespace adanode

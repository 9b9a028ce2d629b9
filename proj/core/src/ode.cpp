#include "adanode/ode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "adanode/errors.hpp"

namespace adanode {

void SolveConfig::validate() const {
  if (step_size < 0.0) throw ConfigError("step_size must be positive (0 selects the default)");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("rtol and atol must be positive");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (initial_step < 0.0) throw ConfigError("initial_step must be non-negative");
}

namespace {

void check_grid(std::span<const double> times) {
  if (times.empty()) throw UsageError("solver needs at least one output time");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i])) throw UsageError("non-finite time in solver grid");
    if (i > 0 && !(times[i] > times[i - 1])) {
      std::ostringstream os;
      os << "solver grid must be strictly increasing; times[" << i - 1 << "] = " << times[i - 1] << ", times[" << i
         << "] = " << times[i];
      throw UsageError(os.str());
    }
  }
}

double default_step(std::span<const double> times, double step_size) {
  if (step_size > 0.0) return step_size;
  double span = times.back() - times.front();
  return span > 0.0 ? span / 100.0 : 1.0;
}

GraphDynamicsFn effective_fn(const DynamicsSpec& dyn, const ParameterSet& theta) {
  if (dyn.graph_fn) return dyn.graph_fn;
  if (!dyn.plain_fn) throw UsageError("dynamics spec has neither a graph nor a plain function");
  // Opaque node: forward value only.
  return [plain = dyn.plain_fn, &theta](Graph& g, Var u, double t, const ParamVars&) {
    return g.constant(plain(u.value(), t, theta));
  };
}

std::string divergence_message(double t) {
  std::ostringstream os;
  os << "latent state became non-finite after t = " << t;
  return os.str();
}

// Evaluates g(z, t) = f(alpha z + gamma, t) outside any gradient tape.
class ForwardEvaluator {
 public:
  ForwardEvaluator(const DynamicsSpec& dyn, const ParameterSet& theta, double alpha, double gamma)
      : dyn_(dyn), theta_(theta), alpha_(alpha), gamma_(gamma), guard_(graph_) {
    if (dyn_.graph_fn) {
      vars_ = theta.bind(graph_);
      alpha_var_ = graph_.constant(alpha);
      gamma_var_ = graph_.constant(gamma);
      mark_ = graph_.mark();
    } else if (!dyn_.plain_fn) {
      throw UsageError("dynamics spec has neither a graph nor a plain function");
    }
  }

  Tensor operator()(const Tensor& z, double t) {
    if (!dyn_.graph_fn) {
      std::vector<double> u(z.size());
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = z[i] * alpha_ + gamma_;
      return dyn_.plain_fn(Tensor::unchecked(z.shape(), std::move(u)), t, theta_);
    }
    Var zv = graph_.constant(z);
    Var u = add(mul(zv, alpha_var_), gamma_var_);
    Tensor out = dyn_.graph_fn(graph_, u, t, vars_).value();
    graph_.rewind(mark_);
    return out;
  }

 private:
  const DynamicsSpec& dyn_;
  const ParameterSet& theta_;
  double alpha_, gamma_;
  Graph graph_;
  NoGradGuard guard_;
  ParamVars vars_;
  Var alpha_var_, gamma_var_;
  std::size_t mark_ = 0;
};

Trajectory collect(std::span<const double> times, const std::vector<Var>& states) {
  Trajectory traj;
  traj.times.assign(times.begin(), times.end());
  traj.states.reserve(states.size());
  for (const auto& s : states) traj.states.push_back(s.value());
  return traj;
}

Trajectory solve_rk4_impl(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                          std::span<const double> times, const double* alpha, const double* gamma,
                          double step_size) {
  check_grid(times);
  if (!z0.all_finite()) throw DomainError("initial state is not finite");
  Graph g;
  NoGradGuard guard(g);
  auto vars = theta.bind(g);
  Var z = g.constant(z0);
  auto f = effective_fn(dyn, theta);
  std::vector<Var> states;
  if (alpha != nullptr) {
    LatentShift shift{g.constant(*alpha), g.constant(*gamma)};
    states = rk4_unroll(g, f, vars, z, times, &shift, step_size);
  } else {
    states = rk4_unroll(g, f, vars, z, times, nullptr, step_size);
  }
  return collect(times, states);
}

double rms_norm(std::span<const double> v, std::span<const double> scale) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double r = v[i] / scale[i];
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::vector<Var> rk4_unroll(Graph& graph, const GraphDynamicsFn& f, const ParamVars& theta, Var z0,
                            std::span<const double> times, const LatentShift* shift, double step_size) {
  check_grid(times);
  const double step = default_step(times, step_size);
  auto rhs = [&](Var state, double t) {
    Var u = shift ? add(mul(state, shift->alpha), shift->gamma) : state;
    return f(graph, u, t, theta);
  };

  std::vector<Var> states;
  states.reserve(times.size());
  states.push_back(z0);
  Var z = z0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double t_prev = times[k - 1];
    const double dt = times[k] - t_prev;
    const auto n = std::max<long>(1, static_cast<long>(std::ceil(dt / step - 1e-9)));
    const double h = dt / static_cast<double>(n);
    for (long s = 0; s < n; ++s) {
      const double t = t_prev + static_cast<double>(s) * h;
      Var k1 = rhs(z, t);
      std::array<Var, 2> p2{z, k1};
      std::array<double, 2> half{1.0, 0.5 * h};
      Var k2 = rhs(lincomb(p2, half), t + 0.5 * h);
      std::array<Var, 2> p3{z, k2};
      Var k3 = rhs(lincomb(p3, half), t + 0.5 * h);
      std::array<Var, 2> p4{z, k3};
      std::array<double, 2> full{1.0, h};
      Var k4 = rhs(lincomb(p4, full), t + h);
      std::array<Var, 5> terms{z, k1, k2, k3, k4};
      std::array<double, 5> weights{1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0};
      Var next = lincomb(terms, weights);
      if (!next.value().all_finite()) throw DivergenceError(divergence_message(t), t);
      z = next;
    }
    states.push_back(z);
  }
  return states;
}

Trajectory solve_fixed_rk4(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                           std::span<const double> times, double alpha, double gamma, double step_size) {
  return solve_rk4_impl(dyn, theta, z0, times, &alpha, &gamma, step_size);
}

Trajectory solve_fixed_rk4(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                           std::span<const double> times, double step_size) {
  return solve_rk4_impl(dyn, theta, z0, times, nullptr, nullptr, step_size);
}

// --- Dormand-Prince 5(4) ----------------------------------------------------------

namespace {

namespace dp {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// fifth-order minus embedded fourth-order weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
// continuous extension
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
}  // namespace dp

// y + h * sum_j a_j k_j over the flat data
Tensor stage(const Tensor& y, double h, std::initializer_list<std::pair<double, const Tensor*>> terms) {
  std::vector<double> out(y.values());
  for (const auto& [a, k] : terms) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += h * a * (*k)[i];
  }
  return Tensor::unchecked(y.shape(), std::move(out));
}

}  // namespace

Trajectory solve_adaptive_dopri45(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0, double t0,
                                  double t_end, std::span<const double> output_times, const SolveConfig& config,
                                  double alpha, double gamma) {
  config.validate();
  if (!(t_end > t0)) throw UsageError("dopri45: t_end must exceed t0");
  if (!z0.all_finite()) throw DomainError("initial state is not finite");
  for (std::size_t i = 0; i < output_times.size(); ++i) {
    double t = output_times[i];
    if (t < t0 || t > t_end) throw UsageError("dopri45: output time outside the integration span");
    if (i > 0 && t < output_times[i - 1]) throw UsageError("dopri45: output times must be non-decreasing");
  }

  ForwardEvaluator f(dyn, theta, alpha, gamma);
  const std::size_t n = z0.size();
  const double rtol = config.rtol, atol = config.atol;
  auto scale_of = [&](const Tensor& a, const Tensor& b) {
    std::vector<double> sk(n);
    for (std::size_t i = 0; i < n; ++i) sk[i] = atol + rtol * std::max(std::abs(a[i]), std::abs(b[i]));
    return sk;
  };

  Trajectory traj;
  traj.times.assign(output_times.begin(), output_times.end());
  traj.states.reserve(output_times.size());
  std::size_t next_out = 0;
  while (next_out < output_times.size() && output_times[next_out] == t0) {
    traj.states.push_back(z0);
    ++next_out;
  }

  Tensor y = z0;
  double t = t0;
  Tensor k1 = f(y, t);
  const double span = t_end - t0;

  double h = config.initial_step;
  if (h <= 0.0) {
    auto sk = scale_of(y, y);
    double d0 = rms_norm(y.data(), sk);
    double d1 = rms_norm(k1.data(), sk);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    Tensor y1 = stage(y, h0, {{1.0, &k1}});
    Tensor f1 = f(y1, t + h0);
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = f1[i] - k1[i];
    double d2 = rms_norm(diff, sk) / h0;
    double dm = std::max(d1, d2);
    double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    h = std::min({100.0 * h0, h1, span});
  }
  h = std::min(h, span);

  constexpr double safe = 0.9, beta = 0.04, facc1 = 1.0 / 0.2, facc2 = 1.0 / 10.0;
  const double expo1 = 0.2 - beta * 0.75;
  double facold = 1e-4;
  int steps = 0;
  bool last_rejected = false;

  while (t < t_end) {
    if (++steps > config.max_steps) {
      std::ostringstream os;
      os << "dopri45: exceeded max_steps = " << config.max_steps << " at t = " << t;
      throw StepLimitError(os.str());
    }
    if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
      std::ostringstream os;
      os << "dopri45: step size underflow at t = " << t << "; tolerance unreachable (problem may be stiff)";
      throw StiffnessError(os.str());
    }
    if (t + h > t_end) h = t_end - t;

    using namespace dp;
    Tensor k2 = f(stage(y, h, {{a21, &k1}}), t + c2 * h);
    Tensor k3 = f(stage(y, h, {{a31, &k1}, {a32, &k2}}), t + c3 * h);
    Tensor k4 = f(stage(y, h, {{a41, &k1}, {a42, &k2}, {a43, &k3}}), t + c4 * h);
    Tensor k5 = f(stage(y, h, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}), t + c5 * h);
    Tensor k6 = f(stage(y, h, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}), t + h);
    Tensor y_new = stage(y, h, {{a71, &k1}, {a73, &k3}, {a74, &k4}, {a75, &k5}, {a76, &k6}});
    if (!y_new.all_finite()) throw DivergenceError(divergence_message(t), t);
    Tensor k7 = f(y_new, t + h);

    std::vector<double> err(n);
    for (std::size_t i = 0; i < n; ++i) {
      err[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
    }
    double e = rms_norm(err, scale_of(y, y_new));
    if (!std::isfinite(e)) throw DivergenceError(divergence_message(t), t);

    double fac11 = std::pow(std::max(e, 1e-300), expo1);
    if (e <= 1.0) {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::clamp(fac / safe, facc2, facc1);
      double h_new = h / fac;
      facold = std::max(e, 1e-4);

      const double t_new = t + h;
      while (next_out < output_times.size() && output_times[next_out] <= t_new) {
        const double theta_frac = (output_times[next_out] - t) / h;
        const double theta1 = 1.0 - theta_frac;
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double ydiff = y_new[i] - y[i];
          const double bspl = h * k1[i] - ydiff;
          const double r4 = ydiff - h * k7[i] - bspl;
          const double r5 = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
          out[i] = y[i] + theta_frac * (ydiff + theta1 * (bspl + theta_frac * (r4 + theta1 * r5)));
        }
        traj.states.push_back(output_times[next_out] == t_new ? y_new : Tensor::unchecked(y.shape(), std::move(out)));
        ++next_out;
      }

      y = std::move(y_new);
      k1 = std::move(k7);
      t = t_new;
      if (last_rejected) h_new = std::min(h_new, h);
      last_rejected = false;
      h = h_new;
    } else {
      h /= std::min(facc1, fac11 / safe);
      last_rejected = true;
    }
  }
  while (next_out < output_times.size()) {
    traj.states.push_back(y);
    ++next_out;
  }
  return traj;
}

// --- differentiable solve ---------------------------------------------------------------

DifferentiableSolve solve_with_grad(const DynamicsSpec& dyn, const ParameterSet& theta, const Tensor& z0,
                                    std::span<const double> times, double alpha, double gamma,
                                    double step_size) {
  if (!dyn.graph_fn) throw UsageError("solve_with_grad needs dynamics built from autodiff primitives (graph_fn)");
  if (!z0.all_finite()) throw DomainError("initial state is not finite");
  DifferentiableSolve solve;
  solve.graph_ = std::make_unique<Graph>();
  solve.params_ = theta;
  Graph& g = *solve.graph_;
  solve.theta_ = theta.bind(g);
  solve.z0_ = g.leaf(z0, true);
  solve.alpha_ = g.leaf(Tensor::scalar(alpha), true);
  solve.gamma_ = g.leaf(Tensor::scalar(gamma), true);
  LatentShift shift{solve.alpha_, solve.gamma_};
  solve.states_ = rk4_unroll(g, dyn.graph_fn, solve.theta_, solve.z0_, times, &shift, step_size);
  solve.trajectory_ = collect(times, solve.states_);
  return solve;
}

SolveSensitivities DifferentiableSolve::pullback(std::span<const Tensor> state_cotangents) {
  if (state_cotangents.size() != states_.size()) {
    throw DimensionError("pullback needs one cotangent per state: expected " + std::to_string(states_.size()) +
                         ", got " + std::to_string(state_cotangents.size()));
  }
  std::vector<Graph::Seed> seeds;
  seeds.reserve(states_.size());
  for (std::size_t i = 0; i < states_.size(); ++i) seeds.push_back({states_[i], state_cotangents[i]});
  graph_->backward(seeds);
  SolveSensitivities out;
  out.theta = params_.gradients(*graph_, theta_);
  out.z0 = graph_->grad(z0_);
  out.alpha = graph_->grad(alpha_).item();
  out.gamma = graph_->grad(gamma_).item();
  return out;
}

}  // namespace adanode

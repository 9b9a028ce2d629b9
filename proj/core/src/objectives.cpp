#include "adanode/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "adanode/errors.hpp"

namespace adanode {

double gaussian_kl(const Tensor& mu_p, const Tensor& sigma_p, const Tensor& mu_q, const Tensor& sigma_q) {
  const std::size_t n = mu_p.size();
  if (sigma_p.size() != n || mu_q.size() != n || sigma_q.size() != n) {
    throw DimensionError("gaussian_kl: sizes " + shape_string(mu_p.shape()) + ", " + shape_string(sigma_p.shape()) +
                         ", " + shape_string(mu_q.shape()) + ", " + shape_string(sigma_q.shape()) + " differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sp = sigma_p[i], sq = sigma_q[i];
    if (!(sp > 0.0) || !(sq > 0.0)) throw DomainError("gaussian_kl: standard deviations must be positive");
    double d = mu_p[i] - mu_q[i];
    total += std::log(sq) - std::log(sp) + (sp * sp + d * d) / (2.0 * (sq * sq)) - 0.5;
  }
  return total;
}

double gaussian_kl(const LatentPosterior& p, const LatentPosterior& q) {
  return gaussian_kl(p.mean, p.stddev, q.mean, q.stddev);
}

Var gaussian_kl(Var mu_p, Var sigma_p, Var mu_q, Var sigma_q) {
  Var log_ratio = sub(log(sigma_q), log(sigma_p));
  Var quad = div(add(square(sigma_p), square(sub(mu_p, mu_q))), scale(square(sigma_q), 2.0));
  return sum(shift(add(log_ratio, quad), -0.5));
}

namespace {

void check_same_grid(std::span<const ForecastDistribution> forecasts) {
  if (forecasts.empty()) throw UsageError("need at least one forecast sample");
  const auto& first = forecasts.front();
  for (const auto& f : forecasts) {
    if (f.times != first.times) throw UsageError("forecast samples are on different time grids");
    if (f.mean.shape() != first.mean.shape() || f.stddev.shape() != first.mean.shape()) {
      throw DimensionError("forecast samples have inconsistent shapes");
    }
  }
}

}  // namespace

Tensor sample_mean_prediction(std::span<const ForecastDistribution> forecasts) {
  check_same_grid(forecasts);
  std::vector<double> acc(forecasts.front().mean.size(), 0.0);
  for (const auto& f : forecasts) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.mean[i];
  }
  const double s = static_cast<double>(forecasts.size());
  for (auto& v : acc) v /= s;
  return Tensor::unchecked(forecasts.front().mean.shape(), std::move(acc));
}

double tta_nll(std::span<const ForecastDistribution> forecasts) {
  Tensor ybar = sample_mean_prediction(forecasts);
  const std::size_t T = forecasts.front().times.size();
  double total = 0.0;
  for (const auto& f : forecasts) {
    double per_sample = 0.0;
    for (std::size_t i = 0; i < ybar.size(); ++i) per_sample -= gaussian_log_density(ybar[i], f.mean[i], f.stddev[i]);
    total += per_sample / static_cast<double>(T);
  }
  return total / static_cast<double>(forecasts.size());
}

double tta_kl(const LatentOdeModel& model, const TimeSeriesWindow& window,
              std::span<const ForecastDistribution> forecasts) {
  Tensor ybar = sample_mean_prediction(forecasts);
  if (forecasts.front().times != window.target_times) throw UsageError("forecasts do not cover the window targets");
  auto context = model.encode(window, EncodeMode::context_only);
  auto full = model.encode_with_targets(window, ybar);
  return gaussian_kl(context, full);
}

TTALossBreakdown tta_loss(double lambda, double nll, double kl) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  TTALossBreakdown out;
  out.nll = nll;
  out.kl = kl;
  out.lambda = lambda;
  out.total = lambda * nll + (1.0 - lambda) * kl;
  return out;
}

TTAGraphTerms tta_terms(const ModelGraph& mg, const TimeSeriesWindow& window, const Tensor& eps,
                        const LatentShift& shift) {
  const auto& model = mg.model();
  const auto& arch = model.architecture();
  Graph& g = mg.graph();
  if (window.target_times.empty()) throw UsageError("adaptation windows need target timestamps");
  const std::size_t S = eps.rows(), T = window.target_times.size(), d = arch.d_obs;

  auto context_post = mg.encode(g.constant(model.encoder_input(window, EncodeMode::context_only)));
  Var z0 = mg.sample(context_post, eps);
  auto grid = solve_grid(window);
  auto states = mg.solve(z0, grid, &shift);

  std::vector<Var> target_states;
  for (double t : window.target_times) {
    auto idx = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), t) - grid.begin());
    target_states.push_back(states[idx]);
  }
  auto [mu, sigma] = mg.decode(concat_rows(target_states));  // rows t*S + s

  auto averager = Tensor::zeros({T, T * S});
  auto replicate = Tensor::zeros({T * S, T});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      averager.at(t, t * S + s) = 1.0 / static_cast<double>(S);
      replicate.at(t * S + s, t) = 1.0;
    }
  }
  Var ybar = matmul(g.constant(averager), mu);
  Var ybar_rep = matmul(g.constant(replicate), ybar);
  Var nll = scale(sum(gaussian_nll(ybar_rep, mu, sigma)), 1.0 / static_cast<double>(S * T));

  std::vector<double> times(window.context_times);
  times.insert(times.end(), window.target_times.begin(), window.target_times.end());
  Tensor resample = resample_matrix(times, arch.encoder_length, times.front(), times.back());
  std::vector<Var> parts{g.constant(window.context_values), ybar};
  Var stacked = concat_rows(parts);
  Var full_input = reshape(matmul(g.constant(resample), stacked), {1, arch.encoder_length * d});
  auto full_post = mg.encode(full_input);
  Var kl = gaussian_kl(context_post.mean, context_post.stddev, full_post.mean, full_post.stddev);
  return {nll, kl};
}

ElboTerms elbo_terms(const ModelGraph& mg, std::span<const TimeSeriesWindow> windows, EncodeMode mode,
                     const Tensor& eps, double beta) {
  if (windows.empty()) throw UsageError("ELBO needs at least one window");
  const auto& model = mg.model();
  const auto& arch = model.architecture();
  Graph& g = mg.graph();
  const std::size_t B = windows.size();
  if (eps.rows() % B != 0 || eps.cols() != arch.d_lat) {
    throw DimensionError("ELBO noise " + shape_string(eps.shape()) + " does not fit " + std::to_string(B) +
                         " windows of latent dimension " + std::to_string(arch.d_lat));
  }
  const std::size_t S = eps.rows() / B, d = arch.d_obs, L = arch.encoder_length * d;

  const auto& first = windows.front();
  std::vector<double> inputs;
  inputs.reserve(B * L);
  for (const auto& w : windows) {
    if (!w.target_values) throw UsageError("ELBO needs target values");
    if (w.context_times != first.context_times || w.target_times != first.target_times) {
      throw UsageError("batched windows must share their timestamps");
    }
    auto x = model.encoder_input(w, mode);
    inputs.insert(inputs.end(), x.values().begin(), x.values().end());
  }
  auto post = mg.encode(g.constant(Tensor::unchecked({B, L}, std::move(inputs))));

  Var mean = post.mean, stddev = post.stddev;
  if (S > 1 || B > 1) {
    auto select = Tensor::zeros({B * S, B});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < S; ++s) select.at(b * S + s, b) = 1.0;
    }
    Var sel = g.constant(std::move(select));
    mean = matmul(sel, mean);
    stddev = matmul(sel, stddev);
  }
  Var z0 = add(mean, mul(stddev, g.constant(eps)));

  auto grid = solve_grid(first);
  auto states = mg.solve(z0, grid, nullptr);
  auto [mu, sigma] = mg.decode(concat_rows(states));

  // Grid is context then targets, so grid index g maps to a row of one of the two value blocks.
  const std::size_t G = grid.size(), Nc = first.context_times.size();
  std::vector<double> y(G * B * S * d);
  for (std::size_t gi = 0; gi < G; ++gi) {
    for (std::size_t b = 0; b < B; ++b) {
      const Tensor& src = gi < Nc ? windows[b].context_values : *windows[b].target_values;
      std::size_t r = gi < Nc ? gi : gi - Nc;
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < d; ++j) y[((gi * B + b) * S + s) * d + j] = src.at(r, j);
      }
    }
  }
  Var target = g.constant(Tensor::unchecked({G * B * S, d}, std::move(y)));
  Var recon = scale(sum(gaussian_nll(target, mu, sigma)), 1.0 / static_cast<double>(B * S));
  Var kl = scale(gaussian_kl(post.mean, post.stddev, g.constant(0.0), g.constant(1.0)), 1.0 / static_cast<double>(B));
  return {recon, kl, add(recon, scale(kl, beta))};
}

double elbo_loss(const LatentOdeModel& model, const TimeSeriesWindow& window, std::size_t n_samples,
                 std::uint64_t seed, double beta) {
  if (!window.target_values) throw UsageError("elbo_loss needs target values");
  if (n_samples < 1) throw UsageError("elbo_loss needs at least one sample");
  Graph g;
  NoGradGuard guard(g);
  ModelGraph mg(g, model);
  auto eps = standard_normal(n_samples, model.architecture().d_lat, seed);
  return elbo_terms(mg, std::span(&window, 1), EncodeMode::full_sequence, eps, beta).total.value().item();
}

}  // namespace adanode

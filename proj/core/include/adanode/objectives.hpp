#pragma once

// Losses: Gaussian KL, the test-time loss (NLL of the sample-mean prediction
// plus KL between context and full-sequence posteriors) and the source ELBO.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adanode/autodiff.hpp"
#include "adanode/model.hpp"
#include "adanode/tensor.hpp"

namespace adanode {

// KL(p || q) for diagonal Gaussians, summed over coordinates.
// DomainError for a nonpositive standard deviation.
double gaussian_kl(const Tensor& mu_p, const Tensor& sigma_p, const Tensor& mu_q, const Tensor& sigma_q);
double gaussian_kl(const LatentPosterior& p, const LatentPosterior& q);
// Tape version; broadcasting as in add/mul, returns the total as a [1] Var.
Var gaussian_kl(Var mu_p, Var sigma_p, Var mu_q, Var sigma_q);

// Per-timestep sample mean of the predicted means, [T x d_obs].
Tensor sample_mean_prediction(std::span<const ForecastDistribution> forecasts);

// Average over samples and timesteps of -log N(ybar_t; mu_t^s, sigma_t^s),
// summed over observation dimensions.
double tta_nll(std::span<const ForecastDistribution> forecasts);

// KL(q(context) || q(context + ybar on the targets)).
double tta_kl(const LatentOdeModel& model, const TimeSeriesWindow& window,
              std::span<const ForecastDistribution> forecasts);

struct TTALossBreakdown {
  double nll = 0.0;
  double kl = 0.0;
  double lambda = 0.5;
  double total = 0.0;
};

// ConfigError unless 0 <= lambda <= 1.
TTALossBreakdown tta_loss(double lambda, double nll, double kl);

// The same two terms on a tape, differentiable in (alpha, gamma) through the
// latent shift. eps is [S x d_lat].
struct TTAGraphTerms {
  Var nll;
  Var kl;
};
TTAGraphTerms tta_terms(const ModelGraph& mg, const TimeSeriesWindow& window, const Tensor& eps,
                        const LatentShift& shift);

struct ElboTerms {
  Var reconstruction;
  Var kl;
  Var total;
};

// ELBO over a batch of windows that share one timestamp layout. Latent
// samples come from the posterior of `mode`; the reconstruction covers every
// context and target point and is averaged over windows and samples. eps is
// [B*S x d_lat], row b*S + s.
ElboTerms elbo_terms(const ModelGraph& mg, std::span<const TimeSeriesWindow> windows, EncodeMode mode,
                     const Tensor& eps, double beta);

// Single-window ELBO with samples from the ground-truth full-sequence
// posterior. UsageError without target values.
double elbo_loss(const LatentOdeModel& model, const TimeSeriesWindow& window, std::size_t n_samples,
                 std::uint64_t seed, double beta = 1.0);

}  // namespace adanode

#pragma once

// Test-time adaptation: the model is frozen and only (log alpha, gamma) are
// optimised with RMSprop on lambda * NLL + (1 - lambda) * KL, averaged over a
// batch of unlabelled windows.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adanode/model.hpp"
#include "adanode/objectives.hpp"

namespace adanode {

struct AdaptConfig {
  double learning_rate = 1e-2;
  std::size_t steps = 50;
  double lambda = 0.5;
  std::size_t n_samples = 5;
  std::uint64_t seed = 0;
  double rho = 0.9;
  double eps = 1e-8;
  // Halvings tried on a diverging step before it is given up.
  int max_halvings = 8;
  // Target values, if present, are ignored.
  std::vector<TimeSeriesWindow> batch;

  void validate() const;
};

struct AdaptStep {
  double alpha = 1.0;
  double gamma = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double learning_rate = 0.0;
  // Divergent proposals discarded (with the rate halved) before this step.
  int rejections = 0;
  // True when every retry diverged and the parameters were left unchanged.
  bool skipped = false;
};

// Entry 0 is the initial point, then one entry per step.
struct AdaptTrace {
  std::vector<AdaptStep> steps;
};

struct AdaptResult {
  AdaptationParams params;
  double loss = 0.0;
  AdaptTrace trace;
};

AdaptationParams init_adaptation();

// Noise for window `index` of a batch; fixed for the whole session so the
// loss is a deterministic function of (alpha, gamma).
Tensor adaptation_noise(std::uint64_t seed, std::size_t index, std::size_t n_samples, std::size_t d_lat);

struct BatchLoss {
  TTALossBreakdown loss;
  double grad_log_alpha = 0.0;
  double grad_gamma = 0.0;
};

// Batch-averaged loss at `params`; gradients are filled when with_grad.
// Throws DivergenceError when any window's latent solve blows up.
BatchLoss adaptation_loss(const LatentOdeModel& model, const AdaptConfig& config, const AdaptationParams& params,
                          bool with_grad);

AdaptResult adapt(const LatentOdeModel& model, const AdaptConfig& config);

void save_adaptation(const AdaptResult& result, const AdaptConfig& config, const std::filesystem::path& path);
std::string adaptation_to_string(const AdaptResult& result, const AdaptConfig& config);
AdaptationParams load_adaptation(const std::filesystem::path& path);

}  // namespace adanode

#pragma once

// Source training of the forecaster on labelled windows.
//
// Each iteration draws a minibatch and minimises
//     ELBO(full-sequence posterior) + context_weight * ELBO(context posterior)
// with RMSprop. The second term trains the path used at forecast time, where
// only the context is encoded.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "adanode/model.hpp"

namespace adanode {

struct TrainConfig {
  std::size_t iterations = 1500;
  std::size_t batch_size = 16;
  std::size_t n_samples = 1;
  double learning_rate = 3e-3;
  double rho = 0.9;
  double eps = 1e-8;
  double beta = 1.0;
  double context_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  LatentOdeModel model;
  std::vector<double> losses;
};

using TrainProgressFn = std::function<void(std::size_t iteration, double loss)>;

// All windows must carry target values and share one timestamp layout.
TrainResult train(const LatentOdeModel& init, std::span<const TimeSeriesWindow> windows, const TrainConfig& config,
                  const TrainProgressFn& progress = {});

}  // namespace adanode

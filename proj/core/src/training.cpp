#include "adanode/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adanode/errors.hpp"
#include "adanode/objectives.hpp"
#include "adanode/optim.hpp"

namespace adanode {

void TrainConfig::validate() const {
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (n_samples == 0) throw ConfigError("n_samples must be positive");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(context_weight >= 0.0)) throw ConfigError("context_weight must be non-negative");
  RmsPropSettings{learning_rate, rho, eps}.validate();
}

TrainResult train(const LatentOdeModel& init, std::span<const TimeSeriesWindow> windows, const TrainConfig& config,
                  const TrainProgressFn& progress) {
  config.validate();
  if (windows.empty()) throw EmptyDatasetError("no training windows");
  for (const auto& w : windows) {
    w.validate();
    if (!w.target_values) throw UsageError("training windows need target values");
  }

  ParameterSet params = init.parameters();
  params.unfreeze_all();
  RmsProp opt({config.learning_rate, config.rho, config.eps});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  const std::size_t batch = std::min(config.batch_size, windows.size());
  const std::size_t d_lat = init.architecture().d_lat;
  std::vector<double> losses;
  losses.reserve(config.iterations);
  std::vector<TimeSeriesWindow> minibatch(batch);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      minibatch[b] = windows[order[cursor++]];
    }
    auto eps_full = standard_normal(batch * config.n_samples, d_lat, rng());
    auto eps_context = standard_normal(batch * config.n_samples, d_lat, rng());

    LatentOdeModel current(init.architecture(), params);
    Graph g;
    ModelGraph mg(g, current);
    auto full = elbo_terms(mg, minibatch, EncodeMode::full_sequence, eps_full, config.beta);
    Var loss = full.total;
    if (config.context_weight > 0.0) {
      auto ctx = elbo_terms(mg, minibatch, EncodeMode::context_only, eps_context, config.beta);
      loss = add(loss, scale(ctx.total, config.context_weight));
    }
    double value = loss.value().item();
    if (!std::isfinite(value)) throw DivergenceError("training loss became non-finite", static_cast<double>(it));
    g.backward(loss);
    opt.step(params, params.gradients(g, mg.vars()));
    losses.push_back(value);
    if (progress) progress(it, value);
  }
  return {LatentOdeModel(init.architecture(), params), std::move(losses)};
}

}  // namespace adanode

#include "adanode/optim.hpp"

#include <cmath>

#include "adanode/errors.hpp"

namespace adanode {

void RmsPropSettings::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rmsprop decay must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("rmsprop epsilon must be positive");
}

RmsPropUpdate rmsprop_step(double value, double grad, double state, double lr, double rho, double eps) {
  double s = rho * state + (1.0 - rho) * grad * grad;
  return {value - lr * grad / std::sqrt(s + eps), s};
}

void RmsProp::step(ParameterSet& params, const GradMap& grads) {
  for (const auto& e : params.entries()) {
    if (e.frozen) continue;
    auto g = grads.find(e.name);
    if (g == grads.end()) continue;
    auto it = state_.try_emplace(e.name, Tensor::zeros(e.value.shape())).first;
    Tensor& s = it->second;
    std::vector<double> next(e.value.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
      auto u = rmsprop_step(e.value[i], g->second[i], s[i], settings_.learning_rate, settings_.rho, settings_.eps);
      next[i] = u.value;
      s[i] = u.state;
    }
    params.set(e.name, Tensor(e.value.shape(), std::move(next)));
  }
}

}  // namespace adanode

#pragma once

#include <map>
#include <string>

#include "adanode/parameters.hpp"
#include "adanode/tensor.hpp"

namespace adanode {

struct RmsPropSettings {
  double learning_rate = 1e-2;
  double rho = 0.9;
  double eps = 1e-8;

  void validate() const;
};

struct RmsPropUpdate {
  double value;
  double state;
};

// s <- rho s + (1 - rho) g^2;  value <- value - lr g / sqrt(s + eps)
RmsPropUpdate rmsprop_step(double value, double grad, double state, double lr, double rho, double eps);

// Elementwise RMSprop over the non-frozen entries of a ParameterSet.
class RmsProp {
 public:
  explicit RmsProp(RmsPropSettings settings) : settings_(settings) { settings_.validate(); }

  void step(ParameterSet& params, const GradMap& grads);
  const RmsPropSettings& settings() const noexcept { return settings_; }

 private:
  RmsPropSettings settings_;
  std::map<std::string, Tensor, std::less<>> state_;
};

}  // namespace adanode

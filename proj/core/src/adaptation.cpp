#include "adanode/adaptation.hpp"

#include <cmath>
#include <fstream>

#include "adanode/errors.hpp"
#include "adanode/optim.hpp"
#include "adanode/parallel.hpp"
#include "adanode/seeds.hpp"
#include "json.hpp"

namespace adanode {

void AdaptConfig::validate() const {
  RmsPropSettings{learning_rate, rho, eps}.validate();
  if (steps == 0) throw ConfigError("adaptation steps must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (n_samples == 0) throw ConfigError("n_samples must be positive");
  if (max_halvings < 0) throw ConfigError("max_halvings must be non-negative");
  if (batch.empty()) throw EmptyDatasetError("adaptation batch is empty");
}

AdaptationParams init_adaptation() { return AdaptationParams(1.0, 0.0); }

Tensor adaptation_noise(std::uint64_t seed, std::size_t index, std::size_t n_samples, std::size_t d_lat) {
  return standard_normal(n_samples, d_lat, derive_seed(seed, index));
}

namespace {

struct WindowLoss {
  double nll = 0.0;
  double kl = 0.0;
  double grad_a = 0.0;
  double grad_c = 0.0;
};

WindowLoss window_loss(const LatentOdeModel& frozen, const TimeSeriesWindow& window, const Tensor& eps,
                       double lambda, double log_alpha, double gamma, bool with_grad) {
  Graph g;
  g.set_grad_enabled(with_grad);
  ModelGraph mg(g, frozen);
  Var a = g.leaf(Tensor::scalar(log_alpha), true);
  Var c = g.leaf(Tensor::scalar(gamma), true);
  LatentShift shift{exp(a), c};
  auto terms = tta_terms(mg, window, eps, shift);
  WindowLoss out{terms.nll.value().item(), terms.kl.value().item()};
  if (with_grad) {
    Var total = add(scale(terms.nll, lambda), scale(terms.kl, 1.0 - lambda));
    g.backward(total);
    out.grad_a = g.grad(a).item();
    out.grad_c = g.grad(c).item();
  }
  return out;
}

}  // namespace

BatchLoss adaptation_loss(const LatentOdeModel& model, const AdaptConfig& config, const AdaptationParams& params,
                          bool with_grad) {
  config.validate();
  ParameterSet frozen_params = model.parameters();
  frozen_params.freeze_all();
  LatentOdeModel frozen(model.architecture(), std::move(frozen_params));

  const std::size_t B = config.batch.size(), d_lat = model.architecture().d_lat;
  std::vector<WindowLoss> parts(B);
  parallel_for(B, [&](std::size_t i) {
    auto window = config.batch[i].without_targets();
    auto eps = adaptation_noise(config.seed, i, config.n_samples, d_lat);
    parts[i] = window_loss(frozen, window, eps, config.lambda, params.log_alpha(), params.gamma(), with_grad);
  });

  double nll = 0.0, kl = 0.0, ga = 0.0, gc = 0.0;
  for (const auto& p : parts) {
    nll += p.nll;
    kl += p.kl;
    ga += p.grad_a;
    gc += p.grad_c;
  }
  const double n = static_cast<double>(B);
  BatchLoss out;
  out.loss = tta_loss(config.lambda, nll / n, kl / n);
  out.grad_log_alpha = ga / n;
  out.grad_gamma = gc / n;
  if (!std::isfinite(out.loss.total) || !std::isfinite(out.grad_log_alpha) || !std::isfinite(out.grad_gamma)) {
    throw DivergenceError("adaptation loss is non-finite", 0.0);
  }
  return out;
}

AdaptResult adapt(const LatentOdeModel& model, const AdaptConfig& config) {
  config.validate();
  AdaptationParams current = init_adaptation();
  BatchLoss at_current;
  try {
    at_current = adaptation_loss(model, config, current, true);
  } catch (const DivergenceError& e) {
    throw AdaptationError(std::string("loss diverges at the identity adaptation: ") + e.what());
  }

  AdaptResult result;
  auto record = [&](const AdaptationParams& p, const BatchLoss& l, double lr, int rejections, bool skipped) {
    result.trace.steps.push_back(
        AdaptStep{p.alpha(), p.gamma(), l.loss.nll, l.loss.kl, l.loss.total, lr, rejections, skipped});
  };
  record(current, at_current, 0.0, 0, false);
  result.params = current;
  result.loss = at_current.loss.total;

  double state_a = 0.0, state_c = 0.0;
  std::size_t skipped_steps = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    double lr = config.learning_rate;
    int rejections = 0;
    bool accepted = false;
    for (int attempt = 0; attempt <= config.max_halvings; ++attempt) {
      auto ua = rmsprop_step(current.log_alpha(), at_current.grad_log_alpha, state_a, lr, config.rho, config.eps);
      auto uc = rmsprop_step(current.gamma(), at_current.grad_gamma, state_c, lr, config.rho, config.eps);
      try {
        AdaptationParams proposal = AdaptationParams::from_log_alpha(ua.value, uc.value);
        BatchLoss l = adaptation_loss(model, config, proposal, true);
        current = proposal;
        at_current = l;
        state_a = ua.state;
        state_c = uc.state;
        accepted = true;
      } catch (const DivergenceError&) {
      } catch (const DomainError&) {
        // exp(log alpha) overflowed or underflowed to zero
      }
      if (accepted) break;
      ++rejections;
      lr *= 0.5;
    }
    if (!accepted) ++skipped_steps;
    record(current, at_current, accepted ? lr : 0.0, rejections, !accepted);
    if (at_current.loss.total < result.loss) {
      result.loss = at_current.loss.total;
      result.params = current;
    }
  }
  if (skipped_steps == config.steps) {
    throw AdaptationError("every adaptation step diverged, even after " + std::to_string(config.max_halvings) +
                          " learning-rate halvings");
  }
  return result;
}

std::string adaptation_to_string(const AdaptResult& result, const AdaptConfig& config) {
  nlohmann::json doc{{"alpha", result.params.alpha()},
                     {"gamma", result.params.gamma()},
                     {"final_loss", result.loss},
                     {"steps", config.steps},
                     {"seed", config.seed}};
  return doc.dump(1) + "\n";
}

void save_adaptation(const AdaptResult& result, const AdaptConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << adaptation_to_string(result, config);
}

AdaptationParams load_adaptation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open adaptation file: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("adaptation file is not valid JSON: ") + e.what(), e.byte);
  }
  if (!doc.is_object() || !doc.contains("alpha") || !doc.contains("gamma") || !doc["alpha"].is_number() ||
      !doc["gamma"].is_number()) {
    throw ParseError("adaptation file needs numeric alpha and gamma", 0);
  }
  return AdaptationParams(doc["alpha"].get<double>(), doc["gamma"].get<double>());
}

}  // namespace adanode

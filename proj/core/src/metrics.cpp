#include "adanode/metrics.hpp"

#include <cmath>
#include <string>

#include "adanode/errors.hpp"

namespace adanode {

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> truth, std::size_t minimum) {
  if (pred.size() != truth.size()) {
    throw UsageError("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  if (pred.size() < minimum) throw UsageError("metric needs at least " + std::to_string(minimum) + " points");
}

struct Moments {
  double mean_p = 0.0, mean_t = 0.0, var_p = 0.0, var_t = 0.0, cov = 0.0;
};

Moments moments(std::span<const double> p, std::span<const double> t) {
  Moments m;
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    m.mean_p += p[i];
    m.mean_t += t[i];
  }
  m.mean_p /= n;
  m.mean_t /= n;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double dp = p[i] - m.mean_p, dt = t[i] - m.mean_t;
    m.var_p += dp * dp;
    m.var_t += dt * dt;
    m.cov += dp * dt;
  }
  m.var_p /= n;
  m.var_t /= n;
  m.cov /= n;
  return m;
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double pearson_cc(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 2);
  auto m = moments(pred, truth);
  if (m.var_p == 0.0 || m.var_t == 0.0) throw UndefinedCorrelationError("correlation of a constant series");
  return m.cov / (std::sqrt(m.var_p) * std::sqrt(m.var_t));
}

double ccc(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 2);
  auto m = moments(pred, truth);
  if (m.var_p == 0.0 && m.var_t == 0.0 && m.mean_p == m.mean_t) return 1.0;
  if (m.var_p == 0.0 || m.var_t == 0.0) throw UndefinedCorrelationError("concordance of a constant series");
  double d = m.mean_p - m.mean_t;
  return 2.0 * m.cov / (m.var_p + m.var_t + d * d);
}

}  // namespace adanode

#include "adanode/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "adanode/errors.hpp"

namespace adanode {

void ParamVars::insert(std::string name, Var v) { vars_.insert_or_assign(std::move(name), v); }

Var ParamVars::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return it->second;
}

void ParameterSet::add(std::string name, Tensor value, bool frozen) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), frozen});
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Tensor& ParameterSet::get(std::string_view name) const { return entries_[index_of(name)].value; }

void ParameterSet::set(std::string_view name, Tensor value) {
  auto& e = entries_[index_of(name)];
  if (e.frozen) throw StateError("parameter '" + e.name + "' is frozen");
  if (e.value.shape() != value.shape()) {
    throw DimensionError("parameter '" + e.name + "' has shape " + shape_string(e.value.shape()) + ", got " +
                         shape_string(value.shape()));
  }
  e.value = std::move(value);
}

bool ParameterSet::frozen(std::string_view name) const { return entries_[index_of(name)].frozen; }
void ParameterSet::freeze(std::string_view name) { entries_[index_of(name)].frozen = true; }

void ParameterSet::freeze_all() {
  for (auto& e : entries_) e.frozen = true;
}

void ParameterSet::unfreeze_all() {
  for (auto& e : entries_) e.frozen = false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamVars ParameterSet::bind(Graph& graph) const {
  ParamVars vars;
  for (const auto& e : entries_) vars.insert(e.name, graph.leaf(e.value, !e.frozen));
  return vars;
}

GradMap ParameterSet::gradients(const Graph& graph, const ParamVars& vars) const {
  GradMap grads;
  for (const auto& e : entries_) {
    if (e.frozen) continue;
    grads.emplace(e.name, graph.grad(vars[e.name]));
  }
  return grads;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
  }
  return true;
}

std::uint64_t parameter_digest(const ParameterSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : params.entries()) {
    mix(e.name.data(), e.name.size());
    for (auto d : e.value.shape()) mix(&d, sizeof d);
    mix(e.value.data().data(), e.value.size() * sizeof(double));
  }
  return h;
}

double relative_error(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const ScalarGraphFn& fn, const ParameterSet& params, double eps) {
  GradCheckResult result;
  GradMap analytic;
  {
    Graph g;
    auto vars = params.bind(g);
    Var out = fn(g, vars);
    if (out.value().size() != 1) {
      throw UsageError("grad_check needs a scalar output, got " + shape_string(out.value().shape()));
    }
    result.excluded_kink = g.kink_seen();
    g.backward(out);
    analytic = params.gradients(g, vars);
  }

  auto evaluate = [&fn](const ParameterSet& p) {
    Graph g;
    NoGradGuard guard(g);
    auto vars = p.bind(g);
    return fn(g, vars).value().item();
  };

  ParameterSet probe = params;
  probe.unfreeze_all();
  for (const auto& e : params.entries()) {
    if (e.frozen) continue;
    const auto& grad = analytic.at(e.name);
    Tensor base = e.value;
    for (std::size_t i = 0; i < base.size(); ++i) {
      Tensor plus = base, minus = base;
      plus[i] += eps;
      minus[i] -= eps;
      probe.set(e.name, plus);
      double fp = evaluate(probe);
      probe.set(e.name, minus);
      double fm = evaluate(probe);
      double numeric = (fp - fm) / (2.0 * eps);
      double err = relative_error(grad[i], numeric);
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = e.name + "[" + std::to_string(i) + "]";
      }
    }
    probe.set(e.name, base);
  }
  return result;
}

}  // namespace adanode

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "adanode/autodiff.hpp"
#include "adanode/tensor.hpp"

namespace adanode {

// Graph leaves bound from a ParameterSet, looked up by name.
class ParamVars {
 public:
  void insert(std::string name, Var v);
  Var operator[](std::string_view name) const;
  bool contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }
  const std::map<std::string, Var, std::less<>>& items() const noexcept { return vars_; }

 private:
  std::map<std::string, Var, std::less<>> vars_;
};

using GradMap = std::map<std::string, Tensor, std::less<>>;

// Named tensors with a per-entry frozen flag. Entries keep insertion order,
// which is also the serialization order. A frozen entry cannot be written
// through set(); optimizers skip it.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool frozen = false;
  };

  void add(std::string name, Tensor value, bool frozen = false);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  void set(std::string_view name, Tensor value);

  bool frozen(std::string_view name) const;
  void freeze(std::string_view name);
  void freeze_all();
  void unfreeze_all();

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  // One leaf per entry; frozen entries never require a gradient.
  ParamVars bind(Graph& graph) const;
  // Gradients of the non-frozen entries after graph.backward().
  GradMap gradients(const Graph& graph, const ParamVars& vars) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// FNV-1a over names, shapes and the raw bytes of every value.
std::uint64_t parameter_digest(const ParameterSet& params);

// --- gradient checking ----------------------------------------------------

// Builds a scalar-valued graph from bound parameters.
using ScalarGraphFn = std::function<Var(Graph&, const ParamVars&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  // True when the base evaluation hit a relu kink; the comparison is not
  // meaningful at such a point and should be skipped by the caller.
  bool excluded_kink = false;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares reverse-mode gradients of every non-frozen parameter against
// central differences with step `eps`. UsageError for non-scalar output.
GradCheckResult grad_check(const ScalarGraphFn& fn, const ParameterSet& params, double eps = 1e-5);

}  // namespace adanode

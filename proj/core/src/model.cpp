#include "adanode/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "adanode/errors.hpp"
#include "json.hpp"

namespace adanode {

using nlohmann::json;

// --- value types ----------------------------------------------------------------

void Architecture::validate() const {
  if (d_obs == 0 || d_lat == 0) throw ConfigError("d_obs and d_lat must be positive");
  if (encoder_length < 2) throw ConfigError("encoder_length must be at least 2");
  for (const auto* widths : {&encoder_hidden, &dynamics_hidden, &decoder_hidden}) {
    for (auto w : *widths) {
      if (w == 0) throw ConfigError("hidden layer widths must be positive");
    }
  }
  if (!(ode_step >= 0.0) || !std::isfinite(ode_step)) throw ConfigError("ode_step must be >= 0");
  if (!(sigma_floor >= 0.0) || !std::isfinite(sigma_floor)) throw ConfigError("sigma_floor must be >= 0");
}

void TimeSeriesWindow::validate() const {
  if (context_times.empty()) throw UsageError("window has an empty context");
  if (context_values.rows() != context_times.size()) {
    throw DimensionError("context has " + std::to_string(context_times.size()) + " timestamps but " +
                         std::to_string(context_values.rows()) + " value rows");
  }
  for (std::size_t i = 1; i < context_times.size(); ++i) {
    if (!(context_times[i] > context_times[i - 1])) throw UsageError("context timestamps must be strictly increasing");
  }
  for (std::size_t i = 0; i < target_times.size(); ++i) {
    if (!(target_times[i] > context_times.back())) throw UsageError("target timestamps must follow the context");
    if (i > 0 && !(target_times[i] > target_times[i - 1])) {
      throw UsageError("target timestamps must be strictly increasing");
    }
  }
  if (target_values) {
    if (target_values->rows() != target_times.size() || target_values->cols() != obs_dim()) {
      throw DimensionError("target values " + shape_string(target_values->shape()) + " do not match " +
                           std::to_string(target_times.size()) + " timestamps of dimension " +
                           std::to_string(obs_dim()));
    }
  }
}

TimeSeriesWindow TimeSeriesWindow::without_targets() const {
  TimeSeriesWindow w = *this;
  w.target_values.reset();
  return w;
}

AdaptationParams::AdaptationParams(double alpha, double gamma) : alpha_(alpha), gamma_(gamma) {
  if (!std::isfinite(alpha) || !std::isfinite(gamma)) throw DomainError("alpha and gamma must be finite");
  if (!(alpha > 0.0)) throw DomainError("alpha must be positive, got " + std::to_string(alpha));
}

AdaptationParams AdaptationParams::from_log_alpha(double log_alpha, double gamma) {
  return AdaptationParams(std::exp(log_alpha), gamma);
}

double AdaptationParams::log_alpha() const { return std::log(alpha_); }

// --- helpers --------------------------------------------------------------------

Tensor resample_matrix(std::span<const double> times, std::size_t points, double t_begin, double t_end) {
  if (points < 2) throw InterpolationError("resampling needs at least 2 target points");
  if (times.size() < 2) {
    throw InterpolationError("linear resampling needs at least 2 samples, got " + std::to_string(times.size()));
  }
  const std::size_t n = times.size();
  auto m = Tensor::zeros({points, n});
  for (std::size_t j = 0; j < points; ++j) {
    double tau = j + 1 == points ? t_end
                                 : t_begin + static_cast<double>(j) * (t_end - t_begin) / static_cast<double>(points - 1);
    if (tau <= times.front()) {
      m.at(j, 0) = 1.0;
      continue;
    }
    if (tau >= times.back()) {
      m.at(j, n - 1) = 1.0;
      continue;
    }
    auto it = std::upper_bound(times.begin(), times.end(), tau);
    std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
    double w = (tau - times[k]) / (times[k + 1] - times[k]);
    m.at(j, k) = 1.0 - w;
    m.at(j, k + 1) = w;
  }
  return m;
}

std::vector<double> solve_grid(const TimeSeriesWindow& window) {
  std::vector<double> grid(window.context_times);
  grid.insert(grid.end(), window.target_times.begin(), window.target_times.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

Tensor standard_normal(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(rows * dim);
  for (auto& x : v) x = nd(rng);
  return Tensor({rows, dim}, std::move(v));
}

Tensor sample_latent(const LatentPosterior& post, std::uint64_t seed) {
  const std::size_t d = post.mean.size();
  if (post.stddev.size() != d) throw DimensionError("posterior mean/stddev size mismatch");
  Tensor eps = standard_normal(1, d, seed);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < d; ++i) z[i] = post.mean[i] + post.stddev[i] * eps[i];
  return Tensor::vector(std::move(z));
}

namespace {

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  Graph g;
  NoGradGuard guard(g);
  return matmul(g.constant(a), g.constant(b)).value();
}

void append_mlp(std::vector<std::pair<std::string, Tensor::Shape>>& layout, const std::string& prefix,
                std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layout.emplace_back(prefix + "." + std::to_string(i) + ".W", Tensor::Shape{sizes[i + 1], sizes[i]});
    layout.emplace_back(prefix + "." + std::to_string(i) + ".b", Tensor::Shape{sizes[i + 1]});
  }
}

Var mlp(const ParamVars& vars, const std::string& prefix, std::size_t layers, Activation act, Var x) {
  for (std::size_t i = 0; i < layers; ++i) {
    auto idx = std::to_string(i);
    x = affine(x, vars[prefix + "." + idx + ".W"], vars[prefix + "." + idx + ".b"]);
    if (i + 1 < layers) x = activation(x, act);
  }
  return x;
}

std::string format_shift(double alpha, double gamma) {
  std::ostringstream os;
  os.precision(17);
  os << " (alpha = " << alpha << ", gamma = " << gamma << ")";
  return os.str();
}

}  // namespace

// --- ModelGraph -------------------------------------------------------------------

ModelGraph::ModelGraph(Graph& graph, const LatentOdeModel& model)
    : graph_(graph), model_(model), vars_(model.parameters().bind(graph)) {}

GraphPosterior ModelGraph::encode(Var rows) const {
  const auto& a = model_.architecture();
  Var out = mlp(vars_, "enc", a.encoder_hidden.size() + 1, a.activation, rows);
  return {slice_cols(out, 0, a.d_lat), softplus(slice_cols(out, a.d_lat, 2 * a.d_lat))};
}

Var ModelGraph::sample(const GraphPosterior& post, const Tensor& eps) const {
  return add(post.mean, mul(post.stddev, graph_.constant(eps)));
}

Var ModelGraph::dynamics(Var u) const {
  const auto& a = model_.architecture();
  return mlp(vars_, "dyn", a.dynamics_hidden.size() + 1, a.activation, u);
}

std::vector<Var> ModelGraph::solve(Var z0, std::span<const double> times, const LatentShift* shift) const {
  GraphDynamicsFn f = [this](Graph&, Var u, double, const ParamVars&) { return dynamics(u); };
  return rk4_unroll(graph_, f, vars_, z0, times, shift, model_.architecture().ode_step);
}

std::pair<Var, Var> ModelGraph::decode(Var states) const {
  const auto& a = model_.architecture();
  Var out = mlp(vars_, "dec", a.decoder_hidden.size() + 1, a.activation, states);
  Var mean = slice_cols(out, 0, a.d_obs);
  Var stddev = shift(softplus(slice_cols(out, a.d_obs, 2 * a.d_obs)), a.sigma_floor);
  return {mean, stddev};
}

// --- LatentOdeModel -------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor::Shape>> LatentOdeModel::parameter_layout(const Architecture& arch) {
  std::vector<std::pair<std::string, Tensor::Shape>> layout;
  append_mlp(layout, "enc", arch.encoder_length * arch.d_obs, arch.encoder_hidden, 2 * arch.d_lat);
  append_mlp(layout, "dyn", arch.d_lat, arch.dynamics_hidden, arch.d_lat);
  append_mlp(layout, "dec", arch.d_lat, arch.decoder_hidden, 2 * arch.d_obs);
  return layout;
}

LatentOdeModel::LatentOdeModel(Architecture arch, ParameterSet params) : arch_(std::move(arch)) {
  arch_.validate();
  auto layout = parameter_layout(arch_);
  if (params.size() != layout.size()) {
    throw ConfigError("architecture expects " + std::to_string(layout.size()) + " parameter tensors, got " +
                      std::to_string(params.size()));
  }
  // Canonical order regardless of how the caller inserted entries.
  for (const auto& [name, shape] : layout) {
    if (!params.contains(name)) throw ConfigError("missing parameter '" + name + "'");
    const auto& t = params.get(name);
    if (t.shape() != shape) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                           shape_string(shape));
    }
    params_.add(name, t, params.frozen(name));
  }
}

LatentOdeModel LatentOdeModel::initialize(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ParameterSet params;
  for (const auto& [name, shape] : parameter_layout(arch)) {
    if (shape.size() == 2) {
      double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      std::vector<double> v(shape[0] * shape[1]);
      for (auto& x : v) x = u(rng);
      params.add(name, Tensor(shape, std::move(v)));
    } else {
      params.add(name, Tensor::zeros(shape));
    }
  }
  return LatentOdeModel(arch, std::move(params));
}

LatentOdeModel LatentOdeModel::with_parameters(ParameterSet params) const { return LatentOdeModel(arch_, std::move(params)); }

Tensor LatentOdeModel::encoder_input(const TimeSeriesWindow& window, EncodeMode mode) const {
  if (window.context_times.empty()) throw UsageError("cannot encode an empty context");
  window.validate();
  if (window.obs_dim() != arch_.d_obs) {
    throw DimensionError("window observations have dimension " + std::to_string(window.obs_dim()) +
                         ", model expects " + std::to_string(arch_.d_obs));
  }
  const std::size_t rows_out = arch_.encoder_length * arch_.d_obs;
  if (mode == EncodeMode::context_only) {
    auto m = resample_matrix(window.context_times, arch_.encoder_length, window.context_times.front(),
                             window.context_times.back());
    return matmul_values(m, window.context_values).reshaped({1, rows_out});
  }
  if (!window.target_values) throw UsageError("full_sequence encoding needs values for the target timestamps");
  if (window.target_times.empty()) throw UsageError("full_sequence encoding needs target timestamps");
  std::vector<double> times(window.context_times);
  times.insert(times.end(), window.target_times.begin(), window.target_times.end());
  std::vector<double> values(window.context_values.values());
  values.insert(values.end(), window.target_values->values().begin(), window.target_values->values().end());
  Tensor stacked({times.size(), arch_.d_obs}, std::move(values));
  auto m = resample_matrix(times, arch_.encoder_length, times.front(), times.back());
  return matmul_values(m, stacked).reshaped({1, rows_out});
}

LatentPosterior LatentOdeModel::encode(const TimeSeriesWindow& window, EncodeMode mode) const {
  Tensor input = encoder_input(window, mode);
  Graph g;
  NoGradGuard guard(g);
  ModelGraph mg(g, *this);
  auto post = mg.encode(g.constant(input));
  return {post.mean.value().reshaped({arch_.d_lat}), post.stddev.value().reshaped({arch_.d_lat})};
}

LatentPosterior LatentOdeModel::encode_with_targets(const TimeSeriesWindow& window, const Tensor& target_values) const {
  TimeSeriesWindow w = window;
  w.target_values = target_values.reshaped({window.target_times.size(), arch_.d_obs});
  return encode(w, EncodeMode::full_sequence);
}

std::vector<ForecastDistribution> LatentOdeModel::forecast(const TimeSeriesWindow& window,
                                                           const AdaptationParams& adapt, std::size_t n_samples,
                                                           std::uint64_t seed) const {
  return forecast_impl(window, &adapt, n_samples, seed);
}

std::vector<ForecastDistribution> LatentOdeModel::forecast_unadapted(const TimeSeriesWindow& window,
                                                                     std::size_t n_samples,
                                                                     std::uint64_t seed) const {
  return forecast_impl(window, nullptr, n_samples, seed);
}

std::vector<ForecastDistribution> LatentOdeModel::forecast_impl(const TimeSeriesWindow& window,
                                                                const AdaptationParams* adapt,
                                                                std::size_t n_samples, std::uint64_t seed) const {
  if (n_samples < 1) throw UsageError("forecast needs at least one latent sample");
  if (window.target_times.empty()) throw UsageError("forecast needs target timestamps");
  Tensor input = encoder_input(window, EncodeMode::context_only);

  Graph g;
  NoGradGuard guard(g);
  ModelGraph mg(g, *this);
  auto post = mg.encode(g.constant(input));
  Var z0 = mg.sample(post, standard_normal(n_samples, arch_.d_lat, seed));
  auto grid = solve_grid(window);

  std::vector<Var> states;
  try {
    if (adapt) {
      LatentShift shift{g.constant(adapt->alpha()), g.constant(adapt->gamma())};
      states = mg.solve(z0, grid, &shift);
    } else {
      states = mg.solve(z0, grid, nullptr);
    }
  } catch (const DivergenceError& e) {
    double a = adapt ? adapt->alpha() : 1.0, c = adapt ? adapt->gamma() : 0.0;
    throw DivergenceError(e.what() + format_shift(a, c), e.last_valid_time());
  }

  std::vector<Var> target_states;
  target_states.reserve(window.target_times.size());
  for (double t : window.target_times) {
    auto idx = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), t) - grid.begin());
    target_states.push_back(states[idx]);
  }
  auto [mean, stddev] = mg.decode(concat_rows(target_states));

  const std::size_t T = window.target_times.size(), d = arch_.d_obs;
  std::vector<ForecastDistribution> out(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::vector<double> mu(T * d), sd(T * d);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        mu[t * d + j] = mean.value()[(t * n_samples + s) * d + j];
        sd[t * d + j] = stddev.value()[(t * n_samples + s) * d + j];
      }
    }
    out[s] = ForecastDistribution{window.target_times, Tensor::unchecked({T, d}, std::move(mu)),
                                  Tensor::unchecked({T, d}, std::move(sd))};
  }
  return out;
}

DynamicsSpec LatentOdeModel::dynamics_spec() const {
  DynamicsSpec spec;
  spec.dim = arch_.d_lat;
  const auto layers = arch_.dynamics_hidden.size() + 1;
  const auto act = arch_.activation;
  spec.graph_fn = [layers, act](Graph&, Var u, double, const ParamVars& theta) {
    return mlp(theta, "dyn", layers, act, u);
  };
  return spec;
}

// --- checkpoints ---------------------------------------------------------------------

namespace {

json tensor_to_json(const Tensor& t) {
  if (t.rank() == 1) return json(t.values());
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    rows.push_back(json(row.values()));
  }
  return rows;
}

[[noreturn]] void schema_error(const std::string& what) { throw ParseError("checkpoint: " + what, 0); }

Tensor tensor_from_json(const json& j, const Tensor::Shape& shape, const std::string& name) {
  std::vector<double> values;
  values.reserve(shape_size(shape));
  auto take = [&](const json& x) {
    if (!x.is_number()) schema_error("parameter '" + name + "' contains a non-numeric entry");
    values.push_back(x.get<double>());
  };
  if (!j.is_array()) schema_error("parameter '" + name + "' is not an array");
  if (shape.size() == 1) {
    if (j.size() != shape[0]) schema_error("parameter '" + name + "' has the wrong length");
    for (const auto& x : j) take(x);
  } else {
    if (j.size() != shape[0]) schema_error("parameter '" + name + "' has the wrong number of rows");
    for (const auto& row : j) {
      if (!row.is_array() || row.size() != shape[1]) schema_error("parameter '" + name + "' has a malformed row");
      for (const auto& x : row) take(x);
    }
  }
  try {
    return Tensor(shape, std::move(values));
  } catch (const Error& e) {
    schema_error("parameter '" + name + "': " + e.what());
  }
}

std::vector<std::size_t> widths_from_json(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) schema_error(std::string("architecture.") + key + " missing");
  std::vector<std::size_t> out;
  for (const auto& x : j[key]) {
    if (!x.is_number_unsigned()) schema_error(std::string("architecture.") + key + " must hold positive integers");
    out.push_back(x.get<std::size_t>());
  }
  return out;
}

std::size_t size_from_json(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    schema_error(std::string("architecture.") + key + " missing or not a positive integer");
  }
  return j[key].get<std::size_t>();
}

double double_from_json(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) schema_error(std::string("architecture.") + key + " missing");
  return j[key].get<double>();
}

}  // namespace

std::string checkpoint_to_string(const LatentOdeModel& model) {
  const auto& a = model.architecture();
  json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["architecture"] = {
      {"d_obs", a.d_obs},
      {"d_lat", a.d_lat},
      {"encoder_length", a.encoder_length},
      {"encoder_hidden", a.encoder_hidden},
      {"dynamics_hidden", a.dynamics_hidden},
      {"decoder_hidden", a.decoder_hidden},
      {"activation", std::string(to_string(a.activation))},
      {"ode_step", a.ode_step},
      {"sigma_floor", a.sigma_floor},
  };
  json params = json::object();
  for (const auto& e : model.parameters().entries()) params[e.name] = tensor_to_json(e.value);
  doc["params"] = std::move(params);
  // nlohmann writes the shortest decimal form that parses back to the same
  // double, so the round trip is bit-exact.
  return doc.dump(1) + "\n";
}

void save_checkpoint(const LatentOdeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out << checkpoint_to_string(model);
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

LatentOdeModel checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), e.byte);
  }
  if (!doc.is_object()) schema_error("top level must be an object");
  if (!doc.contains("format_version") || !doc["format_version"].is_number_integer()) {
    schema_error("format_version missing");
  }
  auto version = doc["format_version"].get<long long>();
  if (version != kCheckpointFormatVersion) {
    throw VersionError("checkpoint format_version " + std::to_string(version) +
                       " is incompatible with supported version " + std::to_string(kCheckpointFormatVersion));
  }
  if (!doc.contains("architecture") || !doc["architecture"].is_object()) schema_error("architecture missing");
  const auto& ja = doc["architecture"];
  Architecture a;
  a.d_obs = size_from_json(ja, "d_obs");
  a.d_lat = size_from_json(ja, "d_lat");
  a.encoder_length = size_from_json(ja, "encoder_length");
  a.encoder_hidden = widths_from_json(ja, "encoder_hidden");
  a.dynamics_hidden = widths_from_json(ja, "dynamics_hidden");
  a.decoder_hidden = widths_from_json(ja, "decoder_hidden");
  if (!ja.contains("activation") || !ja["activation"].is_string()) schema_error("architecture.activation missing");
  a.activation = parse_activation(ja["activation"].get<std::string>());
  a.ode_step = double_from_json(ja, "ode_step");
  a.sigma_floor = double_from_json(ja, "sigma_floor");
  try {
    a.validate();
  } catch (const ConfigError& e) {
    schema_error(std::string("inconsistent architecture: ") + e.what());
  }

  if (!doc.contains("params") || !doc["params"].is_object()) schema_error("params missing");
  const auto& jp = doc["params"];
  auto layout = LatentOdeModel::parameter_layout(a);
  if (jp.size() != layout.size()) schema_error("params do not match the architecture");
  ParameterSet params;
  for (const auto& [name, shape] : layout) {
    if (!jp.contains(name)) schema_error("params." + name + " missing");
    params.add(name, tensor_from_json(jp[name], shape, name));
  }
  return LatentOdeModel(std::move(a), std::move(params));
}

LatentOdeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace adanode

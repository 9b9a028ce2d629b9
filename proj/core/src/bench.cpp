#include "adanode/bench.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "adanode/errors.hpp"
#include "adanode/metrics.hpp"
#include "adanode/objectives.hpp"
#include "adanode/parallel.hpp"
#include "adanode/seeds.hpp"
#include "json.hpp"

namespace adanode {

using nlohmann::json;

std::string_view to_string(Method m) { return m == Method::src ? "src" : "adanodes"; }

// --- evaluation ------------------------------------------------------------------

std::vector<Tensor> predict(const LatentOdeModel& model, const std::vector<TimeSeriesWindow>& windows,
                            const std::optional<AdaptationParams>& adapt, std::size_t n_samples, std::uint64_t seed) {
  std::vector<Tensor> out(windows.size());
  parallel_for(windows.size(), [&](std::size_t i) {
    auto window = windows[i].without_targets();
    auto s = derive_seed(seed, i);
    auto forecasts = adapt ? model.forecast(window, *adapt, n_samples, s) : model.forecast_unadapted(window, n_samples, s);
    out[i] = sample_mean_prediction(forecasts);
  });
  return out;
}

Scores score(const std::vector<TimeSeriesWindow>& windows, const std::vector<Tensor>& predictions) {
  if (windows.size() != predictions.size()) throw UsageError("one prediction per window is required");
  if (windows.empty()) throw EmptyDatasetError("nothing to score");
  std::vector<double> all_pred, all_truth;
  double cc_sum = 0.0, ccc_sum = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].target_values) throw UsageError("scoring needs target values");
    const auto& truth = windows[i].target_values->values();
    const auto& pred = predictions[i].values();
    cc_sum += pearson_cc(pred, truth);
    ccc_sum += ccc(pred, truth);
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
    all_truth.insert(all_truth.end(), truth.begin(), truth.end());
  }
  const double n = static_cast<double>(windows.size());
  return {mse(all_pred, all_truth), cc_sum / n, ccc_sum / n};
}

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

std::uint64_t text_digest(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string predictions_to_csv(const std::vector<TimeSeriesWindow>& windows, const std::vector<Tensor>& predictions,
                               Method method) {
  std::string out = "series_id,method,t,dim,pred,truth\n";
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    for (std::size_t r = 0; r < w.target_times.size(); ++r) {
      for (std::size_t j = 0; j < predictions[i].cols(); ++j) {
        out += std::to_string(i) + ',' + std::string(to_string(method)) + ',';
        append_double(out, w.target_times[r]);
        out += ',' + std::to_string(j) + ',';
        append_double(out, predictions[i].at(r, j));
        out += ',';
        if (w.target_values) append_double(out, w.target_values->at(r, j));
        out += '\n';
      }
    }
  }
  return out;
}

AdaptResult adapt_with_search(const LatentOdeModel& model, const AdaptConfig& config,
                              const std::vector<double>& learning_rates) {
  if (learning_rates.empty()) return adapt(model, config);
  std::optional<AdaptResult> best;
  for (double lr : learning_rates) {
    AdaptConfig c = config;
    c.learning_rate = lr;
    auto r = adapt(model, c);
    if (!best || r.loss < best->loss) best = std::move(r);
  }
  return *best;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

EvalOutput evaluate(const LatentOdeModel& model, const SeriesDataset& dataset, const std::string& signal,
                    const std::string& shift, int severity, const std::optional<EvalAdaptation>& adaptation,
                    std::size_t n_samples, const std::vector<std::uint64_t>& seeds) {
  if (dataset.windows.empty()) throw EmptyDatasetError("evaluation dataset is empty");
  for (const auto& w : dataset.windows) {
    if (!w.target_values) throw UsageError("evaluation needs target values");
  }
  std::vector<TimeSeriesWindow> unlabelled;
  for (const auto& w : dataset.windows) unlabelled.push_back(w.without_targets());

  EvalOutput out;
  for (auto seed : seeds) {
    auto src = predict(model, dataset.windows, std::nullopt, n_samples, seed);
    out.rows.push_back(MetricRow{signal, shift, severity, Method::src, seed, score(dataset.windows, src)});
    if (!adaptation) continue;

    SeedOutcome outcome;
    outcome.seed = seed;
    if (adaptation->fixed) {
      outcome.params = *adaptation->fixed;
    } else {
      AdaptConfig config = adaptation->config;
      config.batch = unlabelled;
      config.seed = seed;
      auto before = text_digest(checkpoint_to_string(model));
      auto result = adapt_with_search(model, config, adaptation->learning_rates);
      outcome.frozen = before == text_digest(checkpoint_to_string(model));
      outcome.params = result.params;
      outcome.adaptation = std::move(result);
    }
    auto adapted = predict(model, dataset.windows, outcome.params, n_samples, seed);
    out.rows.push_back(MetricRow{signal, shift, severity, Method::adanodes, seed, score(dataset.windows, adapted)});
    out.seeds.push_back(std::move(outcome));
  }
  return out;
}

// --- configuration ------------------------------------------------------------------

GlyphBenchConfig::GlyphBenchConfig() {
  arch.d_obs = kGlyphSide * kGlyphSide;
  arch.d_lat = 16;
  arch.encoder_length = 6;
  arch.encoder_hidden = {64};
  arch.dynamics_hidden = {64};
  arch.decoder_hidden = {64};
  arch.ode_step = 0.1;
  train.iterations = 1500;
  train.batch_size = 16;
}

BenchConfig::BenchConfig() {
  sine.kind = SignalKind::sine;
  damped.kind = SignalKind::damped;
  linear.kind = SignalKind::linear;
  train_shape.n_series = 256;
  train_shape.context_len = 10;
  test_shape.n_series = 16;
  test_shape.context_len = 10;
  arch.d_lat = 4;
  arch.encoder_length = 16;
  arch.encoder_hidden = {32};
  arch.dynamics_hidden = {32};
  arch.decoder_hidden = {32};
  arch.ode_step = 0.1;
  train.iterations = 10000;
  train.batch_size = 32;
  train.seed = 5;
  adapt.steps = 30;
}

void BenchConfig::validate() const {
  if (signals.empty() || shifts.empty() || severities.empty() || seeds.empty()) {
    throw ConfigError("bench grid needs at least one signal, shift, severity and seed");
  }
  for (int s : severities) ShiftSpec{ShiftKind::ampfreq, s}.validate();
  sine.validate();
  damped.validate();
  linear.validate();
  if (sine.kind != SignalKind::sine || damped.kind != SignalKind::damped || linear.kind != SignalKind::linear) {
    throw ConfigError("signal specs must keep their own kind");
  }
  train_shape.validate();
  test_shape.validate();
  arch.validate();
  if (arch.d_obs != 1) throw ConfigError("1-D signal benchmark needs d_obs = 1");
  train.validate();
  AdaptConfig probe = adapt;
  probe.batch.resize(1);
  probe.validate();
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
  if (eval_samples == 0) throw ConfigError("eval_samples must be positive");
  if (glyph.enabled) {
    glyph.arch.validate();
    glyph.train.validate();
    if (glyph.arch.d_obs != kGlyphSide * kGlyphSide) throw ConfigError("glyph model needs d_obs = 256");
    ShiftSpec{ShiftKind::ampfreq, glyph.severity}.validate();
    if (glyph.frames < 4) throw ConfigError("glyph sequences need at least 4 frames");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
}

const SignalSpec& BenchConfig::signal(SignalKind kind) const {
  switch (kind) {
    case SignalKind::sine: return sine;
    case SignalKind::damped: return damped;
    case SignalKind::linear: return linear;
  }
  return sine;
}

namespace {

json parse_config(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
}

// Reads keys of one JSON object into existing values and rejects unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown configuration key " + path_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json to_json(const Architecture& a) {
  return {{"d_obs", a.d_obs},
          {"d_lat", a.d_lat},
          {"encoder_length", a.encoder_length},
          {"encoder_hidden", a.encoder_hidden},
          {"dynamics_hidden", a.dynamics_hidden},
          {"decoder_hidden", a.decoder_hidden},
          {"activation", std::string(to_string(a.activation))},
          {"ode_step", a.ode_step},
          {"sigma_floor", a.sigma_floor}};
}

void from_json_into(const json& j, const std::string& path, Architecture& a) {
  ObjectReader r(j, path);
  r.read("d_obs", a.d_obs);
  r.read("d_lat", a.d_lat);
  r.read("encoder_length", a.encoder_length);
  r.read("encoder_hidden", a.encoder_hidden);
  r.read("dynamics_hidden", a.dynamics_hidden);
  r.read("decoder_hidden", a.decoder_hidden);
  std::string act(to_string(a.activation));
  r.read("activation", act);
  a.activation = parse_activation(act);
  r.read("ode_step", a.ode_step);
  r.read("sigma_floor", a.sigma_floor);
  r.finish();
}

json to_json(const TrainConfig& t) {
  return {{"iterations", t.iterations}, {"batch_size", t.batch_size}, {"n_samples", t.n_samples},
          {"learning_rate", t.learning_rate}, {"rho", t.rho}, {"eps", t.eps},
          {"beta", t.beta}, {"context_weight", t.context_weight}, {"seed", t.seed}};
}

void from_json_into(const json& j, const std::string& path, TrainConfig& t) {
  ObjectReader r(j, path);
  r.read("iterations", t.iterations);
  r.read("batch_size", t.batch_size);
  r.read("n_samples", t.n_samples);
  r.read("learning_rate", t.learning_rate);
  r.read("rho", t.rho);
  r.read("eps", t.eps);
  r.read("beta", t.beta);
  r.read("context_weight", t.context_weight);
  r.read("seed", t.seed);
  r.finish();
}

json to_json(const AdaptConfig& a) {
  return {{"learning_rate", a.learning_rate}, {"steps", a.steps}, {"lambda", a.lambda},
          {"n_samples", a.n_samples}, {"rho", a.rho}, {"eps", a.eps}, {"max_halvings", a.max_halvings}};
}

void from_json_into(const json& j, const std::string& path, AdaptConfig& a) {
  ObjectReader r(j, path);
  r.read("learning_rate", a.learning_rate);
  r.read("steps", a.steps);
  r.read("lambda", a.lambda);
  r.read("n_samples", a.n_samples);
  r.read("rho", a.rho);
  r.read("eps", a.eps);
  r.read("max_halvings", a.max_halvings);
  r.finish();
}

json to_json(const SignalSpec& s) {
  return {{"amplitude", s.amplitude}, {"frequency", s.frequency}, {"phase", s.phase},   {"slope", s.slope},
          {"intercept", s.intercept}, {"damping", s.damping},     {"noise_std", s.noise_std}};
}

void from_json_into(const json& j, const std::string& path, SignalSpec& s) {
  ObjectReader r(j, path);
  r.read("amplitude", s.amplitude);
  r.read("frequency", s.frequency);
  r.read("phase", s.phase);
  r.read("slope", s.slope);
  r.read("intercept", s.intercept);
  r.read("damping", s.damping);
  r.read("noise_std", s.noise_std);
  r.finish();
}

json to_json(const DatasetShape& d) {
  return {{"n_series", d.n_series},     {"context_len", d.context_len},   {"horizon_len", d.horizon_len},
          {"dt_sample", d.dt_sample},   {"phase_jitter", d.phase_jitter}, {"intercept_jitter", d.intercept_jitter}};
}

void from_json_into(const json& j, const std::string& path, DatasetShape& d) {
  ObjectReader r(j, path);
  r.read("n_series", d.n_series);
  r.read("context_len", d.context_len);
  r.read("horizon_len", d.horizon_len);
  r.read("dt_sample", d.dt_sample);
  r.read("phase_jitter", d.phase_jitter);
  r.read("intercept_jitter", d.intercept_jitter);
  r.finish();
}

json to_json(const SeverityTable& t) {
  return {{"ampfreq_step", t.ampfreq_step}, {"slope_step", t.slope_step}, {"delay_step", t.delay_step}};
}

void from_json_into(const json& j, const std::string& path, SeverityTable& t) {
  ObjectReader r(j, path);
  r.read("ampfreq_step", t.ampfreq_step);
  r.read("slope_step", t.slope_step);
  r.read("delay_step", t.delay_step);
  r.finish();
}

json to_json(const GlyphBenchConfig& g) {
  return {{"enabled", g.enabled},
          {"severity", g.severity},
          {"train_sequences", g.train_sequences},
          {"test_sequences", g.test_sequences},
          {"frames", g.frames},
          {"omega", g.omega},
          {"arch", to_json(g.arch)},
          {"train", to_json(g.train)}};
}

void from_json_into(const json& j, const std::string& path, GlyphBenchConfig& g) {
  ObjectReader r(j, path);
  r.read("enabled", g.enabled);
  r.read("severity", g.severity);
  r.read("train_sequences", g.train_sequences);
  r.read("test_sequences", g.test_sequences);
  r.read("frames", g.frames);
  r.read("omega", g.omega);
  if (auto c = r.child("arch")) from_json_into(*c, r.path("arch"), g.arch);
  if (auto c = r.child("train")) from_json_into(*c, r.path("train"), g.train);
  r.finish();
}

}  // namespace

std::string bench_config_to_json(const BenchConfig& c) {
  json signals = json::array(), shifts = json::array();
  for (auto s : c.signals) signals.push_back(std::string(to_string(s)));
  for (auto s : c.shifts) shifts.push_back(std::string(to_string(s)));
  json doc{{"signals", signals},
           {"shifts", shifts},
           {"severities", c.severities},
           {"seeds", c.seeds},
           {"seed", c.seed},
           {"sine", to_json(c.sine)},
           {"damped", to_json(c.damped)},
           {"linear", to_json(c.linear)},
           {"severity_table", to_json(c.severity_table)},
           {"train_shape", to_json(c.train_shape)},
           {"test_shape", to_json(c.test_shape)},
           {"arch", to_json(c.arch)},
           {"train", to_json(c.train)},
           {"adapt", to_json(c.adapt)},
           {"learning_rates", c.learning_rates},
           {"eval_samples", c.eval_samples},
           {"glyph", to_json(c.glyph)},
           {"out_dir", c.out_dir},
           {"checkpoint_dir", c.checkpoint_dir}};
  return doc.dump(2) + "\n";
}

BenchConfig bench_config_from_json(const std::string& text) {
  json doc = parse_config(text);
  BenchConfig c;
  ObjectReader r(doc, "config");
  std::vector<std::string> signals, shifts;
  for (auto s : c.signals) signals.emplace_back(to_string(s));
  for (auto s : c.shifts) shifts.emplace_back(to_string(s));
  r.read("signals", signals);
  r.read("shifts", shifts);
  c.signals.clear();
  c.shifts.clear();
  for (const auto& s : signals) c.signals.push_back(parse_signal_kind(s));
  for (const auto& s : shifts) c.shifts.push_back(parse_shift_kind(s));
  r.read("severities", c.severities);
  r.read("seeds", c.seeds);
  r.read("seed", c.seed);
  if (auto j = r.child("sine")) from_json_into(*j, r.path("sine"), c.sine);
  if (auto j = r.child("damped")) from_json_into(*j, r.path("damped"), c.damped);
  if (auto j = r.child("linear")) from_json_into(*j, r.path("linear"), c.linear);
  if (auto j = r.child("severity_table")) from_json_into(*j, r.path("severity_table"), c.severity_table);
  if (auto j = r.child("train_shape")) from_json_into(*j, r.path("train_shape"), c.train_shape);
  if (auto j = r.child("test_shape")) from_json_into(*j, r.path("test_shape"), c.test_shape);
  if (auto j = r.child("arch")) from_json_into(*j, r.path("arch"), c.arch);
  if (auto j = r.child("train")) from_json_into(*j, r.path("train"), c.train);
  if (auto j = r.child("adapt")) from_json_into(*j, r.path("adapt"), c.adapt);
  r.read("learning_rates", c.learning_rates);
  r.read("eval_samples", c.eval_samples);
  if (auto j = r.child("glyph")) from_json_into(*j, r.path("glyph"), c.glyph);
  r.read("out_dir", c.out_dir);
  r.read("checkpoint_dir", c.checkpoint_dir);
  r.finish();
  c.validate();
  return c;
}

TrainJob::TrainJob() {
  BenchConfig defaults;
  arch = defaults.arch;
  train = defaults.train;
}

std::string train_job_to_json(const TrainJob& job) {
  json doc{{"arch", to_json(job.arch)}, {"train", to_json(job.train)}};
  return doc.dump(2) + "\n";
}

TrainJob train_job_from_json(const std::string& text) {
  json doc = parse_config(text);
  TrainJob job;
  ObjectReader r(doc, "config");
  if (auto j = r.child("arch")) from_json_into(*j, r.path("arch"), job.arch);
  if (auto j = r.child("train")) from_json_into(*j, r.path("train"), job.train);
  r.finish();
  job.arch.validate();
  job.train.validate();
  return job;
}

std::string adapt_config_to_json(const AdaptConfig& config) {
  json doc = to_json(config);
  doc["seed"] = config.seed;
  return doc.dump(2) + "\n";
}

AdaptConfig adapt_config_from_json(const std::string& text) {
  json doc = parse_config(text);
  AdaptConfig config;
  if (doc.is_object() && doc.contains("seed")) {
    try {
      config.seed = doc.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config.seed: ") + e.what());
    }
    doc.erase("seed");
  }
  from_json_into(doc, "config", config);
  AdaptConfig probe = config;
  probe.batch.resize(1);
  probe.validate();
  return config;
}

// --- grid -------------------------------------------------------------------------------

namespace {

LatentOdeModel source_model(const std::string& name, const Architecture& arch, const TrainConfig& train_config,
                            const std::vector<TimeSeriesWindow>& train_windows, std::uint64_t init_seed,
                            const std::string& checkpoint_dir, SourceModelInfo& info, const GridProgressFn& progress) {
  info.signal = name;
  std::filesystem::path ckpt;
  if (!checkpoint_dir.empty()) {
    ckpt = std::filesystem::path(checkpoint_dir) / (name + ".json");
    if (std::filesystem::exists(ckpt)) {
      auto model = load_checkpoint(ckpt);
      if (!(model.architecture() == arch)) {
        throw ConfigError("checkpoint " + ckpt.string() + " does not match the configured architecture");
      }
      info.loaded = true;
      info.checkpoint_digest = hex(text_digest(checkpoint_to_string(model)));
      if (progress) progress("loaded " + ckpt.string());
      return model;
    }
  }
  if (progress) progress("training source model for " + name);
  auto result = train(LatentOdeModel::initialize(arch, init_seed), train_windows, train_config);
  info.final_train_loss = result.losses.back();
  info.checkpoint_digest = hex(text_digest(checkpoint_to_string(result.model)));
  if (!ckpt.empty()) {
    std::filesystem::create_directories(ckpt.parent_path());
    save_checkpoint(result.model, ckpt);
  }
  return std::move(result.model);
}

EvalAdaptation adaptation_settings(const BenchConfig& config) {
  EvalAdaptation a;
  a.config = config.adapt;
  a.learning_rates = config.learning_rates;
  return a;
}

}  // namespace

GridResult run_grid(const BenchConfig& config, const GridProgressFn& progress) {
  config.validate();
  GridResult result;
  for (std::size_t k = 0; k < config.signals.size(); ++k) {
    const auto kind = config.signals[k];
    const std::string name(to_string(kind));
    const SignalSpec& base = config.signal(kind);
    const std::uint64_t signal_seed = derive_seed(config.seed, static_cast<std::uint64_t>(kind));

    SourceModelInfo info;
    std::optional<LatentOdeModel> model;
    try {
      auto train_ds = gen_dataset(base, {ShiftKind::ampfreq, 0}, config.train_shape, derive_seed(signal_seed, 1),
                                  Split::train, config.severity_table);
      model = source_model(name, config.arch, config.train, train_ds.windows, derive_seed(signal_seed, 2),
                           config.checkpoint_dir, info, progress);
    } catch (const std::exception& e) {
      for (auto shift : config.shifts) {
        for (int severity : config.severities) {
          result.cells.push_back({name, std::string(to_string(shift)), severity,
                                  std::string("source model failed: ") + e.what()});
        }
      }
      result.models.push_back(info);
      continue;
    }
    result.models.push_back(info);

    for (auto shift : config.shifts) {
      const std::string shift_name(to_string(shift));
      for (int severity : config.severities) {
        CellStatus cell{name, shift_name, severity, "ok"};
        try {
          std::vector<MetricRow> rows;
          std::vector<std::pair<MetricRow, SeedOutcome>> adaptations;
          for (auto seed : config.seeds) {
            // Test data depends on the signal and seed only, so every severity
            // shifts the same underlying series.
            auto ds = gen_dataset(base, {shift, severity}, config.test_shape, derive_seed(signal_seed, 1000 + seed),
                                  Split::test, config.severity_table);
            auto out = evaluate(*model, ds, name, shift_name, severity, adaptation_settings(config),
                                config.eval_samples, {seed});
            for (std::size_t i = 0; i < out.seeds.size(); ++i) {
              adaptations.emplace_back(out.rows[2 * i + 1], out.seeds[i]);
            }
            rows.insert(rows.end(), out.rows.begin(), out.rows.end());
          }
          result.rows.insert(result.rows.end(), rows.begin(), rows.end());
          for (auto& a : adaptations) {
            result.freeze_ok = result.freeze_ok && a.second.frozen;
            result.adaptations.push_back(std::move(a));
          }
        } catch (const std::exception& e) {
          cell.status = e.what();
        }
        if (progress) progress(name + " " + shift_name + " severity " + std::to_string(severity) + ": " + cell.status);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  if (config.glyph.enabled) run_glyph_bench(config, result, progress);
  return result;
}

void run_glyph_bench(const BenchConfig& config, GridResult& result, const GridProgressFn& progress) {
  const auto& g = config.glyph;
  const std::uint64_t glyph_seed = derive_seed(config.seed, 0x67);
  GlyphSequenceSpec spec;
  spec.frames = g.frames;
  spec.omega = g.omega;

  SourceModelInfo info;
  std::optional<LatentOdeModel> model;
  std::vector<int> severities{0};
  if (g.severity != 0) severities.push_back(g.severity);
  try {
    auto train_ds = gen_glyph_dataset(spec, 0, g.train_sequences, derive_seed(glyph_seed, 1), Split::train);
    model = source_model("glyph", g.arch, g.train, train_ds.windows, derive_seed(glyph_seed, 2),
                         config.checkpoint_dir, info, progress);
  } catch (const std::exception& e) {
    for (int s : severities) result.cells.push_back({"glyph", "rotation", s, std::string("source model failed: ") + e.what()});
    result.models.push_back(info);
    return;
  }
  result.models.push_back(info);

  for (int severity : severities) {
    CellStatus cell{"glyph", "rotation", severity, "ok"};
    try {
      std::vector<MetricRow> rows;
      std::vector<std::pair<MetricRow, SeedOutcome>> adaptations;
      for (auto seed : config.seeds) {
        auto ds = gen_glyph_dataset(spec, severity, g.test_sequences, derive_seed(glyph_seed, 1000 + seed));
        auto out = evaluate(*model, ds, "glyph", "rotation", severity, adaptation_settings(config), config.eval_samples,
                            {seed});
        for (std::size_t i = 0; i < out.seeds.size(); ++i) adaptations.emplace_back(out.rows[2 * i + 1], out.seeds[i]);
        rows.insert(rows.end(), out.rows.begin(), out.rows.end());
      }
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
      for (auto& a : adaptations) {
        result.freeze_ok = result.freeze_ok && a.second.frozen;
        result.adaptations.push_back(std::move(a));
      }
    } catch (const std::exception& e) {
      cell.status = e.what();
    }
    if (progress) progress("glyph rotation severity " + std::to_string(severity) + ": " + cell.status);
    result.cells.push_back(std::move(cell));
  }
}

// --- reports ---------------------------------------------------------------------------

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "signal,shift,severity,method,seed,mse,cc,ccc\n";
  for (const auto& r : rows) {
    out += r.signal + ',' + r.shift + ',' + std::to_string(r.severity) + ',' + std::string(to_string(r.method)) + ',' +
           std::to_string(r.seed) + ',';
    append_double(out, r.scores.mse);
    out += ',';
    append_double(out, r.scores.cc);
    out += ',';
    append_double(out, r.scores.ccc);
    out += '\n';
  }
  return out;
}

namespace {

struct CellKey {
  std::string signal, shift;
  int severity;
  auto operator<=>(const CellKey&) const = default;
};

struct CellMeans {
  std::map<Method, std::vector<Scores>> by_method;
};

// Cells in first-appearance order.
std::vector<std::pair<CellKey, CellMeans>> group_cells(const std::vector<MetricRow>& rows) {
  std::vector<std::pair<CellKey, CellMeans>> cells;
  std::map<CellKey, std::size_t> index;
  for (const auto& r : rows) {
    CellKey key{r.signal, r.shift, r.severity};
    auto [it, fresh] = index.try_emplace(key, cells.size());
    if (fresh) cells.emplace_back(key, CellMeans{});
    cells[it->second].second.by_method[r.method].push_back(r.scores);
  }
  return cells;
}

std::vector<double> column(const std::vector<Scores>& s, double Scores::*field) {
  std::vector<double> out;
  for (const auto& x : s) out.push_back(x.*field);
  return out;
}

}  // namespace

std::string improvement_csv(const std::vector<MetricRow>& rows) {
  std::string out = "signal,shift,severity,metric,rel_improvement\n";
  for (const auto& [key, cell] : group_cells(rows)) {
    auto src = cell.by_method.find(Method::src);
    auto ada = cell.by_method.find(Method::adanodes);
    if (src == cell.by_method.end() || ada == cell.by_method.end()) continue;
    const std::pair<const char*, double Scores::*> metrics[] = {
        {"mse", &Scores::mse}, {"cc", &Scores::cc}, {"ccc", &Scores::ccc}};
    for (const auto& [name, field] : metrics) {
      double s = aggregate(column(src->second, field)).mean;
      double a = aggregate(column(ada->second, field)).mean;
      double rel = field == &Scores::mse ? (s - a) / s : (a - s) / std::abs(s);
      out += key.signal + ',' + key.shift + ',' + std::to_string(key.severity) + ',' + name + ',';
      append_double(out, rel);
      out += '\n';
    }
  }
  return out;
}

std::string summary_json(const GridResult& result, const BenchConfig& config) {
  json doc;
  doc["config"] = json::parse(bench_config_to_json(config));
  json cells = json::array();
  for (const auto& c : result.cells) {
    cells.push_back({{"signal", c.signal}, {"shift", c.shift}, {"severity", c.severity}, {"status", c.status}});
  }
  doc["cells"] = cells;
  json models = json::array();
  for (const auto& m : result.models) {
    models.push_back({{"signal", m.signal},
                      {"checkpoint_digest", m.checkpoint_digest},
                      {"loaded", m.loaded},
                      {"final_train_loss", m.final_train_loss}});
  }
  doc["source_models"] = models;

  json aggregates = json::array();
  for (const auto& [key, cell] : group_cells(result.rows)) {
    for (const auto& [method, scores] : cell.by_method) {
      json entry{{"signal", key.signal},
                 {"shift", key.shift},
                 {"severity", key.severity},
                 {"method", std::string(to_string(method))},
                 {"n_seeds", scores.size()}};
      const std::pair<const char*, double Scores::*> metrics[] = {
          {"mse", &Scores::mse}, {"cc", &Scores::cc}, {"ccc", &Scores::ccc}};
      for (const auto& [name, field] : metrics) {
        auto agg = aggregate(column(scores, field));
        entry[name] = {{"mean", agg.mean}, {"std", agg.stddev ? json(*agg.stddev) : json(nullptr)}};
      }
      aggregates.push_back(entry);
    }
  }
  doc["aggregates"] = aggregates;
  doc["std_definition"] = "sample standard deviation over seeds (n - 1); null for a single seed";

  json adaptations = json::array();
  for (const auto& [row, outcome] : result.adaptations) {
    json entry{{"signal", row.signal},
               {"shift", row.shift},
               {"severity", row.severity},
               {"seed", row.seed},
               {"alpha", outcome.params.alpha()},
               {"gamma", outcome.params.gamma()},
               {"parameters_unchanged", outcome.frozen}};
    if (outcome.adaptation) {
      entry["loss"] = outcome.adaptation->loss;
      entry["initial_loss"] = outcome.adaptation->trace.steps.front().total;
    }
    adaptations.push_back(entry);
  }
  doc["adaptations"] = adaptations;
  doc["freeze_ok"] = result.freeze_ok;
  return doc.dump(1) + "\n";
}

void write_reports(const GridResult& result, const BenchConfig& config) {
  std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << text;
  };
  write("metrics.csv", metrics_csv(result.rows));
  write("improvement.csv", improvement_csv(result.rows));
  write("summary.json", summary_json(result, config));
}

}  // namespace adanode

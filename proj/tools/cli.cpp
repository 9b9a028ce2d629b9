#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "adanode/bench.hpp"
#include "adanode/errors.hpp"

namespace adanode::cli {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

struct GenArgs {
  std::string signal = "sine";
  std::string shift = "ampfreq";
  int severity = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string split = "test";
  std::size_t n_series = 64;
  std::size_t context_len = 10;
  std::size_t horizon_len = 20;
  double dt = 0.1;
  std::optional<double> amplitude, frequency, noise_std;
  std::size_t frames = 12;
};

struct TrainArgs {
  std::string data, out, config;
  std::optional<std::size_t> iterations;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

struct AdaptArgs {
  std::string model, data, out, config;
  std::vector<double> learning_rates;
  std::optional<std::size_t> steps, samples;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

struct EvalArgs {
  std::string model, data, adaptation, config, out, predictions;
  bool adapt = false;
  std::vector<double> learning_rates;
  std::size_t samples = 5;
  std::vector<std::uint64_t> seeds{0};
  std::string signal = "data", shift = "none";
  int severity = 0;
};

struct BenchArgs {
  std::string config, out_dir, checkpoint_dir;
  bool print_config = false;
  bool quiet = false;
};

int run_gen(const GenArgs& a, std::ostream& out) {
  require(a.out, "--out");
  const Split split = parse_split(a.split);
  SeriesDataset ds;
  if (a.signal == "glyph") {
    GlyphSequenceSpec spec;
    spec.frames = a.frames;
    ds = gen_glyph_dataset(spec, a.severity, a.n_series, a.seed, split);
  } else {
    SignalSpec spec;
    spec.kind = parse_signal_kind(a.signal);
    if (a.amplitude) spec.amplitude = *a.amplitude;
    if (a.frequency) spec.frequency = *a.frequency;
    if (a.noise_std) spec.noise_std = *a.noise_std;
    DatasetShape shape;
    shape.n_series = a.n_series;
    shape.context_len = a.context_len;
    shape.horizon_len = a.horizon_len;
    shape.dt_sample = a.dt;
    ds = gen_dataset(spec, {parse_shift_kind(a.shift), a.severity}, shape, a.seed, split);
  }
  write_dataset(ds, a.out);
  out << "wrote " << ds.windows.size() << " series to " << a.out << "\n";
  return 0;
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainJob job = a.config.empty() ? TrainJob() : train_job_from_json(read_file(a.config));
  if (a.iterations) job.train.iterations = *a.iterations;
  if (a.seed) job.train.seed = *a.seed;
  if (a.print_config) {
    out << train_job_to_json(job);
    return 0;
  }
  require(a.data, "--data");
  require(a.out, "--out");
  auto ds = read_dataset(a.data);
  // The observation width always comes from the data.
  job.arch.d_obs = ds.windows.front().context_values.cols();
  job.train.validate();
  const std::size_t every = std::max<std::size_t>(1, job.train.iterations / 10);
  auto result = train(LatentOdeModel::initialize(job.arch, job.train.seed), ds.windows, job.train,
                      [&](std::size_t it, double loss) {
                        if ((it + 1) % every == 0) err << "iteration " << it + 1 << " loss " << loss << "\n";
                      });
  save_checkpoint(result.model, a.out);
  out << "final loss " << result.losses.back() << "\nwrote " << a.out << "\n";
  return 0;
}

AdaptConfig adapt_config(const std::string& path, const std::optional<std::size_t>& steps,
                         const std::optional<std::size_t>& samples, const std::optional<double>& lambda,
                         const std::optional<std::uint64_t>& seed) {
  AdaptConfig c = path.empty() ? BenchConfig().adapt : adapt_config_from_json(read_file(path));
  if (steps) c.steps = *steps;
  if (samples) c.n_samples = *samples;
  if (lambda) c.lambda = *lambda;
  if (seed) c.seed = *seed;
  return c;
}

int run_adapt(const AdaptArgs& a, std::ostream& out) {
  AdaptConfig config = adapt_config(a.config, a.steps, a.samples, a.lambda, a.seed);
  if (a.print_config) {
    out << adapt_config_to_json(config);
    return 0;
  }
  require(a.model, "--model");
  require(a.data, "--data");
  auto model = load_checkpoint(a.model);
  auto ds = read_dataset(a.data);
  for (const auto& w : ds.windows) config.batch.push_back(w.without_targets());
  auto result = adapt_with_search(model, config, a.learning_rates);
  auto text = adaptation_to_string(result, config);
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
    out << "alpha " << result.params.alpha() << " gamma " << result.params.gamma() << "\nwrote " << a.out << "\n";
  }
  return 0;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  require(a.model, "--model");
  require(a.data, "--data");
  if (a.adapt && !a.adaptation.empty()) throw UsageError("--adapt and --adaptation are exclusive");
  auto model = load_checkpoint(a.model);
  auto ds = read_dataset(a.data);

  std::optional<EvalAdaptation> adaptation;
  if (a.adapt || !a.adaptation.empty()) {
    adaptation.emplace();
    adaptation->config = adapt_config(a.config, std::nullopt, std::nullopt, std::nullopt, std::nullopt);
    adaptation->learning_rates = a.learning_rates;
    if (!a.adaptation.empty()) adaptation->fixed = load_adaptation(a.adaptation);
  }
  auto result = evaluate(model, ds, a.signal, a.shift, a.severity, adaptation, a.samples, a.seeds);
  auto csv = metrics_csv(result.rows);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_file(a.out, csv);
  }
  if (!a.predictions.empty()) {
    // Per-point predictions for the first seed.
    const auto seed = a.seeds.front();
    std::string text = predictions_to_csv(ds.windows, predict(model, ds.windows, std::nullopt, a.samples, seed),
                                          Method::src);
    if (adaptation) {
      auto params = result.seeds.front().params;
      auto rows = predictions_to_csv(ds.windows, predict(model, ds.windows, params, a.samples, seed),
                                     Method::adanodes);
      text += rows.substr(rows.find('\n') + 1);
    }
    write_file(a.predictions, text);
  }
  return 0;
}

int run_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  BenchConfig config = a.config.empty() ? BenchConfig() : bench_config_from_json(read_file(a.config));
  if (!a.out_dir.empty()) config.out_dir = a.out_dir;
  if (!a.checkpoint_dir.empty()) config.checkpoint_dir = a.checkpoint_dir;
  if (a.print_config) {
    out << bench_config_to_json(config);
    return 0;
  }
  GridProgressFn progress;
  if (!a.quiet) progress = [&](const std::string& message) { err << message << std::endl; };
  auto result = run_grid(config, progress);
  write_reports(result, config);
  std::size_t failed = 0;
  for (const auto& c : result.cells) failed += c.status != "ok";
  out << "wrote " << config.out_dir << "/metrics.csv, improvement.csv, summary.json (" << result.cells.size()
      << " cells, " << failed << " failed)\n";
  return failed == 0 ? 0 : 2;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent ODE forecasting with test-time adaptation of latent dynamics", "adanode"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset CSV");
  gen_cmd->add_option("--signal", gen.signal, "sine, damped, linear or glyph")->capture_default_str();
  gen_cmd->add_option("--shift", gen.shift, "ampfreq or delay (ignored for glyph)")->capture_default_str();
  gen_cmd->add_option("--severity", gen.severity, "Shift severity 0..5")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output CSV");
  gen_cmd->add_option("--split", gen.split, "train or test")->capture_default_str();
  gen_cmd->add_option("--n-series", gen.n_series)->capture_default_str();
  gen_cmd->add_option("--context-len", gen.context_len)->capture_default_str();
  gen_cmd->add_option("--horizon-len", gen.horizon_len)->capture_default_str();
  gen_cmd->add_option("--dt", gen.dt, "Sampling interval")->capture_default_str();
  gen_cmd->add_option("--amplitude", gen.amplitude);
  gen_cmd->add_option("--frequency", gen.frequency, "Cycles per time unit");
  gen_cmd->add_option("--noise-std", gen.noise_std);
  gen_cmd->add_option("--frames", gen.frames, "Frames per glyph sequence")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a source model on a dataset CSV");
  train_cmd->add_option("--data", tr.data, "Training dataset CSV");
  train_cmd->add_option("--out", tr.out, "Checkpoint JSON to write");
  train_cmd->add_option("--config", tr.config, "JSON with arch and train sections");
  train_cmd->add_option("--iterations", tr.iterations);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_flag("--print-config", tr.print_config, "Print the effective config and exit");

  AdaptArgs ad;
  auto* adapt_cmd = app.add_subcommand("adapt", "Fit alpha and gamma on an unlabeled dataset");
  adapt_cmd->add_option("--model", ad.model, "Checkpoint JSON");
  adapt_cmd->add_option("--data", ad.data, "Dataset CSV; target values are ignored");
  adapt_cmd->add_option("--out", ad.out, "Adaptation JSON (stdout when absent)");
  adapt_cmd->add_option("--config", ad.config, "Adaptation config JSON");
  adapt_cmd->add_option("--lr", ad.learning_rates, "Learning rates to try; the lowest final loss wins")
      ->delimiter(',');
  adapt_cmd->add_option("--steps", ad.steps);
  adapt_cmd->add_option("--samples", ad.samples);
  adapt_cmd->add_option("--lambda", ad.lambda);
  adapt_cmd->add_option("--seed", ad.seed);
  adapt_cmd->add_flag("--print-config", ad.print_config, "Print the effective config and exit");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score source and adapted forecasts");
  eval_cmd->add_option("--model", ev.model, "Checkpoint JSON");
  eval_cmd->add_option("--data", ev.data, "Dataset CSV with target values");
  eval_cmd->add_option("--adaptation", ev.adaptation, "Fixed adaptation JSON");
  eval_cmd->add_flag("--adapt", ev.adapt, "Adapt per seed on the unlabeled data");
  eval_cmd->add_option("--config", ev.config, "Adaptation config JSON for --adapt");
  eval_cmd->add_option("--lr", ev.learning_rates, "Learning rates for --adapt")->delimiter(',');
  eval_cmd->add_option("--samples", ev.samples)->capture_default_str();
  eval_cmd->add_option("--seeds", ev.seeds)->delimiter(',');
  eval_cmd->add_option("--out", ev.out, "Metrics CSV (stdout when absent)");
  eval_cmd->add_option("--predictions", ev.predictions, "Per-point prediction CSV for the first seed");
  eval_cmd->add_option("--signal", ev.signal, "Label for the signal column")->capture_default_str();
  eval_cmd->add_option("--shift", ev.shift, "Label for the shift column")->capture_default_str();
  eval_cmd->add_option("--severity", ev.severity, "Label for the severity column")->capture_default_str();

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "Run the experiment grid and write reports");
  bench_cmd->add_option("--config", be.config, "Bench config JSON");
  bench_cmd->add_option("--out-dir", be.out_dir);
  bench_cmd->add_option("--checkpoint-dir", be.checkpoint_dir);
  bench_cmd->add_flag("--print-config", be.print_config, "Print the effective config and exit");
  bench_cmd->add_flag("--quiet", be.quiet, "No progress on standard error");

  std::vector<std::string> argv_store{"adanode"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen, out);
    if (train_cmd->parsed()) return run_train(tr, out, err);
    if (adapt_cmd->parsed()) return run_adapt(ad, out);
    if (eval_cmd->parsed()) return run_eval(ev, out);
    if (bench_cmd->parsed()) return run_bench(be, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace adanode::cli

#pragma once

// Evaluation of source and adapted forecasts, and the experiment grid behind
// the `bench` command.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adanode/adaptation.hpp"
#include "adanode/model.hpp"
#include "adanode/shiftgen.hpp"
#include "adanode/training.hpp"

namespace adanode {

enum class Method { src, adanodes };
std::string_view to_string(Method m);

struct Scores {
  double mse = 0.0;
  double cc = 0.0;
  double ccc = 0.0;
};

// Sample-mean prediction [T x d_obs] for each window. Window i draws its
// latent samples from derive_seed(seed, i). No adaptation hook when `adapt`
// is empty.
std::vector<Tensor> predict(const LatentOdeModel& model, const std::vector<TimeSeriesWindow>& windows,
                            const std::optional<AdaptationParams>& adapt, std::size_t n_samples, std::uint64_t seed);

// MSE over every point of every window; CC and CCC per window, then averaged.
Scores score(const std::vector<TimeSeriesWindow>& windows, const std::vector<Tensor>& predictions);

// Per-point CSV: series_id,method,t,dim,pred,truth
std::string predictions_to_csv(const std::vector<TimeSeriesWindow>& windows, const std::vector<Tensor>& predictions,
                               Method method);

// Lowest final loss over the given learning rates (ties keep the earlier rate).
AdaptResult adapt_with_search(const LatentOdeModel& model, const AdaptConfig& config,
                              const std::vector<double>& learning_rates);

struct MetricRow {
  std::string signal;
  std::string shift;
  int severity = 0;
  Method method = Method::src;
  std::uint64_t seed = 0;
  Scores scores;
};

struct Aggregate {
  double mean = 0.0;
  std::optional<double> stddev;  // sample std over seeds; absent below two seeds
};
Aggregate aggregate(const std::vector<double>& values);

// How evaluate() treats the adanodes rows.
struct EvalAdaptation {
  // Fixed parameters for every seed; otherwise adapt per seed.
  std::optional<AdaptationParams> fixed;
  AdaptConfig config;  // batch is replaced by the dataset windows
  std::vector<double> learning_rates;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  AdaptationParams params;
  std::optional<AdaptResult> adaptation;
  bool frozen = true;  // serialized parameters unchanged by the adaptation
};

struct EvalOutput {
  std::vector<MetricRow> rows;
  std::vector<SeedOutcome> seeds;
};

// src rows always; adanodes rows when `adaptation` is given. The dataset must
// carry target values; adaptation only ever sees the windows without them.
EvalOutput evaluate(const LatentOdeModel& model, const SeriesDataset& dataset, const std::string& signal,
                    const std::string& shift, int severity, const std::optional<EvalAdaptation>& adaptation,
                    std::size_t n_samples, const std::vector<std::uint64_t>& seeds);

// --- command configs ------------------------------------------------------------

// Model and training settings of the `train` command; defaults match the
// bench source models.
struct TrainJob {
  Architecture arch;
  TrainConfig train;

  TrainJob();
};
std::string train_job_to_json(const TrainJob& job);
TrainJob train_job_from_json(const std::string& text);

// The batch is not serialized.
std::string adapt_config_to_json(const AdaptConfig& config);
AdaptConfig adapt_config_from_json(const std::string& text);

// --- grid ---------------------------------------------------------------------------

struct GlyphBenchConfig {
  bool enabled = false;
  int severity = 5;
  std::size_t train_sequences = 64;
  std::size_t test_sequences = 8;
  std::size_t frames = 12;
  double omega = 2.0;
  Architecture arch;
  TrainConfig train;

  GlyphBenchConfig();
};

struct BenchConfig {
  std::vector<SignalKind> signals{SignalKind::sine};
  std::vector<ShiftKind> shifts{ShiftKind::ampfreq, ShiftKind::delay};
  std::vector<int> severities{0, 1, 2, 3, 4, 5};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t seed = 0;
  SignalSpec sine;
  SignalSpec damped;
  SignalSpec linear;
  SeverityTable severity_table;
  DatasetShape train_shape;
  DatasetShape test_shape;
  Architecture arch;
  TrainConfig train;
  AdaptConfig adapt;
  std::vector<double> learning_rates{1e-2};
  std::size_t eval_samples = 5;
  GlyphBenchConfig glyph;
  std::string out_dir = "bench_out";
  // Checkpoints are read from here when present and written otherwise.
  std::string checkpoint_dir;

  BenchConfig();
  void validate() const;
  const SignalSpec& signal(SignalKind kind) const;
};

std::string bench_config_to_json(const BenchConfig& config);
// Missing keys keep their defaults; unknown keys are a ConfigError.
BenchConfig bench_config_from_json(const std::string& text);

struct CellStatus {
  std::string signal;
  std::string shift;
  int severity = 0;
  std::string status;  // "ok" or the error message
};

struct SourceModelInfo {
  std::string signal;
  std::string checkpoint_digest;
  double final_train_loss = 0.0;
  bool loaded = false;
};

struct GridResult {
  std::vector<MetricRow> rows;
  std::vector<CellStatus> cells;
  std::vector<SourceModelInfo> models;
  // (alpha, gamma, loss) per adapted cell and seed, in row order.
  std::vector<std::pair<MetricRow, SeedOutcome>> adaptations;
  bool freeze_ok = true;
};

using GridProgressFn = std::function<void(const std::string& message)>;

GridResult run_grid(const BenchConfig& config, const GridProgressFn& progress = {});

// Rotating-glyph rows (signal "glyph", shift "rotation") appended to `result`.
void run_glyph_bench(const BenchConfig& config, GridResult& result, const GridProgressFn& progress = {});

std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string improvement_csv(const std::vector<MetricRow>& rows);
std::string summary_json(const GridResult& result, const BenchConfig& config);
// Writes metrics.csv, improvement.csv and summary.json into config.out_dir.
void write_reports(const GridResult& result, const BenchConfig& config);

}  // namespace adanode

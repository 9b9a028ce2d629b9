#pragma once

// Synthetic benchmark data: 1-D signals with graded distribution shifts and a
// 16x16 rotating glyph sequence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adanode/model.hpp"
#include "adanode/tensor.hpp"

namespace adanode {

enum class SignalKind { linear, sine, damped };
enum class ShiftKind { ampfreq, delay };
enum class Split { train, test };

SignalKind parse_signal_kind(std::string_view name);
ShiftKind parse_shift_kind(std::string_view name);
Split parse_split(std::string_view name);
std::string_view to_string(SignalKind kind);
std::string_view to_string(ShiftKind kind);
std::string_view to_string(Split split);

struct SignalSpec {
  SignalKind kind = SignalKind::sine;
  double amplitude = 1.0;
  double frequency = 0.5;  // cycles per time unit
  double phase = 0.0;
  double slope = 1.0;
  double intercept = 0.0;
  double damping = 0.1;
  double noise_std = 0.02;

  void validate() const;
  friend bool operator==(const SignalSpec&, const SignalSpec&) = default;
};

struct ShiftSpec {
  ShiftKind kind = ShiftKind::ampfreq;
  int severity = 0;

  void validate() const;
  friend bool operator==(const ShiftSpec&, const ShiftSpec&) = default;
};

// Per-level increments of each shift.
struct SeverityTable {
  double ampfreq_step = 0.1;  // relative change of frequency and amplitude
  double slope_step = 0.2;    // relative change of a linear slope
  double delay_step = 0.05;   // delay in periods (time units for linear)

  friend bool operator==(const SeverityTable&, const SeverityTable&) = default;
};

SignalSpec apply_shift(const SignalSpec& spec, const ShiftSpec& shift, const SeverityTable& table = {});

// Clean value of the signal at time t.
double signal_value(const SignalSpec& spec, double t);
// Values at `times` plus N(0, noise_std^2) noise drawn from `seed`.
std::vector<double> gen_signal(const SignalSpec& spec, std::span<const double> times, std::uint64_t seed);

struct DatasetProvenance {
  SignalSpec signal;
  ShiftSpec shift;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetProvenance&, const DatasetProvenance&) = default;
};

struct SeriesDataset {
  Split split = Split::test;
  std::vector<TimeSeriesWindow> windows;
  // Not stored in CSV files.
  std::optional<DatasetProvenance> provenance;

  // Split and windows; provenance is metadata.
  friend bool operator==(const SeriesDataset& a, const SeriesDataset& b) {
    return a.split == b.split && a.windows == b.windows;
  }
};

struct DatasetShape {
  std::size_t n_series = 64;
  std::size_t context_len = 20;
  std::size_t horizon_len = 20;
  double dt_sample = 0.1;
  // Per-series offsets: phase uniform in +-phase_jitter (oscillators),
  // intercept uniform in +-intercept_jitter (linear).
  double phase_jitter = 0.7853981633974483;
  double intercept_jitter = 0.5;

  void validate() const;
};

// Series i uses seed derive_seed(seed, i). All windows share timestamps
// t_k = k * dt_sample; the first context_len points are the context.
// ConfigError for a train split with a nonzero severity.
SeriesDataset gen_dataset(const SignalSpec& signal, const ShiftSpec& shift, const DatasetShape& shape,
                          std::uint64_t seed, Split split = Split::test, const SeverityTable& table = {});

// CSV header: series_id,split,role,t,dim_0,...,dim_{d-1}. Target rows may
// leave every dim field empty when values are unknown.
void write_dataset(const SeriesDataset& ds, const std::filesystem::path& path);
std::string dataset_to_string(const SeriesDataset& ds);
// ParseError carries the 1-based line; EmptyDatasetError for no data rows.
SeriesDataset read_dataset(const std::filesystem::path& path);
SeriesDataset dataset_from_string(const std::string& text);

// --- rotating glyph --------------------------------------------------------------

inline constexpr std::size_t kGlyphSide = 16;

// Built-in 16x16 "3", values in [0, 1], shape [16 x 16].
Tensor builtin_glyph();
// Bilinear rotation by `angle` (counter-clockwise) about the image centre;
// samples outside the image read as 0.
Tensor rotate_image(const Tensor& image, double angle);

struct GlyphSequenceSpec {
  Tensor base = builtin_glyph();
  double dt = 0.1;            // rotation time step between frames
  std::size_t frames = 16;
  double omega = 2.0;         // radians per time unit
  double initial_angle = 0.0;
  double frame_time = 0.1;    // timestamp spacing seen by the model

  void validate() const;
};

// dt for severity 0..5.
double glyph_dt(int severity);
// Frame i is base rotated by initial_angle + omega * (i * dt), flattened [256].
std::vector<Tensor> glyph_frames(const GlyphSequenceSpec& spec);
// Frames at glyph_dt(severity) split in half: context then targets.
TimeSeriesWindow gen_rotating_glyph(const GlyphSequenceSpec& spec, int severity);
// n sequences with initial angles uniform in [0, 2 pi) from `seed`.
SeriesDataset gen_glyph_dataset(const GlyphSequenceSpec& spec, int severity, std::size_t n_sequences,
                                std::uint64_t seed, Split split = Split::test);

}  // namespace adanode

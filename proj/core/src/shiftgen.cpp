#include "adanode/shiftgen.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "adanode/errors.hpp"
#include "adanode/seeds.hpp"

namespace adanode {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

SignalKind parse_signal_kind(std::string_view name) {
  if (name == "linear") return SignalKind::linear;
  if (name == "sine") return SignalKind::sine;
  if (name == "damped") return SignalKind::damped;
  throw ConfigError("unknown signal kind '" + std::string(name) + "' (expected linear, sine or damped)");
}

ShiftKind parse_shift_kind(std::string_view name) {
  if (name == "ampfreq") return ShiftKind::ampfreq;
  if (name == "delay") return ShiftKind::delay;
  throw ConfigError("unknown shift kind '" + std::string(name) + "' (expected ampfreq or delay)");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::string_view to_string(SignalKind kind) {
  switch (kind) {
    case SignalKind::linear: return "linear";
    case SignalKind::sine: return "sine";
    case SignalKind::damped: return "damped";
  }
  return "?";
}

std::string_view to_string(ShiftKind kind) { return kind == ShiftKind::ampfreq ? "ampfreq" : "delay"; }
std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

void SignalSpec::validate() const {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(amplitude) || !finite(frequency) || !finite(phase) || !finite(slope) || !finite(intercept) ||
      !finite(damping) || !finite(noise_std)) {
    throw ConfigError("signal parameters must be finite");
  }
  if (!(amplitude > 0.0)) throw ConfigError("amplitude must be positive");
  if (kind != SignalKind::linear && !(frequency > 0.0)) throw ConfigError("frequency must be positive");
  if (damping < 0.0) throw ConfigError("damping must be non-negative");
  if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
}

void ShiftSpec::validate() const {
  if (severity < 0 || severity > 5) throw ConfigError("severity must be in 0..5, got " + std::to_string(severity));
}

SignalSpec apply_shift(const SignalSpec& spec, const ShiftSpec& shift, const SeverityTable& table) {
  shift.validate();
  SignalSpec out = spec;
  if (shift.severity == 0) return out;
  const double s = static_cast<double>(shift.severity);
  if (shift.kind == ShiftKind::ampfreq) {
    if (spec.kind == SignalKind::linear) {
      out.slope = spec.slope * (1.0 + table.slope_step * s);
    } else {
      out.frequency = spec.frequency * (1.0 + table.ampfreq_step * s);
      out.amplitude = spec.amplitude * (1.0 + table.ampfreq_step * s);
    }
  } else {
    double periods = table.delay_step * s;
    if (spec.kind == SignalKind::linear) {
      out.intercept = spec.intercept - spec.slope * periods;
    } else {
      // A delay of `periods` periods: 2 pi f * (periods / f).
      out.phase = spec.phase - kTwoPi * spec.frequency * (periods / spec.frequency);
    }
  }
  return out;
}

double signal_value(const SignalSpec& spec, double t) {
  switch (spec.kind) {
    case SignalKind::linear: return spec.slope * t + spec.intercept;
    case SignalKind::sine: return spec.amplitude * std::sin(kTwoPi * spec.frequency * t + spec.phase);
    case SignalKind::damped:
      return spec.amplitude * std::exp(-spec.damping * t) * std::sin(kTwoPi * spec.frequency * t + spec.phase);
  }
  return 0.0;
}

std::vector<double> gen_signal(const SignalSpec& spec, std::span<const double> times, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    out[i] = signal_value(spec, times[i]);
    if (spec.noise_std > 0.0) out[i] += spec.noise_std * noise(rng);
  }
  return out;
}

void DatasetShape::validate() const {
  if (n_series < 1) throw ConfigError("n_series must be at least 1");
  if (context_len < 2 || horizon_len < 2) throw ConfigError("context and horizon lengths must be at least 2");
  if (!(dt_sample > 0.0) || !std::isfinite(dt_sample)) throw ConfigError("dt_sample must be positive");
  if (!(phase_jitter >= 0.0) || !(intercept_jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
}

SeriesDataset gen_dataset(const SignalSpec& signal, const ShiftSpec& shift, const DatasetShape& shape,
                          std::uint64_t seed, Split split, const SeverityTable& table) {
  signal.validate();
  shift.validate();
  shape.validate();
  if (split == Split::train && shift.severity != 0) throw ConfigError("the train split is in-distribution only");

  const std::size_t n = shape.context_len + shape.horizon_len;
  std::vector<double> times(n);
  for (std::size_t k = 0; k < n; ++k) times[k] = static_cast<double>(k) * shape.dt_sample;
  std::vector<double> context_times(times.begin(), times.begin() + shape.context_len);
  std::vector<double> target_times(times.begin() + shape.context_len, times.end());

  SeriesDataset ds;
  ds.split = split;
  ds.provenance = DatasetProvenance{signal, shift, seed};
  ds.windows.reserve(shape.n_series);
  for (std::size_t i = 0; i < shape.n_series; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    SignalSpec series = signal;
    if (signal.kind == SignalKind::linear) {
      series.intercept += shape.intercept_jitter * unit(rng);
    } else {
      series.phase += shape.phase_jitter * unit(rng);
    }
    series = apply_shift(series, shift, table);
    auto values = gen_signal(series, times, rng());
    TimeSeriesWindow w;
    w.context_times = context_times;
    w.context_values = Tensor({shape.context_len, 1},
                              std::vector<double>(values.begin(), values.begin() + shape.context_len));
    w.target_times = target_times;
    w.target_values = Tensor({shape.horizon_len, 1},
                             std::vector<double>(values.begin() + shape.context_len, values.end()));
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

// --- CSV --------------------------------------------------------------------------

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

double parse_double(std::string_view field, std::size_t line, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": bad " + what + " '" + std::string(field) + "'", line);
  }
  return v;
}

}  // namespace

std::string dataset_to_string(const SeriesDataset& ds) {
  if (ds.windows.empty()) throw EmptyDatasetError("dataset has no windows");
  const std::size_t d = ds.windows.front().obs_dim();
  std::string out = "series_id,split,role,t";
  for (std::size_t j = 0; j < d; ++j) out += ",dim_" + std::to_string(j);
  out += '\n';
  const std::string split(to_string(ds.split));
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    const auto& w = ds.windows[i];
    w.validate();
    if (w.obs_dim() != d) throw DimensionError("windows have different observation dimensions");
    auto emit = [&](const char* role, double t, const Tensor* values, std::size_t r) {
      out += std::to_string(i);
      out += ',';
      out += split;
      out += ',';
      out += role;
      out += ',';
      append_double(out, t);
      for (std::size_t j = 0; j < d; ++j) {
        out += ',';
        if (values) append_double(out, values->at(r, j));
      }
      out += '\n';
    };
    for (std::size_t r = 0; r < w.context_times.size(); ++r) emit("context", w.context_times[r], &w.context_values, r);
    for (std::size_t r = 0; r < w.target_times.size(); ++r) {
      emit("target", w.target_times[r], w.target_values ? &*w.target_values : nullptr, r);
    }
  }
  return out;
}

void write_dataset(const SeriesDataset& ds, const std::filesystem::path& path) {
  std::string text = dataset_to_string(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open dataset for writing: " + path.string());
  out << text;
  if (!out) throw Error("failed writing dataset: " + path.string());
}

SeriesDataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw EmptyDatasetError("dataset file is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_fields(line);
  if (header.size() < 5 || header[0] != "series_id" || header[1] != "split" || header[2] != "role" ||
      header[3] != "t") {
    throw ParseError("line 1: header must be series_id,split,role,t,dim_0,...", 1);
  }
  const std::size_t d = header.size() - 4;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[4 + j] != "dim_" + std::to_string(j)) {
      throw ParseError("line 1: expected column dim_" + std::to_string(j) + ", found '" +
                           std::string(header[4 + j]) + "'",
                       1);
    }
  }

  struct Pending {
    std::vector<double> context_times, context_values, target_times, target_values;
    int target_has_values = -1;
  };
  std::vector<Pending> series;
  std::map<std::string, std::size_t, std::less<>> index;
  std::optional<Split> split;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    auto fail = [&](const std::string& what) -> void {
      throw ParseError("line " + std::to_string(line_no) + ": " + what, line_no);
    };
    if (fields.size() != 4 + d) {
      fail("expected " + std::to_string(4 + d) + " columns, found " + std::to_string(fields.size()));
    }
    Split row_split = Split::test;
    try {
      row_split = parse_split(fields[1]);
    } catch (const ConfigError&) {
      fail("unknown split '" + std::string(fields[1]) + "'");
    }
    if (split && *split != row_split) fail("mixed splits in one file");
    split = row_split;

    auto [it, fresh] = index.try_emplace(std::string(fields[0]), series.size());
    if (fresh) series.emplace_back();
    if (!fresh && it->second + 1 != series.size()) fail("rows of series '" + std::string(fields[0]) + "' are not contiguous");
    Pending& p = series[it->second];
    double t = parse_double(fields[3], line_no, "timestamp");

    bool all_empty = true;
    for (std::size_t j = 0; j < d; ++j) all_empty = all_empty && fields[4 + j].empty();
    if (fields[2] == "context") {
      if (!p.target_times.empty()) fail("context row after target rows");
      p.context_times.push_back(t);
      for (std::size_t j = 0; j < d; ++j) p.context_values.push_back(parse_double(fields[4 + j], line_no, "value"));
    } else if (fields[2] == "target") {
      int has = all_empty ? 0 : 1;
      if (p.target_has_values >= 0 && p.target_has_values != has) fail("target rows mix known and unknown values");
      p.target_has_values = has;
      p.target_times.push_back(t);
      if (has) {
        for (std::size_t j = 0; j < d; ++j) p.target_values.push_back(parse_double(fields[4 + j], line_no, "value"));
      }
    } else {
      fail("unknown role '" + std::string(fields[2]) + "'");
    }
  }
  if (series.empty()) throw EmptyDatasetError("dataset has a header but no rows");

  SeriesDataset ds;
  ds.split = *split;
  for (auto& p : series) {
    TimeSeriesWindow w;
    if (p.context_times.empty()) throw ParseError("a series has no context rows", line_no);
    w.context_times = std::move(p.context_times);
    w.context_values = Tensor({w.context_times.size(), d}, std::move(p.context_values));
    w.target_times = std::move(p.target_times);
    if (p.target_has_values == 1) w.target_values = Tensor({w.target_times.size(), d}, std::move(p.target_values));
    try {
      w.validate();
    } catch (const UsageError& e) {
      throw ParseError(std::string("invalid series: ") + e.what(), line_no);
    }
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

SeriesDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_string(buf.str());
}

// --- rotating glyph ------------------------------------------------------------------

Tensor builtin_glyph() {
  static const char* rows[kGlyphSide] = {
      "................",
      ".....######.....",
      "....########....",
      "...###....###...",
      "..........###...",
      "..........###...",
      ".........###....",
      ".....#####......",
      ".....######.....",
      ".........####...",
      "..........###...",
      "..........###...",
      "...###....###...",
      "....########....",
      ".....######.....",
      "................",
  };
  std::vector<double> v(kGlyphSide * kGlyphSide);
  for (std::size_t r = 0; r < kGlyphSide; ++r) {
    for (std::size_t c = 0; c < kGlyphSide; ++c) v[r * kGlyphSide + c] = rows[r][c] == '#' ? 1.0 : 0.0;
  }
  return Tensor({kGlyphSide, kGlyphSide}, std::move(v));
}

Tensor rotate_image(const Tensor& image, double angle) {
  if (image.size() != kGlyphSide * kGlyphSide) {
    throw DimensionError("glyph images are 16x16, got " + shape_string(image.shape()));
  }
  const double centre = (static_cast<double>(kGlyphSide) - 1.0) / 2.0;
  const double c = std::cos(angle), s = std::sin(angle);
  const auto n = static_cast<long>(kGlyphSide);
  auto pixel = [&](long r, long col) -> double {
    if (r < 0 || r >= n || col < 0 || col >= n) return 0.0;
    return image[static_cast<std::size_t>(r * n + col)];
  };
  std::vector<double> out(kGlyphSide * kGlyphSide);
  for (long r = 0; r < n; ++r) {
    for (long col = 0; col < n; ++col) {
      // Inverse map: rotate the output coordinate by -angle into the source.
      double x = static_cast<double>(col) - centre, y = static_cast<double>(r) - centre;
      double sx = c * x + s * y + centre;
      double sy = -s * x + c * y + centre;
      double fx = std::floor(sx), fy = std::floor(sy);
      double wx = sx - fx, wy = sy - fy;
      auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      double v = (1.0 - wy) * ((1.0 - wx) * pixel(y0, x0) + wx * pixel(y0, x0 + 1)) +
                 wy * ((1.0 - wx) * pixel(y0 + 1, x0) + wx * pixel(y0 + 1, x0 + 1));
      out[static_cast<std::size_t>(r * n + col)] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Tensor::unchecked({kGlyphSide, kGlyphSide}, std::move(out));
}

void GlyphSequenceSpec::validate() const {
  if (base.size() != kGlyphSide * kGlyphSide) throw ConfigError("glyph base image must be 16x16");
  for (double v : base.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("glyph pixels must lie in [0, 1]");
  }
  if (!(dt > 0.0) || !(frame_time > 0.0)) throw ConfigError("glyph dt and frame_time must be positive");
  if (frames < 4) throw ConfigError("glyph sequences need at least 4 frames");
  if (!std::isfinite(omega) || !std::isfinite(initial_angle)) throw ConfigError("glyph rotation must be finite");
}

double glyph_dt(int severity) {
  static const double table[6] = {0.10, 0.11, 0.12, 0.13, 0.14, 0.15};
  if (severity < 0 || severity > 5) throw ConfigError("severity must be in 0..5, got " + std::to_string(severity));
  return table[severity];
}

std::vector<Tensor> glyph_frames(const GlyphSequenceSpec& spec) {
  spec.validate();
  std::vector<Tensor> frames;
  frames.reserve(spec.frames);
  for (std::size_t i = 0; i < spec.frames; ++i) {
    double angle = spec.initial_angle + spec.omega * (static_cast<double>(i) * spec.dt);
    frames.push_back(rotate_image(spec.base, angle).reshaped({kGlyphSide * kGlyphSide}));
  }
  return frames;
}

TimeSeriesWindow gen_rotating_glyph(const GlyphSequenceSpec& spec, int severity) {
  GlyphSequenceSpec s = spec;
  s.dt = glyph_dt(severity);
  auto frames = glyph_frames(s);
  const std::size_t n_context = s.frames / 2, n_target = s.frames - n_context, d = kGlyphSide * kGlyphSide;
  TimeSeriesWindow w;
  std::vector<double> context, target;
  for (std::size_t i = 0; i < s.frames; ++i) {
    double t = static_cast<double>(i) * s.frame_time;
    auto& dst = i < n_context ? context : target;
    (i < n_context ? w.context_times : w.target_times).push_back(t);
    dst.insert(dst.end(), frames[i].values().begin(), frames[i].values().end());
  }
  w.context_values = Tensor({n_context, d}, std::move(context));
  w.target_values = Tensor({n_target, d}, std::move(target));
  return w;
}

SeriesDataset gen_glyph_dataset(const GlyphSequenceSpec& spec, int severity, std::size_t n_sequences,
                                std::uint64_t seed, Split split) {
  if (split == Split::train && severity != 0) throw ConfigError("the train split is in-distribution only");
  if (n_sequences < 1) throw ConfigError("need at least one glyph sequence");
  SeriesDataset ds;
  ds.split = split;
  for (std::size_t i = 0; i < n_sequences; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    GlyphSequenceSpec s = spec;
    s.initial_angle = spec.initial_angle + angle(rng);
    ds.windows.push_back(gen_rotating_glyph(s, severity));
  }
  return ds;
}

}  // namespace adanode

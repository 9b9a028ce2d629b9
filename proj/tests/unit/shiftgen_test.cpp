#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adanode/errors.hpp"
#include "adanode/shiftgen.hpp"

namespace adanode {
namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> all_values(const SeriesDataset& ds) {
  std::vector<double> out;
  for (const auto& w : ds.windows) {
    out.insert(out.end(), w.context_values.values().begin(), w.context_values.values().end());
    out.insert(out.end(), w.target_values->values().begin(), w.target_values->values().end());
  }
  return out;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

TEST(Names, ParseAndPrint) {
  for (auto k : {SignalKind::linear, SignalKind::sine, SignalKind::damped}) EXPECT_EQ(parse_signal_kind(to_string(k)), k);
  for (auto k : {ShiftKind::ampfreq, ShiftKind::delay}) EXPECT_EQ(parse_shift_kind(to_string(k)), k);
  EXPECT_EQ(parse_split("train"), Split::train);
  EXPECT_THROW(parse_signal_kind("square"), ConfigError);
  EXPECT_THROW(parse_shift_kind("noise"), ConfigError);
}

TEST(GenSignal, Examples) {
  SignalSpec sine{SignalKind::sine, 1.0, 1.0, 0.0};
  sine.noise_std = 0;
  EXPECT_NEAR(signal_value(sine, 0.25), 1.0, 1e-15);
  SignalSpec lin;
  lin.kind = SignalKind::linear;
  lin.slope = 2;
  lin.intercept = 0;
  lin.noise_std = 0;
  EXPECT_EQ(signal_value(lin, 3.0), 6.0);
  SignalSpec damped{SignalKind::damped, 1.0, 1.0, 0.0};
  damped.damping = 0.5;
  EXPECT_NEAR(signal_value(damped, 1.0), 0.0, 1e-15);
  std::vector<double> t{0.25};
  EXPECT_EQ(gen_signal(sine, t, 3)[0], signal_value(sine, 0.25));
}

TEST(GenSignal, NoiseIsSeeded) {
  SignalSpec s;
  s.noise_std = 0.1;
  std::vector<double> t{0, 0.1, 0.2, 0.3};
  EXPECT_EQ(gen_signal(s, t, 1), gen_signal(s, t, 1));
  EXPECT_NE(gen_signal(s, t, 1), gen_signal(s, t, 2));
  s.amplitude = 0;
  EXPECT_THROW(gen_signal(s, t, 1), ConfigError);
}

TEST(ApplyShift, Table) {
  SignalSpec s{SignalKind::sine, 1.0, 1.0, 0.0};
  EXPECT_EQ(apply_shift(s, {ShiftKind::ampfreq, 0}), s);
  EXPECT_EQ(apply_shift(s, {ShiftKind::delay, 0}), s);
  auto af = apply_shift(s, {ShiftKind::ampfreq, 5});
  EXPECT_NEAR(af.frequency, 1.5, 1e-15);
  EXPECT_NEAR(af.amplitude, 1.5, 1e-15);
  auto d = apply_shift(s, {ShiftKind::delay, 2});
  EXPECT_NEAR(d.phase, -0.2 * kPi, 1e-15);
  EXPECT_EQ(d.frequency, 1.0);
  SignalSpec lin;
  lin.kind = SignalKind::linear;
  lin.slope = 2;
  EXPECT_NEAR(apply_shift(lin, {ShiftKind::ampfreq, 5}).slope, 4.0, 1e-15);
  EXPECT_NEAR(apply_shift(lin, {ShiftKind::delay, 2}).intercept, -0.2, 1e-15);
  EXPECT_THROW(apply_shift(s, {ShiftKind::delay, 6}), ConfigError);
  EXPECT_THROW(apply_shift(s, {ShiftKind::delay, -1}), ConfigError);
}

TEST(ApplyShift, DelayMovesTheSignalInTime) {
  SignalSpec s{SignalKind::sine, 1.3, 0.7, 0.4};
  auto d = apply_shift(s, {ShiftKind::delay, 3});
  double delay = 0.15 / s.frequency;
  for (double t : {0.0, 0.5, 2.0}) EXPECT_NEAR(signal_value(d, t + delay), signal_value(s, t), 1e-12);
}

TEST(GenDataset, ShapeAndDeterminism) {
  SignalSpec s;
  DatasetShape shape;
  shape.n_series = 7;
  shape.context_len = 5;
  shape.horizon_len = 9;
  auto ds = gen_dataset(s, {ShiftKind::ampfreq, 2}, shape, 11);
  ASSERT_EQ(ds.windows.size(), 7u);
  for (const auto& w : ds.windows) {
    EXPECT_EQ(w.context_times.size(), 5u);
    EXPECT_EQ(w.target_times.size(), 9u);
    EXPECT_NEAR(w.target_times.back(), 13 * shape.dt_sample, 1e-12);
    EXPECT_TRUE(w.has_targets());
  }
  auto again = gen_dataset(s, {ShiftKind::ampfreq, 2}, shape, 11);
  EXPECT_EQ(ds, again);
  EXPECT_NE(ds, gen_dataset(s, {ShiftKind::ampfreq, 2}, shape, 12));
  ASSERT_TRUE(ds.provenance);
  EXPECT_EQ(ds.provenance->seed, 11u);
  EXPECT_THROW(gen_dataset(s, {ShiftKind::ampfreq, 2}, shape, 11, Split::train), ConfigError);
  shape.context_len = 1;
  EXPECT_THROW(gen_dataset(s, {}, shape, 11), ConfigError);
}

TEST(GenDataset, InDistributionTestMatchesTrain) {
  DatasetShape shape;
  shape.n_series = 250;
  for (auto kind : {SignalKind::sine, SignalKind::damped, SignalKind::linear}) {
    SignalSpec s;
    s.kind = kind;
    auto train = gen_dataset(s, {}, shape, 1, Split::train);
    auto test = gen_dataset(s, {}, shape, 2, Split::test);
    auto a = all_values(train), b = all_values(test);
    ASSERT_EQ(a.size(), 10000u);
    EXPECT_LT(ks_statistic(a, b), 0.05) << to_string(kind);
  }
}

TEST(GenDataset, ShiftGrowsWithSeverity) {
  // Bench window: 1.5 periods, short enough that s = 5 does not wrap around.
  DatasetShape shape;
  shape.n_series = 20;
  shape.context_len = 10;
  shape.horizon_len = 20;
  for (auto kind : {SignalKind::sine, SignalKind::damped, SignalKind::linear}) {
    for (auto shift : {ShiftKind::ampfreq, ShiftKind::delay}) {
      SignalSpec s;
      s.kind = kind;
      auto base = all_values(gen_dataset(s, {shift, 0}, shape, 5));
      double prev = 0;
      for (int sev = 0; sev <= 5; ++sev) {
        auto v = all_values(gen_dataset(s, {shift, sev}, shape, 5));
        double msd = 0;
        for (std::size_t i = 0; i < v.size(); ++i) msd += (v[i] - base[i]) * (v[i] - base[i]);
        msd /= static_cast<double>(v.size());
        EXPECT_GE(msd, prev) << to_string(kind) << " " << to_string(shift) << " " << sev;
        prev = msd;
      }
    }
  }
}

TEST(DatasetCsv, RoundTrip) {
  SignalSpec s;
  DatasetShape shape;
  shape.n_series = 3;
  auto ds = gen_dataset(s, {ShiftKind::delay, 4}, shape, 8);
  auto text = dataset_to_string(ds);
  EXPECT_EQ(text.rfind("series_id,split,role,t,dim_0\n", 0), 0u);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  auto back = dataset_from_string(text);
  EXPECT_EQ(back, ds);
  EXPECT_FALSE(back.provenance);

  auto path = std::filesystem::temp_directory_path() / "adanode_shiftgen_test.csv";
  write_dataset(ds, path);
  EXPECT_EQ(read_dataset(path), ds);
  std::filesystem::remove(path);
}

TEST(DatasetCsv, UnknownTargets) {
  SignalSpec s;
  DatasetShape shape;
  shape.n_series = 2;
  auto ds = gen_dataset(s, {}, shape, 8);
  for (auto& w : ds.windows) w = w.without_targets();
  auto back = dataset_from_string(dataset_to_string(ds));
  EXPECT_EQ(back, ds);
  EXPECT_FALSE(back.windows[0].has_targets());
}

TEST(DatasetCsv, Errors) {
  EXPECT_THROW(dataset_from_string(""), EmptyDatasetError);
  EXPECT_THROW(dataset_from_string("series_id,split,role,t,dim_0\n"), EmptyDatasetError);
  EXPECT_THROW(dataset_from_string("series_id,split,role,dim_0\n0,test,context,1\n"), ParseError);
  try {
    dataset_from_string(
        "series_id,split,role,t,dim_0\n0,test,context,0,1\n0,test,context,0.1\n0,test,target,0.2,1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  try {
    dataset_from_string("series_id,split,role,t,dim_0\n0,test,context,0,x\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 2u);
  }
}

TEST(Glyph, DtTable) {
  const double expected[] = {0.10, 0.11, 0.12, 0.13, 0.14, 0.15};
  for (int s = 0; s <= 5; ++s) EXPECT_NEAR(glyph_dt(s), expected[s], 1e-15);
  EXPECT_THROW(glyph_dt(6), ConfigError);
}

TEST(Glyph, BaseImage) {
  auto g = builtin_glyph();
  EXPECT_EQ(g.shape(), (Tensor::Shape{16, 16}));
  double total = 0;
  for (double v : g.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    total += v;
  }
  EXPECT_GT(total, 10.0);
  EXPECT_EQ(rotate_image(g, 0.0), g);
}

TEST(Glyph, FullTurnReturnsToStart) {
  GlyphSequenceSpec spec;
  spec.frames = 12;
  spec.omega = 2 * kPi;  // a full turn at frame 10
  auto frames = glyph_frames(spec);
  double worst = 0;
  for (std::size_t i = 0; i < 256; ++i) worst = std::max(worst, std::abs(frames[10][i] - frames[0][i]));
  EXPECT_LT(worst, 0.05);
}

TEST(Glyph, PixelsStayInRange) {
  auto g = builtin_glyph();
  for (int k = 0; k < 40; ++k) {
    auto r = rotate_image(g, 0.157 * k);
    for (double v : r.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Glyph, DoubleStepSharesAngles) {
  GlyphSequenceSpec a;
  a.frames = 16;
  a.dt = 0.1;
  a.omega = 1.7;
  GlyphSequenceSpec b = a;
  b.dt = 0.2;
  auto fa = glyph_frames(a), fb = glyph_frames(b);
  for (std::size_t i = 0; 2 * i < fa.size(); ++i) EXPECT_EQ(fb[i], fa[2 * i]) << i;
}

TEST(Glyph, WindowLayout) {
  GlyphSequenceSpec spec;
  spec.frames = 10;
  auto w = gen_rotating_glyph(spec, 5);
  EXPECT_EQ(w.context_times.size(), 5u);
  EXPECT_EQ(w.target_times.size(), 5u);
  EXPECT_EQ(w.obs_dim(), 256u);
  EXPECT_NEAR(w.target_times.back(), 9 * spec.frame_time, 1e-12);
  auto frames = glyph_frames([&] {
    auto s = spec;
    s.dt = 0.15;
    return s;
  }());
  EXPECT_EQ(w.target_values->row(4).values(), frames[9].values());

  auto ds = gen_glyph_dataset(spec, 3, 4, 1);
  EXPECT_EQ(ds.windows.size(), 4u);
  EXPECT_EQ(ds, gen_glyph_dataset(spec, 3, 4, 1));
  EXPECT_THROW(gen_glyph_dataset(spec, 3, 4, 1, Split::train), ConfigError);
  spec.frames = 2;
  EXPECT_THROW(gen_rotating_glyph(spec, 0), ConfigError);
}

}  // namespace
}  // namespace adanode

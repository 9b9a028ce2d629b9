#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adanode/errors.hpp"
#include "adanode/model.hpp"
#include "rotation_model.hpp"

namespace adanode {
namespace {

TimeSeriesWindow simple_window(std::size_t nc = 4, std::size_t nt = 3, bool targets = true) {
  TimeSeriesWindow w;
  std::vector<double> cv, tv;
  for (std::size_t i = 0; i < nc + nt; ++i) {
    double t = 0.1 * static_cast<double>(i);
    double y = std::sin(3 * t);
    if (i < nc) {
      w.context_times.push_back(t);
      cv.push_back(y);
    } else {
      w.target_times.push_back(t);
      tv.push_back(y);
    }
  }
  w.context_values = Tensor::matrix(nc, 1, cv);
  if (targets) w.target_values = Tensor::matrix(nt, 1, tv);
  return w;
}

Architecture small_arch() {
  Architecture a;
  a.d_obs = 1;
  a.d_lat = 3;
  a.encoder_length = 5;
  a.encoder_hidden = {8};
  a.dynamics_hidden = {8};
  a.decoder_hidden = {8};
  a.ode_step = 0.05;
  return a;
}

// Rotation f(u) = [u2, -u1] started from z0 = [0, 1]; mu = z1.
LatentOdeModel harmonic_model() {
  Architecture a;
  a.d_obs = 1;
  a.d_lat = 2;
  a.encoder_length = 2;
  a.encoder_hidden = {};
  a.dynamics_hidden = {};
  a.decoder_hidden = {};
  a.ode_step = 0.01;
  ParameterSet p;
  p.add("enc.0.W", Tensor::zeros({4, 2}));
  p.add("enc.0.b", Tensor::vector({0.0, 1.0, -60.0, -60.0}));
  p.add("dyn.0.W", Tensor::matrix({{0, 1}, {-1, 0}}));
  p.add("dyn.0.b", Tensor::vector({0, 0}));
  p.add("dec.0.W", Tensor::matrix({{1, 0}, {0, 0}}));
  p.add("dec.0.b", Tensor::vector({0, 0}));
  return LatentOdeModel(a, p);
}

TEST(Architecture, Validation) {
  auto a = small_arch();
  EXPECT_NO_THROW(a.validate());
  a.encoder_length = 1;
  EXPECT_THROW(a.validate(), ConfigError);
  a = small_arch();
  a.dynamics_hidden = {0};
  EXPECT_THROW(a.validate(), ConfigError);
  a = small_arch();
  a.d_lat = 0;
  EXPECT_THROW(a.validate(), ConfigError);
}

TEST(Window, Validation) {
  auto w = simple_window();
  EXPECT_NO_THROW(w.validate());
  auto bad = w;
  bad.context_times[2] = bad.context_times[1];
  EXPECT_THROW(bad.validate(), UsageError);
  bad = w;
  bad.target_times[0] = 0.0;
  EXPECT_THROW(bad.validate(), UsageError);
  bad = w;
  bad.context_values = Tensor::matrix(3, 1, {1, 2, 3});
  EXPECT_THROW(bad.validate(), DimensionError);
  bad = w;
  bad.context_times.clear();
  EXPECT_THROW(bad.validate(), UsageError);
  EXPECT_FALSE(w.without_targets().has_targets());
  EXPECT_EQ(w.without_targets().target_times, w.target_times);
}

TEST(AdaptationParams, DomainAndLogForm) {
  EXPECT_THROW(AdaptationParams(0.0, 0.0), DomainError);
  EXPECT_THROW(AdaptationParams(-1.0, 0.0), DomainError);
  EXPECT_THROW(AdaptationParams(1.0, NAN), DomainError);
  auto p = AdaptationParams::from_log_alpha(std::log(2.0), -0.5);
  EXPECT_NEAR(p.alpha(), 2.0, 1e-15);
  EXPECT_TRUE(AdaptationParams().is_identity());
}

TEST(ResampleMatrix, LinearInterpolationOracle) {
  std::vector<double> times{0.0, 1.0, 3.0};
  auto m = resample_matrix(times, 4, 0.0, 3.0);  // tau = 0, 1, 2, 3
  ASSERT_EQ(m.shape(), (Tensor::Shape{4, 3}));
  EXPECT_EQ(m.row(0).values(), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(m.row(1).values(), (std::vector<double>{0, 1, 0}));
  EXPECT_NEAR(m.at(2, 1), 0.5, 1e-15);
  EXPECT_NEAR(m.at(2, 2), 0.5, 1e-15);
  EXPECT_EQ(m.row(3).values(), (std::vector<double>{0, 0, 1}));
  // Outside the samples the boundary value holds.
  auto wide = resample_matrix(times, 3, -1.0, 5.0);
  EXPECT_EQ(wide.row(0).values(), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(wide.row(2).values(), (std::vector<double>{0, 0, 1}));
  std::vector<double> one{0.0};
  EXPECT_THROW(resample_matrix(one, 4, 0, 1), InterpolationError);
  EXPECT_THROW(resample_matrix(times, 1, 0, 1), InterpolationError);
}

TEST(ResampleMatrix, RowsSumToOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> times{0.0};
    for (int i = 0; i < 7; ++i) times.push_back(times.back() + u(rng));
    auto m = resample_matrix(times, 11, times.front(), times.back());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < m.cols(); ++c) s += m.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-14);
    }
  }
}

TEST(SolveGrid, SortedUnion) {
  auto w = simple_window(3, 2);
  auto g = solve_grid(w);
  EXPECT_EQ(g.size(), 5u);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
}

TEST(Encoder, HandBuiltIdentityLayer) {
  Architecture a;
  a.d_obs = 1;
  a.d_lat = 3;
  a.encoder_length = 3;
  a.encoder_hidden = {};
  a.dynamics_hidden = {};
  a.decoder_hidden = {};
  ParameterSet p;
  auto W = Tensor::zeros({6, 3});
  for (int i = 0; i < 3; ++i) W.at(i, i) = 1.0;
  p.add("enc.0.W", W);
  p.add("enc.0.b", Tensor::vector({0, 0, 0, 0, 0, 0}));
  p.add("dyn.0.W", Tensor::zeros({3, 3}));
  p.add("dyn.0.b", Tensor::vector({0, 0, 0}));
  p.add("dec.0.W", Tensor::zeros({2, 3}));
  p.add("dec.0.b", Tensor::vector({0, 0}));
  LatentOdeModel model(a, p);
  TimeSeriesWindow w;
  w.context_times = {0.0, 0.5, 1.0};
  w.context_values = Tensor::matrix(3, 1, {0.5, 1.0, 1.5});
  auto post = model.encode(w, EncodeMode::context_only);
  EXPECT_EQ(post.mean.values(), (std::vector<double>{0.5, 1.0, 1.5}));
  for (double s : post.stddev.values()) EXPECT_NEAR(s, std::log(2.0), 1e-15);
}

TEST(Encoder, DeterministicAndPositive) {
  std::mt19937_64 rng(4);
  auto w = simple_window();
  for (int trial = 0; trial < 10; ++trial) {
    auto model = LatentOdeModel::initialize(small_arch(), rng());
    auto a = model.encode(w, EncodeMode::context_only);
    auto b = model.encode(w, EncodeMode::context_only);
    EXPECT_EQ(a.mean, b.mean);
    for (double s : a.stddev.values()) EXPECT_GT(s, 0.0);
  }
}

TEST(Encoder, FullSequenceNeedsTargets) {
  auto model = LatentOdeModel::initialize(small_arch(), 1);
  EXPECT_THROW(model.encode(simple_window(4, 3, false), EncodeMode::full_sequence), UsageError);
  EXPECT_NO_THROW(model.encode(simple_window(), EncodeMode::full_sequence));
  TimeSeriesWindow two_d;
  two_d.context_times = {0, 1};
  two_d.context_values = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_THROW(model.encode(two_d, EncodeMode::context_only), DimensionError);
}

TEST(Encoder, WithTargetsMatchesFullSequence) {
  auto model = LatentOdeModel::initialize(small_arch(), 8);
  auto w = simple_window();
  auto a = model.encode(w, EncodeMode::full_sequence);
  auto b = model.encode_with_targets(w.without_targets(), *w.target_values);
  EXPECT_EQ(a.mean, b.mean);
}

TEST(SampleLatent, DegenerateAndDeterministic) {
  LatentPosterior post{Tensor::vector({1.0, -2.0}), Tensor::vector({1e-300, 1e-300})};
  EXPECT_EQ(sample_latent(post, 3).values(), post.mean.values());
  LatentPosterior wide{Tensor::vector({1.0, -2.0}), Tensor::vector({0.5, 2.0})};
  EXPECT_EQ(sample_latent(wide, 11), sample_latent(wide, 11));
  EXPECT_NE(sample_latent(wide, 11), sample_latent(wide, 12));
}

TEST(SampleLatent, MonteCarloMean) {
  const Tensor mu = Tensor::vector({0.7, -1.5}), sigma = Tensor::vector({0.3, 2.0});
  const int n = 100000;
  auto eps = standard_normal(n, 2, 99);
  for (int j = 0; j < 2; ++j) {
    double s = 0;
    for (int i = 0; i < n; ++i) s += mu[j] + sigma[j] * eps.at(i, j);
    EXPECT_NEAR(s / n, mu[j], 3 * sigma[j] / std::sqrt(double(n)));
  }
}

TEST(Forecast, HarmonicOscillator) {
  auto model = harmonic_model();
  TimeSeriesWindow w;
  w.context_times = {0.0, 0.1};
  w.context_values = Tensor::matrix(2, 1, {0.0, 0.1});
  for (int i = 1; i <= 30; ++i) w.target_times.push_back(0.1 + 0.2 * i);
  auto f = model.forecast_unadapted(w, 1, 0);
  ASSERT_EQ(f.size(), 1u);
  ASSERT_EQ(f[0].mean.rows(), w.target_times.size());
  for (std::size_t i = 0; i < w.target_times.size(); ++i) {
    EXPECT_NEAR(f[0].mean.at(i, 0), std::sin(w.target_times[i]), 1e-5);
  }
  EXPECT_EQ(f[0].times, w.target_times);
}

TEST(Forecast, AlphaSpeedsUpRotation) {
  auto model = harmonic_model();
  TimeSeriesWindow w;
  w.context_times = {0.0, 0.1};
  w.context_values = Tensor::matrix(2, 1, {0.0, 0.1});
  w.target_times = {0.5, 1.0, 2.0};
  auto f = model.forecast(w, AdaptationParams(1.5, 0.0), 1, 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f[0].mean.at(i, 0), std::sin(1.5 * w.target_times[i]), 1e-5);
}

TEST(Forecast, IdentityAdaptationIsBitIdentical) {
  auto model = LatentOdeModel::initialize(small_arch(), 21);
  auto w = simple_window().without_targets();
  auto a = model.forecast(w, AdaptationParams(), 4, 77);
  auto b = model.forecast_unadapted(w, 4, 77);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a[s].mean, b[s].mean);
    EXPECT_EQ(a[s].stddev, b[s].stddev);
  }
}

TEST(Forecast, OutputsCoverTargetsWithPositiveSigma) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    auto model = LatentOdeModel::initialize(small_arch(), rng());
    auto w = simple_window(3 + trial, 1 + 2 * trial, false);
    for (const auto& f : model.forecast_unadapted(w, 3, trial)) {
      EXPECT_EQ(f.mean.rows(), w.target_times.size());
      for (double s : f.stddev.values()) EXPECT_GE(s, small_arch().sigma_floor);
    }
  }
}

TEST(Forecast, DivergenceNamesTheAdaptation) {
  Architecture a = harmonic_model().architecture();
  ParameterSet p = harmonic_model().parameters();
  p.set("dyn.0.W", Tensor::matrix({{50, 0}, {0, 50}}));
  LatentOdeModel model(a, p);
  TimeSeriesWindow w;
  w.context_times = {0.0, 0.1};
  w.context_values = Tensor::matrix(2, 1, {0.0, 0.1});
  w.target_times = {5.0, 10.0};
  try {
    model.forecast(w, AdaptationParams(8.0, 0.0), 1, 0);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos) << e.what();
  }
}

TEST(Model, ParameterLayoutIsEnforced) {
  auto model = LatentOdeModel::initialize(small_arch(), 2);
  ParameterSet wrong = model.parameters();
  EXPECT_THROW(wrong.set("enc.1.b", Tensor::zeros({8})), DimensionError);
  ParameterSet missing;
  missing.add("enc.0.W", Tensor::zeros({8, 5}));
  EXPECT_THROW(LatentOdeModel(small_arch(), missing), ConfigError);
  // Insertion order does not matter.
  ParameterSet reversed;
  auto entries = model.parameters().entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) reversed.add(it->name, it->value);
  EXPECT_EQ(LatentOdeModel(small_arch(), reversed).parameters(), model.parameters());
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto model = LatentOdeModel::initialize(small_arch(), 13);
  auto back = checkpoint_from_string(checkpoint_to_string(model));
  EXPECT_EQ(back.architecture(), model.architecture());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(back.parameters().entries()[i].value, model.parameters().entries()[i].value);
  }
  EXPECT_EQ(parameter_digest(back.parameters()), parameter_digest(model.parameters()));
}

TEST(Checkpoint, VersionAndParseErrors) {
  auto text = checkpoint_to_string(LatentOdeModel::initialize(small_arch(), 13));
  auto pos = text.find("\"format_version\": 1");
  ASSERT_NE(pos, std::string::npos);
  auto old = text;
  old.replace(pos, 19, "\"format_version\": 0");
  EXPECT_THROW(checkpoint_from_string(old), VersionError);
  EXPECT_THROW(checkpoint_from_string(text.substr(0, text.size() / 2)), ParseError);
  EXPECT_THROW(checkpoint_from_string("{}"), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.json"), Error);
}

TEST(RotationModel, EncoderRecoversPhase) {
  testing::RotationModelSpec spec;
  auto model = testing::rotation_model(spec);
  for (double phase : {0.3, 2.0, 4.5}) {
    auto post = model.encode(testing::rotation_window(spec, 1.0, phase), EncodeMode::context_only);
    EXPECT_NEAR(post.mean[0], std::sin(phase), 0.05);
    EXPECT_NEAR(post.mean[1], std::cos(phase), 0.1);
  }
}

}  // namespace
}  // namespace adanode

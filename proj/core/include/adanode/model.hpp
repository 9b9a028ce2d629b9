#pragma once

// Variational encoder -> latent ODE -> decoder forecaster.
//
// The encoder is an MLP over a fixed-length vector: the window's values are
// linearly interpolated onto L evenly spaced points over the encoded span and
// flattened time-major ([L x d_obs] -> L*d_obs). Context-only encoding spans
// the context; full-sequence encoding spans context plus targets and uses the
// same weights. The dynamics MLP maps alpha*z + gamma to dz/dt. The decoder
// maps each latent state to a per-dimension Gaussian.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adanode/autodiff.hpp"
#include "adanode/ode.hpp"
#include "adanode/parameters.hpp"
#include "adanode/tensor.hpp"

namespace adanode {

inline constexpr int kCheckpointFormatVersion = 1;

struct Architecture {
  std::size_t d_obs = 1;
  std::size_t d_lat = 8;
  std::size_t encoder_length = 32;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> dynamics_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64};
  Activation activation = Activation::tanh;
  // RK4 step in time units; 0 means (t_N - t_0) / 100 of each solve.
  double ode_step = 0.0;
  // Added to softplus(raw) for the predictive standard deviation.
  double sigma_floor = 1e-4;

  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Context (t_C, y_C) and target timestamps t_T with optional values y_T.
// Values are row-per-timestamp matrices [N x d_obs].
struct TimeSeriesWindow {
  std::vector<double> context_times;
  Tensor context_values;
  std::vector<double> target_times;
  std::optional<Tensor> target_values;

  void validate() const;
  std::size_t obs_dim() const { return context_values.cols(); }
  bool has_targets() const { return target_values.has_value(); }
  TimeSeriesWindow without_targets() const;

  friend bool operator==(const TimeSeriesWindow&, const TimeSeriesWindow&) = default;
};

struct LatentPosterior {
  Tensor mean;
  Tensor stddev;
};

// Per-timestep predictive Gaussians; mean/stddev are [T x d_obs].
struct ForecastDistribution {
  std::vector<double> times;
  Tensor mean;
  Tensor stddev;
};

// The test-time scalars. alpha > 0 always; optimisers work on log(alpha).
class AdaptationParams {
 public:
  AdaptationParams() = default;
  AdaptationParams(double alpha, double gamma);
  static AdaptationParams from_log_alpha(double log_alpha, double gamma);

  double alpha() const noexcept { return alpha_; }
  double gamma() const noexcept { return gamma_; }
  double log_alpha() const;
  bool is_identity() const noexcept { return alpha_ == 1.0 && gamma_ == 0.0; }

  friend bool operator==(const AdaptationParams&, const AdaptationParams&) = default;

 private:
  double alpha_ = 1.0;
  double gamma_ = 0.0;
};

enum class EncodeMode { context_only, full_sequence };

// L x N interpolation weights taking values at `times` onto L evenly spaced
// points over [t_begin, t_end]. Points outside the sample range hold the
// boundary value. InterpolationError for fewer than two samples or L < 2.
Tensor resample_matrix(std::span<const double> times, std::size_t points, double t_begin, double t_end);

class LatentOdeModel;

struct GraphPosterior {
  Var mean;    // [B x d_lat]
  Var stddev;  // [B x d_lat]
};

// Model parameters bound into one tape, plus the forward building blocks.
class ModelGraph {
 public:
  ModelGraph(Graph& graph, const LatentOdeModel& model);

  Graph& graph() const { return graph_; }
  const ParamVars& vars() const { return vars_; }
  const LatentOdeModel& model() const { return model_; }

  // rows: [B x L*d_obs]
  GraphPosterior encode(Var rows) const;
  // mean [1 x d] or [B x d] broadcast against eps [S x d]
  Var sample(const GraphPosterior& post, const Tensor& eps) const;
  std::vector<Var> solve(Var z0, std::span<const double> times, const LatentShift* shift) const;
  // [R x d_lat] -> (mean, stddev) each [R x d_obs]
  std::pair<Var, Var> decode(Var states) const;
  Var dynamics(Var u) const;

 private:
  Graph& graph_;
  const LatentOdeModel& model_;
  ParamVars vars_;
};

class LatentOdeModel {
 public:
  LatentOdeModel(Architecture arch, ParameterSet params);

  // Glorot-uniform weights, zero biases.
  static LatentOdeModel initialize(const Architecture& arch, std::uint64_t seed);
  // Parameter names and shapes implied by an architecture, in canonical order.
  static std::vector<std::pair<std::string, Tensor::Shape>> parameter_layout(const Architecture& arch);

  const Architecture& architecture() const noexcept { return arch_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  LatentOdeModel with_parameters(ParameterSet params) const;

  // Encoder input row [1 x L*d_obs]. full_sequence uses window.target_values.
  Tensor encoder_input(const TimeSeriesWindow& window, EncodeMode mode) const;
  LatentPosterior encode(const TimeSeriesWindow& window, EncodeMode mode) const;
  // full_sequence encoding with explicit values for the target timestamps.
  LatentPosterior encode_with_targets(const TimeSeriesWindow& window, const Tensor& target_values) const;

  // One forecast per latent sample over window.target_times.
  std::vector<ForecastDistribution> forecast(const TimeSeriesWindow& window, const AdaptationParams& adapt,
                                             std::size_t n_samples, std::uint64_t seed) const;
  // The same forward pass with no (alpha, gamma) hook in the dynamics.
  std::vector<ForecastDistribution> forecast_unadapted(const TimeSeriesWindow& window, std::size_t n_samples,
                                                       std::uint64_t seed) const;

  DynamicsSpec dynamics_spec() const;

 private:
  std::vector<ForecastDistribution> forecast_impl(const TimeSeriesWindow& window, const AdaptationParams* adapt,
                                                  std::size_t n_samples, std::uint64_t seed) const;

  Architecture arch_;
  ParameterSet params_;
};

// Reparameterised draw mean + stddev * eps with eps ~ N(0, I) from `seed`.
Tensor sample_latent(const LatentPosterior& post, std::uint64_t seed);
// [rows x dim] standard normals; row r is the r-th draw of a seed-`seed` stream.
Tensor standard_normal(std::size_t rows, std::size_t dim, std::uint64_t seed);

// Solve grid for a window: sorted union of context and target timestamps.
std::vector<double> solve_grid(const TimeSeriesWindow& window);

// --- checkpoints ---------------------------------------------------------------

void save_checkpoint(const LatentOdeModel& model, const std::filesystem::path& path);
std::string checkpoint_to_string(const LatentOdeModel& model);
// ParseError (with byte offset) for malformed JSON, VersionError for a
// format_version other than kCheckpointFormatVersion.
LatentOdeModel load_checkpoint(const std::filesystem::path& path);
LatentOdeModel checkpoint_from_string(const std::string& text);

}  // namespace adanode

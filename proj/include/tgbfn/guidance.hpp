#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tgbfn/bayesflow.hpp"
#include "tgbfn/mat.hpp"
#include "tgbfn/params.hpp"
#include "tgbfn/rng.hpp"
#include "tgbfn/schedule.hpp"
#include "tgbfn/shapes.hpp"

namespace tgbfn {

struct GuidanceConfig {
  int positions = 24;
  int classes = 36;
  int condition_dim = 2;
  int hidden = 128;
  int hidden_layers = 2;
  int alpha_features = 16;     // sinusoidal features of log(alpha)
  double variance_floor = 1e-4;

  int input_dim() const { return positions * classes + alpha_features; }
  bool operator==(const GuidanceConfig&) const = default;
};

// Predicted mean and diagonal variance of the condition given a belief
// state, in normalized condition space.
struct GuidanceMoments {
  std::vector<double> mu;
  std::vector<double> sigma2;
};

// MLP over [flatten(theta), features(log alpha)] emitting d means and d
// pre-variance values; variances go through softplus plus the floor.
struct GuidanceParams {
  GuidanceConfig cfg;
  std::vector<Mat> w;                    // hidden_layers + 1 weight mats
  std::vector<std::vector<double>> b;

  explicit GuidanceParams(const GuidanceConfig& c);
  GuidanceParams() = default;

  std::vector<NamedArray> named_arrays();
  std::vector<NamedArray> named_arrays() const;
};

GuidanceParams init_guidance(const GuidanceConfig& cfg, Rng& rng);

struct GuidanceWorkspace {
  std::vector<double> input;
  std::vector<std::vector<double>> z, h;  // per hidden layer
  std::vector<double> out;                // 2d raw outputs
  std::vector<double> dh, dz, dout;

  void ensure(const GuidanceConfig& cfg);
};

GuidanceMoments guidance_forward(const BeliefState& theta, double alpha,
                                 const GuidanceParams& params);

// Workspace-reusing variant for hot loops.
GuidanceMoments guidance_forward(const BeliefState& theta, double alpha,
                                 const GuidanceParams& params, GuidanceWorkspace& ws);

// Accumulates gradients given d loss / d mu and d loss / d sigma2.
// ws must hold the matching forward state.
void guidance_backward(const GuidanceParams& params, std::span<const double> dmu,
                       std::span<const double> dsigma2, GuidanceWorkspace& ws,
                       GuidanceParams& grads);

// One record of the supervision batch: a token sequence and its normalized
// condition vector.
struct MomentRecord {
  const TokenSequence* x = nullptr;
  const double* condition = nullptr;  // condition_dim values, normalized
};

// Empirical moments of the condition given the observed draw y at accuracy
// alpha: every record is weighted by the sender density of y under its
// sequence, normalized across the batch; variance is floored.
GuidanceMoments empirical_moments(std::span<const MomentRecord> batch, const Mat& y, double alpha,
                                  int condition_dim, double variance_floor);

// Closed-form KL divergence between diagonal Gaussians, summed over dims.
double gaussian_kl(const GuidanceMoments& p, const GuidanceMoments& q);

// log N(C; mu_psi(theta, alpha), diag(sigma2_psi(theta, alpha)))
double guidance_logweight(std::span<const double> condition, const BeliefState& theta,
                          double alpha, const GuidanceParams& params);
double guidance_logweight(std::span<const double> condition, const BeliefState& theta,
                          double alpha, const GuidanceParams& params, GuidanceWorkspace& ws);

struct GuidanceTrainConfig {
  long steps = 12000;
  int batch = 64;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double beta_total = 3.0;
  int n = 100;
  uint64_t seed = 0;
  int threads = 1;
  long checkpoint_interval = 2000;
  long log_interval = 100;
};

// Trains the moments network against per-minibatch empirical targets.
// Records must carry normalized_conditions. Returns trained parameters;
// log_line (optional) receives one structured line per log interval.
// A non-finite loss aborts, leaving the last checkpoint_cb write as the
// most recent good state.
GuidanceParams train_guidance(
    const std::vector<shapes::DatasetRecord>& records, const GuidanceConfig& cfg,
    const GuidanceTrainConfig& train_cfg,
    const std::function<void(const GuidanceParams&, long)>& checkpoint_cb = {},
    const std::function<void(const std::string&)>& log_line = {});

}  // namespace tgbfn

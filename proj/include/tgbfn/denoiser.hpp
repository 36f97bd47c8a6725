#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tgbfn/bayesflow.hpp"
#include "tgbfn/mat.hpp"
#include "tgbfn/params.hpp"
#include "tgbfn/rng.hpp"

namespace tgbfn {

struct DenoiserConfig {
  int positions = 24;      // D
  int classes = 36;        // K
  int hidden = 128;        // W
  int hidden_layers = 2;
  int time_features = 16;  // sinusoidal features of t (even)
  bool conditional = false;
  int condition_dim = 2;

  bool operator==(const DenoiserConfig&) const = default;
};

// Per-position encoder over the full belief state:
//   e_d    = W_embed theta_d + b_embed
//   base   = mean_d e_d + summary(flatten theta) + time embedding
//            [+ condition embedding]
//   h0_d   = e_d + pos_d + base
//   block l: g = h + silu(W_mix h)   (W_mix couples positions, channel-shared)
//            h = silu(W_fc g + b_fc) (per-position channel map, shared weights)
//   logits = W_out h + b_out          (W_out, b_out start at zero)
// The learned positional table breaks the row exchangeability of the shared
// encoder; the mixing matrices let every position condition on every other,
// which the token grammar requires.
struct DenoiserParams {
  DenoiserConfig cfg;
  Mat w_embed;                 // hidden x classes
  std::vector<double> b_embed;
  Mat w_pos;                   // positions x hidden, learned positional table
  Mat w_glob1;                 // hidden x (positions * classes), state summary
  std::vector<double> b_glob1;
  Mat w_glob2;                 // hidden x hidden
  std::vector<double> b_glob2;
  Mat w_time;                  // hidden x time_features
  std::vector<double> b_time;
  Mat w_cond1;                 // hidden x condition_dim (conditional only)
  std::vector<double> b_cond1;
  Mat w_cond2;                 // hidden x hidden (conditional only)
  std::vector<double> b_cond2;
  std::vector<Mat> w_mix;      // hidden_layers of positions x positions
  std::vector<Mat> w_fc;       // hidden_layers of hidden x hidden
  std::vector<std::vector<double>> b_fc;
  Mat w_out;                   // classes x hidden
  std::vector<double> b_out;

  explicit DenoiserParams(const DenoiserConfig& c);
  DenoiserParams() = default;

  // Views over every tensor, fixed declared order.
  std::vector<NamedArray> named_arrays();
  std::vector<NamedArray> named_arrays() const;  // const data exposed mutably only for IO
};

// Hidden layers fan-in-scaled, output projection zeroed so the initial
// output distribution is uniform.
DenoiserParams init_denoiser(const DenoiserConfig& cfg, Rng& rng);

// Scratch buffers for one forward/backward evaluation; reuse across calls.
struct DenoiserWorkspace {
  std::vector<double> timefeat, tv, condfeat_z, condfeat_h, cv, ctx, base;
  std::vector<double> glob_z, glob_h, gv;
  Mat embed;                    // positions x hidden
  std::vector<Mat> zmix, g;     // per layer: mixing pre-activation, mixed input
  std::vector<Mat> z, h;        // per layer, positions x hidden
  Mat logits, probs;            // positions x classes
  // backward scratch
  std::vector<double> dbase, dtv, dcv, dc1, dglob, buf_h;
  Mat dh, dg;                   // positions x hidden

  void ensure(const DenoiserConfig& cfg);
};

// Forward pass; fills ws (including ws.probs). cond must be present exactly
// when cfg.conditional, in normalized condition space.
void denoiser_forward(const DenoiserParams& params, const Mat& theta, double t,
                      std::span<const double> cond, DenoiserWorkspace& ws);

// The output-distribution network as a pure operation (Alg-style entry).
Mat output_distribution(const BeliefState& theta, double t, std::span<const double> cond,
                        const DenoiserParams& params);

// Accumulates parameter gradients for d loss / d logits into grads.
// ws must hold the matching forward state; cond must match the forward call.
void denoiser_backward(const DenoiserParams& params, const Mat& theta,
                       std::span<const double> cond, const Mat& dlogits, DenoiserWorkspace& ws,
                       DenoiserParams& grads);

// One training example for the discrete-time loss.
struct LossItem {
  TokenSequence x;
  BeliefState theta;          // belief state the network conditions on
  double t = 0.0;
  double alpha = 0.0;         // per-step accuracy for the KL term
  double gamma = 1.0;
  std::vector<double> cond;   // normalized; empty unless conditional
};

// Mean over batch and positions of the single-draw KL estimate, with exact
// reverse-mode gradients (the sender draw is treated as fixed). Each item's
// draw comes from rng.derive(item index), so the value is reproducible for
// a given root rng seed regardless of thread count.
double loss_and_gradients(std::span<const LossItem> batch, const DenoiserParams& params,
                          DenoiserParams& grads, const Rng& rng, int threads = 1);

// Sinusoidal features of a scalar; entries in [-1, 1]. out.size() must be even.
void sinusoidal_features(double v, std::span<double> out);

}  // namespace tgbfn

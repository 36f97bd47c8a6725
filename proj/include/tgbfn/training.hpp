#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tgbfn/denoiser.hpp"
#include "tgbfn/params.hpp"
#include "tgbfn/shapes.hpp"

namespace tgbfn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers matching the parameter layout; allocated on first step.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

// Adaptive-moment update with bias correction. Parameters mutate only here.
void adam_step(std::vector<NamedArray>& params, const std::vector<NamedArray>& grads,
               AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  long steps = 20000;
  int batch = 64;
  AdamConfig adam;
  double beta_total = 3.0;
  int n = 100;
  double gamma = 1.0;          // per-step importance weight (uniform policy)
  uint64_t seed = 0;
  int threads = 1;
  long checkpoint_interval = 1000;
  long log_interval = 50;
};

// Trains the skeleton network on the discrete-time KL loss. Per step: draw a
// minibatch, sample a step index per record, synthesize the belief state at
// the cumulative accuracy via the flow simulation, take one optimizer step.
//
// checkpoint_cb (optional) runs every checkpoint_interval steps and once at
// the end; log_line (optional) receives `step= loss= grad_norm= wall_s=`
// lines. Aborts with NumericalFailure on a non-finite loss, leaving the last
// checkpoint written by checkpoint_cb as the most recent good state.
DenoiserParams train_skeleton(
    const std::vector<shapes::DatasetRecord>& records, const DenoiserConfig& cfg,
    const TrainConfig& train_cfg,
    const std::function<void(const DenoiserParams&, long)>& checkpoint_cb = {},
    const std::function<void(const std::string&)>& log_line = {});

}  // namespace tgbfn

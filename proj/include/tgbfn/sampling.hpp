#pragma once

#include <span>
#include <string>
#include <vector>

#include "tgbfn/bayesflow.hpp"
#include "tgbfn/denoiser.hpp"
#include "tgbfn/guidance.hpp"
#include "tgbfn/schedule.hpp"

namespace tgbfn {

enum class SamplerMode { bfn, gbf, tgbfn };

std::string to_string(SamplerMode mode);
SamplerMode sampler_mode_from_string(const std::string& s);

struct SamplerConfig {
  int n = 100;              // inference steps
  double beta_total = 3.0;  // beta(1)
  int m = 1;                // parallel candidate updates per step
  int H = 1;                // output-distribution draws per calibrated token
  SamplerMode mode = SamplerMode::bfn;
  uint64_t seed = 0;
  bool record_trace = false;
};

struct StepTrace {
  int step = 0;
  double t = 0.0;
  double alpha = 0.0;
  std::vector<double> log_weights;  // per candidate (guided modes)
  double mean_entropy = 0.0;        // of the aggregated belief state
};

struct SampleResult {
  TokenSequence tokens;
  std::vector<StepTrace> trace;  // empty unless record_trace
};

// Integer in {1..K} nearest to z; out-of-range values clamp to the ends and
// half-integer ties resolve to the lower index.
int nearest_category(double z, int classes);

// Draws H token sequences from p_out, averages the integer token values per
// position, and projects through nearest_category. Draw h consumes the
// substream lane.derive(h), so H = 1 reproduces a plain categorical draw.
TokenSequence calibrated_category(const Mat& p_out, int H, const Rng& lane);

// Plain flow sampling: per step, one output-distribution draw, one sender
// draw, one posterior update. Requires an unconditional denoiser.
SampleResult bfn_sample(const DenoiserParams& params, const SamplerConfig& cfg, const Rng& root);

// Single-path guided sampling. Scaling a whole belief row by one positive
// scalar and renormalizing is the identity, so the trajectory equals
// bfn_sample; the per-step guidance log-weight is recorded in the trace.
// The accuracy fed to the guidance net is the cumulative precision of the
// post-update state.
SampleResult gbf_sample(const DenoiserParams& params, const GuidanceParams& guidance,
                        std::span<const double> condition, const SamplerConfig& cfg,
                        const Rng& root);

// Full target-guided sampling: per step, m candidate updates (each token
// draw calibrated over H samples), guidance-weighted aggregation of the
// candidates into the next belief state.
SampleResult tgbfn_sample(const DenoiserParams& params, const GuidanceParams& guidance,
                          std::span<const double> condition, const SamplerConfig& cfg,
                          const Rng& root);

// Writes trace records as structured text, one line per step.
void write_trace(std::ostream& out, const SampleResult& sample);

}  // namespace tgbfn

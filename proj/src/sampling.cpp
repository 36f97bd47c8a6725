#include "tgbfn/sampling.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "tgbfn/errors.hpp"

namespace tgbfn {

namespace {

// Substream tags; shared across the samplers so degenerate configurations
// consume identical randomness (tgbfn with m=1, H=1 matches bfn bit for bit).
constexpr uint64_t kTagToken = 1;
constexpr uint64_t kTagSender = 2;
constexpr uint64_t kTagFinal = 3;

void check_unconditional(const DenoiserParams& params, const char* who) {
  if (params.cfg.conditional)
    throw std::invalid_argument(std::string(who) +
                                ": conditional denoiser requires a condition; use a guided mode");
}

std::span<const double> denoiser_cond(const DenoiserParams& params,
                                      std::span<const double> condition) {
  // A conditional denoiser consumes the target; the unconditional skeleton
  // ignores it (guidance alone carries the constraint).
  return params.cfg.conditional ? condition : std::span<const double>{};
}

}  // namespace

std::string to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::bfn: return "bfn";
    case SamplerMode::gbf: return "gbf";
    case SamplerMode::tgbfn: return "tgbfn";
  }
  return "?";
}

SamplerMode sampler_mode_from_string(const std::string& s) {
  if (s == "bfn") return SamplerMode::bfn;
  if (s == "gbf") return SamplerMode::gbf;
  if (s == "tgbfn") return SamplerMode::tgbfn;
  throw std::invalid_argument("unknown sampler mode '" + s + "'");
}

int nearest_category(double z, int classes) {
  if (std::isnan(z)) throw std::invalid_argument("nearest_category: NaN input");
  if (z <= 1.0) return 1;
  if (z >= classes) return classes;
  const double fl = std::floor(z);
  const int k = static_cast<int>(fl);
  // Half-integer ties resolve to the lower index.
  return (z - fl > 0.5) ? k + 1 : k;
}

TokenSequence calibrated_category(const Mat& p_out, int H, const Rng& lane) {
  if (H < 1) throw std::invalid_argument("calibrated_category: H must be >= 1");
  const int D = p_out.rows, K = p_out.cols;
  std::vector<double> sums(D, 0.0);
  for (int h = 0; h < H; ++h) {
    Rng draw = lane.derive(static_cast<uint64_t>(h));
    for (int d = 0; d < D; ++d) {
      sums[d] += 1 + draw.categorical(p_out.row_span(d));
    }
  }
  TokenSequence tokens(D);
  for (int d = 0; d < D; ++d) tokens[d] = nearest_category(sums[d] / H, K);
  return tokens;
}

SampleResult bfn_sample(const DenoiserParams& params, const SamplerConfig& cfg, const Rng& root) {
  check_unconditional(params, "bfn_sample");
  const AccuracySchedule schedule = build_schedule(cfg.beta_total, cfg.n);
  BeliefState theta = uniform_prior(params.cfg.positions, params.cfg.classes);
  DenoiserWorkspace ws;
  SampleResult result;

  double t = 0.0;
  for (int i = 1; i <= cfg.n; ++i) {
    t = schedule.time(i);
    denoiser_forward(params, theta.theta, t, {}, ws);
    const TokenSequence k = calibrated_category(ws.probs, 1, root.derive(kTagToken, i, 0));
    const double alpha = schedule.alpha(i);
    Rng sender_rng = root.derive(kTagSender, i, 0);
    Mat y = sample_sender(k, alpha, params.cfg.classes, sender_rng);
    theta = bayesian_update(theta, y);
    if (cfg.record_trace) {
      result.trace.push_back({i, t, alpha, {}, mean_row_entropy(theta)});
    }
  }
  denoiser_forward(params, theta.theta, t, {}, ws);
  result.tokens = calibrated_category(ws.probs, 1, root.derive(kTagFinal, 0, 0));
  return result;
}

SampleResult gbf_sample(const DenoiserParams& params, const GuidanceParams& guidance,
                        std::span<const double> condition, const SamplerConfig& cfg,
                        const Rng& root) {
  if (static_cast<int>(condition.size()) != guidance.cfg.condition_dim)
    throw std::invalid_argument("gbf_sample: condition dimension mismatch");
  if (params.cfg.conditional &&
      static_cast<int>(condition.size()) != params.cfg.condition_dim)
    throw std::invalid_argument("gbf_sample: denoiser condition dimension mismatch");
  const AccuracySchedule schedule = build_schedule(cfg.beta_total, cfg.n);
  BeliefState theta = uniform_prior(params.cfg.positions, params.cfg.classes);
  DenoiserWorkspace ws;
  GuidanceWorkspace gws;
  SampleResult result;

  double t = 0.0;
  for (int i = 1; i <= cfg.n; ++i) {
    t = schedule.time(i);
    denoiser_forward(params, theta.theta, t, denoiser_cond(params, condition), ws);
    const TokenSequence k = calibrated_category(ws.probs, 1, root.derive(kTagToken, i, 0));
    const double alpha = schedule.alpha(i);
    Rng sender_rng = root.derive(kTagSender, i, 0);
    Mat y = sample_sender(k, alpha, params.cfg.classes, sender_rng);
    theta = bayesian_update(theta, y);
    // Positive scalar times a simplex row renormalizes to the identity, so
    // the weight is diagnostic only.
    const double logw = guidance_logweight(condition, theta, schedule.beta(i), guidance, gws);
    if (cfg.record_trace) {
      result.trace.push_back({i, t, alpha, {logw}, mean_row_entropy(theta)});
    }
  }
  denoiser_forward(params, theta.theta, t, denoiser_cond(params, condition), ws);
  result.tokens = calibrated_category(ws.probs, 1, root.derive(kTagFinal, 0, 0));
  return result;
}

SampleResult tgbfn_sample(const DenoiserParams& params, const GuidanceParams& guidance,
                          std::span<const double> condition, const SamplerConfig& cfg,
                          const Rng& root) {
  if (cfg.m < 1 || cfg.H < 1)
    throw std::invalid_argument("tgbfn_sample: m and H must be >= 1");
  if (static_cast<int>(condition.size()) != guidance.cfg.condition_dim)
    throw std::invalid_argument("tgbfn_sample: condition dimension mismatch");
  if (params.cfg.conditional &&
      static_cast<int>(condition.size()) != params.cfg.condition_dim)
    throw std::invalid_argument("tgbfn_sample: denoiser condition dimension mismatch");
  const AccuracySchedule schedule = build_schedule(cfg.beta_total, cfg.n);
  const int D = params.cfg.positions, K = params.cfg.classes;
  BeliefState theta = uniform_prior(D, K);
  DenoiserWorkspace ws;
  GuidanceWorkspace gws;
  SampleResult result;

  std::vector<BeliefState> candidates(cfg.m);
  std::vector<double> logw(cfg.m);

  double t = 0.0;
  for (int i = 1; i <= cfg.n; ++i) {
    t = schedule.time(i);
    denoiser_forward(params, theta.theta, t, denoiser_cond(params, condition), ws);
    const double alpha = schedule.alpha(i);
    const double cumulative = schedule.beta(i);
    for (int j = 0; j < cfg.m; ++j) {
      const TokenSequence k =
          calibrated_category(ws.probs, cfg.H, root.derive(kTagToken, i, j));
      Rng sender_rng = root.derive(kTagSender, i, j);
      Mat y = sample_sender(k, alpha, K, sender_rng);
      candidates[j] = bayesian_update(theta, y);
      logw[j] = guidance_logweight(condition, candidates[j], cumulative, guidance, gws);
    }
    double max_lw = -std::numeric_limits<double>::infinity();
    for (double lw : logw) max_lw = std::max(max_lw, lw);
    if (!std::isfinite(max_lw))
      throw NumericalFailure("tgbfn_sample: all candidate weights underflowed at step " +
                             std::to_string(i));
    double z = 0.0;
    std::vector<double> wtilde(cfg.m);
    for (int j = 0; j < cfg.m; ++j) {
      wtilde[j] = std::exp(logw[j] - max_lw);
      z += wtilde[j];
    }
    Mat agg(D, K);
    for (int j = 0; j < cfg.m; ++j) {
      const double w = wtilde[j] / z;
      for (size_t idx = 0; idx < agg.a.size(); ++idx) {
        agg.a[idx] += w * candidates[j].theta.a[idx];
      }
    }
    theta = BeliefState(std::move(agg));
    if (cfg.record_trace) {
      result.trace.push_back({i, t, alpha, logw, mean_row_entropy(theta)});
    }
  }
  denoiser_forward(params, theta.theta, t, denoiser_cond(params, condition), ws);
  result.tokens = calibrated_category(ws.probs, 1, root.derive(kTagFinal, 0, 0));
  return result;
}

void write_trace(std::ostream& out, const SampleResult& sample) {
  for (const StepTrace& s : sample.trace) {
    out << "step=" << s.step << " t=" << s.t << " alpha=" << s.alpha;
    if (!s.log_weights.empty()) {
      out << " logw=";
      for (size_t j = 0; j < s.log_weights.size(); ++j) {
        if (j) out << ',';
        out << s.log_weights[j];
      }
    }
    out << " entropy=" << s.mean_entropy << "\n";
  }
}

}  // namespace tgbfn

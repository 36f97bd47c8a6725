#include "tgbfn/guidance.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "tgbfn/errors.hpp"
#include "tgbfn/training.hpp"

namespace tgbfn {

namespace {

constexpr int kGradStripes = 16;

void check_config(const GuidanceConfig& cfg) {
  if (cfg.positions < 1 || cfg.classes < 2 || cfg.condition_dim < 1 || cfg.hidden < 1 ||
      cfg.hidden_layers < 1 || cfg.alpha_features < 2 || (cfg.alpha_features % 2) != 0)
    throw std::invalid_argument("GuidanceConfig: invalid dimensions");
  if (!(cfg.variance_floor > 0.0))
    throw std::invalid_argument("GuidanceConfig: variance_floor must be > 0");
}

}  // namespace

GuidanceParams::GuidanceParams(const GuidanceConfig& c) : cfg(c) {
  check_config(c);
  const int L = c.hidden_layers;
  w.resize(L + 1);
  b.resize(L + 1);
  w[0] = Mat(c.hidden, c.input_dim());
  b[0].assign(c.hidden, 0.0);
  for (int l = 1; l < L; ++l) {
    w[l] = Mat(c.hidden, c.hidden);
    b[l].assign(c.hidden, 0.0);
  }
  w[L] = Mat(2 * c.condition_dim, c.hidden);
  b[L].assign(2 * c.condition_dim, 0.0);
}

std::vector<NamedArray> GuidanceParams::named_arrays() {
  std::vector<NamedArray> v;
  for (size_t l = 0; l < w.size(); ++l) {
    const std::string base =
        (l + 1 == w.size()) ? std::string("out") : "fc" + std::to_string(l);
    v.push_back({base + ".w", w[l].a.data(), w[l].a.size()});
    v.push_back({base + ".b", b[l].data(), b[l].size()});
  }
  return v;
}

std::vector<NamedArray> GuidanceParams::named_arrays() const {
  return const_cast<GuidanceParams*>(this)->named_arrays();
}

GuidanceParams init_guidance(const GuidanceConfig& cfg, Rng& rng) {
  GuidanceParams p(cfg);
  for (int l = 0; l < cfg.hidden_layers; ++l) init_fan_in(p.w[l], rng);
  // Output head stays zero: mu = 0, sigma2 = softplus(0) + floor everywhere.
  return p;
}

void GuidanceWorkspace::ensure(const GuidanceConfig& cfg) {
  input.assign(cfg.input_dim(), 0.0);
  z.resize(cfg.hidden_layers);
  h.resize(cfg.hidden_layers);
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    z[l].assign(cfg.hidden, 0.0);
    h[l].assign(cfg.hidden, 0.0);
  }
  out.assign(2 * cfg.condition_dim, 0.0);
  dh.assign(cfg.hidden, 0.0);
  dz.assign(cfg.hidden, 0.0);
  dout.assign(2 * cfg.condition_dim, 0.0);
}

GuidanceMoments guidance_forward(const BeliefState& theta, double alpha,
                                 const GuidanceParams& params, GuidanceWorkspace& ws) {
  const GuidanceConfig& cfg = params.cfg;
  if (!(alpha > 0.0)) throw std::invalid_argument("guidance_forward: alpha must be > 0");
  if (theta.positions() != cfg.positions || theta.classes() != cfg.classes)
    throw std::invalid_argument("guidance_forward: theta shape mismatch");
  ws.ensure(cfg);

  std::copy(theta.theta.a.begin(), theta.theta.a.end(), ws.input.begin());
  sinusoidal_features(std::log(alpha),
                      {ws.input.data() + cfg.positions * cfg.classes,
                       static_cast<size_t>(cfg.alpha_features)});

  const double* cur = ws.input.data();
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    std::copy(params.b[l].begin(), params.b[l].end(), ws.z[l].begin());
    matvec_add(params.w[l], cur, ws.z[l].data());
    for (int i = 0; i < cfg.hidden; ++i) ws.h[l][i] = silu(ws.z[l][i]);
    cur = ws.h[l].data();
  }
  const int L = cfg.hidden_layers;
  std::copy(params.b[L].begin(), params.b[L].end(), ws.out.begin());
  matvec_add(params.w[L], cur, ws.out.data());

  GuidanceMoments m;
  m.mu.assign(ws.out.begin(), ws.out.begin() + cfg.condition_dim);
  m.sigma2.resize(cfg.condition_dim);
  for (int j = 0; j < cfg.condition_dim; ++j) {
    m.sigma2[j] = softplus(ws.out[cfg.condition_dim + j]) + cfg.variance_floor;
  }
  return m;
}

GuidanceMoments guidance_forward(const BeliefState& theta, double alpha,
                                 const GuidanceParams& params) {
  GuidanceWorkspace ws;
  return guidance_forward(theta, alpha, params, ws);
}

void guidance_backward(const GuidanceParams& params, std::span<const double> dmu,
                       std::span<const double> dsigma2, GuidanceWorkspace& ws,
                       GuidanceParams& grads) {
  const GuidanceConfig& cfg = params.cfg;
  const int d = cfg.condition_dim, L = cfg.hidden_layers;
  for (int j = 0; j < d; ++j) {
    ws.dout[j] = dmu[j];
    ws.dout[d + j] = dsigma2[j] * softplus_grad(ws.out[d + j]);
  }
  const double* last_h = ws.h[L - 1].data();
  outer_add(grads.w[L], ws.dout.data(), last_h);
  for (int j = 0; j < 2 * d; ++j) grads.b[L][j] += ws.dout[j];
  std::fill(ws.dh.begin(), ws.dh.end(), 0.0);
  matvec_transpose_add(params.w[L], ws.dout.data(), ws.dh.data());

  for (int l = L - 1; l >= 0; --l) {
    for (int i = 0; i < cfg.hidden; ++i) ws.dz[i] = ws.dh[i] * silu_grad(ws.z[l][i]);
    const double* in = (l == 0) ? ws.input.data() : ws.h[l - 1].data();
    outer_add(grads.w[l], ws.dz.data(), in);
    for (int i = 0; i < cfg.hidden; ++i) grads.b[l][i] += ws.dz[i];
    if (l > 0) {
      std::fill(ws.dh.begin(), ws.dh.end(), 0.0);
      matvec_transpose_add(params.w[l], ws.dz.data(), ws.dh.data());
    }
  }
}

GuidanceMoments empirical_moments(std::span<const MomentRecord> batch, const Mat& y, double alpha,
                                  int condition_dim, double variance_floor) {
  if (batch.empty()) throw std::invalid_argument("empirical_moments: empty batch");
  if (!(alpha > 0.0)) throw std::invalid_argument("empirical_moments: alpha must be > 0");
  const int D = y.rows, K = y.cols;

  // Per-position table of log sender densities for every token; each record's
  // log weight is then a sum of lookups.
  Mat table(D, K);
  for (int d = 0; d < D; ++d) {
    sender_logdensity_all(y.row_span(d), alpha, K, {table.row(d), static_cast<size_t>(K)});
  }
  std::vector<double> logw(batch.size());
  double max_lw = -std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < batch.size(); ++j) {
    const TokenSequence& x = *batch[j].x;
    if (static_cast<int>(x.size()) != D)
      throw std::invalid_argument("empirical_moments: sequence length mismatch");
    double lw = 0.0;
    for (int d = 0; d < D; ++d) lw += table(d, x[d] - 1);
    logw[j] = lw;
    max_lw = std::max(max_lw, lw);
  }
  if (!std::isfinite(max_lw)) {
    throw NumericalFailure("empirical_moments: all weights underflowed; max log-weight = " +
                           std::to_string(max_lw));
  }

  double z = 0.0;
  std::vector<double> wtilde(batch.size());
  for (size_t j = 0; j < batch.size(); ++j) {
    wtilde[j] = std::exp(logw[j] - max_lw);
    z += wtilde[j];
  }

  GuidanceMoments m;
  m.mu.assign(condition_dim, 0.0);
  m.sigma2.assign(condition_dim, 0.0);
  for (size_t j = 0; j < batch.size(); ++j) {
    for (int c = 0; c < condition_dim; ++c) m.mu[c] += wtilde[j] * batch[j].condition[c];
  }
  for (int c = 0; c < condition_dim; ++c) m.mu[c] /= z;
  for (size_t j = 0; j < batch.size(); ++j) {
    for (int c = 0; c < condition_dim; ++c) {
      const double dv = batch[j].condition[c] - m.mu[c];
      m.sigma2[c] += wtilde[j] * dv * dv;
    }
  }
  for (int c = 0; c < condition_dim; ++c) {
    m.sigma2[c] = std::max(m.sigma2[c] / z, variance_floor);
  }
  return m;
}

double gaussian_kl(const GuidanceMoments& p, const GuidanceMoments& q) {
  if (p.mu.size() != q.mu.size() || p.sigma2.size() != q.sigma2.size() ||
      p.mu.size() != p.sigma2.size())
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (size_t j = 0; j < p.mu.size(); ++j) {
    if (!(p.sigma2[j] > 0.0) || !(q.sigma2[j] > 0.0))
      throw std::invalid_argument("gaussian_kl: variances must be positive");
    const double dm = p.mu[j] - q.mu[j];
    kl += 0.5 * (std::log(q.sigma2[j] / p.sigma2[j]) + (p.sigma2[j] + dm * dm) / q.sigma2[j] - 1.0);
  }
  return kl;
}

double guidance_logweight(std::span<const double> condition, const BeliefState& theta,
                          double alpha, const GuidanceParams& params, GuidanceWorkspace& ws) {
  const GuidanceMoments m = guidance_forward(theta, alpha, params, ws);
  if (condition.size() != m.mu.size())
    throw std::invalid_argument("guidance_logweight: condition dimension mismatch");
  double lw = 0.0;
  for (size_t j = 0; j < condition.size(); ++j) {
    const double dv = condition[j] - m.mu[j];
    lw += -0.5 * (std::log(2.0 * 3.1415926535897932384626433832795 * m.sigma2[j]) +
                  dv * dv / m.sigma2[j]);
  }
  return lw;
}

double guidance_logweight(std::span<const double> condition, const BeliefState& theta,
                          double alpha, const GuidanceParams& params) {
  GuidanceWorkspace ws;
  return guidance_logweight(condition, theta, alpha, params, ws);
}

GuidanceParams train_guidance(const std::vector<shapes::DatasetRecord>& records,
                              const GuidanceConfig& cfg, const GuidanceTrainConfig& train_cfg,
                              const std::function<void(const GuidanceParams&, long)>& checkpoint_cb,
                              const std::function<void(const std::string&)>& log_line) {
  if (records.empty()) throw std::invalid_argument("train_guidance: empty dataset");
  for (const auto& r : records) {
    if (static_cast<int>(r.normalized_conditions.size()) != cfg.condition_dim)
      throw std::invalid_argument("train_guidance: records need normalized conditions");
  }
  if (train_cfg.steps < 1 || train_cfg.batch < 1 || !(train_cfg.lr > 0.0))
    throw std::invalid_argument("train_guidance: counts must be positive, lr > 0");

  const AccuracySchedule schedule = build_schedule(train_cfg.beta_total, train_cfg.n);
  Rng root(train_cfg.seed);
  Rng init_rng = root.derive(0x67696e69ULL);
  GuidanceParams params = init_guidance(cfg, init_rng);
  GuidanceParams grads(cfg);
  AdamState adam;
  AdamConfig adam_cfg{train_cfg.lr, train_cfg.adam_beta1, train_cfg.adam_beta2,
                      train_cfg.adam_eps};
  auto pview = params.named_arrays();

  const int B = train_cfg.batch;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const shapes::DatasetRecord*> minibatch(B);
  std::vector<MomentRecord> moment_batch(B);
  std::vector<GuidanceParams> stripe_grads;
  stripe_grads.reserve(kGradStripes);
  for (int s = 0; s < kGradStripes; ++s) stripe_grads.emplace_back(cfg);

  for (long step = 0; step < train_cfg.steps; ++step) {
    Rng step_rng = root.derive(0x67737465ULL, static_cast<uint64_t>(step));
    for (int b = 0; b < B; ++b) {
      Rng pick = step_rng.derive(0x7069636bULL, static_cast<uint64_t>(b));
      const size_t idx = std::min(static_cast<size_t>(pick.uniform() * records.size()),
                                  records.size() - 1);
      minibatch[b] = &records[idx];
      moment_batch[b] = {&records[idx].tokens, records[idx].normalized_conditions.data()};
    }
    // One step index per training step; the anchor accuracy is the cumulative
    // precision of the state after that step.
    const int i =
        std::min(1 + static_cast<int>(step_rng.uniform() * train_cfg.n), train_cfg.n);
    const double acc = schedule.beta(i);

    for (auto& sg : stripe_grads) {
      auto sv = sg.named_arrays();
      for (auto& a : sv) std::fill(a.data, a.data + a.size, 0.0);
    }
    std::vector<double> anchor_loss(B, 0.0);
    std::atomic<int> next_stripe{0};
    std::exception_ptr error;
    std::mutex error_mu;

    auto worker = [&]() {
      GuidanceWorkspace ws;
      std::vector<double> dmu(cfg.condition_dim), dsigma2(cfg.condition_dim);
      try {
        for (;;) {
          const int s = next_stripe.fetch_add(1);
          if (s >= kGradStripes) break;
          const int lo = static_cast<int>(static_cast<long>(s) * B / kGradStripes);
          const int hi = static_cast<int>(static_cast<long>(s + 1) * B / kGradStripes);
          for (int a = lo; a < hi; ++a) {
            Rng anchor_rng = step_rng.derive(0x616e6368ULL, static_cast<uint64_t>(a));
            const TokenSequence& x = minibatch[a]->tokens;
            Mat y = sample_sender(x, acc, cfg.classes, anchor_rng);
            BeliefState theta =
                bayesian_update(uniform_prior(cfg.positions, cfg.classes), y);
            const GuidanceMoments target =
                empirical_moments(moment_batch, y, acc, cfg.condition_dim, cfg.variance_floor);
            const GuidanceMoments pred = guidance_forward(theta, acc, params, ws);
            anchor_loss[a] = gaussian_kl(pred, target);
            const double inv_b = 1.0 / B;
            for (int c = 0; c < cfg.condition_dim; ++c) {
              dmu[c] = inv_b * (pred.mu[c] - target.mu[c]) / target.sigma2[c];
              dsigma2[c] = inv_b * 0.5 * (1.0 / target.sigma2[c] - 1.0 / pred.sigma2[c]);
            }
            guidance_backward(params, dmu, dsigma2, ws, stripe_grads[s]);
          }
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    };

    const int nthreads = std::max(1, std::min(train_cfg.threads, kGradStripes));
    std::vector<std::thread> pool;
    pool.reserve(nthreads - 1);
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);

    auto gview = grads.named_arrays();
    for (auto& g : gview) std::fill(g.data, g.data + g.size, 0.0);
    for (int s = 0; s < kGradStripes; ++s) {
      auto sv = stripe_grads[s].named_arrays();
      for (size_t ti = 0; ti < gview.size(); ++ti) {
        for (size_t j = 0; j < gview[ti].size; ++j) gview[ti].data[j] += sv[ti].data[j];
      }
    }
    double loss = 0.0;
    for (int a = 0; a < B; ++a) loss += anchor_loss[a];
    loss /= B;
    if (!std::isfinite(loss))
      throw NumericalFailure("train_guidance: non-finite loss at step " + std::to_string(step));

    adam_step(pview, gview, adam, adam_cfg);

    if (log_line && (step % train_cfg.log_interval == 0 || step + 1 == train_cfg.steps)) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[160];
      std::snprintf(buf, sizeof(buf), "step=%ld loss=%.6f grad_norm=%.6f wall_s=%.2f", step, loss,
                    l2_norm(gview), wall);
      log_line(buf);
    }
    if (checkpoint_cb && train_cfg.checkpoint_interval > 0 &&
        (step + 1) % train_cfg.checkpoint_interval == 0) {
      checkpoint_cb(params, step + 1);
    }
  }
  if (checkpoint_cb) checkpoint_cb(params, train_cfg.steps);
  return params;
}

}  // namespace tgbfn

#include "tgbfn/denoiser.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "tgbfn/errors.hpp"

namespace tgbfn {

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;

// Gradient accumulation is striped so the reduction order is independent of
// the thread count: stripe s always covers the same items and stripes are
// reduced in index order.
constexpr int kGradStripes = 16;

void check_config(const DenoiserConfig& cfg) {
  if (cfg.positions < 1 || cfg.classes < 2 || cfg.hidden < 1 || cfg.hidden_layers < 0 ||
      cfg.time_features < 2 || (cfg.time_features % 2) != 0)
    throw std::invalid_argument("DenoiserConfig: invalid dimensions");
  if (cfg.conditional && cfg.condition_dim < 1)
    throw std::invalid_argument("DenoiserConfig: conditional requires condition_dim >= 1");
}

void add_arrays(std::vector<NamedArray>& dst, std::vector<NamedArray>& src) {
  for (size_t i = 0; i < dst.size(); ++i) {
    for (size_t j = 0; j < dst[i].size; ++j) dst[i].data[j] += src[i].data[j];
  }
}

}  // namespace

void sinusoidal_features(double v, std::span<double> out) {
  if (out.size() % 2 != 0) throw std::invalid_argument("sinusoidal_features: odd size");
  double omega = kPi;
  for (size_t j = 0; j + 1 < out.size(); j += 2) {
    out[j] = std::sin(omega * v);
    out[j + 1] = std::cos(omega * v);
    omega *= 2.0;
  }
}

DenoiserParams::DenoiserParams(const DenoiserConfig& c) : cfg(c) {
  check_config(c);
  w_embed = Mat(c.hidden, c.classes);
  b_embed.assign(c.hidden, 0.0);
  w_pos = Mat(c.positions, c.hidden);
  w_glob1 = Mat(c.hidden, c.positions * c.classes);
  b_glob1.assign(c.hidden, 0.0);
  w_glob2 = Mat(c.hidden, c.hidden);
  b_glob2.assign(c.hidden, 0.0);
  w_time = Mat(c.hidden, c.time_features);
  b_time.assign(c.hidden, 0.0);
  if (c.conditional) {
    w_cond1 = Mat(c.hidden, c.condition_dim);
    b_cond1.assign(c.hidden, 0.0);
    w_cond2 = Mat(c.hidden, c.hidden);
    b_cond2.assign(c.hidden, 0.0);
  }
  w_mix.resize(c.hidden_layers);
  w_fc.resize(c.hidden_layers);
  b_fc.resize(c.hidden_layers);
  for (int l = 0; l < c.hidden_layers; ++l) {
    w_mix[l] = Mat(c.positions, c.positions);
    w_fc[l] = Mat(c.hidden, c.hidden);
    b_fc[l].assign(c.hidden, 0.0);
  }
  w_out = Mat(c.classes, c.hidden);
  b_out.assign(c.classes, 0.0);
}

std::vector<NamedArray> DenoiserParams::named_arrays() {
  std::vector<NamedArray> v;
  auto mat = [&](const char* name, Mat& m) { v.push_back({name, m.a.data(), m.a.size()}); };
  auto vec = [&](const char* name, std::vector<double>& b) {
    v.push_back({name, b.data(), b.size()});
  };
  mat("embed.w", w_embed);
  vec("embed.b", b_embed);
  mat("pos.w", w_pos);
  mat("glob1.w", w_glob1);
  vec("glob1.b", b_glob1);
  mat("glob2.w", w_glob2);
  vec("glob2.b", b_glob2);
  mat("time.w", w_time);
  vec("time.b", b_time);
  if (cfg.conditional) {
    mat("cond1.w", w_cond1);
    vec("cond1.b", b_cond1);
    mat("cond2.w", w_cond2);
    vec("cond2.b", b_cond2);
  }
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    const std::string base = "fc" + std::to_string(l);
    v.push_back({"mix" + std::to_string(l) + ".w", w_mix[l].a.data(), w_mix[l].a.size()});
    v.push_back({base + ".w", w_fc[l].a.data(), w_fc[l].a.size()});
    v.push_back({base + ".b", b_fc[l].data(), b_fc[l].size()});
  }
  mat("out.w", w_out);
  vec("out.b", b_out);
  return v;
}

std::vector<NamedArray> DenoiserParams::named_arrays() const {
  return const_cast<DenoiserParams*>(this)->named_arrays();
}

DenoiserParams init_denoiser(const DenoiserConfig& cfg, Rng& rng) {
  DenoiserParams p(cfg);
  init_fan_in(p.w_embed, rng);
  init_fan_in(p.w_pos, rng);
  init_fan_in(p.w_glob1, rng);
  init_fan_in(p.w_glob2, rng);
  init_fan_in(p.w_time, rng);
  if (cfg.conditional) {
    init_fan_in(p.w_cond1, rng);
    init_fan_in(p.w_cond2, rng);
  }
  for (auto& w : p.w_mix) init_fan_in(w, rng);
  for (auto& w : p.w_fc) init_fan_in(w, rng);
  // w_out/b_out stay zero: the untrained output distribution is uniform.
  return p;
}

void DenoiserWorkspace::ensure(const DenoiserConfig& cfg) {
  const int D = cfg.positions, W = cfg.hidden, K = cfg.classes, L = cfg.hidden_layers;
  timefeat.assign(cfg.time_features, 0.0);
  tv.assign(W, 0.0);
  if (cfg.conditional) {
    condfeat_z.assign(W, 0.0);
    condfeat_h.assign(W, 0.0);
    cv.assign(W, 0.0);
  }
  ctx.assign(W, 0.0);
  base.assign(W, 0.0);
  glob_z.assign(W, 0.0);
  glob_h.assign(W, 0.0);
  gv.assign(W, 0.0);
  if (embed.rows != D || embed.cols != W) embed = Mat(D, W);
  zmix.resize(L);
  g.resize(L);
  z.resize(L);
  h.resize(L + 1);
  for (int l = 0; l < L; ++l) {
    if (zmix[l].rows != D || zmix[l].cols != W) zmix[l] = Mat(D, W);
    if (g[l].rows != D || g[l].cols != W) g[l] = Mat(D, W);
    if (z[l].rows != D || z[l].cols != W) z[l] = Mat(D, W);
  }
  for (int l = 0; l <= L; ++l) {
    if (h[l].rows != D || h[l].cols != W) h[l] = Mat(D, W);
  }
  if (logits.rows != D || logits.cols != K) logits = Mat(D, K);
  if (probs.rows != D || probs.cols != K) probs = Mat(D, K);
  dbase.assign(W, 0.0);
  dtv.assign(W, 0.0);
  dglob.assign(W, 0.0);
  dcv.assign(W, 0.0);
  dc1.assign(W, 0.0);
  buf_h.assign(W, 0.0);
  if (dh.rows != D || dh.cols != W) dh = Mat(D, W);
  if (dg.rows != D || dg.cols != W) dg = Mat(D, W);
}

void denoiser_forward(const DenoiserParams& params, const Mat& theta, double t,
                      std::span<const double> cond, DenoiserWorkspace& ws) {
  const DenoiserConfig& cfg = params.cfg;
  if (theta.rows != cfg.positions || theta.cols != cfg.classes)
    throw std::invalid_argument("denoiser_forward: theta shape mismatch");
  if (cfg.conditional != !cond.empty())
    throw std::invalid_argument(
        "denoiser_forward: condition must be present exactly when the network is conditional");
  if (cfg.conditional && static_cast<int>(cond.size()) != cfg.condition_dim)
    throw std::invalid_argument("denoiser_forward: condition dimension mismatch");
  ws.ensure(cfg);
  const int D = cfg.positions, W = cfg.hidden, K = cfg.classes, L = cfg.hidden_layers;

  sinusoidal_features(t, ws.timefeat);
  std::copy(params.b_time.begin(), params.b_time.end(), ws.tv.begin());
  matvec_add(params.w_time, ws.timefeat.data(), ws.tv.data());

  if (cfg.conditional) {
    std::copy(params.b_cond1.begin(), params.b_cond1.end(), ws.condfeat_z.begin());
    matvec_add(params.w_cond1, cond.data(), ws.condfeat_z.data());
    for (int i = 0; i < W; ++i) ws.condfeat_h[i] = silu(ws.condfeat_z[i]);
    std::copy(params.b_cond2.begin(), params.b_cond2.end(), ws.cv.begin());
    matvec_add(params.w_cond2, ws.condfeat_h.data(), ws.cv.data());
  }

  std::fill(ws.ctx.begin(), ws.ctx.end(), 0.0);
  for (int d = 0; d < D; ++d) {
    double* e = ws.embed.row(d);
    std::copy(params.b_embed.begin(), params.b_embed.end(), e);
    matvec_add(params.w_embed, theta.row(d), e);
    for (int i = 0; i < W; ++i) ws.ctx[i] += e[i];
  }

  // Global state summary over the flattened belief matrix.
  std::copy(params.b_glob1.begin(), params.b_glob1.end(), ws.glob_z.begin());
  matvec_add(params.w_glob1, theta.a.data(), ws.glob_z.data());
  for (int i = 0; i < W; ++i) ws.glob_h[i] = silu(ws.glob_z[i]);
  std::copy(params.b_glob2.begin(), params.b_glob2.end(), ws.gv.begin());
  matvec_add(params.w_glob2, ws.glob_h.data(), ws.gv.data());

  const double inv_d = 1.0 / D;
  for (int i = 0; i < W; ++i) {
    ws.ctx[i] *= inv_d;
    ws.base[i] = ws.ctx[i] + ws.gv[i] + ws.tv[i] + (cfg.conditional ? ws.cv[i] : 0.0);
  }

  for (int d = 0; d < D; ++d) {
    double* h0 = ws.h[0].row(d);
    const double* e = ws.embed.row(d);
    const double* pos = params.w_pos.row(d);
    for (int i = 0; i < W; ++i) h0[i] = e[i] + pos[i] + ws.base[i];
  }
  for (int l = 0; l < L; ++l) {
    // Position mixing, shared across channels: zmix[., i] = W_mix h[., i].
    ws.zmix[l].zero();
    for (int a = 0; a < D; ++a) {
      double* zr = ws.zmix[l].row(a);
      const double* mrow = params.w_mix[l].row(a);
      for (int b = 0; b < D; ++b) {
        const double m = mrow[b];
        const double* hr = ws.h[l].row(b);
        for (int i = 0; i < W; ++i) zr[i] += m * hr[i];
      }
    }
    for (int d = 0; d < D; ++d) {
      const double* hr = ws.h[l].row(d);
      const double* zr = ws.zmix[l].row(d);
      double* gr = ws.g[l].row(d);
      for (int i = 0; i < W; ++i) gr[i] = hr[i] + silu(zr[i]);
    }
    for (int d = 0; d < D; ++d) {
      double* zr = ws.z[l].row(d);
      std::copy(params.b_fc[l].begin(), params.b_fc[l].end(), zr);
      matvec_add(params.w_fc[l], ws.g[l].row(d), zr);
      double* hr = ws.h[l + 1].row(d);
      for (int i = 0; i < W; ++i) hr[i] = silu(zr[i]);
    }
  }
  for (int d = 0; d < D; ++d) {
    double* lr = ws.logits.row(d);
    std::copy(params.b_out.begin(), params.b_out.end(), lr);
    matvec_add(params.w_out, ws.h[L].row(d), lr);
    double* pr = ws.probs.row(d);
    std::copy(lr, lr + K, pr);
    softmax_inplace({pr, static_cast<size_t>(K)});
  }
}

Mat output_distribution(const BeliefState& theta, double t, std::span<const double> cond,
                        const DenoiserParams& params) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("output_distribution: t must be in [0,1]");
  DenoiserWorkspace ws;
  denoiser_forward(params, theta.theta, t, cond, ws);
  return ws.probs;
}

void denoiser_backward(const DenoiserParams& params, const Mat& theta,
                       std::span<const double> cond, const Mat& dlogits, DenoiserWorkspace& ws,
                       DenoiserParams& grads) {
  const DenoiserConfig& cfg = params.cfg;
  const int D = cfg.positions, W = cfg.hidden, L = cfg.hidden_layers;

  // Output projection.
  for (int d = 0; d < D; ++d) {
    const double* dl = dlogits.row(d);
    outer_add(grads.w_out, dl, ws.h[L].row(d));
    for (int k = 0; k < cfg.classes; ++k) grads.b_out[k] += dl[k];
    double* dhr = ws.dh.row(d);
    std::fill(dhr, dhr + W, 0.0);
    matvec_transpose_add(params.w_out, dl, dhr);
  }

  // Hidden stack, shared weights across positions. ws.dh carries
  // d loss / d h[l+1]; each block peels back through the channel map and the
  // residual position mixing.
  std::vector<double> dz(W);
  for (int l = L - 1; l >= 0; --l) {
    for (int d = 0; d < D; ++d) {
      double* dhr = ws.dh.row(d);
      const double* zr = ws.z[l].row(d);
      for (int i = 0; i < W; ++i) dz[i] = dhr[i] * silu_grad(zr[i]);
      outer_add(grads.w_fc[l], dz.data(), ws.g[l].row(d));
      for (int i = 0; i < W; ++i) grads.b_fc[l][i] += dz[i];
      double* dgr = ws.dg.row(d);
      std::fill(dgr, dgr + W, 0.0);
      matvec_transpose_add(params.w_fc[l], dz.data(), dgr);
    }
    // g = h + silu(zmix); dzmix = dg .* silu'(zmix), reused in place of dg.
    for (int d = 0; d < D; ++d) {
      double* dgr = ws.dg.row(d);
      double* dhr = ws.dh.row(d);
      const double* zr = ws.zmix[l].row(d);
      for (int i = 0; i < W; ++i) {
        dhr[i] = dgr[i];                      // residual path
        dgr[i] *= silu_grad(zr[i]);           // now holds dzmix
      }
    }
    for (int a = 0; a < D; ++a) {
      const double* dza = ws.dg.row(a);
      double* gm = grads.w_mix[l].row(a);
      const double* mrow = params.w_mix[l].row(a);
      for (int b = 0; b < D; ++b) {
        const double* hb = ws.h[l].row(b);
        double* dhb = ws.dh.row(b);
        double dot = 0.0;
        const double m = mrow[b];
        for (int i = 0; i < W; ++i) {
          dot += dza[i] * hb[i];
          dhb[i] += m * dza[i];
        }
        gm[b] += dot;
      }
    }
  }

  // ws.dh now holds d loss / d h0_d; h0_d = e_d + base with
  // base = mean(e) + time (+ cond), so the base gradient is the row sum.
  std::fill(ws.dbase.begin(), ws.dbase.end(), 0.0);
  for (int d = 0; d < D; ++d) {
    const double* dhr = ws.dh.row(d);
    for (int i = 0; i < W; ++i) ws.dbase[i] += dhr[i];
  }
  const double inv_d = 1.0 / D;
  for (int d = 0; d < D; ++d) {
    double* dhr = ws.dh.row(d);
    double* gpos = grads.w_pos.row(d);
    for (int i = 0; i < W; ++i) gpos[i] += dhr[i];  // positional table: direct path only
    for (int i = 0; i < W; ++i) dhr[i] += inv_d * ws.dbase[i];  // context mean path
    outer_add(grads.w_embed, dhr, theta.row(d));
    for (int i = 0; i < W; ++i) grads.b_embed[i] += dhr[i];
  }

  outer_add(grads.w_time, ws.dbase.data(), ws.timefeat.data());
  for (int i = 0; i < W; ++i) grads.b_time[i] += ws.dbase[i];

  outer_add(grads.w_glob2, ws.dbase.data(), ws.glob_h.data());
  for (int i = 0; i < W; ++i) grads.b_glob2[i] += ws.dbase[i];
  std::fill(ws.dglob.begin(), ws.dglob.end(), 0.0);
  matvec_transpose_add(params.w_glob2, ws.dbase.data(), ws.dglob.data());
  for (int i = 0; i < W; ++i) ws.dglob[i] *= silu_grad(ws.glob_z[i]);
  outer_add(grads.w_glob1, ws.dglob.data(), theta.a.data());
  for (int i = 0; i < W; ++i) grads.b_glob1[i] += ws.dglob[i];

  if (cfg.conditional) {
    outer_add(grads.w_cond2, ws.dbase.data(), ws.condfeat_h.data());
    for (int i = 0; i < W; ++i) grads.b_cond2[i] += ws.dbase[i];
    std::fill(ws.dc1.begin(), ws.dc1.end(), 0.0);
    matvec_transpose_add(params.w_cond2, ws.dbase.data(), ws.dc1.data());
    for (int i = 0; i < W; ++i) ws.dc1[i] *= silu_grad(ws.condfeat_z[i]);
    outer_add(grads.w_cond1, ws.dc1.data(), cond.data());
    for (int i = 0; i < W; ++i) grads.b_cond1[i] += ws.dc1[i];
  }
}

double loss_and_gradients(std::span<const LossItem> batch, const DenoiserParams& params,
                          DenoiserParams& grads, const Rng& rng, int threads) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
  const DenoiserConfig& cfg = params.cfg;
  const int B = static_cast<int>(batch.size());
  const double scale = 1.0 / (static_cast<double>(B) * cfg.positions);

  std::vector<DenoiserParams> stripe_grads;
  stripe_grads.reserve(kGradStripes);
  for (int s = 0; s < kGradStripes; ++s) stripe_grads.emplace_back(cfg);
  std::vector<double> item_loss(B, 0.0);

  std::atomic<int> next_stripe{0};
  std::exception_ptr error;
  std::mutex error_mu;

  auto worker = [&]() {
    DenoiserWorkspace ws;
    std::vector<double> log_n(cfg.classes), comps(cfg.classes), dprobs(cfg.classes);
    Mat dlogits(cfg.positions, cfg.classes);
    try {
      for (;;) {
        const int s = next_stripe.fetch_add(1);
        if (s >= kGradStripes) break;
        const int lo = static_cast<int>(static_cast<long>(s) * B / kGradStripes);
        const int hi = static_cast<int>(static_cast<long>(s + 1) * B / kGradStripes);
        for (int i = lo; i < hi; ++i) {
          const LossItem& item = batch[i];
          Rng item_rng = rng.derive(static_cast<uint64_t>(i));
          Mat y = sample_sender(item.x, item.alpha, cfg.classes, item_rng);
          denoiser_forward(params, item.theta.theta, item.t, item.cond, ws);
          double loss = 0.0;
          for (int d = 0; d < cfg.positions; ++d) {
            sender_logdensity_all(y.row_span(d), item.alpha, cfg.classes,
                                  {log_n.data(), log_n.size()});
            const double* p = ws.probs.row(d);
            for (int k = 0; k < cfg.classes; ++k) {
              comps[k] = (p[k] > 0.0) ? std::log(p[k]) + log_n[k]
                                      : -std::numeric_limits<double>::infinity();
            }
            const double logmix = logsumexp(comps);
            loss += log_n[item.x[d] - 1] - logmix;
            // d(-logmix)/dp_k = -exp(log_n[k] - logmix)
            const double w = -scale * item.gamma;
            double dot = 0.0;
            for (int k = 0; k < cfg.classes; ++k) {
              dprobs[k] = w * std::exp(log_n[k] - logmix);
              dot += dprobs[k] * p[k];
            }
            double* dl = dlogits.row(d);
            for (int k = 0; k < cfg.classes; ++k) dl[k] = p[k] * (dprobs[k] - dot);
          }
          if (!std::isfinite(loss)) {
            bool logits_bad = false;
            for (double v : ws.logits.a) {
              if (!std::isfinite(v)) logits_bad = true;
            }
            throw NumericalFailure(std::string("loss_and_gradients: non-finite loss; tensor '") +
                                   (logits_bad ? "logits" : "kl-estimate") + "' at batch item " +
                                   std::to_string(i));
          }
          item_loss[i] = item.gamma * loss;
          denoiser_backward(params, item.theta.theta, item.cond, dlogits, ws, stripe_grads[s]);
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };

  const int nthreads = std::max(1, std::min(threads, kGradStripes));
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  auto gview = grads.named_arrays();
  for (auto& a : gview) std::fill(a.data, a.data + a.size, 0.0);
  for (int s = 0; s < kGradStripes; ++s) {
    auto sv = stripe_grads[s].named_arrays();
    add_arrays(gview, sv);
  }
  double total = 0.0;
  for (int i = 0; i < B; ++i) total += item_loss[i];
  return total * scale;
}

}  // namespace tgbfn

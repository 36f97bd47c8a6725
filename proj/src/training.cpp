#include "tgbfn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tgbfn/errors.hpp"
#include "tgbfn/schedule.hpp"

namespace tgbfn {

void adam_step(std::vector<NamedArray>& params, const std::vector<NamedArray>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient tensor count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size, 0.0);
      state.v[i].assign(params[i].size, 0.0);
    }
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size || params[i].name != grads[i].name)
      throw std::invalid_argument("adam_step: tensor shape mismatch for '" + params[i].name + "'");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data;
    const double* g = grads[i].data;
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (size_t j = 0; j < params[i].size; ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

DenoiserParams train_skeleton(const std::vector<shapes::DatasetRecord>& records,
                              const DenoiserConfig& cfg, const TrainConfig& train_cfg,
                              const std::function<void(const DenoiserParams&, long)>& checkpoint_cb,
                              const std::function<void(const std::string&)>& log_line) {
  if (records.empty()) throw std::invalid_argument("train_skeleton: empty dataset");
  if (train_cfg.steps < 1 || train_cfg.batch < 1 || !(train_cfg.adam.lr > 0.0))
    throw std::invalid_argument("train_skeleton: counts must be positive, lr > 0");
  if (cfg.conditional) {
    for (const auto& r : records) {
      if (static_cast<int>(r.normalized_conditions.size()) != cfg.condition_dim)
        throw std::invalid_argument(
            "train_skeleton: conditional training needs normalized conditions on every record");
    }
  }

  const AccuracySchedule schedule = build_schedule(train_cfg.beta_total, train_cfg.n);
  Rng root(train_cfg.seed);
  Rng init_rng = root.derive(0x696e6974ULL);  // "init"
  DenoiserParams params = init_denoiser(cfg, init_rng);
  DenoiserParams grads(cfg);
  AdamState adam;
  auto pview = params.named_arrays();

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<LossItem> batch(train_cfg.batch);
  for (long step = 0; step < train_cfg.steps; ++step) {
    Rng step_rng = root.derive(0x73746570ULL, static_cast<uint64_t>(step));  // "step"
    for (int b = 0; b < train_cfg.batch; ++b) {
      Rng item_rng = step_rng.derive(static_cast<uint64_t>(b));
      const size_t rec_idx = static_cast<size_t>(item_rng.uniform() * records.size());
      const shapes::DatasetRecord& rec = records[std::min(rec_idx, records.size() - 1)];
      const int i = 1 + static_cast<int>(item_rng.uniform() * train_cfg.n);
      const int step_i = std::min(i, train_cfg.n);
      LossItem& item = batch[b];
      item.x = rec.tokens;
      item.t = schedule.time(step_i);
      item.alpha = schedule.alpha(step_i);
      item.gamma = train_cfg.gamma;
      // Belief state entering step i carries the cumulative accuracy at t_i.
      item.theta = flow_state(rec.tokens, beta_at_time(train_cfg.beta_total, item.t),
                              cfg.classes, item_rng);
      item.cond = cfg.conditional ? rec.normalized_conditions : std::vector<double>{};
    }
    Rng loss_rng = step_rng.derive(0x6c6f7373ULL);  // "loss"
    const double loss = loss_and_gradients(batch, params, grads, loss_rng, train_cfg.threads);
    if (!std::isfinite(loss))
      throw NumericalFailure("train_skeleton: non-finite loss at step " + std::to_string(step));

    auto gview = grads.named_arrays();
    adam_step(pview, gview, adam, train_cfg.adam);

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

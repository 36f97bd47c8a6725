#include <doctest.h>

#include <cmath>

#include "tgbfn/denoiser.hpp"

using namespace tgbfn;

namespace {

BeliefState random_belief(int positions, int classes, Rng& rng) {
  Mat theta(positions, classes);
  for (int d = 0; d < positions; ++d) {
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      theta(d, k) = 0.05 + rng.uniform();
      sum += theta(d, k);
    }
    for (int k = 0; k < classes; ++k) theta(d, k) /= sum;
  }
  return BeliefState(std::move(theta));
}

std::vector<LossItem> micro_batch(const DenoiserConfig& cfg, Rng& rng) {
  std::vector<LossItem> batch(3);
  for (size_t i = 0; i < batch.size(); ++i) {
    LossItem& item = batch[i];
    item.x.resize(cfg.positions);
    for (int d = 0; d < cfg.positions; ++d) {
      item.x[d] = 1 + static_cast<int>(rng.uniform() * cfg.classes);
    }
    item.theta = random_belief(cfg.positions, cfg.classes, rng);
    item.t = 0.1 + 0.7 * rng.uniform();
    item.alpha = 0.2 + rng.uniform();
    item.gamma = 1.0;
    if (cfg.conditional) {
      item.cond.resize(cfg.condition_dim);
      for (double& c : item.cond) c = rng.normal();
    }
  }
  return batch;
}

// Central finite differences against the analytic gradients on every tensor.
double max_gradcheck_error(const DenoiserConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  DenoiserParams params = init_denoiser(cfg, rng);
  // Move off the zero-init output head so the check runs at a generic point.
  init_fan_in(params.w_out, rng);
  fill_uniform(params.b_out, 0.1, rng);

  const std::vector<LossItem> batch = micro_batch(cfg, rng);
  const Rng loss_rng(12345);

  DenoiserParams grads(cfg);
  loss_and_gradients(batch, params, grads, loss_rng, 1);
  auto pview = params.named_arrays();
  auto gview = grads.named_arrays();

  DenoiserParams scratch(cfg);
  const double eps = 1e-5;
  double worst = 0.0;
  Rng pick(seed ^ 0xabcdef);
  for (size_t t = 0; t < pview.size(); ++t) {
    for (int c = 0; c < 20; ++c) {
      const size_t idx = static_cast<size_t>(pick.uniform() * pview[t].size);
      const double saved = pview[t].data[idx];
      pview[t].data[idx] = saved + eps;
      const double up = loss_and_gradients(batch, params, scratch, loss_rng, 1);
      pview[t].data[idx] = saved - eps;
      const double dn = loss_and_gradients(batch, params, scratch, loss_rng, 1);
      pview[t].data[idx] = saved;
      const double fd = (up - dn) / (2.0 * eps);
      const double an = gview[t].data[idx];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("sinusoidal features stay within [-1, 1]") {
  std::vector<double> feat(16);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    sinusoidal_features(rng.normal() * 5.0, feat);
    for (double v : feat) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("output_distribution: uniform at zero init, deterministic, shaped") {
  DenoiserConfig cfg;
  cfg.positions = 6;
  cfg.classes = 9;
  cfg.hidden = 32;
  Rng rng(3);
  const DenoiserParams params = init_denoiser(cfg, rng);
  const BeliefState theta = random_belief(cfg.positions, cfg.classes, rng);

  const Mat p1 = output_distribution(theta, 0.42, {}, params);
  CHECK(p1.rows == cfg.positions);
  CHECK(p1.cols == cfg.classes);
  for (int d = 0; d < p1.rows; ++d) {
    for (int k = 0; k < p1.cols; ++k) {
      CHECK(p1(d, k) == doctest::Approx(1.0 / cfg.classes).epsilon(1e-15));
    }
  }

  const Mat p2 = output_distribution(theta, 0.42, {}, params);
  CHECK(p1.a == p2.a);  // bit-identical

  CHECK_THROWS_AS(output_distribution(theta, 1.5, {}, params), std::invalid_argument);
  const std::vector<double> cond{0.3, -0.4};
  CHECK_THROWS_AS(output_distribution(theta, 0.4, cond, params), std::invalid_argument);

  DenoiserConfig ccfg = cfg;
  ccfg.conditional = true;
  const DenoiserParams cparams = init_denoiser(ccfg, rng);
  CHECK_THROWS_AS(output_distribution(theta, 0.4, {}, cparams), std::invalid_argument);
  const Mat p3 = output_distribution(theta, 0.4, cond, cparams);
  CHECK(p3.rows == cfg.positions);
}

TEST_CASE("loss is exactly zero with one-hot-correct outputs and so are gradients") {
  DenoiserConfig cfg;
  cfg.positions = 5;
  cfg.classes = 7;
  cfg.hidden = 16;
  Rng rng(5);
  DenoiserParams params = init_denoiser(cfg, rng);
  // Saturate the shared output bias toward token 3: softmax yields an exact
  // one-hot row in floating point.
  params.b_out[2] = 2000.0;

  std::vector<LossItem> batch(2);
  for (auto& item : batch) {
    item.x.assign(cfg.positions, 3);
    item.theta = random_belief(cfg.positions, cfg.classes, rng);
    item.t = 0.5;
    item.alpha = 0.9;
    item.gamma = 1.0;
  }
  DenoiserParams grads(cfg);
  const double loss = loss_and_gradients(batch, params, grads, Rng(77), 1);
  CHECK(loss == 0.0);
  for (const auto& g : grads.named_arrays()) {
    for (size_t i = 0; i < g.size; ++i) CHECK(g.data[i] == 0.0);
  }
}

TEST_CASE("doubling gamma doubles the loss and every gradient") {
  DenoiserConfig cfg;
  cfg.positions = 4;
  cfg.classes = 5;
  cfg.hidden = 16;
  Rng rng(7);
  DenoiserParams params = init_denoiser(cfg, rng);
  init_fan_in(params.w_out, rng);

  std::vector<LossItem> batch = micro_batch(cfg, rng);
  DenoiserParams g1(cfg), g2(cfg);
  const double l1 = loss_and_gradients(batch, params, g1, Rng(99), 1);
  for (auto& item : batch) item.gamma = 2.0;
  const double l2 = loss_and_gradients(batch, params, g2, Rng(99), 1);
  CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-14));
  auto v1 = g1.named_arrays(), v2 = g2.named_arrays();
  for (size_t t = 0; t < v1.size(); ++t) {
    for (size_t i = 0; i < v1[t].size; ++i) {
      CHECK(v2[t].data[i] == doctest::Approx(2.0 * v1[t].data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradients match central finite differences (unconditional)") {
  DenoiserConfig cfg;
  cfg.positions = 4;
  cfg.classes = 5;
  cfg.hidden = 16;
  cfg.hidden_layers = 2;
  cfg.time_features = 8;
  CHECK(max_gradcheck_error(cfg, 2024) < 1e-4);
}

TEST_CASE("gradients match central finite differences (conditional)") {
  DenoiserConfig cfg;
  cfg.positions = 4;
  cfg.classes = 5;
  cfg.hidden = 16;
  cfg.hidden_layers = 2;
  cfg.time_features = 8;
  cfg.conditional = true;
  cfg.condition_dim = 2;
  CHECK(max_gradcheck_error(cfg, 4048) < 1e-4);
}

TEST_CASE("loss_and_gradients is invariant to the thread count") {
  DenoiserConfig cfg;
  cfg.positions = 6;
  cfg.classes = 8;
  cfg.hidden = 24;
  Rng rng(11);
  DenoiserParams params = init_denoiser(cfg, rng);
  init_fan_in(params.w_out, rng);
  std::vector<LossItem> batch;
  for (int rep = 0; rep < 7; ++rep) {
    auto more = micro_batch(cfg, rng);
    batch.insert(batch.end(), more.begin(), more.end());
  }
  DenoiserParams g1(cfg), g2(cfg);
  const double l1 = loss_and_gradients(batch, params, g1, Rng(5), 1);
  const double l2 = loss_and_gradients(batch, params, g2, Rng(5), 4);
  CHECK(l1 == l2);
  auto v1 = g1.named_arrays(), v2 = g2.named_arrays();
  for (size_t t = 0; t < v1.size(); ++t) {
    for (size_t i = 0; i < v1[t].size; ++i) CHECK(v1[t].data[i] == v2[t].data[i]);
  }
}

TEST_CASE("conditional pathway is wired: changing the condition moves the output") {
  DenoiserConfig cfg;
  cfg.positions = 4;
  cfg.classes = 5;
  cfg.hidden = 16;
  cfg.conditional = true;
  Rng rng(13);
  DenoiserParams params = init_denoiser(cfg, rng);
  init_fan_in(params.w_out, rng);  // stand-in for a trained head
  const BeliefState theta = random_belief(cfg.positions, cfg.classes, rng);
  const Mat a = output_distribution(theta, 0.3, std::vector<double>{0.5, -1.0}, params);
  const Mat b = output_distribution(theta, 0.3, std::vector<double>{-0.5, 1.0}, params);
  double l1 = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i) l1 += std::abs(a.a[i] - b.a[i]);
  CHECK(l1 > 0.0);
}

#include <doctest.h>

#include <cmath>

#include "tgbfn/guidance.hpp"

using namespace tgbfn;

namespace {

constexpr double kPi = 3.14159265358979323846;

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

GuidanceConfig micro_config() {
  GuidanceConfig cfg;
  cfg.positions = 4;
  cfg.classes = 5;
  cfg.condition_dim = 2;
  cfg.hidden = 16;
  cfg.alpha_features = 8;
  return cfg;
}

}  // namespace

TEST_CASE("guidance_forward: constant zero-init head, floor, determinism") {
  const GuidanceConfig cfg = micro_config();
  Rng rng(3);
  const GuidanceParams params = init_guidance(cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const BeliefState theta = random_belief(cfg.positions, cfg.classes, rng);
    const double alpha = 0.01 + 5.0 * rng.uniform();
    const GuidanceMoments m = guidance_forward(theta, alpha, params);
    for (int j = 0; j < cfg.condition_dim; ++j) {
      CHECK(m.mu[j] == 0.0);
      CHECK(m.sigma2[j] == doctest::Approx(std::log(2.0) + cfg.variance_floor).epsilon(1e-14));
      CHECK(m.sigma2[j] >= cfg.variance_floor);
    }
  }

  GuidanceParams trained = init_guidance(cfg, rng);
  init_fan_in(trained.w.back(), rng);
  const BeliefState theta = random_belief(cfg.positions, cfg.classes, rng);
  const GuidanceMoments a = guidance_forward(theta, 0.5, trained);
  const GuidanceMoments b = guidance_forward(theta, 0.5, trained);
  CHECK(a.mu == b.mu);
  CHECK(a.sigma2 == b.sigma2);
  for (double s : a.sigma2) CHECK(s >= cfg.variance_floor);
}

TEST_CASE("empirical_moments: symmetric two-point batch and single record") {
  const int classes = 5;
  const TokenSequence x{2, 4};
  const double alpha = 0.8;
  Rng rng(7);
  Mat y = sample_sender(x, alpha, classes, rng);

  // Same sequence on both records: equal weights regardless of y.
  const double c1[1] = {2.0};
  const double c2[1] = {4.0};
  const std::vector<MomentRecord> batch{{&x, c1}, {&x, c2}};
  const GuidanceMoments m = empirical_moments(batch, y, alpha, 1, 1e-4);
  CHECK(m.mu[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(m.sigma2[0] == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<MomentRecord> single{{&x, c2}};
  const GuidanceMoments s = empirical_moments(single, y, alpha, 1, 1e-4);
  CHECK(s.mu[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.sigma2[0] == 1e-4);

  CHECK_THROWS_AS(empirical_moments({}, y, alpha, 1, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(empirical_moments(single, y, 0.0, 1, 1e-4), std::invalid_argument);
}

TEST_CASE("empirical_moments matches brute-force enumeration on small batches") {
  // K=2, D=2 batches of up to 8 records, 100 seeds: the log-space path must
  // agree with a direct linear-space evaluation of the weighted moments.
  const int classes = 2, positions = 2;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int batch_size = 1 + static_cast<int>(rng.uniform() * 8);
    std::vector<TokenSequence> xs(batch_size);
    std::vector<std::vector<double>> cs(batch_size);
    std::vector<MomentRecord> batch(batch_size);
    for (int j = 0; j < batch_size; ++j) {
      xs[j] = {1 + static_cast<int>(rng.uniform() * classes),
               1 + static_cast<int>(rng.uniform() * classes)};
      cs[j] = {4.0 * rng.normal(), 4.0 * rng.normal()};
      batch[j] = {&xs[j], cs[j].data()};
    }
    const double alpha = 0.1 + 2.0 * rng.uniform();
    const TokenSequence anchor{1 + static_cast<int>(rng.uniform() * classes),
                               1 + static_cast<int>(rng.uniform() * classes)};
    Mat y = sample_sender(anchor, alpha, classes, rng);

    // Direct evaluation: w_j = prod_d N(y_d; mean(x_jd), alpha K I).
    std::vector<double> w(batch_size);
    double z = 0.0;
    for (int j = 0; j < batch_size; ++j) {
      double lw = 0.0;
      for (int d = 0; d < positions; ++d) {
        lw += sender_logdensity(y.row_span(d), xs[j][d], alpha, classes);
      }
      w[j] = std::exp(lw);
      z += w[j];
    }
    std::vector<double> mu(2, 0.0), var(2, 0.0);
    for (int j = 0; j < batch_size; ++j) {
      for (int c = 0; c < 2; ++c) mu[c] += w[j] * cs[j][c];
    }
    for (int c = 0; c < 2; ++c) mu[c] /= z;
    for (int j = 0; j < batch_size; ++j) {
      for (int c = 0; c < 2; ++c) var[c] += w[j] * (cs[j][c] - mu[c]) * (cs[j][c] - mu[c]);
    }
    for (int c = 0; c < 2; ++c) var[c] = std::max(var[c] / z, 1e-4);

    // Normalized direct weights must sum to one.
    double wsum = 0.0;
    for (int j = 0; j < batch_size; ++j) wsum += w[j] / z;
    CHECK(std::abs(wsum - 1.0) <= 1e-12);

    const GuidanceMoments m = empirical_moments(batch, y, alpha, 2, 1e-4);
    for (int c = 0; c < 2; ++c) {
      CHECK(std::abs(m.mu[c] - mu[c]) < 1e-10);
      CHECK(std::abs(m.sigma2[c] - var[c]) < 1e-10);
    }
  }
}

TEST_CASE("empirical_moments: survives extreme accuracies in log space") {
  // alpha up to 50 and K up to 16: nothing underflows to an all-zero batch
  // as long as some record's log weight is near the max.
  for (double alpha : {10.0, 25.0, 50.0}) {
    for (int classes : {4, 16}) {
      Rng rng(uint64_t(alpha) * 100 + classes);
      const int positions = 8;
      std::vector<TokenSequence> xs(4);
      std::vector<std::vector<double>> cs(4);
      std::vector<MomentRecord> batch(4);
      for (int j = 0; j < 4; ++j) {
        xs[j].resize(positions);
        for (int d = 0; d < positions; ++d) {
          xs[j][d] = 1 + static_cast<int>(rng.uniform() * classes);
        }
        cs[j] = {rng.normal()};
        batch[j] = {&xs[j], cs[j].data()};
      }
      Mat y = sample_sender(xs[0], alpha, classes, rng);
      const GuidanceMoments m = empirical_moments(batch, y, alpha, 1, 1e-4);
      CHECK(std::isfinite(m.mu[0]));
      CHECK(m.sigma2[0] >= 1e-4);
    }
  }
}

TEST_CASE("gaussian_kl: identity, closed-form value, nonnegativity") {
  GuidanceMoments p{{0.3, -1.2}, {0.5, 2.0}};
  CHECK(gaussian_kl(p, p) == 0.0);

  GuidanceMoments a{{0.0}, {1.0}};
  GuidanceMoments b{{1.0}, {1.0}};
  CHECK(gaussian_kl(a, b) == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    GuidanceMoments u{{rng.normal(), rng.normal()}, {0.01 + rng.uniform(), 0.01 + rng.uniform()}};
    GuidanceMoments v{{rng.normal(), rng.normal()}, {0.01 + rng.uniform(), 0.01 + rng.uniform()}};
    CHECK(gaussian_kl(u, v) >= 0.0);
  }
}

TEST_CASE("guidance_logweight: value at the mean, monotone decay, density match") {
  const GuidanceConfig cfg = micro_config();
  Rng rng(19);
  GuidanceParams params = init_guidance(cfg, rng);
  init_fan_in(params.w.back(), rng);
  const BeliefState theta = random_belief(cfg.positions, cfg.classes, rng);
  const double alpha = 0.7;
  const GuidanceMoments m = guidance_forward(theta, alpha, params);

  const double at_mean = guidance_logweight(m.mu, theta, alpha, params);
  double expect = 0.0;
  for (double s2 : m.sigma2) expect += -0.5 * std::log(2.0 * kPi * s2);
  CHECK(at_mean == doctest::Approx(expect).epsilon(1e-14));

  double prev = at_mean;
  for (double r : {0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> c = m.mu;
    c[0] += r;
    const double lw = guidance_logweight(c, theta, alpha, params);
    CHECK(lw < prev);
    prev = lw;
  }

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> c{rng.normal(), rng.normal()};
    const double lw = guidance_logweight(c, theta, alpha, params);
    double direct = 1.0;
    for (int j = 0; j < 2; ++j) {
      direct *= std::exp(-0.5 * (c[j] - m.mu[j]) * (c[j] - m.mu[j]) / m.sigma2[j]) /
                std::sqrt(2.0 * kPi * m.sigma2[j]);
    }
    CHECK(std::abs(std::exp(lw) - direct) <= 1e-12 * std::max(1.0, direct));
  }
}

TEST_CASE("guidance gradients match central finite differences") {
  const GuidanceConfig cfg = micro_config();
  Rng rng(23);
  GuidanceParams params = init_guidance(cfg, rng);
  init_fan_in(params.w.back(), rng);

  // Fixed batch of states and targets; loss = mean KL(pred || target).
  const int B = 3;
  std::vector<BeliefState> thetas;
  std::vector<double> alphas;
  std::vector<GuidanceMoments> targets;
  for (int i = 0; i < B; ++i) {
    thetas.push_back(random_belief(cfg.positions, cfg.classes, rng));
    alphas.push_back(0.2 + rng.uniform());
    targets.push_back({{rng.normal(), rng.normal()}, {0.3 + rng.uniform(), 0.3 + rng.uniform()}});
  }
  auto eval_loss = [&](const GuidanceParams& p) {
    double total = 0.0;
    for (int i = 0; i < B; ++i) {
      total += gaussian_kl(guidance_forward(thetas[i], alphas[i], p), targets[i]);
    }
    return total / B;
  };
  auto eval_grads = [&](GuidanceParams& p, GuidanceParams& grads) {
    auto view = grads.named_arrays();
    for (auto& a : view) std::fill(a.data, a.data + a.size, 0.0);
    GuidanceWorkspace ws;
    std::vector<double> dmu(cfg.condition_dim), ds2(cfg.condition_dim);
    for (int i = 0; i < B; ++i) {
      const GuidanceMoments pred = guidance_forward(thetas[i], alphas[i], p, ws);
      for (int c = 0; c < cfg.condition_dim; ++c) {
        dmu[c] = (pred.mu[c] - targets[i].mu[c]) / targets[i].sigma2[c] / B;
        ds2[c] = 0.5 * (1.0 / targets[i].sigma2[c] - 1.0 / pred.sigma2[c]) / B;
      }
      guidance_backward(p, dmu, ds2, ws, grads);
    }
  };

  GuidanceParams grads(cfg);
  eval_grads(params, grads);
  auto pview = params.named_arrays();
  auto gview = grads.named_arrays();
  const double eps = 1e-5;
  double worst = 0.0;
  Rng pick(29);
  for (size_t t = 0; t < pview.size(); ++t) {
    for (int c = 0; c < 20; ++c) {
      const size_t idx = static_cast<size_t>(pick.uniform() * pview[t].size);
      const double saved = pview[t].data[idx];
      pview[t].data[idx] = saved + eps;
      const double up = eval_loss(params);
      pview[t].data[idx] = saved - eps;
      const double dn = eval_loss(params);
      pview[t].data[idx] = saved;
      const double fd = (up - dn) / (2.0 * eps);
      const double an = gview[t].data[idx];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("train_guidance: constant conditions are learned within 2 percent") {
  // Tiny corpus whose normalized conditions are a fixed vector; the mean
  // head must converge to it and every logged loss must be finite and
  // nonnegative.
  shapes::GrammarConfig grammar;
  grammar.bins = 8;
  grammar.seq_len = 10;
  grammar.max_primitives = 2;
  Rng gen(31);
  std::vector<shapes::DatasetRecord> records;
  for (int i = 0; i < 64; ++i) {
    const shapes::Program prog = shapes::random_program(gen, grammar);
    shapes::DatasetRecord rec;
    rec.tokens = shapes::encode_program(prog, grammar);
    rec.normalized_conditions = {0.8, -0.6};
    records.push_back(std::move(rec));
  }

  GuidanceConfig cfg;
  cfg.positions = grammar.seq_len;
  cfg.classes = grammar.vocab();
  cfg.condition_dim = 2;
  cfg.hidden = 32;
  cfg.alpha_features = 8;

  GuidanceTrainConfig tc;
  tc.steps = 800;
  tc.batch = 16;
  tc.lr = 3e-3;
  tc.n = 20;
  tc.beta_total = 3.0;
  tc.seed = 5;
  tc.threads = 2;
  tc.log_interval = 50;

  std::vector<double> losses;
  const GuidanceParams trained = train_guidance(records, cfg, tc, {}, [&](const std::string& line) {
    const auto pos = line.find("loss=");
    losses.push_back(std::stod(line.substr(pos + 5)));
  });
  REQUIRE(!losses.empty());
  for (double l : losses) {
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
  }

  Rng probe(41);
  const AccuracySchedule schedule = build_schedule(tc.beta_total, tc.n);
  for (int trial = 0; trial < 10; ++trial) {
    const int i = 1 + static_cast<int>(probe.uniform() * tc.n);
    const double acc = schedule.beta(std::min(i, tc.n));
    const shapes::DatasetRecord& rec = records[trial % records.size()];
    const BeliefState theta = flow_state(rec.tokens, acc, cfg.classes, probe);
    const GuidanceMoments m = guidance_forward(theta, acc, trained);
    CHECK(std::abs(m.mu[0] - 0.8) <= 0.02 * 0.8);
    CHECK(std::abs(m.mu[1] - (-0.6)) <= 0.02 * 0.6);
  }
}

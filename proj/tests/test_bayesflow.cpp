#include <doctest.h>

#include <cmath>
#include <numeric>

#include "tgbfn/bayesflow.hpp"
#include "tgbfn/schedule.hpp"

using namespace tgbfn;

TEST_CASE("schedule: single step forces alpha_1 = beta_total") {
  const AccuracySchedule s = build_schedule(1.0, 1);
  CHECK(s.alphas.size() == 1);
  CHECK(s.alphas[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.betas[0] == 1.0);
  CHECK(s.times[0] == 0.0);
}

TEST_CASE("schedule: closed form at beta=2, n=2") {
  const AccuracySchedule s = build_schedule(2.0, 2);
  // alpha_i = beta * (2i-1)/n^2: 2*(1/4) and 2*(3/4)
  CHECK(s.alphas[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.alphas[1] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(s.alphas[0] + s.alphas[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("schedule: additivity and monotonicity across sizes") {
  Rng rng(11);
  for (int n : {1, 2, 10, 100, 1000}) {
    const double beta = 0.1 + 10.0 * rng.uniform();
    const AccuracySchedule s = build_schedule(beta, n);
    const double sum = std::accumulate(s.alphas.begin(), s.alphas.end(), 0.0);
    CHECK(std::abs(sum - beta) <= 1e-12 * beta);
    CHECK(s.betas[n - 1] == beta);
    for (int i = 1; i < n; ++i) CHECK(s.betas[i] > s.betas[i - 1]);
    for (int i = 0; i < n; ++i) CHECK(s.times[i] == doctest::Approx((i) / double(n)));
  }
}

TEST_CASE("schedule: rejects bad arguments") {
  CHECK_THROWS_AS(build_schedule(0.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(-1.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(1.0, 0), std::invalid_argument);
}

TEST_CASE("uniform_prior: definition and exact row sums") {
  const BeliefState b = uniform_prior(1, 2);
  CHECK(b.theta(0, 0) == 0.5);
  CHECK(b.theta(0, 1) == 0.5);
  const BeliefState b2 = uniform_prior(3, 4);
  for (int d = 0; d < 3; ++d) {
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      CHECK(b2.theta(d, k) == 0.25);
      sum += b2.theta(d, k);
    }
    CHECK(sum == 1.0);
  }
  CHECK_THROWS_AS(uniform_prior(3, 1), std::invalid_argument);
}

TEST_CASE("sample_sender: analytic means, Monte Carlo check") {
  // x_d=1, K=2, alpha=1 -> mean (1, -1); x_d=2, K=3, alpha=0.5 -> (-0.5, 1, -0.5)
  struct Case {
    int token, classes;
    double alpha;
    std::vector<double> mean;
  };
  const std::vector<Case> cases = {{1, 2, 1.0, {1.0, -1.0}}, {2, 3, 0.5, {-0.5, 1.0, -0.5}}};
  for (const Case& c : cases) {
    Rng rng(77);
    const int draws = 100000;
    std::vector<double> acc(c.classes, 0.0);
    const TokenSequence x{c.token};
    for (int i = 0; i < draws; ++i) {
      Mat y = sample_sender(x, c.alpha, c.classes, rng);
      for (int k = 0; k < c.classes; ++k) acc[k] += y(0, k);
    }
    const double se = std::sqrt(c.alpha * c.classes) / std::sqrt(double(draws));
    for (int k = 0; k < c.classes; ++k) {
      CHECK(std::abs(acc[k] / draws - c.mean[k]) < 3.0 * se);
    }
  }
  Rng rng(1);
  CHECK_THROWS_AS(sample_sender({1}, 0.0, 2, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_sender({1}, -1.0, 2, rng), std::invalid_argument);
}

TEST_CASE("sender_logdensity: value at the mean and shape properties") {
  // At the exact mean with K=2, alpha=1: -(K/2) log(2 pi alpha K) = -log(4 pi)
  const std::vector<double> at_mean{1.0, -1.0};
  const double ld = sender_logdensity(at_mean, 1, 1.0, 2);
  CHECK(ld == doctest::Approx(-std::log(4.0 * 3.14159265358979323846)).epsilon(1e-14));

  // Translation invariance: same offset from either token's mean gives the
  // same density (isotropic Gaussian, shared variance).
  const std::vector<double> off{0.25, -0.6};
  const std::vector<double> y1{1.0 + off[0], -1.0 + off[1]};
  const std::vector<double> y2{-1.0 + off[0], 1.0 + off[1]};
  CHECK(sender_logdensity(y1, 1, 1.0, 2) == sender_logdensity(y2, 2, 1.0, 2));

  // Monotone decay with distance from the mean.
  double prev = sender_logdensity(at_mean, 1, 1.0, 2);
  for (double r : {0.5, 1.0, 2.0, 4.0}) {
    const std::vector<double> y{1.0 + r, -1.0};
    const double cur = sender_logdensity(y, 1, 1.0, 2);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("sender_logdensity_all agrees with per-token evaluation") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform() * 7);
    const double alpha = 0.05 + 3.0 * rng.uniform();
    std::vector<double> y(classes);
    for (double& v : y) v = 4.0 * rng.normal();
    std::vector<double> all(classes);
    sender_logdensity_all(y, alpha, classes, all);
    for (int k = 1; k <= classes; ++k) {
      CHECK(all[k - 1] == doctest::Approx(sender_logdensity(y, k, alpha, classes)).epsilon(1e-12));
    }
  }
}

TEST_CASE("bayesian_update: zero evidence, direct evaluation, absorbing vertex") {
  Mat theta(1, 2);
  theta(0, 0) = 0.5;
  theta(0, 1) = 0.5;
  const BeliefState prev(theta);

  Mat zero(1, 2);
  const BeliefState same = bayesian_update(prev, zero);
  CHECK(same.theta(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  Mat y(1, 2);
  y(0, 0) = std::log(3.0);
  const BeliefState upd = bayesian_update(prev, y);
  CHECK(upd.theta(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(upd.theta(0, 1) == doctest::Approx(0.25).epsilon(1e-12));

  Mat onehot(1, 2);
  onehot(0, 0) = 1.0;
  const BeliefState vertex(onehot);
  Mat any(1, 2);
  any(0, 0) = -7.3;
  any(0, 1) = 12.9;
  const BeliefState still = bayesian_update(vertex, any);
  CHECK(still.theta(0, 0) == 1.0);
  CHECK(still.theta(0, 1) == 0.0);
}

TEST_CASE("bayesian_update: evidence accumulation composes additively") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform() * 6);
    const int positions = 1 + static_cast<int>(rng.uniform() * 4);
    Mat theta(positions, classes);
    for (int d = 0; d < positions; ++d) {
      double sum = 0.0;
      for (int k = 0; k < classes; ++k) {
        theta(d, k) = 0.01 + rng.uniform();
        sum += theta(d, k);
      }
      for (int k = 0; k < classes; ++k) theta(d, k) /= sum;
    }
    const BeliefState prev(theta);
    Mat y1(positions, classes), y2(positions, classes), ysum(positions, classes);
    for (size_t i = 0; i < y1.a.size(); ++i) {
      y1.a[i] = 10.0 * rng.normal();
      y2.a[i] = 10.0 * rng.normal();
      ysum.a[i] = y1.a[i] + y2.a[i];
    }
    const BeliefState two_step = bayesian_update(bayesian_update(prev, y1), y2);
    const BeliefState one_step = bayesian_update(prev, ysum);
    for (size_t i = 0; i < two_step.theta.a.size(); ++i) {
      CHECK(std::abs(two_step.theta.a[i] - one_step.theta.a[i]) < 1e-9);
    }
    CHECK(max_simplex_deviation(two_step) < 1e-9);
  }
}

TEST_CASE("multi_sample_update: simplex closure and 1/m variance contraction") {
  Mat theta(1, 3);
  for (int k = 0; k < 3; ++k) theta(0, k) = 1.0 / 3.0;
  const BeliefState prev(theta);
  const TokenSequence x{1};
  const double alpha = 0.5;

  Rng bad(0);
  CHECK_THROWS_AS(multi_sample_update(prev, x, alpha, 0, bad), std::invalid_argument);

  const int reps = 1000;
  auto entry_variance = [&](int m, uint64_t seed) {
    Rng rng(seed);
    double sum = 0.0, sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const BeliefState b = multi_sample_update(prev, x, alpha, m, rng);
      CHECK(max_simplex_deviation(b) < 1e-9);
      const double v = b.theta(0, 0);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / reps;
    return (sq / reps - mean * mean) * reps / (reps - 1);
  };
  const double v1 = entry_variance(1, 101);
  const double v4 = entry_variance(4, 102);
  const double v16 = entry_variance(16, 103);
  // i.i.d. averages: variance ratio 4 each time, up to sampling noise.
  CHECK(v1 / v4 > 3.2);
  CHECK(v1 / v4 < 4.9);
  CHECK(v4 / v16 > 3.2);
  CHECK(v4 / v16 < 4.9);
}

TEST_CASE("receiver_logdensity: one-hot output reproduces the sender bit for bit") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform() * 7);
    const int token = 1 + static_cast<int>(rng.uniform() * classes);
    const double alpha = 0.05 + 5.0 * rng.uniform();
    std::vector<double> y(classes), p(classes, 0.0);
    for (double& v : y) v = 5.0 * rng.normal();
    p[token - 1] = 1.0;
    const double lr = receiver_logdensity(y, p, alpha, classes);
    const double ls = sender_logdensity(y, token, alpha, classes);
    CHECK(lr == ls);  // exact: same evaluation path, single mixture component
  }
}

TEST_CASE("receiver_logdensity: uniform two-component symmetry at the midpoint") {
  // y equidistant from both means: mixture is the average of two equal
  // densities, so its log equals either component's log density plus log(1).
  const int classes = 2;
  const double alpha = 0.7;
  const std::vector<double> y{0.0, 0.0};  // midpoint of (a, -a) and (-a, a)
  const std::vector<double> p{0.5, 0.5};
  const double lr = receiver_logdensity(y, p, alpha, classes);
  const double component = sender_logdensity(y, 1, alpha, classes);
  CHECK(lr == doctest::Approx(component).epsilon(1e-14));
}

TEST_CASE("receiver_logdensity: linear-space brute force agrees for K <= 8") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform() * 7);
    const double alpha = 0.05 + 2.0 * rng.uniform();
    std::vector<double> y(classes), p(classes);
    double psum = 0.0;
    for (int k = 0; k < classes; ++k) {
      y[k] = 3.0 * rng.normal();
      p[k] = 0.01 + rng.uniform();
      psum += p[k];
    }
    for (double& v : p) v /= psum;
    double direct = 0.0;
    for (int k = 1; k <= classes; ++k) {
      direct += p[k - 1] * std::exp(sender_logdensity(y, k, alpha, classes));
    }
    const double lr = receiver_logdensity(y, p, alpha, classes);
    CHECK(std::abs(lr - std::log(direct)) < 1e-10);
  }
}

TEST_CASE("discrete_time_loss: exact zero on one-hot outputs, zero gamma, sign in expectation") {
  const TokenSequence x{2, 1, 3};
  const int classes = 4;
  Mat onehot(3, classes);
  for (int d = 0; d < 3; ++d) onehot(d, x[d] - 1) = 1.0;
  Rng rng(41);
  for (int r = 0; r < 20; ++r) {
    CHECK(discrete_time_loss(x, onehot, 0.8, 1.0, rng) == 0.0);
  }

  Mat soft(3, classes);
  Rng init(42);
  for (int d = 0; d < 3; ++d) {
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      soft(d, k) = 0.05 + init.uniform();
      sum += soft(d, k);
    }
    for (int k = 0; k < classes; ++k) soft(d, k) /= sum;
  }
  CHECK(discrete_time_loss(x, soft, 0.8, 0.0, rng) == 0.0);

  const int draws = 10000;
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < draws; ++r) {
    const double v = discrete_time_loss(x, soft, 0.8, 1.0, rng);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / draws;
  const double sd = std::sqrt(sq / draws - mean * mean);
  CHECK(mean >= -3.0 * sd / std::sqrt(double(draws)));
  CHECK(mean > 0.0);  // KL of a genuinely mismatched receiver is positive
}

TEST_CASE("flow_state: prior at zero accuracy, concentration at high accuracy") {
  Rng rng(55);
  const TokenSequence x{3, 1, 4, 2};
  const int classes = 5;
  const BeliefState prior = flow_state(x, 0.0, classes, rng);
  for (int d = 0; d < 4; ++d) {
    for (int k = 0; k < classes; ++k) CHECK(prior.theta(d, k) == 0.2);
  }
  CHECK_THROWS_AS(flow_state(x, -0.1, classes, rng), std::invalid_argument);

  int hits = 0, total = 0;
  for (int r = 0; r < 1000; ++r) {
    const BeliefState b = flow_state(x, 50.0, classes, rng);
    CHECK(max_simplex_deviation(b) < 1e-9);
    for (int d = 0; d < 4; ++d) {
      int argmax = 0;
      for (int k = 1; k < classes; ++k) {
        if (b.theta(d, k) > b.theta(d, argmax)) argmax = k;
      }
      hits += (argmax == x[d] - 1);
      ++total;
    }
  }
  CHECK(static_cast<double>(hits) / total > 0.999);
}

TEST_CASE("simplex closure holds across random kernel applications") {
  Rng rng(67);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform() * 10);
    const int positions = 1 + static_cast<int>(rng.uniform() * 6);
    TokenSequence x(positions);
    for (int d = 0; d < positions; ++d) x[d] = 1 + static_cast<int>(rng.uniform() * classes);
    const double alpha = 0.01 + 4.0 * rng.uniform();
    const BeliefState flowed = flow_state(x, alpha, classes, rng);
    CHECK(max_simplex_deviation(flowed) < 1e-9);
    Mat y = sample_sender(x, alpha, classes, rng);
    const BeliefState updated = bayesian_update(flowed, y);
    CHECK(max_simplex_deviation(updated) < 1e-9);
    const BeliefState multi = multi_sample_update(updated, x, alpha, 3, rng);
    CHECK(max_simplex_deviation(multi) < 1e-9);
  }
}

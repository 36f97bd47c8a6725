#pragma once

#include <span>
#include <vector>

#include "tgbfn/mat.hpp"
#include "tgbfn/rng.hpp"

namespace tgbfn {

// Token sequence over {1..K}; length D.
using TokenSequence = std::vector<int>;

// Per-position categorical parameters; theta is D x K, every row on the
// probability simplex.
struct BeliefState {
  Mat theta;

  BeliefState() = default;
  explicit BeliefState(Mat m) : theta(std::move(m)) {}

  int positions() const { return theta.rows; }
  int classes() const { return theta.cols; }
};

// Largest row-sum deviation from 1 and most-negative entry; used by tests
// and by the renormalization guard.
double max_simplex_deviation(const BeliefState& b);

BeliefState uniform_prior(int positions, int classes);

// One noisy observation of x: row d drawn from
//   N(alpha * (K e_{x_d} - 1), alpha K I).
Mat sample_sender(const TokenSequence& x, double alpha, int classes, Rng& rng);

// Log density of a single sender row for the given token.
double sender_logdensity(std::span<const double> y, int token, double alpha, int classes);

// Log sender densities of the row y for every token 1..K at once.
// out must have size K. Shares the evaluation path with sender_logdensity.
void sender_logdensity_all(std::span<const double> y, double alpha, int classes,
                           std::span<double> out);

// Log of the mixture  sum_k p_out[k] * N(y; alpha(K e_k - 1), alpha K I),
// evaluated with log-sum-exp. With a one-hot p_out this reproduces
// sender_logdensity bit for bit.
double receiver_logdensity(std::span<const double> y, std::span<const double> p_out_row,
                           double alpha, int classes);

// Posterior update: per row, theta' proportional to exp(y) .* theta,
// renormalized in log space.
BeliefState bayesian_update(const BeliefState& prev, const Mat& y);

// Mean of m independent bayesian_update results, each from a fresh sender
// draw; the parallel-sample update used to curb exposure bias.
BeliefState multi_sample_update(const BeliefState& prev, const TokenSequence& x, double alpha,
                                int m, Rng& rng);

// Single-draw Monte-Carlo estimate of gamma * sum_d KL(p_S || p_R) at
// accuracy alpha. Unbiased; individual draws may be negative.
double discrete_time_loss(const TokenSequence& x, const Mat& p_out, double alpha, double gamma,
                          Rng& rng);

// Belief state with cumulative accuracy beta_t accumulated toward x: one
// Gaussian draw at beta_t applied to the uniform prior. beta_t = 0 returns
// the prior untouched.
BeliefState flow_state(const TokenSequence& x, double beta_t, int classes, Rng& rng);

// Mean per-row entropy of theta (nats); trace diagnostic.
double mean_row_entropy(const BeliefState& b);

}  // namespace tgbfn

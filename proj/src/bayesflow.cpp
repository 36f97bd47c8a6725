#include "tgbfn/bayesflow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tgbfn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_alpha(double alpha, const char* where) {
  if (!(alpha > 0.0)) throw std::invalid_argument(std::string(where) + ": alpha must be > 0");
}

void check_token(int token, int classes, const char* where) {
  if (token < 1 || token > classes)
    throw std::invalid_argument(std::string(where) + ": token outside {1..K}");
}

}  // namespace

double max_simplex_deviation(const BeliefState& b) {
  double worst = 0.0;
  for (int d = 0; d < b.positions(); ++d) {
    const double* row = b.theta.row(d);
    double sum = 0.0;
    for (int k = 0; k < b.classes(); ++k) {
      sum += row[k];
      if (row[k] < 0.0) worst = std::max(worst, -row[k]);
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

BeliefState uniform_prior(int positions, int classes) {
  if (positions < 1) throw std::invalid_argument("uniform_prior: D must be >= 1");
  if (classes < 2) throw std::invalid_argument("uniform_prior: K must be >= 2");
  Mat theta(positions, classes);
  const double p = 1.0 / classes;
  std::fill(theta.a.begin(), theta.a.end(), p);
  return BeliefState(std::move(theta));
}

Mat sample_sender(const TokenSequence& x, double alpha, int classes, Rng& rng) {
  check_alpha(alpha, "sample_sender");
  const int positions = static_cast<int>(x.size());
  Mat y(positions, classes);
  const double sd = std::sqrt(alpha * classes);
  for (int d = 0; d < positions; ++d) {
    check_token(x[d], classes, "sample_sender");
    double* row = y.row(d);
    for (int k = 0; k < classes; ++k) {
      const double mean = (k + 1 == x[d]) ? alpha * (classes - 1) : -alpha;
      row[k] = mean + sd * rng.normal();
    }
  }
  return y;
}

double sender_logdensity(std::span<const double> y, int token, double alpha, int classes) {
  check_alpha(alpha, "sender_logdensity");
  check_token(token, classes, "sender_logdensity");
  if (static_cast<int>(y.size()) != classes)
    throw std::invalid_argument("sender_logdensity: row size != K");
  const double var = alpha * classes;
  double sq = 0.0;
  for (int k = 0; k < classes; ++k) {
    const double mean = (k + 1 == token) ? alpha * (classes - 1) : -alpha;
    const double dv = y[k] - mean;
    sq += dv * dv;
  }
  return -0.5 * classes * std::log(kTwoPi * var) - 0.5 * sq / var;
}

void sender_logdensity_all(std::span<const double> y, double alpha, int classes,
                           std::span<double> out) {
  check_alpha(alpha, "sender_logdensity_all");
  if (static_cast<int>(y.size()) != classes || static_cast<int>(out.size()) != classes)
    throw std::invalid_argument("sender_logdensity_all: size mismatch");
  const double var = alpha * classes;
  const double norm = -0.5 * classes * std::log(kTwoPi * var);
  // ||y - m_k||^2 = sum_j (y_j + alpha)^2 - (y_k + alpha)^2 + (y_k - alpha(K-1))^2
  double base = 0.0;
  for (int j = 0; j < classes; ++j) {
    const double v = y[j] + alpha;
    base += v * v;
  }
  for (int k = 0; k < classes; ++k) {
    const double off = y[k] + alpha;
    const double on = y[k] - alpha * (classes - 1);
    out[k] = norm - 0.5 * (base - off * off + on * on) / var;
  }
}

double receiver_logdensity(std::span<const double> y, std::span<const double> p_out_row,
                           double alpha, int classes) {
  check_alpha(alpha, "receiver_logdensity");
  if (static_cast<int>(p_out_row.size()) != classes)
    throw std::invalid_argument("receiver_logdensity: p_out row size != K");
  std::vector<double> comps(classes);
  for (int k = 0; k < classes; ++k) {
    if (p_out_row[k] > 0.0) {
      comps[k] = std::log(p_out_row[k]) + sender_logdensity(y, k + 1, alpha, classes);
    } else {
      comps[k] = -std::numeric_limits<double>::infinity();
    }
  }
  return logsumexp(comps);
}

BeliefState bayesian_update(const BeliefState& prev, const Mat& y) {
  if (y.rows != prev.positions() || y.cols != prev.classes())
    throw std::invalid_argument("bayesian_update: shape mismatch");
  BeliefState next(Mat(prev.positions(), prev.classes()));
  std::vector<double> logits(prev.classes());
  for (int d = 0; d < prev.positions(); ++d) {
    const double* trow = prev.theta.row(d);
    const double* yrow = y.row(d);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < prev.classes(); ++k) {
      logits[k] = (trow[k] > 0.0) ? yrow[k] + std::log(trow[k])
                                  : -std::numeric_limits<double>::infinity();
      m = std::max(m, logits[k]);
    }
    double* nrow = next.theta.row(d);
    double sum = 0.0;
    for (int k = 0; k < prev.classes(); ++k) {
      nrow[k] = std::isfinite(logits[k]) ? std::exp(logits[k] - m) : 0.0;
      sum += nrow[k];
    }
    for (int k = 0; k < prev.classes(); ++k) nrow[k] /= sum;
  }
  return next;
}

BeliefState multi_sample_update(const BeliefState& prev, const TokenSequence& x, double alpha,
                                int m, Rng& rng) {
  check_alpha(alpha, "multi_sample_update");
  if (m < 1) throw std::invalid_argument("multi_sample_update: m must be >= 1");
  Mat acc(prev.positions(), prev.classes());
  for (int j = 0; j < m; ++j) {
    Mat y = sample_sender(x, alpha, prev.classes(), rng);
    BeliefState upd = bayesian_update(prev, y);
    for (size_t i = 0; i < acc.a.size(); ++i) acc.a[i] += upd.theta.a[i];
  }
  const double inv = 1.0 / m;
  for (double& v : acc.a) v *= inv;
  return BeliefState(std::move(acc));
}

double discrete_time_loss(const TokenSequence& x, const Mat& p_out, double alpha, double gamma,
                          Rng& rng) {
  check_alpha(alpha, "discrete_time_loss");
  if (p_out.rows != static_cast<int>(x.size()))
    throw std::invalid_argument("discrete_time_loss: p_out rows != sequence length");
  const int classes = p_out.cols;
  Mat y = sample_sender(x, alpha, classes, rng);
  double total = 0.0;
  for (int d = 0; d < y.rows; ++d) {
    const double ls = sender_logdensity(y.row_span(d), x[d], alpha, classes);
    const double lr = receiver_logdensity(y.row_span(d), p_out.row_span(d), alpha, classes);
    total += ls - lr;
  }
  return gamma * total;
}

BeliefState flow_state(const TokenSequence& x, double beta_t, int classes, Rng& rng) {
  if (beta_t < 0.0) throw std::invalid_argument("flow_state: beta_t must be >= 0");
  BeliefState prior = uniform_prior(static_cast<int>(x.size()), classes);
  if (beta_t == 0.0) return prior;
  Mat y = sample_sender(x, beta_t, classes, rng);
  return bayesian_update(prior, y);
}

double mean_row_entropy(const BeliefState& b) {
  double total = 0.0;
  for (int d = 0; d < b.positions(); ++d) {
    const double* row = b.theta.row(d);
    double h = 0.0;
    for (int k = 0; k < b.classes(); ++k) {
      if (row[k] > 0.0) h -= row[k] * std::log(row[k]);
    }
    total += h;
  }
  return b.positions() > 0 ? total / b.positions() : 0.0;
}

}  // namespace tgbfn

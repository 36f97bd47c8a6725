#include "tgbfn/schedule.hpp"

#include <stdexcept>

namespace tgbfn {

AccuracySchedule build_schedule(double beta_total, int n) {
  if (!(beta_total > 0.0)) throw std::invalid_argument("build_schedule: beta_total must be > 0");
  if (n < 1) throw std::invalid_argument("build_schedule: n must be >= 1");

  AccuracySchedule s;
  s.beta_total = beta_total;
  s.n = n;
  s.alphas.resize(n);
  s.betas.resize(n);
  s.times.resize(n);
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  for (int i = 1; i <= n; ++i) {
    s.alphas[i - 1] = beta_total * (2.0 * i - 1.0) / n2;
    // Closed form keeps betas strictly increasing; dividing first makes the
    // i = n ratio exactly 1, so beta_n = beta_total without rounding.
    s.betas[i - 1] = beta_total * ((static_cast<double>(i) * i) / n2);
    s.times[i - 1] = static_cast<double>(i - 1) / n;
  }
  return s;
}

double beta_at_time(double beta_total, double t) { return beta_total * t * t; }

}  // namespace tgbfn

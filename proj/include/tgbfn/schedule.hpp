#pragma once

#include <vector>

namespace tgbfn {

// Quadratic accuracy schedule for the discrete flow.
//
//   alpha_i = beta_total * (2i - 1) / n^2,   i = 1..n
//   beta_i  = beta_total * (i / n)^2         (cumulative; beta_n = beta_total)
//   t_i     = (i - 1) / n
//
// All vectors are 0-indexed by i-1.
struct AccuracySchedule {
  double beta_total = 0.0;
  int n = 0;
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<double> times;

  double alpha(int i) const { return alphas[i - 1]; }  // 1-based step index
  double beta(int i) const { return betas[i - 1]; }
  double time(int i) const { return times[i - 1]; }
};

AccuracySchedule build_schedule(double beta_total, int n);

// Cumulative accuracy at continuous time t in [0,1]: beta_total * t^2.
double beta_at_time(double beta_total, double t);

}  // namespace tgbfn

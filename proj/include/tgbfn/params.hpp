#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tgbfn/mat.hpp"
#include "tgbfn/rng.hpp"

namespace tgbfn {

// View into one named parameter tensor. Networks expose their tensors in a
// fixed declared order through this; the optimizer, checkpoints, and the
// finite-difference checks all operate on the same views.
struct NamedArray {
  std::string name;
  double* data = nullptr;
  size_t size = 0;
};

inline void fill_uniform(std::span<double> v, double scale, Rng& rng) {
  for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * scale;
}

// Fan-in-scaled uniform init: U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
inline void init_fan_in(Mat& w, Rng& rng) {
  fill_uniform({w.a.data(), w.a.size()}, std::sqrt(1.0 / std::max(1, w.cols)), rng);
}

inline double l2_norm(const std::vector<NamedArray>& arrays) {
  double sq = 0.0;
  for (const auto& a : arrays) {
    for (size_t i = 0; i < a.size; ++i) sq += a.data[i] * a.data[i];
  }
  return std::sqrt(sq);
}

inline bool all_finite(const std::vector<NamedArray>& arrays) {
  for (const auto& a : arrays) {
    for (size_t i = 0; i < a.size; ++i) {
      if (!std::isfinite(a.data[i])) return false;
    }
  }
  return true;
}

}  // namespace tgbfn

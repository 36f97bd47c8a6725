#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace tgbfn {

// Dense row-major matrix of doubles. The only tensor type in the project;
// kept deliberately small so the hot loops stay visible.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

  double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<size_t>(cols)}; }

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// y += W x   (W: rows x cols, x: cols, y: rows)
inline void matvec_add(const Mat& w, const double* x, double* y) {
  for (int r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// gx += W^T gy
inline void matvec_transpose_add(const Mat& w, const double* gy, double* gx) {
  for (int r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    const double g = gy[r];
    for (int c = 0; c < w.cols; ++c) gx[c] += wr[c] * g;
  }
}

// gW += gy (outer) x
inline void outer_add(Mat& gw, const double* gy, const double* x) {
  for (int r = 0; r < gw.rows; ++r) {
    double* gr = gw.row(r);
    const double g = gy[r];
    for (int c = 0; c < gw.cols; ++c) gr[c] += g * x[c];
  }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// log(sum exp(v)) with max subtraction; -inf entries contribute nothing.
inline double logsumexp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;  // all -inf (or some +inf, which we don't produce)
  double s = 0.0;
  for (double x : v) {
    if (x != -std::numeric_limits<double>::infinity()) s += std::exp(x - m);
  }
  return m + std::log(s);
}

inline void softmax_inplace(std::span<double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : v) x /= s;
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double silu(double z) { return z * sigmoid(z); }

inline double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

inline double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

// d softplus / dz
inline double softplus_grad(double z) { return sigmoid(z); }

}  // namespace tgbfn

#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace poropt {

/// Pairwise (tree) reduction. Result depends only on element order, never on
/// worker count, so parallel estimators stay reproducible.
inline double pairwise_sum(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
  const std::size_t n = hi - lo;
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += x[i];
    return s;
  }
  const std::size_t mid = lo + n / 2;
  return pairwise_sum(x, lo, mid) + pairwise_sum(x, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x, 0, x.size()); }

inline double pairwise_mean(const std::vector<double>& x) {
  return x.empty() ? 0.0 : pairwise_sum(x) / static_cast<double>(x.size());
}

/// Logistic map phi_f = 1/(1+exp(-(d+m))) and its z-derivatives. Every m- or
/// d-derivative in the library flows through these factors exactly once.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
inline double sigmoid_d1(double phi) { return phi * (1.0 - phi); }
inline double sigmoid_d2(double phi) { return phi * (1.0 - phi) * (1.0 - 2.0 * phi); }
inline double sigmoid_d3(double phi) {
  const double s1 = phi * (1.0 - phi);
  return s1 * ((1.0 - 2.0 * phi) * (1.0 - 2.0 * phi) - 2.0 * s1);
}

inline double relative_error(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-300);
  return std::abs(got - want) / scale;
}

/// Smoothed step l_omega(x) = 1/(1+exp(-2 omega x)); approaches the indicator
/// of {x >= 0} as omega grows, l_omega(0) = 1/2 for every omega.
inline double logistic_step(double x, double omega) { return sigmoid(2.0 * omega * x); }
inline double logistic_step_d1(double x, double omega) {
  const double l = logistic_step(x, omega);
  return 2.0 * omega * l * (1.0 - l);
}

/// Map [0,n) over a worker pool; f(i) must only touch slot i of its output.
/// Threads > 1 changes timing only, never results (callers reduce pairwise).
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      f(i);
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min<int>(threads, static_cast<int>(n));
  pool.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace poropt

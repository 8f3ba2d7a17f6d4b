#pragma once

#include <map>
#include <mutex>
#include <vector>

#include "spheredr/core.hpp"

namespace spheredr {

struct GaussRule {
  std::vector<double> nodes;    // on (-1, 1)
  std::vector<double> weights;  // sum to 2
};

namespace detail {

// Legendre P_n and P_n' by the three-term recurrence.
inline void legendre(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  p = (n == 0) ? 1.0 : (n == 1 ? x : p1);
  dp = (n == 0) ? 0.0 : n * (x * p1 - p0) / (x * x - 1.0);
  if (n == 1) dp = 1.0;
}

inline GaussRule make_gauss(int n) {
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Chebyshev-based initial guess, then Newton.
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double p = 0.0, dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      legendre(n, x, p, dp);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    legendre(n, x, p, dp);
    r.nodes[n - 1 - i] = x;
    r.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

}  // namespace detail

// Cached Gauss-Legendre rule of order n on (-1, 1).
inline const GaussRule& gauss_rule(int n) {
  static std::map<int, GaussRule> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, detail::make_gauss(n)).first;
  return it->second;
}

// Integral of fn over [a, b] with an n-point Gauss-Legendre rule.
template <class F>
double gauss_integrate(const F& fn, double a, double b, int n) {
  const GaussRule& r = gauss_rule(n);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += r.weights[i] * fn(mid + half * r.nodes[i]);
  return s * half;
}

}  // namespace spheredr

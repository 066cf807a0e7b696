#pragma once

// Independent reference computations used only by tests. None of these share
// code paths with the library routines they check.

#include <cmath>
#include <functional>
#include <vector>

#include "asiplab/tower_chain.hpp"

namespace oracle {

/// Plain bisection for a monotone increasing function on [lo, hi].
inline double bisect(const std::function<double(double)> &f, double lo, double hi, double tol = 1e-14) {
  for (int i = 0; i < 400 && hi - lo > tol * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Exact E[theta^{s_l}], l = 0..ell_max, by propagating the sub-probability
/// vector v_l(s) = E[theta^{s_l}; g_l = s] through the dense kernel.
inline std::vector<double> exact_delta(const asiplab::tower::TowerSpec &spec, double theta, int ell_max) {
  const int S = spec.num_states();
  const auto P = asiplab::tower::transition_matrix(spec);
  auto v = asiplab::tower::stationary(spec);
  for (int i = 0; i < S; ++i)
    if (spec.state(i).ell == 0) v[i] *= theta;
  std::vector<double> out;
  for (int l = 0; l <= ell_max; ++l) {
    double tot = 0.0;
    for (double x : v) tot += x;
    out.push_back(tot);
    std::vector<double> w(S, 0.0);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) w[j] += v[i] * P[static_cast<std::size_t>(i) * S + j];
    for (int j = 0; j < S; ++j)
      if (spec.state(j).ell == 0) w[j] *= theta;
    v = std::move(w);
  }
  return out;
}

/// Exact P(T >= n) by brute-force evolution of the pair kernel
/// K((i,j),(i',j')) = sum_e p_e 1{U(i,e)=i'} 1{U(j,e)=j'}, diagonal absorbing.
inline std::vector<double> exact_meeting(const asiplab::tower::TowerSpec &spec, int n_max) {
  const int S = spec.num_states();
  const auto nu = asiplab::tower::stationary(spec);
  std::vector<double> cur(static_cast<std::size_t>(S) * S, 0.0);
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j)
      if (i != j) cur[static_cast<std::size_t>(i) * S + j] = nu[i] * nu[j];
  std::vector<double> out{1.0};
  for (int n = 1; n <= n_max; ++n) {
    double tot = 0.0;
    for (double x : cur) tot += x;
    out.push_back(tot);
    std::vector<double> nxt(cur.size(), 0.0);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) {
        const double m = cur[static_cast<std::size_t>(i) * S + j];
        if (m == 0.0) continue;
        for (int e = 0; e < spec.num_letters(); ++e) {
          const auto a = spec.index(spec.step(spec.state(i), e));
          const auto b = spec.index(spec.step(spec.state(j), e));
          if (a != b) nxt[static_cast<std::size_t>(a) * S + b] += m * spec.prob(e);
        }
      }
    cur = std::move(nxt);
  }
  return out;
}

} // namespace oracle

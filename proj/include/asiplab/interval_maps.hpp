#pragma once

// Interval maps with stretched-exponential return-time tails, their first
// return to Y = ]1/2, 1], and sampled checks of the Gibbs-Markov properties
// of the induced map.
//
// Inverse-branch iteration is carried out in logarithmic coordinates
// u = -log x. For gamma = 1, z_n(1) = 2^-n underflows near n = 1075, so all
// tail and partition quantities are computed from u-sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "asiplab/errors.hpp"
#include "asiplab/rng.hpp"

namespace asiplab::maps {

/// f(x) = x (1 + c / |log x|^beta) on ]0, 1/2], 2x - 1 on ]1/2, 1],
/// with beta = 1/gamma - 1 and c = (log 2)^beta so that f(1/2) = 1.
struct MapParams {
  double gamma = 1.0;
  double beta = 0.0;
  double c = 1.0;
};

inline MapParams make_map(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    std::ostringstream os;
    os << "make_map: gamma = " << gamma << " outside the valid interval ]0, 1]";
    throw DomainError(os.str());
  }
  MapParams p;
  p.gamma = gamma;
  p.beta = 1.0 / gamma - 1.0;
  p.c = std::pow(M_LN2, p.beta);
  return p;
}

inline double apply_map(const MapParams &p, double x) {
  if (!(x > 0.0 && x <= 1.0)) {
    std::ostringstream os;
    os << "apply_map: x = " << x << " outside ]0, 1]";
    throw DomainError(os.str());
  }
  if (x > 0.5) return 2.0 * x - 1.0;
  return x * (1.0 + p.c / std::pow(-std::log(x), p.beta));
}

/// Left-branch derivative f'(x) expressed through u = -log x > 0.
inline double left_derivative_u(const MapParams &p, double u) {
  if (p.beta == 0.0) return 2.0;
  const double ub = std::pow(u, -p.beta);
  return 1.0 + p.c * ub + p.c * p.beta * ub / u;
}

/// The left branch of f in u-coordinates: u -> u - log(1 + c u^-beta).
inline double u_forward(const MapParams &p, double u) {
  if (p.beta == 0.0) return u - M_LN2;
  return u - std::log1p(p.c / std::pow(u, p.beta));
}

struct SolverOptions {
  double rel_tol = 1e-12;
  int max_iter = 200;
};

/// One application of the inverse left branch g in u-coordinates: the unique
/// u' > u with u' - log(1 + c u'^-beta) = u. Solved for the increment
/// d = u' - u by Newton's method safeguarded with bisection.
inline double u_step(const MapParams &p, double u, SolverOptions opt = {}) {
  if (!(u >= 0.0) || !std::isfinite(u)) {
    std::ostringstream os;
    os << "u_step: u = " << u << " must be finite and >= 0";
    throw DomainError(os.str());
  }
  if (p.beta == 0.0) return u + M_LN2;

  const double c = p.c, beta = p.beta;
  // residual(d) = d - log1p(c (u+d)^-beta), strictly increasing in d.
  auto residual = [&](double d) { return d - std::log1p(c / std::pow(u + d, beta)); };
  auto slope = [&](double d) {
    const double v = u + d;
    const double t = c / std::pow(v, beta);
    return 1.0 + beta * t / (v * (1.0 + t));
  };

  double lo = 0.0;
  double hi;
  if (u > 0.0) {
    hi = std::log1p(c / std::pow(u, beta));
  } else {
    hi = 1.0;
  }
  int widen = 0;
  while (!(residual(hi) > 0.0)) {
    hi *= 2.0;
    if (++widen > 200 || !std::isfinite(hi)) {
      std::ostringstream os;
      os << "u_step: failed to bracket root for u = " << u << " (gamma = " << p.gamma << ")";
      throw NumericError(os.str());
    }
  }

  double d = std::log1p(c / std::pow(u + hi, beta));
  if (!(d > lo && d < hi)) d = 0.5 * (lo + hi);
  for (int it = 0; it < opt.max_iter; ++it) {
    const double r = residual(d);
    if (r == 0.0) return u + d;
    if (r > 0.0)
      hi = d;
    else
      lo = d;
    double next = d - r / slope(d);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - d);
    d = next;
    // tolerances are relative to the increment d, not to u + d, so that the
    // step stays accurate when d is many orders of magnitude below u
    if (step <= opt.rel_tol * d || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * d)
      return u + d;
  }
  std::ostringstream os;
  os << "u_step: no convergence after " << opt.max_iter << " iterations for u = " << u
     << " (gamma = " << p.gamma << ", bracket [" << lo << ", " << hi << "])";
  throw NumericError(os.str());
}

/// u_n = -log z_n(x0) for n = 0..N, z_n = g^n.
struct UOrbit {
  double x0 = 1.0;
  std::vector<double> u;
};

inline UOrbit u_orbit(const MapParams &p, double x0, int n) {
  if (!(x0 > 0.0 && x0 <= 1.0)) throw DomainError("u_orbit: x0 outside ]0, 1]");
  if (n < 0) throw DomainError("u_orbit: n must be >= 0");
  UOrbit o;
  o.x0 = x0;
  o.u.reserve(static_cast<std::size_t>(n) + 1);
  o.u.push_back(-std::log(x0));
  for (int k = 0; k < n; ++k) o.u.push_back(u_step(p, o.u.back()));
  return o;
}

/// Normalized tail mass e^{-u_n(x0)}. For x0 = 1 this is the probability
/// (Lebesgue measure on Y normalized to 1) that the return time exceeds n.
/// `mass_unnormalized` is the same set measured with plain Lebesgue measure.
struct TailMass {
  double u_n = 0.0;
  double mass = 1.0;
  double mass_unnormalized = 0.5;
};

inline TailMass tail_mass(const MapParams &p, double x0, int n) {
  if (n < 0) throw DomainError("tail_mass: n must be >= 0");
  if (!(x0 > 0.0 && x0 <= 1.0)) throw DomainError("tail_mass: x0 outside ]0, 1]");
  double u = -std::log(x0);
  for (int k = 0; k < n; ++k) u = u_step(p, u);
  const double m = std::exp(-u);
  return {u, m, 0.5 * m};
}

struct ReturnResult {
  long long tau = 0;
  double Fx = 0.0;
};

/// First return time to Y and the landing point F(x) = f^tau(x).
/// Once the orbit enters ]0, 1/2] it is followed in u-coordinates.
inline ReturnResult return_time_and_F(const MapParams &p, double x, long long cap = 100'000'000) {
  if (!(x > 0.5 && x <= 1.0)) {
    std::ostringstream os;
    os << "return_time_and_F: x = " << x << " outside Y = ]1/2, 1]";
    throw DomainError(os.str());
  }
  const double y = 2.0 * x - 1.0;
  if (y > 0.5) return {1, y};
  double u = -std::log(y);
  long long tau = 1;
  while (u >= M_LN2) {
    u = p.beta == 0.0 ? u - M_LN2 : u - std::log1p(p.c / std::pow(u, p.beta));
    if (++tau > cap) {
      std::ostringstream os;
      os << "return_time_and_F: return time exceeds cap " << cap << " for x = " << x;
      throw CappedReturnError(os.str(), cap);
    }
  }
  return {tau, std::exp(-u)};
}

/// One element of the partition of Y on which the return time equals n.
/// The branch is ]x_lo, x_hi]; u_lo and u_hi are -log(2x - 1) at x_lo and
/// x_hi (so u_lo = u_n(1), u_hi = u_{n-1}(1)); mass is the normalized length.
struct Branch {
  int n = 0;
  double x_lo = 0.0;
  double x_hi = 0.0;
  double u_lo = 0.0;
  double u_hi = 0.0;
  double mass = 0.0;
};

struct InducingScheme {
  MapParams params;
  std::vector<Branch> branches;
  std::vector<double> u_one;  // u_k(1), k = 0..n_max
  double residual_mass = 0.0; // normalized mass of {tau > n_max}

  bool empty() const { return branches.empty(); }
  int n_max() const { return static_cast<int>(branches.size()); }

  /// Label of the branch containing x, or 0 if tau(x) > n_max.
  int branch_of(double x) const {
    if (!(x > 0.5 && x <= 1.0)) throw DomainError("branch_of: x outside Y");
    const double uy = -std::log(2.0 * x - 1.0);
    // branch n is {u_{n-1}(1) <= uy < u_n(1)}
    auto it = std::upper_bound(u_one.begin(), u_one.end(), uy);
    if (it == u_one.end()) return 0;
    return static_cast<int>(it - u_one.begin());
  }
};

inline InducingScheme branch_partition(const MapParams &p, int n_max) {
  if (n_max < 1) throw DomainError("branch_partition: n_max must be >= 1");
  InducingScheme s;
  s.params = p;
  s.u_one.resize(static_cast<std::size_t>(n_max) + 1);
  s.u_one[0] = 0.0;
  s.u_one[1] = M_LN2; // g(1) = 1/2 because f(1/2) = 1
  for (int k = 2; k <= n_max; ++k) s.u_one[k] = u_step(p, s.u_one[k - 1]);
  s.branches.reserve(static_cast<std::size_t>(n_max));
  for (int n = 1; n <= n_max; ++n) {
    Branch b;
    b.n = n;
    b.u_lo = s.u_one[n];
    b.u_hi = s.u_one[n - 1];
    b.x_lo = 0.5 + 0.5 * std::exp(-b.u_lo);
    b.x_hi = 0.5 + 0.5 * std::exp(-b.u_hi);
    b.mass = std::exp(-b.u_hi) * -std::expm1(-(b.u_lo - b.u_hi));
    s.branches.push_back(b);
  }
  s.residual_mass = std::exp(-s.u_one[n_max]);
  return s;
}

/// log z_n'(x) = -sum_{k=1..n} log f'(z_k(x)), evaluated in u-coordinates.
inline double log_dz(const MapParams &p, double x, int n) {
  double u = -std::log(x);
  double acc = 0.0;
  for (int k = 1; k <= n; ++k) {
    u = u_step(p, u);
    acc -= std::log(left_derivative_u(p, u));
  }
  return acc;
}

/// Sampled certificate of the Gibbs-Markov properties of F.
struct GMReport {
  double min_expansion = std::numeric_limits<double>::infinity();
  std::vector<double> expansion_per_branch; // index n-1
  double distortion_C = 0.0;
  std::vector<double> per_n_distortion; // index n-1: max |log z_n'(x) - log z_n'(y)| / |x - y|
  long long samples_used = 0;
  int n_max = 0;

  double max_distortion_upto(int n) const {
    double m = 0.0;
    for (int k = 0; k < n && k < static_cast<int>(per_n_distortion.size()); ++k)
      m = std::max(m, per_n_distortion[k]);
    return m;
  }
};

/// Samples `pairs_per_branch` pairs (a, b) of landing points in Y, half of
/// them independent and half at distance in [1e-4, 1.1e-3]. On branch n the
/// pair is pulled back through z_{n-1}, giving x = 1/2 + z_{n-1}(a)/2, so
/// |F(x) - F(y)| / |x - y| = 2 |a - b| / |z_{n-1}(a) - z_{n-1}(b)|. The same
/// orbits give log z_n' along the chain rule for the distortion curve.
inline GMReport verify_gm(const MapParams &p, const InducingScheme &scheme, int pairs_per_branch,
                          std::uint64_t seed = 1) {
  if (scheme.empty()) throw DomainError("verify_gm: empty inducing scheme");
  if (pairs_per_branch < 2) throw DomainError("verify_gm: pairs_per_branch must be >= 2");
  const int n_max = scheme.n_max();
  const auto P = static_cast<std::size_t>(pairs_per_branch);

  Rng rng(seed_stream(seed, 0));
  std::vector<double> a(P), b(P);
  for (std::size_t i = 0; i < P; ++i) {
    a[i] = 0.5 + 0.5 * rng.uniform_pos();
    if (i % 2 == 0) {
      b[i] = 0.5 + 0.5 * rng.uniform_pos();
      if (b[i] == a[i]) b[i] = a[i] > 0.75 ? a[i] - 1e-3 : a[i] + 1e-3;
    } else {
      const double delta = 1e-4 + 1e-3 * rng.uniform();
      b[i] = a[i] + delta <= 1.0 ? a[i] + delta : a[i] - delta;
    }
  }

  GMReport rep;
  rep.n_max = n_max;
  rep.expansion_per_branch.assign(static_cast<std::size_t>(n_max), std::numeric_limits<double>::infinity());
  rep.per_n_distortion.assign(static_cast<std::size_t>(n_max), 0.0);
  rep.samples_used = static_cast<long long>(P) * n_max;

  std::vector<double> ua(P), ub(P), la(P, 0.0), lb(P, 0.0);
  for (std::size_t i = 0; i < P; ++i) {
    ua[i] = -std::log(a[i]);
    ub[i] = -std::log(b[i]);
  }
  // Branch 1: F(x) = 2x - 1 on ]3/4, 1].
  rep.expansion_per_branch[0] = 2.0;
  for (int k = 1; k <= n_max; ++k) {
    for (std::size_t i = 0; i < P; ++i) {
      ua[i] = u_step(p, ua[i]);
      ub[i] = u_step(p, ub[i]);
      la[i] -= std::log(left_derivative_u(p, ua[i]));
      lb[i] -= std::log(left_derivative_u(p, ub[i]));
      const double dx = std::abs(a[i] - b[i]);
      // distortion of z_k
      double &dist = rep.per_n_distortion[static_cast<std::size_t>(k - 1)];
      dist = std::max(dist, std::abs(la[i] - lb[i]) / dx);
      // expansion on branch k+1, pulled back through z_k
      if (k + 1 <= n_max) {
        const double u1 = std::min(ua[i], ub[i]);
        const double u2 = std::max(ua[i], ub[i]);
        const double dz = std::exp(-u1) * -std::expm1(-(u2 - u1));
        const double ratio = 2.0 * dx / dz;
        double &e = rep.expansion_per_branch[static_cast<std::size_t>(k)];
        e = std::min(e, ratio);
      }
    }
  }
  for (double e : rep.expansion_per_branch) rep.min_expansion = std::min(rep.min_expansion, e);
  for (double d : rep.per_n_distortion) rep.distortion_C = std::max(rep.distortion_C, d);
  return rep;
}

/// Fitted constants of the two-sided bounds d2 n^gamma <= u_n(x) <= d1 n^gamma
/// (x in Y) and e^{-eta2 n^gamma} <= m(tau >= n) <= e^{-eta1 n^gamma}.
/// The eta bounds use n >= 2 since m(tau >= 1) = 1.
struct UBounds {
  double delta1 = 0.0;
  double delta2 = std::numeric_limits<double>::infinity();
  double eta1 = std::numeric_limits<double>::infinity();
  double eta2 = 0.0;
};

inline UBounds u_bounds(const MapParams &p, int n_max) {
  if (n_max < 2) throw DomainError("u_bounds: n_max must be >= 2");
  const auto o = u_orbit(p, 1.0, n_max + 1);
  UBounds b;
  for (int n = 1; n <= n_max; ++n) {
    const double ng = std::pow(static_cast<double>(n), p.gamma);
    b.delta2 = std::min(b.delta2, o.u[n] / ng);
    b.delta1 = std::max(b.delta1, o.u[n + 1] / ng);
    if (n >= 2) {
      b.eta1 = std::min(b.eta1, o.u[n - 1] / ng);
      b.eta2 = std::max(b.eta2, o.u[n - 1] / ng);
    }
  }
  return b;
}

} // namespace asiplab::maps

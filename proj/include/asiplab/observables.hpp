#pragma once

// Observables and the statistics built on their Birkhoff sums.
//
// Map observables live on [0, 1] and are evaluated along orbits of f. Tower
// observables are the explicit family
//
//     psi(g_0, g_1, ...) = sum_{j >= 0} theta^{N_j} rho(g_j),
//     N_j = #{1 <= k <= j : g_k in S_0},
//
// with rho supported on the base S_0 (rho(w, l) = r(w) 1{l = 0}). Because rho
// vanishes off the base, every term after the first carries at least one
// factor theta, which gives |psi| <= |r|_inf / (1 - theta) and reduces to
// psi = rho(g_0) at theta = 0. All conditional expectations are finite sums
// on a truncated tower, so they are computed exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "asiplab/errors.hpp"
#include "asiplab/interval_maps.hpp"
#include "asiplab/parallel.hpp"
#include "asiplab/rng.hpp"
#include "asiplab/stat_fit.hpp"
#include "asiplab/tower_chain.hpp"

namespace asiplab::obs {

// ---------------------------------------------------------------- series

struct SeriesSample {
  std::vector<double> X;
  std::vector<double> S; // S[k] = X_0 + ... + X_{k-1}, size n + 1
  std::string system;
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
  double x0 = std::numeric_limits<double>::quiet_NaN(); // explicit start, if any
  double sup_norm = 0.0;
};

inline std::vector<double> partial_sums(std::span<const double> X) {
  std::vector<double> S(X.size() + 1, 0.0);
  for (std::size_t k = 0; k < X.size(); ++k) S[k + 1] = S[k] + X[k];
  return S;
}

// ---------------------------------------------------------------- map side

enum class MapObsKind { identity_centered, coboundary };

struct MapObservable {
  MapObsKind kind = MapObsKind::identity_centered;
  double center = 0.5;         // subtracted constant for identity_centered
  double center_stderr = 0.0;  // zero when the mean is known exactly
  double sup_norm = 0.5;

  /// phi at x_k; `fx` is the next orbit point f(x_k).
  double operator()(double x, double fx) const {
    return kind == MapObsKind::identity_centered ? x - center : x - fx;
  }
};

/// Exact orbit of the doubling map started from a Lebesgue-random point.
/// The state is a 64-bit window of the binary expansion of x_k; each step
/// shifts it left by one bit and appends a fresh random bit, so the orbit is
/// that of a genuinely random real number rather than of a double.
class DoublingOrbit {
public:
  explicit DoublingOrbit(Rng &rng) : rng_(rng), window_(rng.next()) {}

  double x() const { return static_cast<double>(window_ >> 11) * 0x1.0p-53; }

  void advance() {
    if (bits_left_ == 0) {
      buffer_ = rng_.next();
      bits_left_ = 64;
    }
    window_ = (window_ << 1) | (buffer_ & 1u);
    buffer_ >>= 1;
    --bits_left_;
  }

private:
  Rng &rng_;
  std::uint64_t window_;
  std::uint64_t buffer_ = 0;
  int bits_left_ = 0;
};

/// Floating-point orbit of f from x0. The fixed point 0 is absorbing (f
/// extends continuously there), which is where dyadic starts of the doubling
/// map end up in double precision.
inline double map_step(const maps::MapParams &p, double x) { return x == 0.0 ? 0.0 : maps::apply_map(p, x); }

struct MapStart {
  std::optional<double> x0;        // explicit starting point
  SeedSpec seed{};                 // used when x0 is absent
  int burn_in = 1000;              // pseudo-orbit burn-in for gamma < 1
};

/// X_k = phi(f^k x), k = 0..n-1. Seeded starts are Lebesgue-uniform; for
/// gamma = 1 the orbit is exact, for gamma < 1 it is a double-precision
/// pseudo-orbit after `burn_in` steps.
inline SeriesSample birkhoff_series(const maps::MapParams &p, const MapObservable &phi, std::size_t n,
                                    const MapStart &start) {
  SeriesSample out;
  out.system = p.gamma == 1.0 ? "doubling_map" : "interval_map";
  out.sup_norm = phi.sup_norm;
  out.X.resize(n);
  if (start.x0) {
    double x = *start.x0;
    if (!(x > 0.0 && x <= 1.0)) throw DomainError("birkhoff_series: x0 outside ]0, 1]");
    out.x0 = x;
    for (std::size_t k = 0; k < n; ++k) {
      const double fx = map_step(p, x);
      out.X[k] = phi(x, fx);
      x = fx;
    }
  } else {
    out.master_seed = start.seed.master_seed;
    out.stream_id = start.seed.stream_id;
    Rng rng(start.seed);
    if (p.gamma == 1.0) {
      DoublingOrbit orb(rng);
      double x = orb.x();
      for (std::size_t k = 0; k < n; ++k) {
        orb.advance();
        const double fx = orb.x();
        out.X[k] = phi(x, fx);
        x = fx;
      }
    } else {
      double x = rng.uniform_pos();
      for (int b = 0; b < start.burn_in; ++b) x = map_step(p, x);
      for (std::size_t k = 0; k < n; ++k) {
        double fx = map_step(p, x);
        if (fx == 1.0 || fx == 0.0) fx = rng.uniform_pos(); // escape the two fixed points of the pseudo-orbit
        out.X[k] = phi(x, fx);
        x = fx;
      }
    }
  }
  out.S = partial_sums(out.X);
  return out;
}

/// Builds a map observable. For identity_centered the subtracted mean is 1/2
/// when gamma = 1 (Lebesgue is invariant) and is otherwise estimated from
/// `mean_samples` seeded pseudo-orbit points, with its standard error taken
/// across 64 batches.
inline MapObservable make_map_observable(const maps::MapParams &p, MapObsKind kind, std::uint64_t seed = 1,
                                         std::size_t mean_samples = 1'000'000) {
  MapObservable phi;
  phi.kind = kind;
  if (kind == MapObsKind::coboundary) {
    phi.center = 0.0;
    phi.sup_norm = 1.0;
    return phi;
  }
  if (p.gamma == 1.0) return phi;
  MapObservable raw;
  raw.center = 0.0;
  constexpr std::size_t batches = 64;
  const std::size_t per = std::max<std::size_t>(mean_samples / batches, 16);
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    auto s = birkhoff_series(p, raw, per, MapStart{std::nullopt, seed_stream(seed, b), 1000});
    means[b] = s.S.back() / static_cast<double>(per);
  }
  phi.center = stats::mean(means);
  phi.center_stderr = std::sqrt(stats::variance(means) / static_cast<double>(batches));
  phi.sup_norm = std::max(phi.center, 1.0 - phi.center);
  return phi;
}

// ---------------------------------------------------------------- tower side

/// The observable psi_{theta, rho} with rho(w, l) = r[w] 1{l = 0}.
struct TowerObservable {
  double theta = 0.5;
  std::vector<double> r;     // per letter
  std::string rho_kind;
  double rho_bar = 0.0;      // sum_w P_A(w) r[w]
  double M = 0.0;            // rho_bar / (1 - theta): expected psi from a fresh base visit onwards, per unit theta
  double center = 0.0;       // E_nu psi
  double center_stderr = 0.0;
  double r_max = 0.0;        // |r|_inf
  double lo = 0.0, hi = 0.0; // range of psi before centering
  double sup_norm = 0.0;     // bound on |psi - center|
  int J_trunc = 1;
  double residual_bound = 0.0;

  double r_at(tower::State s) const { return s.ell == 0 ? r[static_cast<std::size_t>(s.w)] : 0.0; }
  /// V(s) = E[psi(g_0 = s, g_1, ...)].
  double value(tower::State s) const { return r_at(s) + theta * M; }
};

/// Per-letter values for the named rho families. All take values in [0, 1].
///   indicator_first  r(w) = 1 on the first letter, 0 elsewhere
///   parity           r(w) = 1 on odd labels
///   inverse_label    r(w) = 1 / label(w)
inline std::vector<double> rho_values(const tower::TowerSpec &spec, const std::string &kind,
                                      std::span<const double> explicit_values = {}) {
  const int L = spec.num_letters();
  std::vector<double> r(static_cast<std::size_t>(L), 0.0);
  if (kind == "indicator_first") {
    r[0] = 1.0;
  } else if (kind == "parity") {
    for (int w = 0; w < L; ++w) r[w] = (spec.label(w) % 2 != 0) ? 1.0 : 0.0;
  } else if (kind == "inverse_label") {
    for (int w = 0; w < L; ++w) r[w] = 1.0 / static_cast<double>(spec.label(w));
  } else if (kind == "explicit") {
    if (explicit_values.empty()) throw DomainError("rho_values: explicit rho needs values");
    // the last value extends to all remaining letters
    for (int w = 0; w < L; ++w)
      r[w] = explicit_values[std::min<std::size_t>(static_cast<std::size_t>(w), explicit_values.size() - 1)];
  } else {
    throw DomainError("rho_values: unknown rho kind '" + kind +
                      "' (valid: indicator_first, parity, inverse_label, explicit)");
  }
  for (double v : r)
    if (!std::isfinite(v)) throw DomainError("rho_values: non-finite rho value");
  return r;
}

/// Exact centering: the base visits at times >= 1 are numbered 1, 2, ... and
/// carry i.i.d. letters, so E_nu psi = E_nu rho(g_0) + sum_{i >= 1} theta^i rho_bar
/// = rho_bar / E h + theta rho_bar / (1 - theta).
inline TowerObservable make_tower_observable(const tower::TowerSpec &spec, double theta, const std::string &rho_kind,
                                             std::span<const double> explicit_values = {},
                                             double residual_target = 1e-10) {
  if (!(theta >= 0.0 && theta < 1.0)) throw DomainError("make_tower_observable: theta must lie in [0, 1[");
  TowerObservable o;
  o.theta = theta;
  o.rho_kind = rho_kind;
  o.r = rho_values(spec, rho_kind, explicit_values);
  double rmin = 0.0, rmax = 0.0;
  for (int w = 0; w < spec.num_letters(); ++w) {
    o.rho_bar += spec.prob(w) * o.r[w];
    rmin = std::min(rmin, o.r[w]);
    rmax = std::max(rmax, o.r[w]);
  }
  o.r_max = std::max(std::abs(rmin), std::abs(rmax));
  o.M = o.rho_bar / (1.0 - theta);
  o.center = o.rho_bar / spec.mean_height() + theta * o.M;
  o.lo = rmin / (1.0 - theta);
  o.hi = rmax / (1.0 - theta);
  o.sup_norm = std::max(o.hi - o.center, o.center - o.lo);
  if (theta == 0.0 || o.r_max == 0.0) {
    o.J_trunc = 1;
    o.residual_bound = 0.0;
  } else {
    // smallest J with r_max theta^{J / E h} / (1 - theta) below the target
    const double visits = std::log(residual_target * (1.0 - theta) / o.r_max) / std::log(theta);
    o.J_trunc = std::max(1, static_cast<int>(std::ceil(std::max(0.0, visits) * spec.mean_height())));
    o.residual_bound = o.r_max * std::pow(theta, o.J_trunc / spec.mean_height()) / (1.0 - theta);
  }
  return o;
}

/// A tower trajectory of length n + J_trunc together with X_0..X_{n-1}.
struct TowerSample {
  tower::Path path;
  SeriesSample series;
};

/// psi_k for every k by the backward recursion
///   psi_k = rho(g_k) + theta^{1{g_{k+1} in S_0}} psi_{k+1},
/// started from the exact conditional expectation V(g_last) at the end of the
/// path. Returns centered values X_k = psi_k - center.
inline std::vector<double> tower_values(const TowerObservable &o, std::span<const tower::State> g) {
  std::vector<double> psi(g.size());
  if (g.empty()) return psi;
  psi.back() = o.value(g.back());
  for (std::size_t k = g.size() - 1; k-- > 0;) {
    const double f = g[k + 1].ell == 0 ? o.theta : 1.0;
    psi[k] = o.r_at(g[k]) + f * psi[k + 1];
  }
  for (auto &v : psi) v -= o.center;
  return psi;
}

inline TowerSample birkhoff_series(const tower::TowerSpec &spec, const TowerObservable &o, std::size_t n,
                                   SeedSpec seed) {
  TowerSample out;
  out.path = tower::simulate(spec, n + static_cast<std::size_t>(o.J_trunc), seed);
  auto vals = tower_values(o, out.path.states);
  out.series.X.assign(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(n));
  out.series.S = partial_sums(out.series.X);
  out.series.system = "tower";
  out.series.master_seed = seed.master_seed;
  out.series.stream_id = seed.stream_id;
  out.series.sup_norm = o.sup_norm;
  return out;
}

// ---------------------------------------------------------------- windows

enum class WindowMode { future_only, two_sided };

/// Windowed conditional expectations of X_k for a fixed window half-width m.
class WindowEvaluator {
public:
  WindowEvaluator(const tower::TowerSpec &spec, const TowerObservable &o, int m) : spec_(spec), o_(o), m_(m) {
    if (m < 0) throw DomainError("WindowEvaluator: m must be >= 0");
    // P_nu(R = r) = P_A(h > r) / E h, R = steps until the chain at time k-m-1 tops out
    pR_.resize(static_cast<std::size_t>(2 * m + 1));
    double acc = 0.0;
    for (int r = 0; r <= 2 * m; ++r) {
      pR_[r] = spec.height_tail(r + 1) / spec.mean_height();
      acc += pR_[r];
    }
    p_beyond_ = std::max(0.0, 1.0 - acc);
    scratch_.resize(static_cast<std::size_t>(2 * m + 1));
    G_.resize(static_cast<std::size_t>(m + 1));
  }

  int m() const { return m_; }

  /// X_{l,k} = E[X_k | g_k, ..., g_{k+m}]
  ///         = sum_{j<m} theta^{N_j} rho(g_{k+j}) + theta^{N_m} V(g_{k+m}) - center.
  double future_only(const tower::Path &path, std::size_t k) const {
    const auto &g = path.states;
    if (k + static_cast<std::size_t>(m_) >= g.size()) throw_index("future_only", k, g.size());
    double acc = 0.0, pw = 1.0;
    for (int j = 0; j < m_; ++j) {
      const auto s = g[k + j];
      if (j > 0 && s.ell == 0) pw *= o_.theta;
      acc += pw * o_.r_at(s);
    }
    const auto s = g[k + m_];
    if (m_ > 0 && s.ell == 0) pw *= o_.theta;
    return acc + pw * o_.value(s) - o_.center;
  }

  /// X~_{l,k} = E[X_{l,k} | eps_{k-m}, ..., eps_{k+m}] with g_{k-m-1} ~ nu.
  /// Once the chain regenerates inside the window it is a function of the
  /// innovations: a regeneration at time t puts it at (eps_t, 0) and the next
  /// one happens at t + h(eps_t). G(t) is the windowed value seen from a
  /// regeneration at t >= k; H(t) is the contribution to X_{l,k} when the
  /// first regeneration in the window happens at t.
  double two_sided(const tower::Path &path, std::size_t k) const {
    const auto &eps = path.innovations;
    const auto m = static_cast<std::size_t>(m_);
    if (k < m + 1) throw_index("two_sided (needs k >= m + 1)", k, eps.size());
    if (k + m >= eps.size()) throw_index("two_sided", k, eps.size());
    const std::size_t T0 = k - m, T1 = k + m;
    const double tail = o_.theta * o_.M;
    for (std::size_t t = T1 + 1; t-- > T0;) {
      const int e = eps[t];
      const std::size_t nt = t + static_cast<std::size_t>(spec_.height(e));
      if (t >= k) {
        const double g = o_.r[static_cast<std::size_t>(e)] + (nt <= T1 ? o_.theta * G_[nt - k] : tail);
        G_[t - k] = g;
        scratch_[t - T0] = (t == k) ? g : o_.theta * g;
      } else {
        scratch_[t - T0] = nt > T1 ? tail : scratch_[nt - T0];
      }
    }
    double x = p_beyond_ * tail;
    for (std::size_t r = 0; r <= 2 * m; ++r) x += pR_[r] * scratch_[r];
    return x - o_.center;
  }

  double operator()(const tower::Path &path, std::size_t k, WindowMode mode) const {
    return mode == WindowMode::future_only ? future_only(path, k) : two_sided(path, k);
  }

private:
  [[noreturn]] void throw_index(const char *what, std::size_t k, std::size_t len) const {
    std::ostringstream os;
    os << "windowed_x " << what << ": k = " << k << ", m = " << m_ << " outside trajectory of length " << len;
    throw IndexError(os.str());
  }

  const tower::TowerSpec &spec_;
  const TowerObservable &o_;
  int m_;
  std::vector<double> pR_;
  double p_beyond_ = 0.0;
  mutable std::vector<double> scratch_, G_;
};

inline double windowed_x(const tower::TowerSpec &spec, const TowerObservable &o, const tower::Path &path, int m,
                         std::size_t k, WindowMode mode) {
  return WindowEvaluator(spec, o, m)(path, k, mode);
}

// ---------------------------------------------------------------- covariance

struct CovarianceCurve {
  std::vector<double> cov;     // lag 0..max_lag
  std::vector<double> stderr;
  std::vector<std::vector<double>> per_batch; // per_batch[b][i]
  double mean = 0.0;
  std::size_t batches = 0;
};

/// Stationary covariances c_i = Cov(X_0, X_i) for i = 0..max_lag. Each batch
/// (an independent replica, or a contiguous piece of one long series) gives
/// the overlapping-window estimate (1 / (L - i)) sum_t (X_t - m)(X_{t+i} - m)
/// around the grand mean m; the reported value and standard error are the
/// mean and standard error across batches.
inline CovarianceCurve covariance(const std::vector<std::vector<double>> &batches, int max_lag,
                                  bool known_zero_mean = false) {
  if (max_lag < 0) throw DomainError("covariance: max_lag must be >= 0");
  if (batches.size() < 2) throw DataError("covariance: need at least 2 batches for standard errors");
  const auto L = static_cast<std::size_t>(max_lag);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto &b : batches) {
    if (b.size() <= L + 1)
      throw DataError("covariance: batch length " + std::to_string(b.size()) + " must exceed max_lag + 1 = " +
                      std::to_string(L + 1));
    for (double v : b) total += v;
    count += b.size();
  }
  CovarianceCurve out;
  out.mean = known_zero_mean ? 0.0 : total / static_cast<double>(count);
  out.batches = batches.size();
  out.per_batch.assign(batches.size(), std::vector<double>(L + 1, 0.0));
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto &x = batches[b];
    const std::size_t n = x.size();
    for (std::size_t i = 0; i <= L; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t + i < n; ++t) s += (x[t] - out.mean) * (x[t + i] - out.mean);
      out.per_batch[b][i] = s / static_cast<double>(n - i);
    }
  }
  const double B = static_cast<double>(batches.size());
  for (std::size_t i = 0; i <= L; ++i) {
    std::vector<double> col(batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) col[b] = out.per_batch[b][i];
    out.cov.push_back(stats::mean(col));
    out.stderr.push_back(std::sqrt(stats::variance(col) / B));
  }
  return out;
}

/// Splits one series into `count` contiguous batches of equal length.
inline std::vector<std::vector<double>> split_batches(std::span<const double> x, std::size_t count) {
  if (count < 2 || x.size() < count) throw DataError("split_batches: not enough data");
  const std::size_t len = x.size() / count;
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < count; ++b) out.emplace_back(x.begin() + b * len, x.begin() + (b + 1) * len);
  return out;
}

// ---------------------------------------------------------------- c^2

enum class C2Method { normalized_second_moment, covariance_series };

struct C2Result {
  C2Method method = C2Method::covariance_series;
  double c2 = 0.0;
  double stderr = 0.0;
  // normalized_second_moment
  std::vector<long long> n_grid;
  std::vector<double> v_n, v_n_stderr;
  double slope_b = 0.0; // fitted coefficient of 1/n
  int fit_from = 0;     // index of the first grid point used in the fit
  // covariance_series
  int cutoff_lag = -1;
  double tail_uncertainty = 0.0;
};

inline std::string to_string(C2Method m) {
  return m == C2Method::normalized_second_moment ? "normalized_second_moment" : "covariance_series";
}

/// c^2 = c_0 + 2 sum_{i=1}^{L} c_i where L is the last lag before the first
/// run of three consecutive lags with |c_i| < 2 stderr_i. The standard error
/// is taken across batches of the per-batch sums; a geometric extrapolation
/// of the omitted tail is added in quadrature as an uncertainty term.
inline C2Result c2_from_covariance(const CovarianceCurve &cv) {
  C2Result r;
  r.method = C2Method::covariance_series;
  const int L = static_cast<int>(cv.cov.size()) - 1;
  int cutoff = -1;
  for (int i = 1; i + 2 <= L; ++i) {
    bool small = true;
    for (int j = i; j < i + 3; ++j) small = small && std::abs(cv.cov[j]) < 2.0 * cv.stderr[j];
    if (small) {
      cutoff = i - 1;
      break;
    }
  }
  if (cutoff < 0) {
    std::ostringstream os;
    os << "c2_estimate(covariance_series): no run of 3 insignificant lags within max_lag = " << L
       << "; covariance curve:";
    for (int i = 0; i <= L; ++i) os << ' ' << cv.cov[i] << "(" << cv.stderr[i] << ")";
    throw NumericError(os.str());
  }
  r.cutoff_lag = cutoff;
  std::vector<double> sums(cv.batches);
  for (std::size_t b = 0; b < cv.batches; ++b) {
    double s = cv.per_batch[b][0];
    for (int i = 1; i <= cutoff; ++i) s += 2.0 * cv.per_batch[b][i];
    sums[b] = s;
  }
  r.c2 = cv.cov[0];
  for (int i = 1; i <= cutoff; ++i) r.c2 += 2.0 * cv.cov[i];
  const double se = std::sqrt(stats::variance(sums) / static_cast<double>(cv.batches));
  if (cutoff >= 2 && cv.cov[cutoff - 1] != 0.0) {
    const double ratio = std::min(0.9, std::abs(cv.cov[cutoff] / cv.cov[cutoff - 1]));
    r.tail_uncertainty = 2.0 * std::abs(cv.cov[cutoff]) * ratio / (1.0 - ratio);
  } else {
    r.tail_uncertainty = 2.0 * std::abs(cv.cov[std::min(cutoff + 1, L)]);
  }
  r.stderr = std::hypot(se, r.tail_uncertainty);
  return r;
}

/// c^2 from E(S_n^2) / n: on each batch the series is cut into disjoint
/// blocks of length n for n on a dyadic grid, v_n = mean((S_block - n m)^2) / n,
/// and v_n = c^2 + b / n is fitted by least squares (the 1/n term absorbs the
/// -2 sum_i i c_i / n bias). Standard errors come from repeating the fit on
/// every batch.
inline C2Result c2_from_second_moment(const std::vector<std::vector<double>> &batches, long long n_min = 16) {
  if (batches.size() < 2) throw DataError("c2_estimate(normalized_second_moment): need at least 2 batches");
  std::size_t len = batches[0].size();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto &b : batches) {
    len = std::min(len, b.size());
    for (double v : b) total += v;
    count += b.size();
  }
  const double mean = total / static_cast<double>(count);
  C2Result r;
  r.method = C2Method::normalized_second_moment;
  // at least 32 blocks per batch at the largest n keeps v_n from being dominated by a few squares
  for (long long n = n_min; n * 32 <= static_cast<long long>(len); n *= 2) r.n_grid.push_back(n);
  if (r.n_grid.size() < 3)
    throw DataError("c2_estimate(normalized_second_moment): batch length " + std::to_string(len) +
                    " too short for a grid of 3 block sizes");
  const std::size_t G = r.n_grid.size(), B = batches.size();
  std::vector<std::vector<double>> v(B, std::vector<double>(G));
  for (std::size_t b = 0; b < B; ++b) {
    const auto &x = batches[b];
    for (std::size_t g = 0; g < G; ++g) {
      const auto n = static_cast<std::size_t>(r.n_grid[g]);
      const std::size_t blocks = x.size() / n;
      double acc = 0.0;
      for (std::size_t j = 0; j < blocks; ++j) {
        double s = 0.0;
        for (std::size_t t = j * n; t < (j + 1) * n; ++t) s += x[t];
        s -= static_cast<double>(n) * mean;
        acc += s * s;
      }
      v[b][g] = acc / static_cast<double>(blocks) / static_cast<double>(n);
    }
  }
  std::vector<double> inv_n(G);
  for (std::size_t g = 0; g < G; ++g) inv_n[g] = 1.0 / static_cast<double>(r.n_grid[g]);
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<double> col(B);
    for (std::size_t b = 0; b < B; ++b) col[b] = v[b][g];
    r.v_n.push_back(stats::mean(col));
    r.v_n_stderr.push_back(std::sqrt(stats::variance(col) / static_cast<double>(B)));
  }

  // The 1/n expansion only holds once n exceeds the correlation length, so
  // the smallest block sizes are dropped until the model describes the pooled
  // curve (every point within 2 standard errors); at least 3 points remain.
  double worst = 0.0;
  for (std::size_t first = 0; first + 3 <= G; ++first) {
    std::span<const double> xs(inv_n.data() + first, G - first);
    std::vector<double> a_b(B), b_b(B);
    for (std::size_t b = 0; b < B; ++b) {
      auto f = stats::linear_fit(xs, std::span<const double>(v[b].data() + first, G - first), "v_n ~ 1/n");
      a_b[b] = f.intercept;
      b_b[b] = f.slope;
    }
    const double a = stats::mean(a_b), slope = stats::mean(b_b);
    worst = 0.0;
    for (std::size_t g = first; g < G; ++g) {
      const double se = std::max(r.v_n_stderr[g], 1e-300);
      worst = std::max(worst, std::abs(r.v_n[g] - a - slope * inv_n[g]) / se);
    }
    if (worst <= 2.0 && std::isfinite(a)) {
      r.c2 = a;
      r.slope_b = slope;
      r.stderr = std::sqrt(stats::variance(a_b) / static_cast<double>(B));
      r.fit_from = static_cast<int>(first);
      return r;
    }
  }
  std::ostringstream os;
  os << "c2_estimate(normalized_second_moment): extrapolation did not converge (standardized misfit " << worst
     << " on the last 3 grid points); curve n:v_n(se):";
  for (std::size_t g = 0; g < G; ++g) os << ' ' << r.n_grid[g] << ':' << r.v_n[g] << '(' << r.v_n_stderr[g] << ')';
  throw NumericError(os.str());
}

inline C2Result c2_estimate(const std::vector<std::vector<double>> &batches, C2Method method, int max_lag = 64) {
  if (method == C2Method::normalized_second_moment) return c2_from_second_moment(batches);
  return c2_from_covariance(covariance(batches, max_lag));
}

} // namespace asiplab::obs

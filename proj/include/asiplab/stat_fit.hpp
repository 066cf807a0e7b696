#pragma once

// Regression fits for tail curves, a one-sample Kolmogorov-Smirnov test
// against a normal law, and a law-of-the-iterated-logarithm ratio.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>

#include "asiplab/errors.hpp"

namespace asiplab::stats {

/// One point of a decreasing probability curve n -> p_n.
struct TailPoint {
  double n = 0.0;
  double p = 0.0;
  double stderr = 0.0;
};

using TailCurve = std::vector<TailPoint>;

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double stderr_slope = 0.0;
  int n_points = 0;
  std::string transform;
};

/// Ordinary least squares y = intercept + slope x.
inline FitResult linear_fit(std::span<const double> x, std::span<const double> y,
                            std::string transform = "linear") {
  if (x.size() != y.size()) throw DataError("linear_fit: x and y differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw DataError("linear_fit: need at least 3 points, got " + std::to_string(n));
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw DataError("linear_fit: degenerate abscissae");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  f.stderr_slope = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  f.n_points = static_cast<int>(n);
  f.transform = std::move(transform);
  return f;
}

struct StretchedExpFit {
  double gamma_hat = 0.0;
  double kappa_hat = 0.0;
  FitResult fit;
  int dropped = 0; // points with p outside ]0,1[ inside the range
};

/// Fits p_n ~ exp(-kappa n^gamma) by least squares of log(-log p) on log n
/// over n in [n_lo, n_hi].
inline StretchedExpFit stretched_exp_fit(const TailCurve &curve, double n_lo, double n_hi) {
  std::vector<double> x, y;
  StretchedExpFit out;
  for (const auto &pt : curve) {
    if (pt.n < n_lo || pt.n > n_hi) continue;
    if (!(pt.p > 0.0 && pt.p < 1.0) || pt.n <= 0.0) {
      ++out.dropped;
      continue;
    }
    x.push_back(std::log(pt.n));
    y.push_back(std::log(-std::log(pt.p)));
  }
  if (x.size() < 3)
    throw DataError("stretched_exp_fit: fewer than 3 usable points in [" + std::to_string(n_lo) + ", " +
                    std::to_string(n_hi) + "]");
  out.fit = linear_fit(x, y, "log(-log p) ~ log n");
  out.gamma_hat = out.fit.slope;
  out.kappa_hat = std::exp(out.fit.intercept);
  return out;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / M_SQRT2); }

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
/// Uses the alternating series for lambda >= 1 and the theta-function form
/// below; both are truncated at 100 terms or when a term drops below 1e-10.
inline double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  constexpr int kTerms = 100;
  constexpr double kTol = 1e-10;
  if (lambda >= 1.0) {
    double s = 0.0;
    for (int k = 1; k <= kTerms; ++k) {
      const double t = std::exp(-2.0 * k * k * lambda * lambda);
      s += (k % 2 == 1) ? t : -t;
      if (t < kTol) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
  }
  double s = 0.0;
  const double a = M_PI * M_PI / (8.0 * lambda * lambda);
  for (int k = 1; k <= kTerms; ++k) {
    const double j = 2.0 * k - 1.0;
    const double t = std::exp(-j * j * a);
    s += t;
    if (t < kTol) break;
  }
  const double cdf = std::sqrt(2.0 * M_PI) / lambda * s;
  return std::clamp(1.0 - cdf, 0.0, 1.0);
}

struct KSResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample KS test of `samples` against N(mu, sigma^2), asymptotic p-value
/// P(K > sqrt(n) D).
inline KSResult ks_normal_test(std::span<const double> samples, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("ks_normal_test: sigma must be > 0");
  if (samples.size() < 50) throw DataError("ks_normal_test: need at least 50 samples");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double F = normal_cdf((s[i] - mu) / sigma);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - F, F - static_cast<double>(i) / n});
  }
  return {d, kolmogorov_sf(std::sqrt(n) * d)};
}

/// max_{16 <= k <= n} |S_k| / sqrt(2 c2 k log log k), with S[k] = S_k.
inline double lil_ratio(std::span<const double> S, double c2, std::size_t n) {
  if (!(c2 > 0.0)) throw DomainError("lil_ratio: c2 must be > 0");
  if (n < 16) throw DomainError("lil_ratio: n must be >= 16");
  if (n >= S.size()) throw DataError("lil_ratio: partial-sum series shorter than n");
  double best = 0.0;
  for (std::size_t k = 16; k <= n; ++k) {
    const double kd = static_cast<double>(k);
    best = std::max(best, std::abs(S[k]) / std::sqrt(2.0 * c2 * kd * std::log(std::log(kd))));
  }
  return best;
}

/// True when `count` successes out of `trials` lie inside the central
/// `level` acceptance region of Binomial(trials, p), i.e. neither one-sided
/// exact tail probability falls below (1 - level) / 2.
inline bool binomial_consistent(long long count, long long trials, double p, double level = 0.99) {
  if (trials < 1 || count < 0 || count > trials) throw DomainError("binomial_consistent: invalid counts");
  const double alpha = 0.5 * (1.0 - level);
  if (p <= 0.0) return count == 0;
  if (p >= 1.0) return count == trials;
  const boost::math::binomial_distribution<double> b(static_cast<double>(trials), p);
  const double lower = boost::math::cdf(b, static_cast<double>(count));
  const double upper = count == 0 ? 1.0 : boost::math::cdf(boost::math::complement(b, static_cast<double>(count - 1)));
  return lower >= alpha && upper >= alpha;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance with divisor n - 1.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Linear-interpolated empirical quantile, q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= v.size()) return v.back();
  const double t = pos - static_cast<double>(i);
  return v[i] * (1.0 - t) + v[i + 1] * t;
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

} // namespace asiplab::stats

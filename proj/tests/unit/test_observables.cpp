#include <gtest/gtest.h>

#include <cmath>

#include "asiplab/observables.hpp"
#include "oracles.hpp"

using namespace asiplab;
using namespace asiplab::obs;
using tower::State;
using tower::TowerSpec;

namespace {

// psi evaluated term by term from its definition on a long path
double psi_direct(const TowerObservable &o, const std::vector<State> &g, std::size_t k) {
  double acc = 0.0;
  int N = 0;
  for (std::size_t j = k; j < g.size(); ++j) {
    if (j > k && g[j].ell == 0) ++N;
    if (g[j].ell == 0) acc += std::pow(o.theta, N) * o.r[g[j].w];
  }
  return acc;
}

// E[X_{l,k} | eps_{k-m..k+m}] by enumerating g_{k-m-1} over nu and applying
// the update rule through the window.
double two_sided_enumerated(const TowerSpec &spec, const TowerObservable &o, const tower::Path &path, std::size_t k,
                            int m) {
  const auto nu = tower::stationary(spec);
  WindowEvaluator ev(spec, o, m);
  double acc = 0.0;
  for (int i = 0; i < spec.num_states(); ++i) {
    tower::Path p = path;
    State s = spec.state(i);
    p.states[k - m - 1] = s;
    for (std::size_t t = k - m; t <= k + m; ++t) {
      s = spec.step(s, path.innovations[t]);
      p.states[t] = s;
    }
    acc += nu[i] * ev.future_only(p, k);
  }
  return acc;
}

} // namespace

TEST(MapSeries, DoublingByHand) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::identity_centered);
  auto s = birkhoff_series(p, phi, 3, MapStart{0.3});
  ASSERT_EQ(s.X.size(), 3u);
  EXPECT_NEAR(s.X[0], -0.2, 1e-15);
  EXPECT_NEAR(s.X[1], 0.1, 1e-15);
  EXPECT_NEAR(s.X[2], -0.3, 1e-15);
  EXPECT_NEAR(s.S[3], -0.4, 1e-15);
  auto e = birkhoff_series(p, phi, 0, MapStart{0.3});
  EXPECT_TRUE(e.X.empty());
  EXPECT_EQ(e.S.size(), 1u);
  EXPECT_EQ(e.S[0], 0.0);
}

TEST(MapSeries, PartialSumsAndBounds) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::identity_centered);
  auto s = birkhoff_series(p, phi, 5000, MapStart{std::nullopt, seed_stream(3, 0)});
  double acc = 0.0;
  for (std::size_t k = 0; k < s.X.size(); ++k) {
    EXPECT_EQ(s.S[k], acc);
    acc += s.X[k];
    EXPECT_LE(std::abs(s.X[k]), s.sup_norm);
  }
}

TEST(MapSeries, DoublingOrbitIsExactShift) {
  Rng rng(seed_stream(5, 0));
  DoublingOrbit orb(rng);
  for (int k = 0; k < 1000; ++k) {
    const double x = orb.x();
    orb.advance();
    // the new point agrees with 2x mod 1 up to the one fresh low bit
    EXPECT_NEAR(orb.x(), std::fmod(2.0 * x, 1.0), 0x1.0p-52);
  }
}

TEST(MapSeries, MeanOfFirstTermIsZero) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::identity_centered);
  std::vector<double> x0(100000);
  for (std::size_t r = 0; r < x0.size(); ++r)
    x0[r] = birkhoff_series(p, phi, 1, MapStart{std::nullopt, seed_stream(17, r)}).X[0];
  const double se = std::sqrt(stats::variance(x0) / double(x0.size()));
  EXPECT_NEAR(stats::mean(x0), 0.0, 3 * se);
}

TEST(MapSeries, CoboundaryTelescopes) {
  auto p = maps::make_map(0.5);
  auto phi = make_map_observable(p, MapObsKind::coboundary);
  auto s = birkhoff_series(p, phi, 2000, MapStart{0.77});
  // S_n = x_0 - x_n
  double x = 0.77;
  for (int k = 0; k < 2000; ++k) x = map_step(p, x);
  EXPECT_NEAR(s.S.back(), 0.77 - x, 1e-12);
}

TEST(TowerObservable, CenteringAndBounds) {
  auto spec = tower::synthetic_tower(0.5, 0.8, 30);
  for (double theta : {0.0, 0.3, 0.7}) {
    auto o = make_tower_observable(spec, theta, "parity");
    // center against the stationary expectation of the value function
    const auto nu = tower::stationary(spec);
    double e = 0.0;
    for (int i = 0; i < spec.num_states(); ++i) e += nu[i] * o.value(spec.state(i));
    EXPECT_NEAR(o.center, e, 1e-14);
    EXPECT_LE(o.hi, o.r_max / (1 - theta) + 1e-15);
    if (theta > 0) {
      EXPECT_LE(o.residual_bound, 1e-10);
    }
  }
}

TEST(TowerObservable, ThetaZeroIsRhoOfG0) {
  auto spec = tower::synthetic_tower(0.5, 0.8, 20);
  auto o = make_tower_observable(spec, 0.0, "inverse_label");
  auto ts = birkhoff_series(spec, o, 2000, seed_stream(9, 0));
  for (std::size_t k = 0; k < 2000; ++k) EXPECT_DOUBLE_EQ(ts.series.X[k], o.r_at(ts.path.states[k]) - o.center);
}

TEST(TowerObservable, BackwardRecursionMatchesDefinition) {
  auto spec = tower::synthetic_tower(0.5, 0.8, 20);
  auto o = make_tower_observable(spec, 0.6, "parity");
  auto ts = birkhoff_series(spec, o, 300, seed_stream(2, 0));
  for (std::size_t k = 0; k < 300; k += 7) {
    const double direct = psi_direct(o, ts.path.states, k) - o.center;
    EXPECT_NEAR(ts.series.X[k], direct, 1e-9);
    EXPECT_LE(std::abs(ts.series.X[k]), o.sup_norm + 1e-12);
  }
}

TEST(TowerObservable, EmpiricalMeanNearZero) {
  auto spec = tower::synthetic_tower(0.5, 0.8, 30);
  auto o = make_tower_observable(spec, 0.5, "parity");
  std::vector<double> x(20000);
  for (std::size_t r = 0; r < x.size(); ++r) x[r] = birkhoff_series(spec, o, 1, seed_stream(4, r)).series.X[0];
  EXPECT_NEAR(stats::mean(x), 0.0, 3 * std::sqrt(stats::variance(x) / double(x.size())));
}

TEST(Windowed, ThetaZeroFutureOnlyIsIdentity) {
  auto spec = tower::synthetic_tower(0.5, 0.8, 20);
  auto o = make_tower_observable(spec, 0.0, "parity");
  auto ts = birkhoff_series(spec, o, 500, seed_stream(1, 0));
  for (int m : {0, 1, 4}) {
    WindowEvaluator ev(spec, o, m);
    for (std::size_t k = 0; k < 400; ++k) EXPECT_DOUBLE_EQ(ev.future_only(ts.path, k), ts.series.X[k]);
  }
}

// At theta = 0 the two-sided window reproduces X_k exactly on the event that
// the innovation window alone pins down g_k, i.e. every possible state at
// time k - m - 1 leads to the same g_k. Different start offsets follow
// different regeneration sequences, so this event is not automatic.
TEST(Windowed, TwoSidedThetaZeroExactWhenInnovationsDetermineState) {
  auto spec = TowerSpec({1, 2, 3}, {0.5, 0.3, 0.2});
  auto o = make_tower_observable(spec, 0.0, "parity");
  auto ts = birkhoff_series(spec, o, 500, seed_stream(1, 0));
  const int m = 4;
  WindowEvaluator ev(spec, o, m);
  int determined = 0;
  for (std::size_t k = m + 1; k < 400; ++k) {
    bool unique = true;
    State first{};
    for (int i = 0; i < spec.num_states(); ++i) {
      State s = spec.state(i);
      for (std::size_t t = k - m; t <= k; ++t) s = spec.step(s, ts.path.innovations[t]);
      if (i == 0) first = s;
      unique = unique && s == first;
    }
    if (!unique) continue;
    ++determined;
    EXPECT_NEAR(ev.two_sided(ts.path, k), ts.series.X[k], 1e-15) << k;
  }
  EXPECT_GT(determined, 100);
}

TEST(Windowed, SingleLetterTowerIsDegenerate) {
  auto spec = TowerSpec({1}, {1.0});
  auto o = make_tower_observable(spec, 0.5, "parity");
  auto ts = birkhoff_series(spec, o, 50, seed_stream(1, 0));
  WindowEvaluator ev(spec, o, 3);
  for (std::size_t k = 4; k < 40; ++k) {
    EXPECT_NEAR(ev.two_sided(ts.path, k), ts.series.X[k], 1e-14);
    EXPECT_NEAR(ev.future_only(ts.path, k), ts.series.X[k], 1e-14);
  }
}

TEST(Windowed, TwoSidedMatchesEnumeration) {
  for (auto spec : {tower::synthetic_tower(0.5, 0.6, 12), TowerSpec({2, 3, 7}, {0.3, 0.5, 0.2})}) {
    for (double theta : {0.0, 0.4, 0.8}) {
      auto o = make_tower_observable(spec, theta, "parity");
      auto ts = birkhoff_series(spec, o, 200, seed_stream(6, 1));
      for (int m : {1, 3, 6}) {
        WindowEvaluator ev(spec, o, m);
        for (std::size_t k = m + 1; k + m < 150; k += 5)
          EXPECT_NEAR(ev.two_sided(ts.path, k), two_sided_enumerated(spec, o, ts.path, k, m), 1e-12)
              << "theta " << theta << " m " << m << " k " << k;
      }
    }
  }
}

TEST(Windowed, FutureOnlyMatchesConditionalExpectationByResampling) {
  // average psi over continuations regenerated from g_{k+m}
  auto spec = tower::synthetic_tower(0.5, 0.6, 15);
  auto o = make_tower_observable(spec, 0.5, "parity");
  auto ts = birkhoff_series(spec, o, 100, seed_stream(8, 0));
  const int m = 5;
  WindowEvaluator ev(spec, o, m);
  for (std::size_t k : {10u, 33u, 61u}) {
    std::vector<double> vals;
    for (int r = 0; r < 20000; ++r) {
      Rng rng(seed_stream(100 + k, r));
      std::vector<State> g(ts.path.states.begin() + k, ts.path.states.begin() + k + m + 1);
      while (g.size() < 400) g.push_back(spec.step(g.back(), spec.sample_letter(rng)));
      vals.push_back(psi_direct(o, g, 0) - o.center);
    }
    const double se = std::sqrt(stats::variance(vals) / double(vals.size()));
    EXPECT_NEAR(ev.future_only(ts.path, k), stats::mean(vals), 4 * se + 1e-12);
  }
}

TEST(Windowed, ContractionAndErrorBound) {
  auto spec = tower::synthetic_tower(0.5, 0.6, 40);
  for (double theta : {0.3, 0.7}) {
    auto o = make_tower_observable(spec, theta, "parity");
    const int m = 6;
    WindowEvaluator ev(spec, o, m);
    double err = 0.0;
    const int R = 10000;
    for (int r = 0; r < R; ++r) {
      auto ts = birkhoff_series(spec, o, 2 * m + 3, seed_stream(12, r));
      const std::size_t k = m + 1;
      const double f = ev.future_only(ts.path, k), t = ev.two_sided(ts.path, k);
      EXPECT_LE(std::abs(f), o.sup_norm + 1e-12);
      EXPECT_LE(std::abs(t), o.sup_norm + 1e-12);
      err += std::abs(ts.series.X[k] - f);
    }
    err /= R;
    auto d = oracle::exact_delta(spec, theta, m);
    EXPECT_LE(err, o.r_max * d[m] / (1 - theta)) << theta;
  }
}

TEST(Windowed, IndexErrors) {
  auto spec = tower::synthetic_tower(0.5, 0.6, 10);
  auto o = make_tower_observable(spec, 0.5, "parity");
  auto ts = birkhoff_series(spec, o, 20, seed_stream(1, 0));
  WindowEvaluator ev(spec, o, 4);
  EXPECT_THROW(ev.two_sided(ts.path, 4), IndexError);
  EXPECT_THROW(ev.future_only(ts.path, ts.path.size() - 2), IndexError);
}

TEST(Covariance, DoublingOracle) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::identity_centered);
  std::vector<std::vector<double>> batches;
  for (int r = 0; r < 64; ++r) batches.push_back(birkhoff_series(p, phi, 50000, MapStart{std::nullopt, seed_stream(21, r)}).X);
  auto cv = covariance(batches, 12);
  EXPECT_NEAR(cv.cov[0], 1.0 / 12.0, 3 * cv.stderr[0]);
  for (int n = 0; n <= 8; ++n) EXPECT_NEAR(cv.cov[n], std::ldexp(1.0, -n) / 12.0, 3 * cv.stderr[n]) << n;
  EXPECT_GE(cv.cov[0], 0.0);
  EXPECT_THROW(covariance(batches, 60000), DataError);
}

TEST(Covariance, InvariantUnderBatchReordering) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::identity_centered);
  std::vector<std::vector<double>> batches;
  for (int r = 0; r < 8; ++r) batches.push_back(birkhoff_series(p, phi, 1000, MapStart{std::nullopt, seed_stream(2, r)}).X);
  auto a = covariance(batches, 5);
  std::reverse(batches.begin(), batches.end());
  auto b = covariance(batches, 5);
  for (int i = 0; i <= 5; ++i) {
    EXPECT_NEAR(a.cov[i], b.cov[i], 1e-15);
    EXPECT_NEAR(a.stderr[i], b.stderr[i], 1e-15);
  }
}

TEST(C2, DoublingBothMethods) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::identity_centered);
  std::vector<std::vector<double>> batches;
  for (int r = 0; r < 64; ++r) batches.push_back(birkhoff_series(p, phi, 65536, MapStart{std::nullopt, seed_stream(31, r)}).X);
  auto a = c2_estimate(batches, C2Method::covariance_series, 40);
  auto b = c2_estimate(batches, C2Method::normalized_second_moment);
  EXPECT_NEAR(a.c2, 0.25, 0.02);
  EXPECT_NEAR(b.c2, 0.25, 0.02);
  EXPECT_LE(std::abs(a.c2 - b.c2), 2 * std::hypot(a.stderr, b.stderr));
}

TEST(C2, CoboundaryIsZero) {
  auto p = maps::make_map(1.0);
  auto phi = make_map_observable(p, MapObsKind::coboundary);
  std::vector<std::vector<double>> batches;
  for (int r = 0; r < 64; ++r) batches.push_back(birkhoff_series(p, phi, 65536, MapStart{std::nullopt, seed_stream(41, r)}).X);
  auto a = c2_estimate(batches, C2Method::covariance_series, 40);
  auto b = c2_estimate(batches, C2Method::normalized_second_moment);
  EXPECT_NEAR(a.c2, 0.0, 0.02);
  EXPECT_NEAR(b.c2, 0.0, 0.02);
}

TEST(C2, TowerMethodsAgree) {
  auto spec = tower::synthetic_tower(0.5, 0.8, 40);
  auto o = make_tower_observable(spec, 0.5, "parity");
  std::vector<std::vector<double>> batches;
  for (int r = 0; r < 64; ++r) batches.push_back(birkhoff_series(spec, o, 65536, seed_stream(51, r)).series.X);
  auto a = c2_estimate(batches, C2Method::covariance_series, 300);
  auto b = c2_estimate(batches, C2Method::normalized_second_moment);
  EXPECT_GT(a.c2, 0.0);
  EXPECT_LE(std::abs(a.c2 - b.c2), 2 * std::hypot(a.stderr, b.stderr)) << a.c2 << " " << b.c2;
}

TEST(C2, NonconvergentSeriesIsReported) {
  // a random walk has no summable covariance
  std::vector<std::vector<double>> batches;
  for (int r = 0; r < 8; ++r) {
    Rng rng(seed_stream(3, r));
    std::vector<double> x(4000);
    double s = 0.0;
    for (auto &v : x) v = (s += rng.normal());
    batches.push_back(x);
  }
  EXPECT_THROW(c2_estimate(batches, C2Method::covariance_series, 10), NumericError);
}

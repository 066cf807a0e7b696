#include <gtest/gtest.h>

#include <cmath>

#include "asiplab/rng.hpp"
#include "asiplab/stat_fit.hpp"

using namespace asiplab;
using namespace asiplab::stats;

TEST(StretchedExpFit, ExactCurves) {
  TailCurve a, b;
  for (int n = 1; n <= 200; ++n) {
    a.push_back({double(n), std::exp(-2.0 * std::sqrt(n)), 0});
    b.push_back({double(n), std::pow(2.0, -n), 0});
  }
  auto fa = stretched_exp_fit(a, 1, 200);
  EXPECT_NEAR(fa.gamma_hat, 0.5, 1e-6);
  EXPECT_NEAR(fa.kappa_hat, 2.0, 1e-6);
  EXPECT_NEAR(fa.fit.r2, 1.0, 1e-12);
  auto fb = stretched_exp_fit(b, 1, 200);
  EXPECT_NEAR(fb.gamma_hat, 1.0, 1e-6);
  EXPECT_NEAR(fb.kappa_hat, M_LN2, 1e-6);
}

TEST(StretchedExpFit, NoisyCurve) {
  Rng rng(seed_stream(5, 0));
  TailCurve c;
  for (int n = 5; n <= 400; ++n) c.push_back({double(n), std::exp(-0.7 * std::pow(n, 0.5)) * (1 + 0.01 * rng.normal()), 0});
  auto f = stretched_exp_fit(c, 5, 400);
  EXPECT_NEAR(f.gamma_hat, 0.5, 0.05);
  EXPECT_GT(f.fit.r2, 0.99);
}

TEST(StretchedExpFit, FiltersDegenerateAndRequiresThreePoints) {
  TailCurve c{{1, 1.0, 0}, {2, 0.5, 0}, {3, 0.0, 0}, {4, 0.2, 0}};
  EXPECT_THROW(stretched_exp_fit(c, 1, 4), DataError);
  c.push_back({5, 0.1, 0});
  auto f = stretched_exp_fit(c, 1, 5);
  EXPECT_EQ(f.dropped, 2);
  EXPECT_EQ(f.fit.n_points, 3);
}

TEST(LinearFit, R2InRange) {
  std::vector<double> x{1, 2, 3, 4}, y{1, -1, 1, -1};
  auto f = linear_fit(x, y);
  EXPECT_GE(f.r2, 0.0);
  EXPECT_LE(f.r2, 1.0);
  EXPECT_EQ(f.n_points, 4);
}

// Reference values from scipy.special.kolmogorov.
TEST(Kolmogorov, SurvivalFunctionValues) {
  EXPECT_NEAR(kolmogorov_sf(0.5), 0.9639452436648751, 1e-10);
  EXPECT_NEAR(kolmogorov_sf(0.8), 0.5441424115741981, 1e-10);
  EXPECT_NEAR(kolmogorov_sf(1.0), 0.26999967167735456, 1e-10);
  EXPECT_NEAR(kolmogorov_sf(1.36), 0.049485876755377876, 1e-10);
  EXPECT_NEAR(kolmogorov_sf(2.0), 0.0006709252557796953, 1e-12);
  EXPECT_NEAR(kolmogorov_sf(0.2), 1.0, 1e-12);
}

TEST(KSNormal, CalibrationOnExactNormals) {
  int pass = 0;
  const int runs = 200;
  for (int r = 0; r < runs; ++r) {
    Rng rng(seed_stream(77, r));
    std::vector<double> s(10000);
    for (auto &v : s) v = rng.normal();
    auto res = ks_normal_test(s, 0.0, 1.0);
    EXPECT_GE(res.statistic, 0.0);
    EXPECT_LE(res.statistic, 1.0);
    if (res.p_value > 0.01) ++pass;
  }
  EXPECT_GE(pass, int(0.98 * runs));
}

TEST(KSNormal, ConstantSamplesRejected) {
  std::vector<double> s(100, 0.3);
  auto r = ks_normal_test(s, 0.0, 1.0);
  EXPECT_LT(r.p_value, 1e-6);
  EXPECT_THROW(ks_normal_test(s, 0.0, 0.0), DomainError);
}

TEST(KSNormal, AffineInvariance) {
  Rng rng(seed_stream(8, 0));
  std::vector<double> s(500), t(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = 1.0 + 2.0 * rng.normal();
    t[i] = (s[i] - 1.0) / 2.0;
  }
  auto a = ks_normal_test(s, 1.0, 2.0), b = ks_normal_test(t, 0.0, 1.0);
  EXPECT_NEAR(a.statistic, b.statistic, 1e-12);
  EXPECT_NEAR(a.p_value, b.p_value, 1e-10);
}

TEST(LilRatio, ZeroHomogeneityAndCalibration) {
  std::vector<double> z(200, 0.0);
  EXPECT_EQ(lil_ratio(z, 1.0, 100), 0.0);
  EXPECT_THROW(lil_ratio(z, 0.0, 100), DomainError);

  const std::size_t n = 531441; // 3^12
  std::vector<double> ratios;
  for (int r = 0; r < 100; ++r) {
    Rng rng(seed_stream(99, r));
    std::vector<double> S(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) S[k] = S[k - 1] + 1.5 * rng.normal();
    const double a = lil_ratio(S, 2.25, n);
    ratios.push_back(a);
    if (r == 0) {
      std::vector<double> T(S);
      for (auto &v : T) v *= 3.0;
      EXPECT_NEAR(lil_ratio(T, 2.25 * 9.0, n), a, 1e-12);
    }
  }
  const double med = median(ratios);
  EXPECT_GE(med, 0.5);
  EXPECT_LE(med, 1.5);
}

TEST(Helpers, MeanVarianceQuantile) {
  std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(mean(v), 2.5);
  EXPECT_DOUBLE_EQ(variance(v), 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(median(v), 2.5);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0), 4.0);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_cdf(1.0), 0.8413447460685429, 1e-14);
}

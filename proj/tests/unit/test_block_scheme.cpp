#include <gtest/gtest.h>

#include <cmath>

#include "asiplab/block_scheme.hpp"

using namespace asiplab;
using namespace asiplab::blocks;

TEST(Schedule, LevelCount) {
  EXPECT_EQ(schedule(10, 1.0, 2.0).b_n, 3);
  EXPECT_EQ(schedule(9, 1.0, 2.0).b_n, 2);
  EXPECT_EQ(schedule(2, 1.0, 2.0).b_n, 1);
  EXPECT_EQ(schedule(3, 1.0, 2.0).b_n, 1);
  EXPECT_EQ(schedule(4, 1.0, 2.0).b_n, 2);
  EXPECT_THROW(schedule(1, 1.0, 2.0), DomainError);
  EXPECT_THROW(schedule(10, 1.5, 2.0), DomainError);
  EXPECT_THROW(schedule(10, 1.0, 0.0), DomainError);
}

TEST(Schedule, IntegerArithmeticExamples) {
  auto s = schedule(pow3(9), 1.0, 2.0);
  for (int l = 1; l <= 9; ++l) EXPECT_EQ(s.m_at(l), 2 * l);
  EXPECT_EQ(s.K0, 6);
  EXPECT_EQ(s.ell0, 3); // 9 >= 6 is the first level with 3^{l-1} >= 2 l
  EXPECT_EQ(s.q_at(8), 43);
  EXPECT_EQ(s.tau_n, 119);
  EXPECT_LE(s.tau_n, s.q_at(9));
  EXPECT_DOUBLE_EQ(s.alpha, 2.0);
  EXPECT_FALSE(s.degenerate);
}

TEST(Schedule, SqrtGammaUsesSquaredLevels) {
  auto s = schedule(1000, 0.5, 1.0);
  for (int l = 1; l <= s.b_n; ++l) EXPECT_EQ(s.m_at(l), l * l);
  EXPECT_DOUBLE_EQ(s.alpha, 3.0);
  // first k with 36 k^2 <= 3^k (k = 7: 1764 <= 2187)
  long long k0 = 1;
  while (36 * k0 * k0 > pow3(static_cast<int>(k0))) ++k0;
  EXPECT_EQ(s.K0, k0);
  EXPECT_EQ(s.K0, 7);
}

TEST(Schedule, DegenerateHorizon) {
  auto s = schedule(100, 1.0, 2.0); // b_n = 5 < K0 = 6
  EXPECT_TRUE(s.degenerate);
  Providers p;
  p.xtilde = [](int, long long) { return 1.0; };
  auto b = block_sums(s, p);
  EXPECT_TRUE(b.levels.empty());
  for (double v : b.s_diamond) EXPECT_EQ(v, 0.0);
}

TEST(Schedule, KappaWarning) {
  EXPECT_TRUE(schedule(1000, 1.0, 2.0, 2.0).warnings.empty()); // 2 * 1 >= log 3
  auto s = schedule(1000, 1.0, 2.0, 0.5);                       // 0.5 < log 3
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("kappa_block"), std::string::npos);
  const double k = suggested_kappa(1.0, 0.5);
  EXPECT_NEAR(0.5 * std::pow(k / 2.0, 1.0), std::log(3.0), 1e-12);
  EXPECT_TRUE(schedule(1000, 1.0, k * (1 + 1e-12), 0.5).warnings.empty());
}

// Exhaustive over every horizon up to 3^12 for each tested constant pair.
// The per-level arrays do not depend on n, so one schedule at the largest
// horizon serves every smaller n; a sample of direct constructions confirms
// that.
TEST(Schedule, InvariantsExhaustive) {
  const int top = 12;
  for (double g : {1.0, 0.5}) {
    for (double kap : {1.0, 2.0, 3.0}) {
      const auto S = schedule(pow3(top), g, kap);
      for (int l = S.K0; l <= top; ++l) {
        ASSERT_GE(S.q_at(l), 2) << g << " " << kap << " l " << l;
        long long prev_hi = pow3(l - 1);
        for (long long j = 1; j <= S.q_at(l); ++j) {
          const auto w = S.window(l, j);
          ASSERT_EQ(w.k_hi - w.k_lo + 1, 6 * S.m_at(l));
          ASSERT_EQ(w.J_hi - w.J_lo + 1, 2 * S.m_at(l));
          ASSERT_GT(w.k_lo, prev_hi);
          ASSERT_LE(w.k_hi, pow3(l));
          prev_hi = w.k_hi;
        }
      }
      for (long long n = 2; n <= pow3(top); ++n) {
        const int b = level_of(n);
        ASSERT_TRUE(pow3(b - 1) < n && n <= pow3(b)) << n;
        if (b >= S.K0) {
          ASSERT_LE(S.tau_of(n), S.q_at(b)) << n;
          // the last block entering S_n^diamond stays inside the horizon
          const long long t = S.tau_of(n);
          if (t >= 1) {
            ASSERT_LE(S.window(b, t).k_hi, n);
          }
        }
      }
      for (long long n : {2LL, 10LL, 728LL, 729LL, 730LL, 100000LL, pow3(top)}) {
        auto s = schedule(n, g, kap);
        EXPECT_EQ(s.K0, S.K0);
        EXPECT_EQ(s.ell0, S.ell0);
        EXPECT_EQ(s.tau_n, S.tau_of(n));
        for (int l = 1; l <= s.b_n; ++l) EXPECT_EQ(s.m_at(l), S.m_at(l));
      }
    }
  }
}

TEST(Schedule, BridgeSetPrecedesItsBlock) {
  auto s = schedule(pow3(9), 1.0, 2.0);
  const auto w = s.window(8, 3);
  const long long m = 16, base = pow3(7);
  EXPECT_EQ(w.k_lo, base + 18 * m + 1);
  EXPECT_EQ(w.k_hi, base + 24 * m);
  EXPECT_EQ(w.J_lo, base + 17 * m + 1);
  EXPECT_EQ(w.J_hi, base + 19 * m);
}

TEST(Schedule, SumOfWindowsClosedForm) {
  auto s = schedule(pow3(12), 1.0, 2.0);
  for (auto i : checkpoint_grid(s)) {
    const long long b = level_of(i);
    EXPECT_EQ(s.sum_m(i), b * (b + 1));
  }
}

TEST(Grid, LevelsAndInteriorPoints) {
  auto s = schedule(pow3(6), 1.0, 2.0); // ell0 = 3
  auto g = checkpoint_grid(s);
  EXPECT_EQ(g.front(), 27);
  EXPECT_EQ(g.back(), 729);
  // 27, then 3 interior + endpoint for levels 4..6
  EXPECT_EQ(g.size(), 1u + 3 * 4);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
  auto s2 = schedule(1000, 1.0, 2.0);
  EXPECT_EQ(checkpoint_grid(s2).back(), 1000);
}

TEST(BlockSums, UnitStubCountsSummands) {
  for (double g : {1.0, 0.5}) {
    for (double kap : {1.0, 2.0}) {
      auto s = schedule(pow3(11) + 12345, g, kap);
      Providers p;
      p.xtilde = [](int, long long) { return 1.0; };
      p.plain = [](int, long long) { return 1.0; };
      auto b = block_sums(s, p);
      for (const auto &lb : b.levels)
        for (double v : lb.B) EXPECT_EQ(v, 6.0 * static_cast<double>(lb.m));
      for (std::size_t gi = 0; gi < b.grid.size(); ++gi) {
        const long long i = b.grid[gi];
        long long expect = 0;
        for (int l = s.K0; l < level_of(i); ++l) expect += s.m_at(l) * s.q_at(l);
        if (level_of(i) >= s.K0) expect += s.m_at(level_of(i)) * std::max<long long>(s.tau_of(i), 0);
        EXPECT_EQ(b.s_diamond[gi], 6.0 * static_cast<double>(expect)) << i;
        EXPECT_EQ(b.s_plain[gi], static_cast<double>(i));
        // the gap is exactly the number of uncovered indices
        EXPECT_EQ(b.s_tilde[gi] - b.s_diamond[gi], static_cast<double>(b.mismatch[gi]));
      }
      auto rep = gap_bound_check(s, b, 1.0);
      EXPECT_TRUE(rep.all_hold);
      for (const auto &row : rep.rows) EXPECT_EQ(row.gap, row.bound);
    }
  }
}

TEST(BlockSums, ProviderFailureCarriesContext) {
  auto s = schedule(pow3(8), 1.0, 2.0);
  Providers p;
  p.xtilde = [](int, long long k) -> double {
    if (k == 2000) throw IndexError("boom");
    return 0.0;
  };
  try {
    block_sums(s, p);
    FAIL();
  } catch (const IndexError &e) {
    EXPECT_NE(std::string(e.what()).find("k = 2000"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("l = 7"), std::string::npos);
  }
}

namespace {
tower::TowerSpec test_tower() { return tower::synthetic_tower(1.0, 0.7, 40); }
} // namespace

TEST(BlockSums, GapBoundHoldsOnTowerData) {
  const auto spec = test_tower();
  const auto o = obs::make_tower_observable(spec, 0.5, "parity");
  // distance between the windowed and plain sums over the windowed range,
  // accumulated over seeds; wider windows must bring them closer
  std::vector<double> drift;
  for (double kap : {1.0, 3.0}) {
    auto s = schedule(pow3(9), 1.0, kap);
    double d = 0.0;
    for (std::uint64_t r = 0; r < 4; ++r) {
      std::vector<double> S;
      auto b = tower_block_sums(s, spec, o, seed_stream(5, r), &S);
      auto rep = gap_bound_check(s, b, o.sup_norm);
      EXPECT_TRUE(rep.all_hold) << (rep.violations.empty() ? "" : rep.violations[0]);
      for (std::size_t gi = 0; gi < b.grid.size(); ++gi) {
        EXPECT_NEAR(b.s_plain[gi], S[static_cast<std::size_t>(b.grid[gi])], 1e-9);
      }
      d += std::abs(b.s_tilde.back() - (S.back() - S[windowed_start(s) - 1]));
    }
    drift.push_back(d);
  }
  EXPECT_LT(drift[1], drift[0]);
}

TEST(BlockSums, DistantBlocksUncorrelated) {
  const auto spec = test_tower();
  const auto o = obs::make_tower_observable(spec, 0.5, "parity");
  auto s = schedule(pow3(6), 1.0, 1.0); // K0 = 5: level 5 has 3 blocks, level 6 has 11
  const int R = 1000;
  std::vector<BlockSums> reps(R);
  for (int r = 0; r < R; ++r) reps[r] = tower_block_sums(s, spec, o, seed_stream(17, r), nullptr, false);
  auto corr = [&](const std::vector<double> &a, const std::vector<double> &b) {
    const double ma = stats::mean(a), mb = stats::mean(b);
    double sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < R; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  auto column = [&](int li, int j) {
    std::vector<double> v(R);
    for (int r = 0; r < R; ++r) v[r] = reps[r].levels[li].B[j];
    return v;
  };
  ASSERT_EQ(reps[0].levels.size(), 2u);
  ASSERT_EQ(reps[0].levels[0].B.size(), 3u);
  EXPECT_LE(std::abs(corr(column(0, 0), column(0, 2))), 3.0 / std::sqrt(R));
  for (int j = 0; j + 2 < 11; ++j) EXPECT_LE(std::abs(corr(column(1, j), column(1, j + 2))), 3.0 / std::sqrt(R)) << j;
}

TEST(VarianceRate, NonNegativeAndConverging) {
  const auto spec = test_tower();
  const auto o = obs::make_tower_observable(spec, 0.5, "parity");
  auto s = schedule(pow3(8), 1.0, 1.0);
  std::vector<int> ells = {3, 5, 8};
  auto nu = block_variance_rate(s, o, spec, ells, 64, 3, 4096);
  ASSERT_EQ(nu.size(), 3u);
  for (const auto &p : nu) {
    EXPECT_GE(p.nu, -2 * p.stderr);
    EXPECT_EQ(p.c_tilde.size(), static_cast<std::size_t>(2 * p.m + 1));
  }
  // common innovations: the level differences are resolved well beyond noise
  EXPECT_LT(std::abs(nu[2].nu - nu[1].nu), std::abs(nu[1].nu - nu[0].nu));
}

TEST(Probe, MonotoneAndLabeledHeuristic) {
  auto s = schedule(pow3(8), 1.0, 1.0);
  const int R = 120;
  std::vector<BlockSums> reps(R);
  for (int r = 0; r < R; ++r) {
    Rng rng(seed_stream(9, r));
    std::vector<double> x(static_cast<std::size_t>(s.n) + 1);
    for (auto &v : x) v = rng.normal();
    Providers p;
    p.xtilde = [&](int, long long k) { return x[k]; };
    p.plain = p.xtilde;
    reps[r] = block_sums(s, p);
  }
  auto pr = asip_probe(s, reps, 1.0);
  EXPECT_TRUE(pr.heuristic);
  EXPECT_TRUE(pr.notes.empty());
  for (const auto &row : pr.D)
    for (std::size_t g = 1; g < row.size(); ++g) EXPECT_GE(row[g], row[g - 1]);
  EXPECT_LE(pr.a_lo, pr.a);
  EXPECT_GE(pr.a_hi, pr.a);
  EXPECT_THROW(asip_probe(s, std::vector<BlockSums>(reps.begin(), reps.begin() + 50), 1.0), DomainError);
}

TEST(Probe, ConstantBlocksAreSkippedWithNote) {
  auto s = schedule(pow3(7), 1.0, 1.0);
  std::vector<BlockSums> reps(100);
  Providers p;
  p.xtilde = [](int, long long) { return 1.0; };
  p.plain = p.xtilde;
  for (auto &r : reps) r = block_sums(s, p);
  auto pr = asip_probe(s, reps, 1.0);
  EXPECT_FALSE(pr.notes.empty());
}

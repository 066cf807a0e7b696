#pragma once

// Level/block decomposition of the index set. Level l covers (3^{l-1}, 3^l];
// inside it, block j sums 6 m_l consecutive windowed terms X~_{l,k} and the
// blocks are separated from the level start by 6 m_l indices. The module
// provides the schedule itself, the block sums and partial-sum families on a
// checkpoint grid, the deterministic gap bound between the windowed partial
// sums and the block approximation, the block variance rate nu_l, and a
// heuristic Gaussianization probe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "asiplab/errors.hpp"
#include "asiplab/observables.hpp"
#include "asiplab/parallel.hpp"
#include "asiplab/stat_fit.hpp"
#include "asiplab/tower_chain.hpp"

namespace asiplab::blocks {

constexpr long long pow3(int e) {
  long long v = 1;
  for (int i = 0; i < e; ++i) v *= 3;
  return v;
}

/// Smallest b >= 0 with 3^b >= n.
inline int level_of(long long n) {
  int b = 0;
  long long p = 1;
  while (p < n) {
    p *= 3;
    ++b;
  }
  return b;
}

struct BlockWindow {
  long long k_lo = 0, k_hi = 0; // summed indices of B_{l,j}: [k_lo, k_hi]
  long long J_lo = 0, J_hi = 0; // bridge set J_{l,j} = [J_lo, J_hi], 2 m_l elements
};

struct BlockSchedule {
  long long n = 0;
  double gamma = 1.0;
  double kappa = 1.0;
  double alpha = 2.0;
  int b_n = 0;
  int ell0 = 0;
  int K0 = 0;
  std::vector<long long> m; // m[l], l = 0..b_n (m[0] unused)
  std::vector<long long> q; // q[l], may be negative at small l
  long long tau_n = 0;
  bool degenerate = false;  // b_n < K0: no complete level carries blocks
  std::vector<std::string> warnings;

  long long m_at(int l) const { return m.at(static_cast<std::size_t>(l)); }
  long long q_at(int l) const { return q.at(static_cast<std::size_t>(l)); }

  /// tau_i = floor((i - 3^{b_i - 1}) / (6 m_{b_i})) - 2 for a horizon i <= n.
  long long tau_of(long long i) const {
    const int b = level_of(i);
    return (i - pow3(b - 1)) / (6 * m_at(b)) - 2;
  }

  BlockWindow window(int l, long long j) const {
    const long long mm = m_at(l), base = pow3(l - 1);
    return {base + 6 * j * mm + 1, base + 6 * (j + 1) * mm, base + (6 * j - 1) * mm + 1, base + (6 * j + 1) * mm};
  }

  /// Number of blocks of level l that enter S_i^diamond.
  long long blocks_in(int l, long long i) const {
    if (l < K0) return 0;
    const int b = level_of(i);
    if (l < b) return std::max<long long>(q_at(l), 0);
    if (l == b) return std::max<long long>(tau_of(i), 0);
    return 0;
  }

  /// Sum_{k <= b_i} m_k.
  long long sum_m(long long i) const {
    long long s = 0;
    for (int k = 1; k <= level_of(i); ++k) s += m_at(k);
    return s;
  }
};

/// Smallest kappa_block with delta (kappa / 2)^gamma >= log 3.
inline double suggested_kappa(double gamma, double delta) {
  if (!(delta > 0.0)) throw DomainError("suggested_kappa: delta must be > 0");
  return 2.0 * std::pow(std::log(3.0) / delta, 1.0 / gamma);
}

inline long long m_of(int l, double gamma, double kappa) {
  // floor with a guard against representation error at exact integers
  const double v = kappa * std::pow(static_cast<double>(l), 1.0 / gamma);
  return std::max<long long>(static_cast<long long>(std::floor(v * (1.0 + 1e-14))), 1);
}

/// Builds the schedule for horizon n. `delta_hat`, when given, is an estimate
/// of the meeting-time decay constant; the schedule warns if it violates
/// delta (kappa / 2)^gamma >= log 3.
inline BlockSchedule schedule(long long n, double gamma, double kappa, std::optional<double> delta_hat = {}) {
  if (n < 2) throw DomainError("schedule: n must be >= 2");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("schedule: gamma outside ]0, 1]");
  if (!(kappa > 0.0)) throw DomainError("schedule: kappa_block must be > 0");
  if (n > pow3(38)) throw DomainError("schedule: n too large");
  BlockSchedule s;
  s.n = n;
  s.gamma = gamma;
  s.kappa = kappa;
  s.alpha = 1.0 + 1.0 / gamma;
  s.b_n = level_of(n);
  // enough levels to locate ell0 and K0 even when they exceed b_n
  int L = s.b_n;
  auto extend = [&](int upto) {
    while (static_cast<int>(s.m.size()) <= upto) {
      const int l = static_cast<int>(s.m.size());
      if (l == 0) {
        s.m.push_back(0);
        s.q.push_back(0);
        continue;
      }
      const long long ml = m_of(l, gamma, kappa);
      s.m.push_back(ml);
      s.q.push_back((l >= 2 ? pow3(l - 2) / ml : 0) - 2);
    }
  };
  extend(L);
  s.ell0 = 0;
  for (int l = 1; l <= 60 && s.ell0 == 0; ++l)
    if (std::pow(3.0, l - 1) >= kappa * std::pow(static_cast<double>(l), 1.0 / gamma)) s.ell0 = l;
  s.K0 = 0;
  for (int k = 1; k <= 38 && s.K0 == 0; ++k) {
    extend(k);
    if (36 * s.m_at(k) <= pow3(k)) s.K0 = k;
  }
  if (s.ell0 == 0 || s.K0 == 0) throw DomainError("schedule: kappa_block too large for any level to qualify");
  s.m.resize(static_cast<std::size_t>(L) + 1);
  s.q.resize(static_cast<std::size_t>(L) + 1);
  s.tau_n = s.tau_of(n);
  s.degenerate = s.b_n < s.K0;
  if (s.K0 < s.ell0)
    s.warnings.push_back("K0 < ell0: some blocks lie before the windowed range starts");
  if (delta_hat && *delta_hat * std::pow(kappa / 2.0, gamma) < std::log(3.0)) {
    std::ostringstream os;
    os << "kappa_block = " << kappa << " violates delta (kappa/2)^gamma >= log 3 for delta = " << *delta_hat
       << "; smallest admissible kappa_block is " << suggested_kappa(gamma, *delta_hat);
    s.warnings.push_back(os.str());
  }
  return s;
}

/// Checkpoints 3^l for l = ell0..b_n, plus three interior points
/// 3^{l-1} + t (3^l - 3^{l-1}) / 4 of every level above ell0, clipped to n;
/// n itself is always included.
inline std::vector<long long> checkpoint_grid(const BlockSchedule &s) {
  std::vector<long long> g;
  for (int l = s.ell0; l <= s.b_n; ++l) {
    const long long lo = pow3(l - 1), hi = pow3(l);
    if (l > s.ell0)
      for (int t = 1; t <= 3; ++t) g.push_back(lo + t * (hi - lo) / 4);
    g.push_back(hi);
  }
  g.push_back(s.n);
  std::erase_if(g, [&](long long i) { return i < 2 || i > s.n; });
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

/// First index of the windowed range the partial sums S~ start from.
inline long long windowed_start(const BlockSchedule &s) { return pow3(s.ell0 - 1) + 1; }

/// Indices in the symmetric difference between (3^{ell0-1}, i] and the
/// indices summed by S_i^diamond. When K0 >= ell0 this is the number of
/// uncovered indices of the windowed range.
inline long long mismatch_count(const BlockSchedule &s, long long i) {
  const long long r_lo = windowed_start(s), r_hi = i;
  const long long r_size = std::max<long long>(r_hi - r_lo + 1, 0);
  long long covered = 0, inside = 0;
  for (int l = s.K0; l <= level_of(i); ++l) {
    const long long nb = s.blocks_in(l, i);
    if (nb <= 0) continue;
    const long long c_lo = s.window(l, 1).k_lo, c_hi = s.window(l, nb).k_hi;
    covered += c_hi - c_lo + 1;
    inside += std::max<long long>(std::min(c_hi, r_hi) - std::max(c_lo, r_lo) + 1, 0);
  }
  return r_size + covered - 2 * inside;
}

struct LevelBlocks {
  int ell = 0;
  long long m = 0;
  std::vector<double> B; // B[j - 1] = B_{l,j}
};

/// Block sums and the partial-sum families on the checkpoint grid. Terms are
/// indexed from one, X_1, X_2, ...; at checkpoint i
///   s_plain   = sum_{k=1}^{i} X_k
///   s_bar     = sum over (3^{ell0-1}, i] of the future-only windowed terms
///   s_tilde   = the same with the two-sided windowed terms
///   s_diamond = sum of the blocks that enter S_i^diamond
/// where each windowed term uses the m of the level its index belongs to.
struct BlockSums {
  std::vector<LevelBlocks> levels;
  std::vector<long long> grid;
  std::vector<double> s_plain, s_bar, s_tilde, s_diamond;
  std::vector<long long> mismatch;
  double abs_tilde = 0.0; // sum of |X~| over the evaluated range, for rounding slack

  const LevelBlocks *level(int l) const {
    for (const auto &lb : levels)
      if (lb.ell == l) return &lb;
    return nullptr;
  }
};

/// (level, index) -> term. Indices start at k = 1.
using Provider = std::function<double(int, long long)>;

struct Providers {
  Provider xtilde;      // required
  Provider xbar = {};   // optional, s_bar stays 0 without it
  Provider plain = {};  // optional, s_plain stays 0 without it
};

namespace detail {
inline double call_provider(const Provider &p, const char *name, int l, long long k) {
  try {
    return p(l, k);
  } catch (const IndexError &e) {
    throw IndexError(std::string("block_sums: ") + name + " provider failed at (l = " + std::to_string(l) +
                     ", k = " + std::to_string(k) + "): " + e.what());
  } catch (const std::exception &e) {
    throw NumericError(std::string("block_sums: ") + name + " provider failed at (l = " + std::to_string(l) +
                       ", k = " + std::to_string(k) + "): " + e.what());
  }
}
} // namespace detail

inline BlockSums block_sums(const BlockSchedule &s, const Providers &p) {
  if (!p.xtilde) throw DomainError("block_sums: the windowed provider is required");
  BlockSums out;
  out.grid = checkpoint_grid(s);
  const long long n = s.n;
  const long long w0 = windowed_start(s);

  // which indices need X~: the windowed range plus every block (blocks of
  // levels below ell0 can only exist when K0 < ell0)
  long long first = w0;
  for (int l = s.K0; l <= s.b_n; ++l)
    if (s.blocks_in(l, n) > 0) first = std::min(first, s.window(l, 1).k_lo);
  std::vector<double> xt(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<char> need(static_cast<std::size_t>(n + 1), 0);
  for (long long k = w0; k <= n; ++k) need[k] = 1;
  for (int l = s.K0; l <= s.b_n; ++l) {
    const long long nb = s.blocks_in(l, n);
    if (nb > 0)
      for (long long k = s.window(l, 1).k_lo; k <= s.window(l, nb).k_hi; ++k) need[k] = 1;
  }
  for (long long k = first; k <= n; ++k) {
    if (!need[k]) continue;
    xt[k] = detail::call_provider(p.xtilde, "xtilde", level_of(k), k);
    out.abs_tilde += std::abs(xt[k]);
  }

  for (int l = s.K0; l <= s.b_n; ++l) {
    const long long nb = s.blocks_in(l, n);
    if (nb <= 0) continue;
    LevelBlocks lb{l, s.m_at(l), {}};
    lb.B.reserve(static_cast<std::size_t>(nb));
    for (long long j = 1; j <= nb; ++j) {
      const auto w = s.window(l, j);
      double acc = 0.0;
      for (long long k = w.k_lo; k <= w.k_hi; ++k) acc += xt[k];
      lb.B.push_back(acc);
    }
    out.levels.push_back(std::move(lb));
  }

  const std::size_t G = out.grid.size();
  out.s_plain.assign(G, 0.0);
  out.s_bar.assign(G, 0.0);
  out.s_tilde.assign(G, 0.0);
  out.s_diamond.assign(G, 0.0);
  out.mismatch.assign(G, 0);
  double sp = 0.0, sb = 0.0, st = 0.0;
  std::size_t gi = 0;
  for (long long k = 1; k <= n && gi < G; ++k) {
    if (p.plain) sp += detail::call_provider(p.plain, "plain", level_of(k), k);
    if (k >= w0) {
      st += xt[k];
      if (p.xbar) sb += detail::call_provider(p.xbar, "xbar", level_of(k), k);
    }
    if (k == out.grid[gi]) {
      out.s_plain[gi] = sp;
      out.s_bar[gi] = sb;
      out.s_tilde[gi] = st;
      double sd = 0.0;
      for (const auto &lb : out.levels) {
        const long long nb = s.blocks_in(lb.ell, k);
        for (long long j = 0; j < nb; ++j) sd += lb.B[static_cast<std::size_t>(j)];
      }
      out.s_diamond[gi] = sd;
      out.mismatch[gi] = mismatch_count(s, k);
      ++gi;
    }
  }
  return out;
}

/// Block sums for a tower trajectory: X_k is the tower observable along the
/// path, the two providers are the windowed conditional expectations with
/// the m of each index's level. `S_out`, when given, receives the full
/// partial sums S[k] = X_1 + ... + X_k (S[0] = 0).
inline BlockSums tower_block_sums(const BlockSchedule &s, const tower::TowerSpec &spec,
                                  const obs::TowerObservable &o, SeedSpec seed,
                                  std::vector<double> *S_out = nullptr, bool with_bar = true) {
  const long long m_max = s.m_at(s.b_n);
  const auto len = static_cast<std::size_t>(s.n + m_max + 1 + o.J_trunc);
  const tower::Path path = tower::simulate(spec, len, seed);
  const std::vector<double> X = obs::tower_values(o, path.states);
  std::vector<obs::WindowEvaluator> ev;
  ev.reserve(static_cast<std::size_t>(s.b_n) + 1);
  for (int l = 0; l <= s.b_n; ++l) ev.emplace_back(spec, o, static_cast<int>(l == 0 ? 0 : s.m_at(l)));
  Providers p;
  p.xtilde = [&](int l, long long k) { return ev[l].two_sided(path, static_cast<std::size_t>(k)); };
  if (with_bar) p.xbar = [&](int l, long long k) { return ev[l].future_only(path, static_cast<std::size_t>(k)); };
  p.plain = [&](int, long long k) { return X[static_cast<std::size_t>(k)]; };
  auto out = block_sums(s, p);
  if (S_out) {
    S_out->assign(static_cast<std::size_t>(s.n) + 1, 0.0);
    for (long long k = 1; k <= s.n; ++k) (*S_out)[k] = (*S_out)[k - 1] + X[static_cast<std::size_t>(k)];
  }
  return out;
}

// ---------------------------------------------------------------- gap bound

struct GapRow {
  long long i = 0;
  double s_tilde = 0.0, s_diamond = 0.0;
  double gap = 0.0;
  long long uncovered = 0;
  double bound = 0.0;
  bool holds = true;
  long long sum_m = 0;
  double ratio = 0.0; // sum_m / (log i)^alpha
};

struct GapReport {
  std::vector<GapRow> rows;
  bool all_hold = true;
  double ratio_max = 0.0;
  std::vector<std::string> violations;
};

/// The bound |S~_i - S_i^diamond| <= sup_norm * (mismatched indices) is a
/// counting identity: the difference is a sum of that many windowed terms,
/// each bounded by sup_norm. The comparison allows for floating-point
/// rounding of the two accumulated sums (relative 1e-12 of sum |X~|).
inline GapReport gap_bound_check(const BlockSchedule &s, const BlockSums &b, double sup_norm) {
  GapReport r;
  const double slack = 1e-12 * (1.0 + b.abs_tilde);
  for (std::size_t g = 0; g < b.grid.size(); ++g) {
    GapRow row;
    row.i = b.grid[g];
    row.s_tilde = b.s_tilde[g];
    row.s_diamond = b.s_diamond[g];
    row.gap = std::abs(row.s_tilde - row.s_diamond);
    row.uncovered = b.mismatch[g];
    row.bound = sup_norm * static_cast<double>(row.uncovered);
    row.holds = row.gap <= row.bound + slack;
    row.sum_m = s.sum_m(row.i);
    row.ratio = static_cast<double>(row.sum_m) / std::pow(std::log(static_cast<double>(row.i)), s.alpha);
    if (!row.holds) {
      r.all_hold = false;
      std::ostringstream os;
      os << "checkpoint i = " << row.i << ": |S~ - S^diamond| = " << row.gap << " > " << row.bound;
      r.violations.push_back(os.str());
    }
    r.ratio_max = std::max(r.ratio_max, row.ratio);
    r.rows.push_back(row);
  }
  return r;
}

// ---------------------------------------------------------------- nu_l

struct VarianceRatePoint {
  int ell = 0;
  long long m = 0;
  double nu = 0.0, stderr = 0.0;
  std::vector<double> c_tilde; // lag 0..2m
};

/// nu_l = c~_{l,0} + 2 sum_{i=1}^{2m_l} c~_{l,i}, c~_{l,i} = Cov(X~_{l,k}, X~_{l,k+i}).
/// The windowed sequence is stationary in k (it is a fixed function of the
/// i.i.d. innovations eps_{k-m}..eps_{k+m}) and centered exactly, so each
/// replica averages lagged products over `positions` consecutive k; mean and
/// standard error are taken across replicas. The same innovation streams
/// drive every level, so differences between levels are not swamped by
/// independent noise.
inline std::vector<VarianceRatePoint> block_variance_rate(const BlockSchedule &s, const obs::TowerObservable &o,
                                                          const tower::TowerSpec &spec, std::span<const int> ells,
                                                          long long replicas, std::uint64_t master_seed,
                                                          long long positions = 4096, unsigned threads = 1) {
  if (replicas < 2) throw DomainError("block_variance_rate: need at least 2 replicas");
  if (positions < 1) throw DomainError("block_variance_rate: positions must be >= 1");
  long long m_max = 0;
  for (int l : ells) {
    if (l < s.ell0 || l > s.b_n)
      throw DomainError("block_variance_rate: level " + std::to_string(l) + " outside [ell0, b_n]");
    m_max = std::max(m_max, s.m_at(l));
  }
  const std::size_t L = ells.size();
  // per replica, per level: nu and lagged products
  std::vector<std::vector<std::vector<double>>> per(static_cast<std::size_t>(replicas));
  parallel_for(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
    const auto len = static_cast<std::size_t>(m_max + 1 + positions + 3 * m_max + 1);
    const auto path = tower::simulate(spec, len, seed_stream(master_seed, r));
    per[r].resize(L);
    for (std::size_t li = 0; li < L; ++li) {
      const long long m = s.m_at(ells[li]);
      obs::WindowEvaluator ev(spec, o, static_cast<int>(m));
      const long long k0 = m_max + 1;
      std::vector<double> x(static_cast<std::size_t>(positions + 2 * m));
      for (std::size_t t = 0; t < x.size(); ++t) x[t] = ev.two_sided(path, static_cast<std::size_t>(k0) + t);
      auto &c = per[r][li];
      c.assign(static_cast<std::size_t>(2 * m + 1), 0.0);
      for (long long i = 0; i <= 2 * m; ++i) {
        double acc = 0.0;
        for (long long t = 0; t < positions; ++t) acc += x[t] * x[t + i];
        c[i] = acc / static_cast<double>(positions);
      }
    }
  });
  std::vector<VarianceRatePoint> out;
  for (std::size_t li = 0; li < L; ++li) {
    VarianceRatePoint pt;
    pt.ell = ells[li];
    pt.m = s.m_at(pt.ell);
    pt.c_tilde.assign(static_cast<std::size_t>(2 * pt.m + 1), 0.0);
    std::vector<double> nus(static_cast<std::size_t>(replicas));
    for (long long r = 0; r < replicas; ++r) {
      const auto &c = per[r][li];
      double nu = c[0];
      for (std::size_t i = 1; i < c.size(); ++i) nu += 2.0 * c[i];
      nus[r] = nu;
      for (std::size_t i = 0; i < c.size(); ++i) pt.c_tilde[i] += c[i];
    }
    for (auto &v : pt.c_tilde) v /= static_cast<double>(replicas);
    pt.nu = stats::mean(nus);
    pt.stderr = std::sqrt(stats::variance(nus) / static_cast<double>(replicas));
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------- probe

struct ProbeResult {
  std::vector<long long> grid;
  std::vector<std::vector<double>> D; // D[replica][grid index]
  std::vector<double> D_median, D_q90;
  stats::FitResult fit; // log median D on log log n
  double a = 0.0, C = 0.0, a_lo = 0.0, a_hi = 0.0;
  double fit_from = 0.0;
  bool heuristic = true;
  std::vector<std::string> notes;
};

/// Heuristic Gaussianization probe. For each block (l, j) the values across
/// replicas are mapped by rank to normal scores, scaled to the block's sample
/// standard deviation. D_n per replica is the running maximum over grid
/// points i <= n of |S_i - G_i|, where S_i is the plain partial sum and G_i
/// the sum of the Gaussianized blocks that enter S_i^diamond. The exponent a
/// comes from least squares of log median D_n on log log n over grid points
/// n >= 3^{K0}; [a_lo, a_hi] is a +-1.96 standard-error band.
inline ProbeResult asip_probe(const BlockSchedule &s, const std::vector<BlockSums> &reps, double c2) {
  if (reps.size() < 100) throw DomainError("asip_probe: need at least 100 replicas");
  if (!(c2 > 0.0)) throw DomainError("asip_probe: c2 must be > 0");
  const std::size_t R = reps.size();
  ProbeResult out;
  out.grid = reps[0].grid;
  for (const auto &r : reps)
    if (r.grid != out.grid || r.levels.size() != reps[0].levels.size())
      throw DataError("asip_probe: replicas disagree on the grid or level set");
  // Gaussianized blocks, indexed like reps[r].levels[li].B[j]
  std::vector<std::vector<std::vector<double>>> Gz(R);
  for (auto &g : Gz) g.resize(reps[0].levels.size());
  std::vector<double> scores(R);
  for (std::size_t i = 0; i < R; ++i) scores[i] = stats::normal_quantile((static_cast<double>(i) + 0.5) / R);
  std::vector<std::size_t> order(R);
  std::vector<double> vals(R);
  for (std::size_t li = 0; li < reps[0].levels.size(); ++li) {
    const std::size_t nb = reps[0].levels[li].B.size();
    for (std::size_t r = 0; r < R; ++r) Gz[r][li].assign(nb, 0.0);
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t r = 0; r < R; ++r) vals[r] = reps[r].levels[li].B[j];
      const double sd = std::sqrt(stats::variance(vals));
      if (!(sd > 0.0)) {
        out.notes.push_back("block (l = " + std::to_string(reps[0].levels[li].ell) + ", j = " +
                            std::to_string(j + 1) + ") has zero variance across replicas; skipped");
        continue;
      }
      std::iota(order.begin(), order.end(), std::size_t{0});
      // ties broken by replica id so the ranking is deterministic
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
      for (std::size_t rank = 0; rank < R; ++rank) Gz[order[rank]][li][j] = sd * scores[rank];
    }
  }
  const std::size_t G = out.grid.size();
  out.D.assign(R, std::vector<double>(G, 0.0));
  for (std::size_t r = 0; r < R; ++r) {
    double running = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      const long long i = out.grid[g];
      double gs = 0.0;
      for (std::size_t li = 0; li < reps[r].levels.size(); ++li) {
        const long long nb = s.blocks_in(reps[r].levels[li].ell, i);
        for (long long j = 0; j < nb; ++j) gs += Gz[r][li][static_cast<std::size_t>(j)];
      }
      running = std::max(running, std::abs(reps[r].s_plain[g] - gs));
      out.D[r][g] = running;
    }
  }
  out.D_median.resize(G);
  out.D_q90.resize(G);
  std::vector<double> col(R);
  std::vector<double> fx, fy;
  out.fit_from = static_cast<double>(pow3(s.K0));
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t r = 0; r < R; ++r) col[r] = out.D[r][g];
    out.D_median[g] = stats::median(col);
    out.D_q90[g] = stats::quantile(col, 0.9);
    if (static_cast<double>(out.grid[g]) >= out.fit_from && out.D_median[g] > 0.0) {
      fx.push_back(std::log(std::log(static_cast<double>(out.grid[g]))));
      fy.push_back(std::log(out.D_median[g]));
    }
  }
  if (fx.size() < 3) throw DataError("asip_probe: fewer than 3 grid points at or beyond 3^K0");
  out.fit = stats::linear_fit(fx, fy, "log D_median ~ log log n");
  out.a = out.fit.slope;
  out.C = std::exp(out.fit.intercept);
  out.a_lo = out.a - 1.96 * out.fit.stderr_slope;
  out.a_hi = out.a + 1.96 * out.fit.stderr_slope;
  return out;
}

} // namespace asiplab::blocks

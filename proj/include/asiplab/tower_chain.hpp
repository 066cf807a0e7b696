#pragma once

// The tower Markov chain on S = {(w, l) : 0 <= l < h(w)}: deterministic climb
// below the top level, regeneration to (eps, 0) with eps ~ P_A at the top.
// Includes the stationary law, coupled copies sharing innovations and their
// meeting time (exact pair-chain evolution and Monte Carlo), renewal
// bookkeeping, and the decay of E[theta^{s_l}].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "asiplab/errors.hpp"
#include "asiplab/interval_maps.hpp"
#include "asiplab/parallel.hpp"
#include "asiplab/rng.hpp"
#include "asiplab/stat_fit.hpp"

namespace asiplab::tower {

/// A state (w, l) of the tower; w indexes the alphabet of a TowerSpec.
struct State {
  int w = 0;
  int ell = 0;
  friend bool operator==(const State &, const State &) = default;
};

class TowerSpec {
public:
  /// Letter w has height heights[w] and probability probs[w] (renormalized to
  /// sum to one). `labels` defaults to 1..L; `truncated_mass` records how much
  /// probability was folded into the last letter when truncating a countable
  /// alphabet.
  TowerSpec(std::vector<int> heights, std::vector<double> probs, std::vector<long long> labels = {},
            double truncated_mass = 0.0)
      : h_(std::move(heights)), p_(std::move(probs)), labels_(std::move(labels)),
        truncated_mass_(truncated_mass) {
    if (h_.empty()) throw ConstructionError("TowerSpec: empty alphabet");
    if (h_.size() != p_.size()) throw ConstructionError("TowerSpec: heights and probabilities differ in length");
    if (labels_.empty()) {
      labels_.resize(h_.size());
      std::iota(labels_.begin(), labels_.end(), 1LL);
    }
    if (labels_.size() != h_.size()) throw ConstructionError("TowerSpec: labels and heights differ in length");
    double total = 0.0;
    for (std::size_t w = 0; w < h_.size(); ++w) {
      if (h_[w] < 1) throw ConstructionError("TowerSpec: height < 1 for letter " + std::to_string(labels_[w]));
      if (!(p_[w] >= 0.0) || !std::isfinite(p_[w]))
        throw ConstructionError("TowerSpec: invalid probability for letter " + std::to_string(labels_[w]));
      total += p_[w];
    }
    if (!(total > 0.0)) throw ConstructionError("TowerSpec: zero total mass");
    for (auto &q : p_) q /= total;

    int g = 0;
    for (std::size_t w = 0; w < h_.size(); ++w)
      if (p_[w] > 0.0) g = std::gcd(g, h_[w]);
    if (g != 1) throw ConstructionError("TowerSpec: periodic support, gcd of heights = " + std::to_string(g));

    offset_.resize(h_.size() + 1, 0);
    for (std::size_t w = 0; w < h_.size(); ++w) offset_[w + 1] = offset_[w] + h_[w];
    letter_of_.resize(static_cast<std::size_t>(offset_.back()));
    for (std::size_t w = 0; w < h_.size(); ++w)
      for (int l = 0; l < h_[w]; ++l) letter_of_[static_cast<std::size_t>(offset_[w] + l)] = static_cast<int>(w);

    mean_h_ = 0.0;
    for (std::size_t w = 0; w < h_.size(); ++w) mean_h_ += p_[w] * h_[w];

    cum_p_.resize(h_.size());
    cum_nu_.resize(h_.size());
    double a = 0.0, b = 0.0;
    for (std::size_t w = 0; w < h_.size(); ++w) {
      a += p_[w];
      b += p_[w] * h_[w] / mean_h_;
      cum_p_[w] = a;
      cum_nu_[w] = b;
    }
    last_positive_ = 0;
    for (std::size_t w = 0; w < h_.size(); ++w)
      if (p_[w] > 0.0) last_positive_ = static_cast<int>(w);
    h_max_ = *std::max_element(h_.begin(), h_.end());
  }

  int num_letters() const { return static_cast<int>(h_.size()); }
  int num_states() const { return offset_.back(); }
  int height(int w) const { return h_[static_cast<std::size_t>(w)]; }
  double prob(int w) const { return p_[static_cast<std::size_t>(w)]; }
  long long label(int w) const { return labels_[static_cast<std::size_t>(w)]; }
  const std::vector<int> &heights() const { return h_; }
  const std::vector<double> &probs() const { return p_; }
  double mean_height() const { return mean_h_; }
  int max_height() const { return h_max_; }
  double truncated_mass() const { return truncated_mass_; }

  int index(State s) const { return offset_[static_cast<std::size_t>(s.w)] + s.ell; }
  State state(int i) const {
    const int w = letter_of_[static_cast<std::size_t>(i)];
    return {w, i - offset_[static_cast<std::size_t>(w)]};
  }
  int start_index(int w) const { return offset_[static_cast<std::size_t>(w)]; }
  bool is_top(State s) const { return s.ell == height(s.w) - 1; }
  bool is_top_index(int i) const { return is_top(state(i)); }
  static bool in_base(State s) { return s.ell == 0; }

  /// The update rule g_{n+1} = U(g_n, eps_{n+1}).
  State step(State s, int eps) const {
    if (s.ell < height(s.w) - 1) return {s.w, s.ell + 1};
    return {eps, 0};
  }

  int sample_letter(Rng &rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cum_p_.begin(), cum_p_.end(), u);
    const int w = static_cast<int>(it - cum_p_.begin());
    return std::min(w, last_positive_);
  }

  State sample_stationary(Rng &rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cum_nu_.begin(), cum_nu_.end(), u);
    const int w = std::min(static_cast<int>(it - cum_nu_.begin()), last_positive_);
    const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(height(w))));
    return {w, l};
  }

  /// P_A(h >= k).
  double height_tail(int k) const {
    double s = 0.0;
    for (std::size_t w = 0; w < h_.size(); ++w)
      if (h_[w] >= k) s += p_[w];
    return s;
  }

private:
  std::vector<int> h_;
  std::vector<double> p_;
  std::vector<long long> labels_;
  double truncated_mass_ = 0.0;
  std::vector<int> offset_;
  std::vector<int> letter_of_;
  std::vector<double> cum_p_, cum_nu_;
  double mean_h_ = 0.0;
  int last_positive_ = 0;
  int h_max_ = 1;
};

/// Tower whose letters are the branches of an inducing scheme: h(a) = tau(a)
/// and P_A(a) is the normalized branch length, with the mass beyond n_max
/// folded into the last branch.
inline TowerSpec tower_from_scheme(const maps::InducingScheme &scheme) {
  if (scheme.empty()) throw ConstructionError("tower_from_scheme: empty inducing scheme");
  std::vector<int> h;
  std::vector<double> p;
  std::vector<long long> labels;
  for (const auto &b : scheme.branches) {
    h.push_back(b.n);
    p.push_back(b.mass);
    labels.push_back(b.n);
  }
  p.back() += scheme.residual_mass;
  return TowerSpec(std::move(h), std::move(p), std::move(labels), scheme.residual_mass);
}

/// Tower with h(w) = w for w = 1..n_max and P_A(h >= w) proportional to
/// exp(-kappa w^gamma); the tail beyond n_max is folded into the last letter.
inline TowerSpec synthetic_tower(double gamma, double kappa_tail, int n_max) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("synthetic_tower: gamma outside ]0, 1]");
  if (!(kappa_tail > 0.0)) throw DomainError("synthetic_tower: kappa_tail must be > 0");
  if (n_max < 2) throw DomainError("synthetic_tower: n_max must be >= 2");
  auto tail = [&](int w) { return std::exp(-kappa_tail * (std::pow(w, gamma) - 1.0)); }; // P(h >= w)
  std::vector<int> h(static_cast<std::size_t>(n_max));
  std::vector<double> p(static_cast<std::size_t>(n_max));
  for (int w = 1; w <= n_max; ++w) {
    h[static_cast<std::size_t>(w - 1)] = w;
    if (w < n_max) {
      const double gap = kappa_tail * (std::pow(w + 1, gamma) - std::pow(w, gamma));
      p[static_cast<std::size_t>(w - 1)] = tail(w) * -std::expm1(-gap);
    } else {
      p[static_cast<std::size_t>(w - 1)] = tail(w);
    }
  }
  return TowerSpec(std::move(h), std::move(p), {}, tail(n_max + 1));
}

/// nu(w, l) = P_A(w) / E h, indexed by state index.
inline std::vector<double> stationary(const TowerSpec &spec) {
  std::vector<double> nu(static_cast<std::size_t>(spec.num_states()));
  for (int i = 0; i < spec.num_states(); ++i) nu[static_cast<std::size_t>(i)] = spec.prob(spec.state(i).w) / spec.mean_height();
  return nu;
}

/// Dense row-stochastic kernel P[i * |S| + j].
inline std::vector<double> transition_matrix(const TowerSpec &spec) {
  const int n = spec.num_states();
  std::vector<double> P(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const State s = spec.state(i);
    auto row = P.begin() + static_cast<std::ptrdiff_t>(i) * n;
    if (!spec.is_top(s)) {
      row[i + 1] = 1.0;
    } else {
      for (int e = 0; e < spec.num_letters(); ++e) row[spec.start_index(e)] += spec.prob(e);
    }
  }
  return P;
}

/// A simulated trajectory g_0..g_n together with the innovations eps_1..eps_n
/// that drove it (innovations[0] is unused). Every innovation is drawn, whether
/// or not the chain consumed it.
struct Path {
  std::vector<State> states;
  std::vector<int> innovations;
  std::size_t size() const { return states.size(); }
};

inline Path simulate(const TowerSpec &spec, std::size_t n, SeedSpec seed) {
  Rng rng(seed);
  Path path;
  path.states.reserve(n + 1);
  path.innovations.reserve(n + 1);
  path.states.push_back(spec.sample_stationary(rng));
  path.innovations.push_back(-1);
  for (std::size_t k = 0; k < n; ++k) {
    const int eps = spec.sample_letter(rng);
    path.innovations.push_back(eps);
    path.states.push_back(spec.step(path.states.back(), eps));
  }
  return path;
}

/// Two chains with independent stationary starts driven by one innovation
/// stream (g_0 and g*_0 are drawn first, then the shared innovations).
struct CoupledPaths {
  Path first;
  std::vector<State> second;
  long long meeting_time = -1; // -1 if the chains never met within the window
};

inline CoupledPaths coupled_paths(const TowerSpec &spec, std::size_t n, SeedSpec seed) {
  Rng rng(seed);
  CoupledPaths cp;
  cp.first.states.push_back(spec.sample_stationary(rng));
  cp.second.push_back(spec.sample_stationary(rng));
  cp.first.innovations.push_back(-1);
  for (std::size_t k = 0; k < n; ++k) {
    const int eps = spec.sample_letter(rng);
    cp.first.innovations.push_back(eps);
    cp.first.states.push_back(spec.step(cp.first.states.back(), eps));
    cp.second.push_back(spec.step(cp.second.back(), eps));
  }
  for (std::size_t k = 0; k <= n; ++k)
    if (cp.first.states[k] == cp.second[k]) {
      cp.meeting_time = static_cast<long long>(k);
      break;
    }
  return cp;
}

/// P(T >= n) for n = 0..n_max by evolving the joint law of the coupled pair
/// over S x S with the diagonal absorbing.
inline stats::TailCurve exact_meeting_tail(const TowerSpec &spec, int n_max, int max_states = 2000) {
  const int S = spec.num_states();
  if (S > max_states) {
    std::ostringstream os;
    os << "exact_meeting_tail: |S| = " << S << " exceeds " << max_states
       << " states; use simulate_meeting (Monte Carlo) instead";
    throw CapacityError(os.str());
  }
  if (n_max < 0) throw DomainError("exact_meeting_tail: n_max must be >= 0");
  const auto nu = stationary(spec);
  const auto SS = static_cast<std::size_t>(S);
  std::vector<double> cur(SS * SS, 0.0), nxt(SS * SS, 0.0);
  std::vector<char> top(SS);
  for (int i = 0; i < S; ++i) top[static_cast<std::size_t>(i)] = spec.is_top_index(i);
  double remaining = 0.0;
  for (std::size_t i = 0; i < SS; ++i)
    for (std::size_t j = 0; j < SS; ++j)
      if (i != j) {
        cur[i * SS + j] = nu[i] * nu[j];
        remaining += cur[i * SS + j];
      }
  stats::TailCurve curve;
  curve.push_back({0.0, 1.0, 0.0});
  if (n_max >= 1) curve.push_back({1.0, remaining, 0.0});

  std::vector<double> row_reg(SS), col_reg(SS);
  for (int n = 2; n <= n_max; ++n) {
    std::fill(nxt.begin(), nxt.end(), 0.0);
    std::fill(row_reg.begin(), row_reg.end(), 0.0);
    std::fill(col_reg.begin(), col_reg.end(), 0.0);
    for (std::size_t i = 0; i < SS; ++i) {
      const double *r = &cur[i * SS];
      if (!top[i]) {
        double *out = &nxt[(i + 1) * SS];
        for (std::size_t j = 0; j < SS; ++j) {
          const double m = r[j];
          if (m == 0.0) continue;
          if (!top[j])
            out[j + 1] += m;
          else
            row_reg[i + 1] += m; // second chain regenerates, first climbs to i+1
        }
      } else {
        for (std::size_t j = 0; j < SS; ++j) {
          const double m = r[j];
          if (m == 0.0 || top[j]) continue; // both at top: the chains meet
          col_reg[j + 1] += m;
        }
      }
    }
    for (int e = 0; e < spec.num_letters(); ++e) {
      const double pe = spec.prob(e);
      if (pe == 0.0) continue;
      const auto s0 = static_cast<std::size_t>(spec.start_index(e));
      for (std::size_t k = 0; k < SS; ++k) {
        if (col_reg[k] != 0.0) nxt[s0 * SS + k] += pe * col_reg[k];
        if (row_reg[k] != 0.0) nxt[k * SS + s0] += pe * row_reg[k];
      }
    }
    remaining = 0.0;
    for (std::size_t i = 0; i < SS; ++i) {
      nxt[i * SS + i] = 0.0;
      for (std::size_t j = 0; j < SS; ++j) remaining += nxt[i * SS + j];
    }
    std::swap(cur, nxt);
    curve.push_back({static_cast<double>(n), remaining, 0.0});
  }
  return curve;
}

/// P(T >= n) for n = 0..n_max through the residual times to the top level.
/// Between regenerations both chains climb in lockstep, so the pair only
/// needs attention when one of them is at its top: with the other chain d
/// steps below its own top, a fresh height h ends the pair at t + d + 1 if
/// h = d (both regenerate together onto the same letter), and otherwise the
/// next such event happens at t + min(h, d) with lag |h - d|. Cost is
/// O(n_max H^2) time and O(H^2) memory in the maximal height H, independent of
/// the alphabet size, which reaches far deeper tails than the dense pair
/// chain. Tail values are accumulated from the far end, so they keep full
/// relative precision down to the smallest normal doubles.
inline stats::TailCurve meeting_tail_residual(const TowerSpec &spec, int n_max, int max_height = 6000) {
  const int H = spec.max_height();
  if (H > max_height) {
    std::ostringstream os;
    os << "meeting_tail_residual: maximal height " << H << " exceeds " << max_height;
    throw CapacityError(os.str());
  }
  if (n_max < 0) throw DomainError("meeting_tail_residual: n_max must be >= 0");
  const double Eh = spec.mean_height();
  const auto HH = static_cast<std::size_t>(H);
  std::vector<double> ph(HH + 1, 0.0);       // P(h = k)
  std::vector<double> same_at(HH, 0.0);      // sum of nu(s)^2 over states with residual k
  for (int w = 0; w < spec.num_letters(); ++w) {
    ph[static_cast<std::size_t>(spec.height(w))] += spec.prob(w);
    const double v = spec.prob(w) / Eh;
    for (int k = 0; k < spec.height(w); ++k) same_at[static_cast<std::size_t>(k)] += v * v;
  }
  std::vector<double> resid(HH); // stationary residual law P(r = k) = P(h > k) / E h
  for (int k = 0; k < H; ++k) resid[static_cast<std::size_t>(k)] = spec.height_tail(k + 1) / Eh;

  const std::size_t horizon = static_cast<std::size_t>(n_max) + HH + 2;
  std::vector<double> meet(horizon + 1, 0.0); // meet[t] = P(T = t)
  for (double v : same_at) meet[0] += v;
  // ring of pending events: row t mod (H + 1), column d = lag of the other chain
  const std::size_t W = HH + 1;
  std::vector<double> E(W * (HH + 1), 0.0);
  auto row = [&](std::size_t t) { return &E[(t % W) * (HH + 1)]; };
  for (std::size_t a = 0; a < HH; ++a)
    for (std::size_t b = 0; b < HH; ++b) {
      const double m = resid[a] * resid[b];
      if (a == b) {
        meet[a + 1] += m - same_at[a]; // same residual, different states: both regenerate at a + 1
      } else {
        row(std::min(a, b))[a > b ? a - b : b - a] += m;
      }
    }
  for (std::size_t t = 0; t <= static_cast<std::size_t>(n_max); ++t) {
    double *e = row(t);
    for (std::size_t h = 1; h <= HH; ++h) {
      const double p = ph[h];
      if (p == 0.0) continue;
      meet[t + h + 1] += p * e[h];
      double *out = row(t + h);
      for (std::size_t d = h + 1; d <= HH; ++d) out[d - h] += p * e[d];
    }
    for (std::size_t d = 1; d < HH; ++d) {
      const double ed = e[d];
      if (ed == 0.0) continue;
      double *out = row(t + d);
      for (std::size_t j = 1; d + j <= HH; ++j) out[j] += ph[d + j] * ed;
    }
    std::fill(e, e + HH + 1, 0.0);
  }
  double acc = 0.0; // pending events all resolve after n_max
  for (double v : E) acc += v;
  std::vector<double> tail(static_cast<std::size_t>(n_max) + 1);
  for (std::size_t t = meet.size(); t-- > 0;) {
    acc += meet[t];
    if (t <= static_cast<std::size_t>(n_max)) tail[t] = acc;
  }
  stats::TailCurve curve;
  for (int n = 0; n <= n_max; ++n) curve.push_back({static_cast<double>(n), std::min(1.0, tail[n]), 0.0});
  return curve;
}

struct MeetingResult {
  stats::TailCurve curve;        // P(T >= n), n = 0..n_max, binomial standard errors
  std::vector<long long> counts; // counts[n] = #{T = n}, n < n_max; counts[n_max] = #{T >= n_max}
  long long replicas = 0;
};

/// Monte Carlo meeting-time tail from independent coupled pairs. Replica r
/// uses seed_stream(master, r); the innovation is drawn only on steps where
/// at least one chain is at its top level.
inline MeetingResult simulate_meeting(const TowerSpec &spec, long long replicas, int n_max,
                                      std::uint64_t master_seed, unsigned threads = 1) {
  if (replicas < 1) throw DomainError("simulate_meeting: replicas must be >= 1");
  if (n_max < 1) throw DomainError("simulate_meeting: n_max must be >= 1");
  std::vector<int> T(static_cast<std::size_t>(replicas));
  parallel_for(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
    Rng rng(seed_stream(master_seed, r));
    State a = spec.sample_stationary(rng);
    State b = spec.sample_stationary(rng);
    int t = 0;
    while (!(a == b) && t < n_max) {
      const bool ta = spec.is_top(a), tb = spec.is_top(b);
      const int eps = (ta || tb) ? spec.sample_letter(rng) : 0;
      a = spec.step(a, eps);
      b = spec.step(b, eps);
      ++t;
    }
    T[r] = t; // t == n_max means T >= n_max
  });
  MeetingResult res;
  res.replicas = replicas;
  res.counts.assign(static_cast<std::size_t>(n_max) + 1, 0);
  for (int t : T) ++res.counts[static_cast<std::size_t>(t)];
  long long ge = replicas;
  const double R = static_cast<double>(replicas);
  for (int n = 0; n <= n_max; ++n) {
    const double p = static_cast<double>(ge) / R;
    res.curve.push_back({static_cast<double>(n), p, std::sqrt(p * (1.0 - p) / R)});
    ge -= res.counts[static_cast<std::size_t>(n)];
  }
  return res;
}

/// Renewal bookkeeping along a trajectory. S_c is the set of top states,
/// S_0 the set of level-0 states.
struct RenewalStats {
  std::vector<long long> R;   // indices n >= 1 with g_n in S_c
  std::vector<long long> tau; // R_i - R_{i-1}, i >= 1
  std::vector<long long> s;   // s_l = #{k <= l : g_k in S_0}
  double mean_tau = 0.0;
  double kappa_renewal = 0.0; // 1 / (4 mean_tau)
  bool empty = true;          // fewer than two renewals observed
  bool g0_in_base = false;    // which branch of the s_l / S_c identity applies
  bool identity_holds = false;
};

/// Extracts renewal times and checks, for every l,
///   s_l = 1{g_0 in S_0} + #{0 <= i <= l-1 : g_i in S_c}.
inline RenewalStats renewal_stats(const TowerSpec &spec, std::span<const State> traj) {
  if (traj.empty()) throw DataError("renewal_stats: empty trajectory");
  RenewalStats st;
  st.g0_in_base = TowerSpec::in_base(traj[0]);
  long long s = 0, top_count = 0;
  st.identity_holds = true;
  st.s.reserve(traj.size());
  for (std::size_t l = 0; l < traj.size(); ++l) {
    if (TowerSpec::in_base(traj[l])) ++s;
    st.s.push_back(s);
    const long long expected = (st.g0_in_base ? 1 : 0) + top_count;
    if (expected != s) st.identity_holds = false;
    if (spec.is_top(traj[l])) {
      ++top_count;
      if (l >= 1) st.R.push_back(static_cast<long long>(l));
    }
  }
  for (std::size_t i = 1; i < st.R.size(); ++i) st.tau.push_back(st.R[i] - st.R[i - 1]);
  st.empty = st.tau.empty();
  if (!st.empty) {
    double sum = 0.0;
    for (long long t : st.tau) sum += static_cast<double>(t);
    st.mean_tau = sum / static_cast<double>(st.tau.size());
    st.kappa_renewal = 1.0 / (4.0 * st.mean_tau);
  }
  return st;
}

/// Monte Carlo estimate of E[theta^{s_l}] for l = 0..ell_max under the
/// stationary chain, with standard errors.
inline stats::TailCurve delta_decay(const TowerSpec &spec, double theta, int ell_max, long long replicas,
                                    std::uint64_t master_seed, unsigned threads = 1) {
  if (!(theta > 0.0 && theta < 1.0)) throw DomainError("delta_decay: theta must lie in ]0, 1[");
  if (ell_max < 0) throw DomainError("delta_decay: ell_max must be >= 0");
  if (replicas < 2) throw DomainError("delta_decay: replicas must be >= 2");
  const auto L = static_cast<std::size_t>(ell_max) + 1;
  std::vector<double> pw(L + 1);
  pw[0] = 1.0;
  for (std::size_t k = 1; k <= L; ++k) pw[k] = pw[k - 1] * theta;

  const auto R = static_cast<std::size_t>(replicas);
  const std::size_t chunks = (R + kReductionChunk - 1) / kReductionChunk;
  std::vector<std::vector<double>> sum(chunks, std::vector<double>(L, 0.0)), sq(chunks, std::vector<double>(L, 0.0));
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk, hi = std::min(R, lo + kReductionChunk);
    for (std::size_t r = lo; r < hi; ++r) {
      Rng rng(seed_stream(master_seed, r));
      State g = spec.sample_stationary(rng);
      std::size_t s = TowerSpec::in_base(g) ? 1 : 0;
      for (std::size_t l = 0; l < L; ++l) {
        if (l > 0) {
          g = spec.step(g, spec.is_top(g) ? spec.sample_letter(rng) : 0);
          if (TowerSpec::in_base(g)) ++s;
        }
        const double v = pw[s];
        sum[c][l] += v;
        sq[c][l] += v * v;
      }
    }
  });
  stats::TailCurve curve;
  const double n = static_cast<double>(R);
  for (std::size_t l = 0; l < L; ++l) {
    double a = 0.0, b = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
      a += sum[c][l];
      b += sq[c][l];
    }
    const double m = a / n;
    const double var = std::max(0.0, (b / n - m * m) * n / (n - 1.0));
    curve.push_back({static_cast<double>(l), m, std::sqrt(var / n)});
  }
  return curve;
}

/// E[theta^{s_l}] for l = 0..ell_max without sampling. Only the residual
/// time to the top matters for future base visits, so the weighted law is
/// carried on residuals 0..H-1: a chain at residual 0 regenerates onto a
/// fresh height with one extra factor theta.
inline stats::TailCurve exact_delta_decay(const TowerSpec &spec, double theta, int ell_max) {
  if (!(theta > 0.0 && theta < 1.0)) throw DomainError("exact_delta_decay: theta must lie in ]0, 1[");
  if (ell_max < 0) throw DomainError("exact_delta_decay: ell_max must be >= 0");
  const auto H = static_cast<std::size_t>(spec.max_height());
  std::vector<double> ph(H + 1, 0.0), v(H, 0.0), nv(H);
  for (int w = 0; w < spec.num_letters(); ++w) {
    const auto h = static_cast<std::size_t>(spec.height(w));
    ph[h] += spec.prob(w);
    const double nu = spec.prob(w) / spec.mean_height();
    for (std::size_t l = 0; l < h; ++l) v[h - 1 - l] += nu * (l == 0 ? theta : 1.0);
  }
  stats::TailCurve curve;
  for (int l = 0; l <= ell_max; ++l) {
    double sum = 0.0;
    for (std::size_t r = H; r-- > 0;) sum += v[r];
    curve.push_back({static_cast<double>(l), sum, 0.0});
    const double top = v[0];
    for (std::size_t r = 0; r + 1 < H; ++r) nv[r] = v[r + 1];
    nv[H - 1] = 0.0;
    for (std::size_t h = 1; h <= H; ++h) nv[h - 1] += top * theta * ph[h];
    v.swap(nv);
  }
  return curve;
}

/// d(a, b) = lambda^{-#{1 <= k <= n : g_k in S_0}} where n is the last index
/// at which the trajectories agree. Returns 0 when they agree on the whole
/// common window.
inline double separation_distance(std::span<const State> a, std::span<const State> b, double lambda) {
  if (!(lambda > 1.0)) throw DomainError("separation_distance: lambda must be > 1");
  if (a.empty() || b.empty()) throw DataError("separation_distance: empty trajectory");
  const std::size_t len = std::min(a.size(), b.size());
  long long count = 0;
  for (std::size_t k = 0; k < len; ++k) {
    if (!(a[k] == b[k])) return std::pow(lambda, -static_cast<double>(count));
    if (k >= 1 && TowerSpec::in_base(a[k])) ++count;
  }
  return 0.0;
}

} // namespace asiplab::tower

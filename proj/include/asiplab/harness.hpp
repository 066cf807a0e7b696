#pragma once

// Experiment orchestration: strict JSON configuration, one routine per
// experiment, deterministic replica-parallel execution and report assembly.
//
// Every experiment reads all of its configuration before doing any work, so
// a typo or an out-of-range value fails fast with exit code 2. Numeric and
// data failures during the run map to exit code 3, as do unwritable outputs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include "asiplab/block_scheme.hpp"
#include "asiplab/errors.hpp"
#include "asiplab/interval_maps.hpp"
#include "asiplab/observables.hpp"
#include "asiplab/parallel.hpp"
#include "asiplab/report.hpp"
#include "asiplab/rng.hpp"
#include "asiplab/stat_fit.hpp"
#include "asiplab/tower_chain.hpp"

namespace asiplab::harness {

using report::Json;
using report::Table;

inline constexpr const char *kVersion = "1.0.0";

/// Configuration rejected before any computation.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Stream ids reserved for auxiliary computations, far above any replica id.
inline constexpr std::uint64_t kCenteringStream = 1ULL << 62;
inline constexpr std::uint64_t kReferenceStream = 1ULL << 61;

// ---------------------------------------------------------------- config

/// A JSON object being validated. Every getter marks its key as known and
/// records the value actually used (defaults included), so `resolved()` is a
/// complete config that re-runs the experiment. `finish()` rejects any key
/// that no getter asked for.
class Section {
public:
  Section(const Json &in, std::string where) : in_(in), where_(std::move(where)), out_(Json::object()) {
    if (!in_.is_object()) fail("expected a JSON object");
  }

  bool has(const std::string &k) const { return in_.contains(k); }
  const Json &resolved() const { return out_; }
  const std::string &where() const { return where_; }

  [[noreturn]] void fail(const std::string &msg) const { throw ValidationError(where_ + ": " + msg); }
  void check(bool ok, const std::string &key, const std::string &msg) const {
    if (!ok) fail("'" + key + "' " + msg);
  }

  double real(const std::string &k, std::optional<double> def = {}) {
    const Json *v = find(k, def.has_value());
    double x = def.value_or(0.0);
    if (v) {
      if (!v->is_number()) fail("'" + k + "' must be a number");
      x = v->get<double>();
      if (!std::isfinite(x)) fail("'" + k + "' must be finite");
    }
    out_[k] = x;
    return x;
  }

  long long integer(const std::string &k, std::optional<long long> def = {}) {
    const Json *v = find(k, def.has_value());
    const long long x = v ? as_integer(*v, k) : *def;
    out_[k] = x;
    return x;
  }

  std::uint64_t seed(const std::string &k, std::uint64_t def) {
    const Json *v = find(k, true);
    std::uint64_t x = def;
    if (v) {
      if (v->is_number_unsigned()) x = v->get<std::uint64_t>();
      else if (v->is_number_integer() && v->get<long long>() >= 0) x = static_cast<std::uint64_t>(v->get<long long>());
      else fail("'" + k + "' must be an unsigned 64-bit integer");
    }
    out_[k] = x;
    return x;
  }

  std::string text(const std::string &k, std::optional<std::string> def = {}) {
    const Json *v = find(k, def.has_value());
    std::string x = def.value_or("");
    if (v) {
      if (!v->is_string()) fail("'" + k + "' must be a string");
      x = v->get<std::string>();
    }
    out_[k] = x;
    return x;
  }

  std::string choice(const std::string &k, const std::vector<std::string> &valid, std::optional<std::string> def = {}) {
    std::string x = text(k, std::move(def));
    if (std::find(valid.begin(), valid.end(), x) == valid.end()) fail("'" + k + "' = '" + x + "' is not one of " + join(valid));
    return x;
  }

  bool flag(const std::string &k, bool def) {
    const Json *v = find(k, true);
    bool x = def;
    if (v) {
      if (!v->is_boolean()) fail("'" + k + "' must be true or false");
      x = v->get<bool>();
    }
    out_[k] = x;
    return x;
  }

  std::vector<double> reals(const std::string &k, std::optional<std::vector<double>> def = {}) {
    const Json *v = find(k, def.has_value());
    std::vector<double> x = def.value_or(std::vector<double>{});
    if (v) {
      if (!v->is_array()) fail("'" + k + "' must be an array of numbers");
      x.clear();
      for (const auto &e : *v) {
        if (!e.is_number() || !std::isfinite(e.get<double>())) fail("'" + k + "' must contain finite numbers only");
        x.push_back(e.get<double>());
      }
    }
    out_[k] = x;
    return x;
  }

  std::vector<long long> integers(const std::string &k, std::optional<std::vector<long long>> def = {}) {
    const Json *v = find(k, def.has_value());
    std::vector<long long> x = def.value_or(std::vector<long long>{});
    if (v) {
      if (!v->is_array()) fail("'" + k + "' must be an array of integers");
      x.clear();
      for (const auto &e : *v) x.push_back(as_integer(e, k));
    }
    out_[k] = x;
    return x;
  }

  /// [lo, hi] with lo < hi.
  std::pair<double, double> range(const std::string &k, std::pair<double, double> def) {
    auto v = reals(k, std::vector<double>{def.first, def.second});
    if (v.size() != 2 || !(v[0] < v[1])) fail("'" + k + "' must be [lo, hi] with lo < hi");
    return {v[0], v[1]};
  }

  /// Validates a nested object with `f`; an absent optional key is treated
  /// as an empty object so that `f` fills in defaults.
  template <class F>
  void nested(const std::string &k, bool required, F &&f) {
    static const Json empty = Json::object();
    const Json *v = find(k, !required);
    Section child(v ? *v : empty, where_ + "." + k);
    f(child);
    child.finish();
    out_[k] = child.out_;
  }

  /// Root sections in validate-only mode stop the experiment here.
  struct ValidatedOnly {};
  void validate_only() { validate_only_ = true; }

  void finish() const {
    check_unknown();
    if (validate_only_) throw ValidatedOnly{};
  }

  void check_unknown() const {
    for (auto it = in_.begin(); it != in_.end(); ++it)
      if (!known_.count(it.key())) {
        std::vector<std::string> valid(known_.begin(), known_.end());
        fail("unknown key '" + it.key() + "' (valid keys here: " + join(valid) + ")");
      }
  }

  static std::string join(const std::vector<std::string> &v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s;
  }

private:
  const Json *find(const std::string &k, bool optional) {
    known_.insert(k);
    if (!in_.contains(k)) {
      if (!optional) fail("missing required key '" + k + "'");
      return nullptr;
    }
    return &in_.at(k);
  }

  long long as_integer(const Json &v, const std::string &k) const {
    if (v.is_number_integer()) {
      if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(LLONG_MAX))
        fail("'" + k + "' is out of range");
      return v.get<long long>();
    }
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<long long>(d);
    }
    fail("'" + k + "' must be an integer");
  }

  const Json &in_;
  std::string where_;
  Json out_;
  std::set<std::string> known_;
  bool validate_only_ = false;
};

// ---------------------------------------------------------------- systems

struct System {
  std::string kind;
  std::optional<maps::MapParams> map;
  std::optional<tower::TowerSpec> tower;
  double gamma = 1.0; // nominal tail exponent, used as the default block gamma
  bool is_map() const { return map.has_value(); }
};

inline const std::vector<std::string> kSystemKinds{"map", "synthetic_tower", "map_tower", "explicit_tower"};

inline System parse_system(Section &s) {
  System sys;
  sys.kind = s.choice("kind", kSystemKinds);
  auto gamma_key = [&] {
    const double g = s.real("gamma");
    s.check(g > 0.0 && g <= 1.0, "gamma", "must lie in ]0, 1]");
    return g;
  };
  if (sys.kind == "map") {
    sys.gamma = gamma_key();
    sys.map = maps::make_map(sys.gamma);
  } else if (sys.kind == "synthetic_tower") {
    sys.gamma = gamma_key();
    const double kt = s.real("kappa_tail");
    const auto n_max = s.integer("n_max", 200);
    s.check(kt > 0.0, "kappa_tail", "must be > 0");
    s.check(n_max >= 2 && n_max <= 20000, "n_max", "must lie in [2, 20000]");
    sys.tower = tower::synthetic_tower(sys.gamma, kt, static_cast<int>(n_max));
  } else if (sys.kind == "map_tower") {
    sys.gamma = gamma_key();
    const auto n_max = s.integer("n_max", 200);
    s.check(n_max >= 2 && n_max <= 20000, "n_max", "must lie in [2, 20000]");
    sys.tower = tower::tower_from_scheme(maps::branch_partition(maps::make_map(sys.gamma), static_cast<int>(n_max)));
  } else {
    const auto h = s.integers("heights");
    const auto p = s.reals("probs");
    s.check(!h.empty() && h.size() == p.size(), "heights", "must be non-empty and as long as 'probs'");
    std::vector<int> hi;
    for (auto v : h) {
      s.check(v >= 1 && v <= 100000, "heights", "entries must lie in [1, 100000]");
      hi.push_back(static_cast<int>(v));
    }
    for (double v : p) s.check(v >= 0.0, "probs", "entries must be >= 0");
    sys.tower = tower::TowerSpec(hi, p);
  }
  return sys;
}

struct Observable {
  std::optional<obs::MapObservable> map;
  std::optional<obs::TowerObservable> tower;
  std::string kind;
  double sup_norm() const { return map ? map->sup_norm : tower->sup_norm; }
};

inline Observable parse_observable(Section &s, const System &sys, std::uint64_t master) {
  Observable o;
  if (sys.is_map()) {
    o.kind = s.text("kind", "identity_centered");
    if (o.kind == "tower") s.fail("type error: observable kind 'tower' needs a tower system, got '" + sys.kind + "'");
    if (o.kind != "identity_centered" && o.kind != "coboundary")
      s.fail("'kind' = '" + o.kind + "' is not one of identity_centered, coboundary");
    const auto kind = o.kind == "coboundary" ? obs::MapObsKind::coboundary : obs::MapObsKind::identity_centered;
    long long mean_samples = 1'000'000;
    if (kind == obs::MapObsKind::identity_centered && sys.gamma != 1.0) {
      mean_samples = s.integer("mean_samples", 1'000'000);
      s.check(mean_samples >= 1024, "mean_samples", "must be >= 1024");
    }
    o.map = obs::make_map_observable(*sys.map, kind, seed_stream(master, kCenteringStream).stream_id,
                                     static_cast<std::size_t>(mean_samples));
  } else {
    o.kind = s.text("kind", "tower");
    if (o.kind != "tower")
      s.fail("type error: observable kind '" + o.kind + "' needs a map system, got '" + sys.kind + "'");
    const double theta = s.real("theta", 0.5);
    s.check(theta >= 0.0 && theta < 1.0, "theta", "must lie in [0, 1[");
    const auto rho = s.choice("rho", {"indicator_first", "parity", "inverse_label", "explicit"}, "parity");
    std::vector<double> values;
    if (rho == "explicit") values = s.reals("values");
    o.tower = obs::make_tower_observable(*sys.tower, theta, rho, values);
  }
  return o;
}

inline const tower::TowerSpec &need_tower(const Section &s, const System &sys) {
  if (!sys.tower) s.fail("this experiment needs a tower system (synthetic_tower, map_tower, explicit_tower), got '" +
                         sys.kind + "'");
  return *sys.tower;
}

inline const maps::MapParams &need_map(const Section &s, const System &sys) {
  if (!sys.map) s.fail("this experiment needs a map system, got '" + sys.kind + "'");
  return *sys.map;
}

// ---------------------------------------------------------------- sampling

/// X_0..X_{n-1} of one replica.
inline std::vector<double> sample_series(const System &sys, const Observable &o, std::size_t n, SeedSpec seed) {
  if (sys.is_map()) return obs::birkhoff_series(*sys.map, *o.map, n, obs::MapStart{std::nullopt, seed, 1000}).X;
  return obs::birkhoff_series(*sys.tower, *o.tower, n, seed).series.X;
}

/// Independent replicas, replica b on seed_stream(master, offset + b).
inline std::vector<std::vector<double>> sample_batches(const System &sys, const Observable &o, std::size_t n,
                                                       std::size_t batches, std::uint64_t master,
                                                       std::uint64_t offset, unsigned threads) {
  std::vector<std::vector<double>> out(batches);
  parallel_for(batches, threads, [&](std::size_t b) { out[b] = sample_series(sys, o, n, seed_stream(master, offset + b)); });
  return out;
}

/// Block sums of one replica. Map systems have no tower representation of
/// the windowed terms, so there X~ is the plain term X_k. `S_out` receives
/// S[k] = X_1 + ... + X_k.
inline blocks::BlockSums replica_block_sums(const blocks::BlockSchedule &s, const System &sys, const Observable &o,
                                            SeedSpec seed, std::vector<double> *S_out, bool with_bar) {
  if (!sys.is_map()) return blocks::tower_block_sums(s, *sys.tower, *o.tower, seed, S_out, with_bar);
  const auto X = sample_series(sys, o, static_cast<std::size_t>(s.n) + 1, seed);
  blocks::Providers p;
  p.xtilde = [&](int, long long k) { return X[static_cast<std::size_t>(k)]; };
  p.plain = p.xtilde;
  auto out = blocks::block_sums(s, p);
  if (S_out) {
    S_out->assign(X.size(), 0.0);
    for (std::size_t k = 1; k < X.size(); ++k) (*S_out)[k] = (*S_out)[k - 1] + X[k];
  }
  return out;
}

struct ReferenceC2 {
  std::size_t length = 262144;
  std::size_t batches = 64;
  int max_lag = 512;
};

inline ReferenceC2 parse_reference(Section &s) {
  ReferenceC2 r;
  const auto len = s.integer("length", 262144);
  const auto b = s.integer("batches", 64);
  const auto lag = s.integer("max_lag", 512);
  s.check(b >= 2 && b <= 100000, "batches", "must lie in [2, 100000]");
  s.check(lag >= 4, "max_lag", "must be >= 4");
  s.check(len > lag + 1 && len <= 100'000'000, "length", "must exceed max_lag + 1 and be <= 1e8");
  r.length = static_cast<std::size_t>(len);
  r.batches = static_cast<std::size_t>(b);
  r.max_lag = static_cast<int>(lag);
  return r;
}

inline obs::C2Result reference_c2(const System &sys, const Observable &o, const ReferenceC2 &r, std::uint64_t master,
                                  unsigned threads) {
  const auto batches = sample_batches(sys, o, r.length, r.batches, master, kReferenceStream, threads);
  return obs::c2_from_covariance(obs::covariance(batches, r.max_lag));
}

inline Json c2_json(const obs::C2Result &r) {
  Json j{{"method", obs::to_string(r.method)}, {"c2", report::num(r.c2)}, {"stderr", report::num(r.stderr)}};
  if (r.method == obs::C2Method::covariance_series) {
    j["cutoff_lag"] = r.cutoff_lag;
    j["tail_uncertainty"] = report::num(r.tail_uncertainty);
  } else {
    j["n_grid"] = r.n_grid;
    j["v_n"] = report::nums(r.v_n);
    j["v_n_stderr"] = report::nums(r.v_n_stderr);
    j["slope_b"] = report::num(r.slope_b);
    j["fit_from"] = r.fit_from;
  }
  return j;
}

// ---------------------------------------------------------------- experiments

/// What an experiment routine fills in.
struct Run {
  Run(Section &c, std::uint64_t seed, unsigned t) : cfg(c), master_seed(seed), threads(t) {}
  Section &cfg;
  std::uint64_t master_seed;
  unsigned threads;
  Table csv;
  Json results = Json::object();
  Json fitted = Json::object();
  Json warnings = Json::array();
  std::uint64_t streams = 0; // replica streams consumed
};

struct BlockParams {
  long long n = 0;
  double gamma = 1.0;
  double kappa = 1.0;
  std::optional<double> delta_hat;
};

inline BlockParams parse_blocks(Section &s, long long n_def, double gamma_def) {
  BlockParams b;
  b.n = s.integer("n", n_def);
  b.gamma = s.real("gamma_block", gamma_def);
  b.kappa = s.real("kappa_block", 1.0);
  if (s.has("delta_hat")) b.delta_hat = s.real("delta_hat");
  s.check(b.n >= 2 && b.n <= blocks::pow3(38), "n", "must lie in [2, 3^38]");
  s.check(b.gamma > 0.0 && b.gamma <= 1.0, "gamma_block", "must lie in ]0, 1]");
  s.check(b.kappa > 0.0, "kappa_block", "must be > 0");
  if (b.delta_hat) s.check(*b.delta_hat > 0.0, "delta_hat", "must be > 0");
  return b;
}

inline blocks::BlockSchedule make_schedule(Run &run, const BlockParams &b) {
  auto s = blocks::schedule(b.n, b.gamma, b.kappa, b.delta_hat);
  for (const auto &w : s.warnings) run.warnings.push_back(w);
  if (s.degenerate) run.warnings.push_back("degenerate schedule: b_n < K0, no level carries blocks");
  return s;
}

inline Json schedule_json(const blocks::BlockSchedule &s) {
  Json j{{"n", s.n},          {"gamma", s.gamma}, {"kappa_block", s.kappa}, {"alpha", s.alpha},
         {"b_n", s.b_n},      {"ell0", s.ell0},   {"K0", s.K0},             {"tau_n", s.tau_n},
         {"degenerate", s.degenerate}};
  std::vector<long long> m(s.m.begin() + 1, s.m.end()), q(s.q.begin() + 1, s.q.end());
  j["m"] = m; // level 1..b_n
  j["q"] = q;
  j["sum_m"] = s.sum_m(s.n);
  j["warnings"] = s.warnings;
  return j;
}

inline void exp_map_tails(Run &run) {
  auto &c = run.cfg;
  System sys;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  const auto &p = need_map(c, sys);
  const auto n_max = c.integer("n_max", 500);
  c.check(n_max >= 5 && n_max <= 1'000'000, "n_max", "must lie in [5, 1e6]");
  const auto fr = c.range("fit_range", {std::min<double>(20.0, static_cast<double>(n_max) / 4), static_cast<double>(n_max)});
  c.finish();

  const auto orbit = maps::u_orbit(p, 1.0, static_cast<int>(n_max));
  stats::TailCurve curve;
  run.csv = Table{{"n", "p", "stderr"}, {}};
  for (long long n = 0; n <= n_max; ++n) {
    const double m = std::exp(-orbit.u[static_cast<std::size_t>(n)]);
    curve.push_back({static_cast<double>(n), m, 0.0});
    run.csv.row(n, m, 0.0);
  }
  const auto fit = stats::stretched_exp_fit(curve, fr.first, fr.second);
  const auto ub = maps::u_bounds(p, static_cast<int>(n_max));
  run.results["gamma"] = p.gamma;
  run.results["beta"] = p.beta;
  run.results["c"] = p.c;
  run.results["mass_at_n_max"] = report::num(curve.back().p);
  run.results["mass_unnormalized_at_n_max"] = report::num(0.5 * curve.back().p);
  run.results["u_n_max"] = orbit.u.back();
  run.results["tail_fit"] = report::to_json(fit);
  run.fitted["delta1"] = report::num(ub.delta1);
  run.fitted["delta2"] = report::num(ub.delta2);
  run.fitted["eta1"] = report::num(ub.eta1);
  run.fitted["eta2"] = report::num(ub.eta2);
  run.fitted["gamma_hat"] = report::num(fit.gamma_hat);
  run.fitted["kappa_hat"] = report::num(fit.kappa_hat);
  if (fit.dropped > 0) run.warnings.push_back(std::to_string(fit.dropped) + " points with p outside ]0,1[ dropped from the fit");
}

inline void exp_map_verify(Run &run) {
  auto &c = run.cfg;
  System sys;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  const auto &p = need_map(c, sys);
  const auto n_max = c.integer("n_max", 200);
  const auto pairs = c.integer("pairs_per_branch", 10000);
  const auto ref = c.integer("distortion_reference_n", std::min<long long>(50, n_max));
  c.check(n_max >= 2 && n_max <= 5000, "n_max", "must lie in [2, 5000]");
  c.check(pairs >= 2 && pairs <= 10'000'000, "pairs_per_branch", "must lie in [2, 1e7]");
  c.check(ref >= 1 && ref <= n_max, "distortion_reference_n", "must lie in [1, n_max]");
  c.finish();

  const auto scheme = maps::branch_partition(p, static_cast<int>(n_max));
  const auto gm = maps::verify_gm(p, scheme, static_cast<int>(pairs), run.master_seed);
  run.streams = 1;
  run.csv = Table{{"n", "x_lo", "x_hi", "length"}, {}};
  for (const auto &b : scheme.branches) run.csv.row(b.n, b.x_lo, b.x_hi, b.mass);
  const double d_ref = gm.max_distortion_upto(static_cast<int>(ref));
  run.results["min_expansion"] = report::num(gm.min_expansion);
  run.results["expansion_per_branch"] = report::nums(gm.expansion_per_branch);
  run.results["distortion_C"] = report::num(gm.distortion_C);
  run.results["distortion_upto_reference"] = report::num(d_ref);
  run.results["distortion_ratio"] = report::num(d_ref > 0.0 ? gm.distortion_C / d_ref : 0.0);
  run.results["per_n_distortion"] = report::nums(gm.per_n_distortion);
  run.results["residual_mass"] = report::num(scheme.residual_mass);
  run.results["samples_used"] = gm.samples_used;
  const auto ub = maps::u_bounds(p, static_cast<int>(std::max<long long>(n_max, 2)));
  run.fitted["delta1"] = report::num(ub.delta1);
  run.fitted["delta2"] = report::num(ub.delta2);
  run.fitted["eta1"] = report::num(ub.eta1);
  run.fitted["eta2"] = report::num(ub.eta2);
}

inline void exp_tower_meeting(Run &run) {
  auto &c = run.cfg;
  System sys;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  const auto &spec = need_tower(c, sys);
  const auto replicas = c.integer("replicas", 100000);
  const auto n_max = c.integer("n_max", 60);
  const auto exact = c.choice("exact", {"auto", "pair_chain", "residual", "none"}, "auto");
  const auto fr = c.range("fit_range", {std::max(2.0, static_cast<double>(n_max) / 4), static_cast<double>(n_max)});
  c.check(replicas >= 0 && replicas <= 100'000'000, "replicas", "must lie in [0, 1e8] (0 = exact curve only)");
  c.check(n_max >= 3 && n_max <= 100000, "n_max", "must lie in [3, 100000]");
  c.finish();

  std::string method = exact;
  if (method == "auto") method = spec.max_height() <= 6000 ? "residual" : (spec.num_states() <= 2000 ? "pair_chain" : "none");
  if (replicas == 0 && method == "none") c.fail("'replicas' = 0 needs an exact method");
  std::optional<stats::TailCurve> ex;
  if (method == "pair_chain") ex = tower::exact_meeting_tail(spec, static_cast<int>(n_max));
  if (method == "residual") ex = tower::meeting_tail_residual(spec, static_cast<int>(n_max));

  run.results["exact_method"] = method;
  run.results["mean_height"] = spec.mean_height();
  run.results["truncated_mass"] = report::num(spec.truncated_mass());
  if (replicas > 0) {
    const auto mc = tower::simulate_meeting(spec, replicas, static_cast<int>(n_max), run.master_seed, run.threads);
    run.streams = static_cast<std::uint64_t>(replicas);
    run.csv = report::tail_curve_table(mc.curve);
    const auto fit = stats::stretched_exp_fit(mc.curve, fr.first, fr.second);
    run.results["monte_carlo_fit"] = report::to_json(fit);
    run.fitted["gamma_hat"] = report::num(fit.gamma_hat);
    run.fitted["kappa_hat"] = report::num(fit.kappa_hat);
    if (ex) {
      Json bad = Json::array();
      long long ge = replicas;
      for (long long n = 0; n <= n_max; ++n) {
        if (!stats::binomial_consistent(ge, replicas, (*ex)[static_cast<std::size_t>(n)].p)) bad.push_back(n);
        ge -= mc.counts[static_cast<std::size_t>(n)];
      }
      run.results["binomial_99_outside"] = bad;
    }
  } else {
    run.csv = report::tail_curve_table(*ex);
  }
  if (ex) {
    std::vector<double> p;
    for (const auto &pt : *ex) p.push_back(pt.p);
    run.results["exact_p"] = report::nums(p);
    const auto fit = stats::stretched_exp_fit(*ex, fr.first, fr.second);
    run.results["exact_fit"] = report::to_json(fit);
    run.fitted["gamma_hat_exact"] = report::num(fit.gamma_hat);
    run.fitted["kappa_hat_exact"] = report::num(fit.kappa_hat);
  }
}

inline void exp_delta_decay(Run &run) {
  auto &c = run.cfg;
  System sys;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  const auto &spec = need_tower(c, sys);
  const double theta = c.real("theta", 0.5);
  const auto ell_max = c.integer("ell_max", 64);
  const auto replicas = c.integer("replicas", 100000);
  const bool exact = c.flag("exact", true);
  const auto fr = c.range("fit_range", {std::max(2.0, static_cast<double>(ell_max) / 4), static_cast<double>(ell_max)});
  c.check(theta > 0.0 && theta < 1.0, "theta", "must lie in ]0, 1[");
  c.check(ell_max >= 3 && ell_max <= 100000, "ell_max", "must lie in [3, 100000]");
  c.check(replicas == 0 || (replicas >= 2 && replicas <= 100'000'000), "replicas", "must be 0 or lie in [2, 1e8]");
  if (replicas == 0 && !exact) c.fail("'replicas' = 0 needs 'exact' = true");
  c.finish();

  if (replicas > 0) {
    const auto mc = tower::delta_decay(spec, theta, static_cast<int>(ell_max), replicas, run.master_seed, run.threads);
    run.streams = static_cast<std::uint64_t>(replicas);
    run.csv = report::tail_curve_table(mc);
    const auto fit = stats::stretched_exp_fit(mc, fr.first, fr.second);
    run.results["monte_carlo_fit"] = report::to_json(fit);
    run.fitted["gamma_hat"] = report::num(fit.gamma_hat);
    run.fitted["delta_hat"] = report::num(fit.kappa_hat);
  }
  if (exact) {
    const auto ex = tower::exact_delta_decay(spec, theta, static_cast<int>(ell_max));
    if (replicas == 0) run.csv = report::tail_curve_table(ex);
    std::vector<double> p;
    for (const auto &pt : ex) p.push_back(pt.p);
    run.results["exact_p"] = report::nums(p);
    const auto fit = stats::stretched_exp_fit(ex, fr.first, fr.second);
    run.results["exact_fit"] = report::to_json(fit);
    run.fitted["gamma_hat_exact"] = report::num(fit.gamma_hat);
    run.fitted["delta_hat_exact"] = report::num(fit.kappa_hat);
  }
}

struct SeriesParams {
  System sys;
  Observable o;
  std::size_t length = 0, batches = 0;
};

inline SeriesParams parse_series(Run &run, long long len_def, long long batches_def) {
  auto &c = run.cfg;
  SeriesParams sp;
  c.nested("system", true, [&](Section &s) { sp.sys = parse_system(s); });
  c.nested("observable", false, [&](Section &s) { sp.o = parse_observable(s, sp.sys, run.master_seed); });
  const auto len = c.integer("length", len_def);
  const auto b = c.integer("batches", batches_def);
  c.check(len >= 16 && len <= 100'000'000, "length", "must lie in [16, 1e8]");
  c.check(b >= 2 && b <= 100000, "batches", "must lie in [2, 100000]");
  sp.length = static_cast<std::size_t>(len);
  sp.batches = static_cast<std::size_t>(b);
  return sp;
}

inline Json observable_json(const Observable &o) {
  if (o.map) return Json{{"kind", o.kind}, {"center", o.map->center}, {"center_stderr", o.map->center_stderr},
                         {"sup_norm", o.map->sup_norm}};
  const auto &t = *o.tower;
  return Json{{"kind", "tower"},           {"theta", t.theta},       {"rho", t.rho_kind},
              {"center", t.center},        {"center_stderr", t.center_stderr}, {"sup_norm", t.sup_norm},
              {"J_trunc", t.J_trunc},      {"residual_bound", report::num(t.residual_bound)}};
}

inline void exp_covariance(Run &run) {
  auto sp = parse_series(run, 65536, 64);
  auto &c = run.cfg;
  const auto max_lag = c.integer("max_lag", 16);
  c.check(max_lag >= 0 && static_cast<std::size_t>(max_lag) + 1 < sp.length, "max_lag", "must lie in [0, length - 2]");
  c.finish();

  const auto batches = sample_batches(sp.sys, sp.o, sp.length, sp.batches, run.master_seed, 0, run.threads);
  run.streams = sp.batches;
  const auto cv = obs::covariance(batches, static_cast<int>(max_lag));
  run.csv = Table{{"lag", "cov", "stderr"}, {}};
  for (std::size_t i = 0; i < cv.cov.size(); ++i) run.csv.row(i, cv.cov[i], cv.stderr[i]);
  run.results["observable"] = observable_json(sp.o);
  run.results["mean"] = report::num(cv.mean);
  run.results["batches"] = cv.batches;
  if (sp.sys.is_map() && sp.sys.gamma == 1.0 && sp.o.kind == "identity_centered") {
    // Cov(x - 1/2, 2^i x mod 1 - 1/2) = 2^{-i} / 12 under Lebesgue measure
    Json z = Json::array(), ref = Json::array();
    for (std::size_t i = 0; i < cv.cov.size(); ++i) {
      const double r = std::ldexp(1.0 / 12.0, -static_cast<int>(i));
      ref.push_back(r);
      z.push_back(report::num(cv.stderr[i] > 0 ? (cv.cov[i] - r) / cv.stderr[i] : 0.0));
    }
    run.results["analytic_cov"] = ref;
    run.results["analytic_z"] = z;
  }
  try {
    const auto c2 = obs::c2_from_covariance(cv);
    run.results["c2"] = c2_json(c2);
    run.fitted["c2_hat"] = report::num(c2.c2);
  } catch (const NumericError &e) {
    run.warnings.push_back(std::string("c2 not estimated: ") + e.what());
  }
}

inline void exp_variance(Run &run) {
  auto sp = parse_series(run, 262144, 64);
  auto &c = run.cfg;
  const auto max_lag = c.integer("max_lag", 64);
  c.check(max_lag >= 4 && static_cast<std::size_t>(max_lag) + 1 < sp.length, "max_lag", "must lie in [4, length - 2]");
  c.finish();

  const auto batches = sample_batches(sp.sys, sp.o, sp.length, sp.batches, run.master_seed, 0, run.threads);
  run.streams = sp.batches;
  const auto a = obs::c2_estimate(batches, obs::C2Method::normalized_second_moment);
  const auto b = obs::c2_estimate(batches, obs::C2Method::covariance_series, static_cast<int>(max_lag));
  run.csv = Table{{"method", "c2", "stderr", "n_grid"}, {}};
  for (const auto *r : {&a, &b}) {
    std::string grid;
    for (std::size_t i = 0; i < r->n_grid.size(); ++i) grid += (i ? ";" : "") + std::to_string(r->n_grid[i]);
    run.csv.row(obs::to_string(r->method), r->c2, r->stderr, grid);
  }
  run.results["observable"] = observable_json(sp.o);
  run.results["normalized_second_moment"] = c2_json(a);
  run.results["covariance_series"] = c2_json(b);
  const double se = std::hypot(a.stderr, b.stderr);
  run.results["agreement_z"] = report::num(se > 0 ? std::abs(a.c2 - b.c2) / se : 0.0);
  run.fitted["c2_hat"] = report::num(b.c2);
  run.fitted["c2_hat_second_moment"] = report::num(a.c2);
}

inline void exp_blocks_schedule(Run &run) {
  auto &c = run.cfg;
  const auto bp = parse_blocks(c, blocks::pow3(12), 1.0);
  c.finish();
  const auto s = make_schedule(run, bp);
  run.csv = Table{{"level", "m", "q", "blocks", "k_first", "k_last"}, {}};
  for (int l = 1; l <= s.b_n; ++l) {
    const long long nb = s.blocks_in(l, s.n);
    const long long lo = nb > 0 ? s.window(l, 1).k_lo : 0, hi = nb > 0 ? s.window(l, nb).k_hi : 0;
    run.csv.row(l, s.m_at(l), s.q_at(l), nb, lo, hi);
  }
  run.results["schedule"] = schedule_json(s);
  run.results["grid"] = blocks::checkpoint_grid(s);
  if (bp.delta_hat) run.results["suggested_kappa_block"] = blocks::suggested_kappa(bp.gamma, *bp.delta_hat);
}

inline void exp_blocks_gap(Run &run) {
  auto &c = run.cfg;
  System sys;
  Observable o;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  c.nested("observable", false, [&](Section &s) { o = parse_observable(s, sys, run.master_seed); });
  const auto bp = parse_blocks(c, blocks::pow3(9), sys.gamma);
  const auto replicas = c.integer("replicas", 4);
  c.check(replicas >= 1 && replicas <= 100000, "replicas", "must lie in [1, 100000]");
  c.finish();

  const auto s = make_schedule(run, bp);
  const double sup = o.sup_norm();
  std::vector<blocks::GapReport> reps(static_cast<std::size_t>(replicas));
  parallel_for(reps.size(), run.threads, [&](std::size_t r) {
    reps[r] = blocks::gap_bound_check(s, replica_block_sums(s, sys, o, seed_stream(run.master_seed, r), nullptr, false), sup);
  });
  run.streams = reps.size();
  run.csv = Table{{"replica", "i", "s_tilde", "s_diamond", "gap", "uncovered", "bound", "holds", "sum_m", "ratio"}, {}};
  bool all = true;
  Json violations = Json::array();
  double ratio_max = 0.0, tight = 0.0;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    all = all && reps[r].all_hold;
    ratio_max = std::max(ratio_max, reps[r].ratio_max);
    for (const auto &v : reps[r].violations)
      if (violations.size() < 50) violations.push_back("replica " + std::to_string(r) + ": " + v);
    for (const auto &row : reps[r].rows) {
      run.csv.row(r, row.i, row.s_tilde, row.s_diamond, row.gap, row.uncovered, row.bound, row.holds, row.sum_m, row.ratio);
      if (row.bound > 0) tight = std::max(tight, row.gap / row.bound);
    }
  }
  run.results["schedule"] = schedule_json(s);
  run.results["observable"] = observable_json(o);
  run.results["windowed_terms"] = sys.is_map() ? "plain (map system)" : "two-sided conditional expectation";
  run.results["sup_norm"] = sup;
  run.results["all_hold"] = all;
  run.results["max_gap_over_bound"] = tight;
  run.results["ratio_max"] = ratio_max;
  run.results["violations"] = violations;
}

inline void exp_block_variance(Run &run) {
  auto &c = run.cfg;
  System sys;
  Observable o;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  const auto &spec = need_tower(c, sys);
  c.nested("observable", false, [&](Section &s) { o = parse_observable(s, sys, run.master_seed); });
  const auto bp = parse_blocks(c, blocks::pow3(10), sys.gamma);
  const auto replicas = c.integer("replicas", 200);
  const auto positions = c.integer("positions", 4096);
  std::vector<long long> ells_in = c.integers("levels", std::vector<long long>{});
  ReferenceC2 ref;
  c.nested("reference", false, [&](Section &s) { ref = parse_reference(s); });
  c.check(replicas >= 2 && replicas <= 1'000'000, "replicas", "must lie in [2, 1e6]");
  c.check(positions >= 1 && positions <= 10'000'000, "positions", "must lie in [1, 1e7]");
  c.finish();

  const auto s = make_schedule(run, bp);
  std::vector<int> ells;
  if (ells_in.empty())
    for (int l = s.ell0; l <= s.b_n; ++l) ells.push_back(l);
  for (auto l : ells_in) {
    c.check(l >= s.ell0 && l <= s.b_n, "levels",
            "entries must lie in [ell0, b_n] = [" + std::to_string(s.ell0) + ", " + std::to_string(s.b_n) + "]");
    ells.push_back(static_cast<int>(l));
  }
  const auto pts = blocks::block_variance_rate(s, *o.tower, spec, ells, replicas, run.master_seed, positions, run.threads);
  run.streams = static_cast<std::uint64_t>(replicas);
  const auto c2 = reference_c2(sys, o, ref, run.master_seed, run.threads);
  run.csv = Table{{"level", "m", "nu", "stderr", "rel_gap"}, {}};
  Json rows = Json::array();
  std::vector<double> gaps;
  for (const auto &p : pts) {
    const double g = std::abs(p.nu - c2.c2) / c2.c2;
    gaps.push_back(g);
    run.csv.row(p.ell, p.m, p.nu, p.stderr, g);
    rows.push_back(Json{{"level", p.ell}, {"m", p.m}, {"nu", p.nu}, {"stderr", p.stderr}, {"rel_gap", g}});
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < gaps.size(); ++i) decreasing = decreasing && gaps[i] <= gaps[i - 1];
  run.results["schedule"] = schedule_json(s);
  run.results["observable"] = observable_json(o);
  run.results["nu"] = rows;
  run.results["reference_c2"] = c2_json(c2);
  run.results["gap_nonincreasing"] = decreasing;
  run.results["final_rel_gap"] = gaps.empty() ? Json(nullptr) : Json(gaps.back());
  run.fitted["c2_hat"] = report::num(c2.c2);
}

inline void exp_asip_probe(Run &run) {
  auto &c = run.cfg;
  System sys;
  Observable o;
  c.nested("system", true, [&](Section &s) { sys = parse_system(s); });
  c.nested("observable", false, [&](Section &s) { o = parse_observable(s, sys, run.master_seed); });
  const auto bp = parse_blocks(c, blocks::pow3(12), sys.gamma);
  const auto replicas = c.integer("replicas", 500);
  std::optional<double> c2_given;
  if (c.has("c2")) c2_given = c.real("c2");
  ReferenceC2 ref;
  if (!c2_given) c.nested("reference", false, [&](Section &s) { ref = parse_reference(s); });
  c.check(replicas >= 100 && replicas <= 100000, "replicas", "must lie in [100, 100000]");
  if (c2_given) c.check(*c2_given > 0.0, "c2", "must be > 0");
  c.check(bp.n >= 16, "n", "must be >= 16");
  c.finish();

  const auto s = make_schedule(run, bp);
  if (s.degenerate) c.fail("the probe needs a non-degenerate schedule (b_n >= K0); increase 'n' or lower 'kappa_block'");
  double c2 = 0.0;
  if (c2_given) {
    c2 = *c2_given;
    run.results["c2_source"] = "config";
  } else {
    const auto r = reference_c2(sys, o, ref, run.master_seed, run.threads);
    c2 = r.c2;
    run.results["c2_source"] = "covariance_series";
    run.results["reference_c2"] = c2_json(r);
  }
  if (!(c2 > 0.0)) throw NumericError("asip_probe: estimated c2 = " + report::fmt(c2) + " is not positive");

  const auto R = static_cast<std::size_t>(replicas);
  std::vector<blocks::BlockSums> reps(R);
  std::vector<double> Sn(R), lil(R);
  parallel_for(R, run.threads, [&](std::size_t r) {
    std::vector<double> S;
    reps[r] = replica_block_sums(s, sys, o, seed_stream(run.master_seed, r), &S, false);
    Sn[r] = S[static_cast<std::size_t>(s.n)] / std::sqrt(static_cast<double>(s.n));
    lil[r] = stats::lil_ratio(S, c2, static_cast<std::size_t>(s.n));
  });
  run.streams = R;
  const auto pr = blocks::asip_probe(s, reps, c2);
  const auto ks = stats::ks_normal_test(Sn, 0.0, std::sqrt(c2));

  run.csv = Table{{"n", "D_median", "D_q90", "fit_D"}, {}};
  for (std::size_t g = 0; g < pr.grid.size(); ++g) {
    const double n = static_cast<double>(pr.grid[g]);
    const double fitted = n >= pr.fit_from ? pr.C * std::pow(std::log(n), pr.a) : std::nan("");
    run.csv.row(pr.grid[g], pr.D_median[g], pr.D_q90[g], fitted);
  }
  run.results["heuristic"] = pr.heuristic;
  run.results["schedule"] = schedule_json(s);
  run.results["observable"] = observable_json(o);
  run.results["windowed_terms"] = sys.is_map() ? "plain (map system)" : "two-sided conditional expectation";
  run.results["c2"] = c2;
  run.results["a"] = pr.a;
  run.results["a_ci"] = Json::array({pr.a_lo, pr.a_hi});
  run.results["C"] = report::num(pr.C);
  run.results["fit_from"] = pr.fit_from;
  run.results["fit"] = report::to_json(pr.fit);
  run.results["alpha"] = s.alpha;
  run.results["a_bound"] = s.alpha + 1.0;
  run.results["a_within_bound"] = pr.a <= s.alpha + 1.0;
  run.results["notes"] = pr.notes;
  run.results["clt_ks"] = Json{{"statistic", ks.statistic}, {"p_value", ks.p_value}, {"samples", R}};
  run.results["lil_ratio"] = Json{{"median", stats::median(lil)},
                                  {"q10", stats::quantile(lil, 0.1)},
                                  {"q90", stats::quantile(lil, 0.9)}};
  run.fitted["c2_hat"] = c2;
  run.fitted["a_hat"] = pr.a;
}

// ---------------------------------------------------------------- registry

struct Experiment {
  std::string name;
  std::string summary;
  std::function<void(Run &)> fn;
};

inline const std::vector<Experiment> &experiments() {
  static const std::vector<Experiment> list{
      {"map_tails", "exact return-time tail m(tau > n) of the interval map, stretched-exponential fit", exp_map_tails},
      {"map_verify", "inducing-scheme branches and sampled Gibbs-Markov certificate", exp_map_verify},
      {"tower_meeting", "meeting-time tail of two coupled tower chains, Monte Carlo and exact", exp_tower_meeting},
      {"delta_decay", "decay of E[theta^{s_l}] on a tower, Monte Carlo and exact", exp_delta_decay},
      {"covariance", "lagged covariances of an observable with standard errors", exp_covariance},
      {"variance", "asymptotic variance c^2 by two estimators", exp_variance},
      {"blocks_schedule", "block schedule: levels, block lengths and counts", exp_blocks_schedule},
      {"blocks_gap", "deterministic gap bound between windowed sums and block sums", exp_blocks_gap},
      {"block_variance", "per-level block variance rate nu_l against c^2", exp_block_variance},
      {"asip_probe", "heuristic Gaussianization probe with CLT and LIL diagnostics", exp_asip_probe},
  };
  return list;
}

inline std::vector<std::string> experiment_names() {
  std::vector<std::string> v;
  for (const auto &e : experiments()) v.push_back(e.name);
  return v;
}

struct Report {
  std::string experiment;
  Table csv;
  Json json;
};

inline Json versions() {
  return Json{{"asiplab", kVersion},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"boost", BOOST_LIB_VERSION},
              {"compiler", __VERSION__}};
}

/// Runs one experiment. `threads` only affects speed: replicas are seeded by
/// id and reduced in id order.
inline Report run_experiment(const std::string &name, const Json &config, unsigned threads = 1,
                             bool validate_only = false) {
  const auto &list = experiments();
  const auto it = std::find_if(list.begin(), list.end(), [&](const Experiment &e) { return e.name == name; });
  if (it == list.end())
    throw ValidationError("unknown experiment '" + name + "'; valid experiments: " + Section::join(experiment_names()));
  if (threads < 1) throw ValidationError("--threads must be >= 1");
  Section root(config, "config");
  if (validate_only) root.validate_only();
  if (root.has("experiment")) {
    const auto named = root.text("experiment");
    if (named != name) root.fail("'experiment' = '" + named + "' does not match the requested experiment '" + name + "'");
  } else {
    root.text("experiment", name);
  }
  Run run(root, root.seed("master_seed", 1), threads);
  try {
    it->fn(run);
    root.finish();
  } catch (const Section::ValidatedOnly &) {
    return Report{name, {}, Json{{"experiment", name}, {"config", root.resolved()}}};
  }

  Report rep;
  rep.experiment = name;
  rep.csv = std::move(run.csv);
  rep.json["experiment"] = name;
  rep.json["versions"] = versions();
  rep.json["seeds"] = Json{{"master_seed", run.master_seed},
                           {"derivation", "stream_id(r) = mix64(mix64(master_seed) + (r + 1) * 0x9e3779b97f4a7c15), "
                                          "mix64 = SplitMix64 finalizer, engine = mt19937_64"},
                           {"replica_streams", run.streams},
                           {"first_stream_id", seed_stream(run.master_seed, 0).stream_id}};
  rep.json["config"] = root.resolved();
  rep.json["results"] = std::move(run.results);
  rep.json["fitted_constants"] = std::move(run.fitted);
  rep.json["warnings"] = std::move(run.warnings);
  return rep;
}

/// Writes <experiment>.csv and <experiment>.json into `dir`.
inline void emit_report(const Report &r, const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("emit_report: cannot create directory '" + dir.string() + "': " + ec.message());
  report::write_file(dir / (r.experiment + ".csv"), r.csv.csv());
  report::write_file(dir / (r.experiment + ".json"), r.json.dump(2) + "\n");
}

inline Json load_config(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read config file '" + path.string() + "'");
  try {
    return Json::parse(is);
  } catch (const Json::parse_error &e) {
    throw ValidationError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Exit status for an exception escaping an experiment: 2 for anything the
/// caller can fix in the configuration, 3 for numeric, data and I/O failures.
inline int exit_code_for(const std::exception_ptr &e) {
  try {
    std::rethrow_exception(e);
  } catch (const ValidationError &) {
    return 2;
  } catch (const DomainError &) {
    return 2;
  } catch (const ConstructionError &) {
    return 2;
  } catch (const Json::exception &) {
    return 2;
  } catch (...) {
    return 3;
  }
}

/// Loads, runs and emits; prints errors to `err` and returns the exit code.
inline int run_and_emit(const std::string &name, const std::filesystem::path &config_path, unsigned threads,
                        const std::filesystem::path &out_dir, std::ostream &err) {
  try {
    const auto rep = run_experiment(name, load_config(config_path), threads);
    emit_report(rep, out_dir);
    return 0;
  } catch (const std::exception &e) {
    const int code = exit_code_for(std::current_exception());
    err << "asip-lab: " << name << " (config '" << config_path.string() << "'): " << e.what() << "\n";
    return code;
  }
}

} // namespace asiplab::harness

// Lyapunov-exponent estimates from time series of moment or quenched
// estimates, and the probes comparing exponents across conductance fields.
// Every verdict is a pure function of the estimates it is given.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pam/environments.hpp"
#include "pam/feynman_kac.hpp"
#include "pam/lattice.hpp"
#include "pam/stats.hpp"
#include "pam/text.hpp"

namespace pam {

struct LyapunovEstimate {
  /// 0 for quenched exponents.
  int p = 1;
  std::vector<double> t_grid;
  std::vector<double> exponents;
  std::vector<double> std_errors;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::optional<double> extrapolated;
  std::string method = "last_two_point_affine";
  bool inconclusive = false;
  bool diverging = false;
};

struct EstimateOptions {
  double level = 0.95;
  /// Bootstrap resamples; 0 uses normal intervals from the standard errors.
  std::size_t resamples = 200;
  std::uint64_t seed = 0;
};

namespace detail {

/// Limit of t * exponent(t) affine in t through the last two grid points,
/// and the inconclusive flag (neither of the last two intervals contains it).
inline void extrapolate(LyapunovEstimate& e) {
  const std::size_t n = e.t_grid.size();
  if (n < 2) return;
  const double t1 = e.t_grid[n - 2], t2 = e.t_grid[n - 1];
  const double a1 = t1 * e.exponents[n - 2], a2 = t2 * e.exponents[n - 1];
  const double lim = (a2 - a1) / (t2 - t1);
  e.extrapolated = lim;
  auto inside = [&](std::size_t i) { return e.ci_low[i] <= lim && lim <= e.ci_high[i]; };
  e.inconclusive = !(inside(n - 1) || inside(n - 2));
}

inline void require_grid(std::span<const double> t) {
  if (t.size() < 3) throw std::invalid_argument("exponent estimation needs at least 3 grid times");
  for (double x : t)
    if (!(x > 0.0)) throw std::invalid_argument("exponent grid times must be > 0");
}

inline double normal_quantile(double level) {
  // Two-sided normal quantile via boost's chi-square with one degree.
  return std::sqrt(chi2_critical(1.0, 1.0 - level));
}

}  // namespace detail

/// From explicit log values and their standard errors (normal intervals).
inline LyapunovEstimate estimate_exponent_from_values(int p, std::span<const double> t,
                                                      std::span<const double> log_values,
                                                      std::span<const double> log_std_errors,
                                                      double level = 0.95) {
  detail::require_grid(t);
  if (log_values.size() != t.size() || log_std_errors.size() != t.size())
    throw std::invalid_argument("series length mismatch");
  LyapunovEstimate e;
  e.p = p;
  e.method = "last_two_point_affine";
  const double z = detail::normal_quantile(level);
  const double scale_p = p > 0 ? static_cast<double>(p) : 1.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(log_values[i]))
      throw std::invalid_argument("non-finite log estimate at t = " + format_double(t[i]));
    e.t_grid.push_back(t[i]);
    const double ex = log_values[i] / (scale_p * t[i]);
    const double se = log_std_errors[i] / (scale_p * t[i]);
    e.exponents.push_back(ex);
    e.std_errors.push_back(se);
    e.ci_low.push_back(ex - z * se);
    e.ci_high.push_back(ex + z * se);
  }
  detail::extrapolate(e);
  return e;
}

/// Annealed: exponent (1/pt) log mean exp(samples), bootstrap intervals.
inline LyapunovEstimate estimate_exponent(const MomentSeries& series,
                                          const EstimateOptions& opt = {}) {
  std::vector<double> t, lv, se;
  for (const auto& m : series.estimates) {
    t.push_back(m.t);
    lv.push_back(m.log_value);
    se.push_back(m.log_std_error);
  }
  const int p = series.estimates.empty() ? 1 : series.estimates.front().p;
  LyapunovEstimate e = estimate_exponent_from_values(p, t, lv, se, opt.level);
  e.diverging = !series.estimates.empty() && series.estimates.front().diverging;
  if (opt.resamples > 0) {
    for (std::size_t g = 0; g < t.size(); ++g) {
      const double scale = 1.0 / (p * t[g]);
      auto [lo, hi] = bootstrap_interval(
          series.log_samples[g],
          [&](std::span<const double> s) { return log_mean_exp(s).log_mean * scale; },
          opt.resamples, opt.level, opt.seed + g);
      e.ci_low[g] = lo;
      e.ci_high[g] = hi;
    }
    detail::extrapolate(e);
  }
  return e;
}

/// Quenched: exponent = mean over realizations of (1/t) log u(0,t).
inline LyapunovEstimate estimate_exponent(const QuenchedSeries& series,
                                          const EstimateOptions& opt = {}) {
  detail::require_grid(series.t_grid);
  LyapunovEstimate e;
  e.p = 0;
  const double z = detail::normal_quantile(opt.level);
  for (std::size_t g = 0; g < series.t_grid.size(); ++g) {
    const MeanSe ms = mean_and_se(series.exponents[g]);
    e.t_grid.push_back(series.t_grid[g]);
    e.exponents.push_back(ms.mean);
    e.std_errors.push_back(ms.std_error);
    if (opt.resamples > 0) {
      auto [lo, hi] = bootstrap_interval(
          series.exponents[g], [](std::span<const double> s) { return mean_and_se(s).mean; },
          opt.resamples, opt.level, opt.seed + g);
      e.ci_low.push_back(lo);
      e.ci_high.push_back(hi);
    } else {
      e.ci_low.push_back(ms.mean - z * ms.std_error);
      e.ci_high.push_back(ms.mean + z * ms.std_error);
    }
  }
  detail::extrapolate(e);
  return e;
}

// CSV round trip (exact decimals) -------------------------------------------

inline void write_estimate_csv(std::ostream& os, const LyapunovEstimate& e) {
  os << "p,t,exponent,std_error,ci_low,ci_high,diverging\n";
  for (std::size_t i = 0; i < e.t_grid.size(); ++i) {
    os << e.p << ',' << format_double(e.t_grid[i]) << ',' << format_double(e.exponents[i]) << ','
       << format_double(e.std_errors[i]) << ',' << format_double(e.ci_low[i]) << ','
       << format_double(e.ci_high[i]) << ',' << (e.diverging ? 1 : 0) << '\n';
  }
}

inline LyapunovEstimate read_estimate_csv(std::istream& is) {
  LyapunovEstimate e;
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty estimate CSV");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw std::invalid_argument("bad estimate row: " + line);
    e.p = static_cast<int>(parse_int(f[0]));
    e.t_grid.push_back(parse_double(f[1]));
    e.exponents.push_back(parse_double(f[2]));
    e.std_errors.push_back(parse_double(f[3]));
    e.ci_low.push_back(parse_double(f[4]));
    e.ci_high.push_back(parse_double(f[5]));
    e.diverging = parse_int(f[6]) != 0;
  }
  detail::extrapolate(e);
  return e;
}

inline nlohmann::json estimate_json(const LyapunovEstimate& e) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < e.t_grid.size(); ++i)
    rows.push_back({{"t", e.t_grid[i]},
                    {"exponent", e.exponents[i]},
                    {"std_error", e.std_errors[i]},
                    {"ci", {e.ci_low[i], e.ci_high[i]}}});
  nlohmann::json j = {{"p", e.p}, {"table", rows}, {"method", e.method},
                      {"inconclusive", e.inconclusive}, {"diverging", e.diverging}};
  j["extrapolated"] = e.extrapolated ? nlohmann::json(*e.extrapolated) : nlohmann::json(nullptr);
  return j;
}

// Probes ---------------------------------------------------------------------

enum class Statement { annealed_sup, quenched_lower, decorated_gap, init_invariance };
enum class Verdict { pass, fail, inconclusive, both_diverging };

inline const char* to_string(Statement s) {
  switch (s) {
    case Statement::annealed_sup: return "annealed_sup";
    case Statement::quenched_lower: return "quenched_lower";
    case Statement::decorated_gap: return "decorated_gap";
    default: return "init_invariance";
  }
}

inline Statement parse_statement(std::string_view s) {
  if (s == "annealed_sup") return Statement::annealed_sup;
  if (s == "quenched_lower") return Statement::quenched_lower;
  if (s == "decorated_gap") return Statement::decorated_gap;
  if (s == "init_invariance") return Statement::init_invariance;
  throw std::invalid_argument("unknown statement '" + std::string(s) + "'");
}

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
    default: return "both_diverging";
  }
}

using NamedEstimates = std::map<std::string, LyapunovEstimate>;

struct Decision {
  Verdict verdict = Verdict::inconclusive;
  nlohmann::json margins = nlohmann::json::object();
};

struct ProbeReport {
  Statement statement = Statement::annealed_sup;
  nlohmann::json inputs = nlohmann::json::object();
  NamedEstimates estimates;
  Decision decision;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [name, e] : estimates) table[name] = estimate_json(e);
    return {{"statement", to_string(statement)},
            {"inputs", inputs},
            {"per_t", table},
            {"verdict", to_string(decision.verdict)},
            {"margins", decision.margins},
            {"seeds", {{"master", seed}}}};
  }
};

inline constexpr double kProbeSigmas = 2.0;

namespace detail {

inline const LyapunovEstimate& need(const NamedEstimates& in, const std::string& key) {
  auto it = in.find(key);
  if (it == in.end()) throw std::invalid_argument("probe input '" + key + "' missing");
  return it->second;
}

inline double combined_se(double a, double b) { return std::sqrt(a * a + b * b); }

}  // namespace detail

/// Keys: field, const_low, const_high, confined. Pass iff at the largest t
/// the field exponent is within `sigmas` combined SE of the larger constant
/// and the confined exponent never exceeds the field exponent by more than
/// `sigmas` combined SE. The confined trend (non-decreasing up to `sigmas`
/// SE) is reported as a margin.
inline Decision decide_annealed_sup(const NamedEstimates& in, double sigmas = kProbeSigmas) {
  const auto& f = detail::need(in, "field");
  const auto& lo = detail::need(in, "const_low");
  const auto& hi = detail::need(in, "const_high");
  const auto& c = detail::need(in, "confined");
  const std::size_t last = f.t_grid.size() - 1;
  Decision d;
  const bool low_is_max = lo.exponents[last] >= hi.exponents[last];
  const auto& mx = low_is_max ? lo : hi;
  const double gap = f.exponents[last] - mx.exponents[last];
  const double tol = sigmas * detail::combined_se(f.std_errors[last], mx.std_errors[last]);
  double worst_lower = -std::numeric_limits<double>::infinity();
  bool lower_ok = true;
  for (std::size_t i = 0; i < f.t_grid.size(); ++i) {
    const double excess = c.exponents[i] - f.exponents[i] -
                          sigmas * detail::combined_se(c.std_errors[i], f.std_errors[i]);
    worst_lower = std::max(worst_lower, excess);
    if (excess > 0.0) lower_ok = false;
  }
  double worst_trend = -std::numeric_limits<double>::infinity();
  bool trend_ok = true;
  for (std::size_t i = 1; i < c.t_grid.size(); ++i) {
    const double drop = c.exponents[i - 1] - c.exponents[i] -
                        sigmas * detail::combined_se(c.std_errors[i - 1], c.std_errors[i]);
    worst_trend = std::max(worst_trend, drop);
    if (drop > 0.0) trend_ok = false;
  }
  d.margins = {{"max_side", low_is_max ? "const_low" : "const_high"},
               {"field_minus_max", gap},
               {"tolerance", tol},
               {"confined_excess_over_field", worst_lower},
               {"confined_lower_bound_ok", lower_ok},
               {"confined_max_drop", worst_trend},
               {"confined_non_decreasing", trend_ok}};
  const bool diverging = f.diverging && mx.diverging;
  if (diverging) {
    bool grows = true;
    for (const auto* e : {&f, &mx})
      for (std::size_t i = 1; i < e->exponents.size(); ++i)
        if (!(e->exponents[i] > e->exponents[i - 1])) grows = false;
    d.margins["running_exponents_increasing"] = grows;
    d.verdict = grows ? Verdict::both_diverging : Verdict::inconclusive;
    return d;
  }
  d.verdict = (std::abs(gap) <= tol && lower_ok) ? Verdict::pass : Verdict::fail;
  return d;
}

/// Keys: field and one entry per constant (any other key). Pass iff the
/// field exponent at the largest t is >= the largest constant exponent
/// minus `sigmas` combined SE.
inline Decision decide_quenched_lower(const NamedEstimates& in, double sigmas = kProbeSigmas) {
  const auto& f = detail::need(in, "field");
  const std::size_t last = f.t_grid.size() - 1;
  std::string best;
  double best_value = -std::numeric_limits<double>::infinity();
  double best_se = 0.0;
  for (const auto& [name, e] : in) {
    if (name == "field") continue;
    if (e.exponents[last] > best_value) {
      best = name;
      best_value = e.exponents[last];
      best_se = e.std_errors[last];
    }
  }
  if (best.empty()) throw std::invalid_argument("quenched probe needs constant-field inputs");
  Decision d;
  const double margin = f.exponents[last] - best_value +
                        sigmas * detail::combined_se(f.std_errors[last], best_se);
  d.margins = {{"max_constant", best},
               {"field_minus_max", f.exponents[last] - best_value},
               {"margin", margin}};
  d.verdict = margin >= 0.0 ? Verdict::pass : Verdict::fail;
  return d;
}

/// Keys: simple_k1, simple_k2 (equal to the monochrome decorated fields),
/// simple_mid and decorated. Inconclusive unless the simple exponents are
/// non-monotone on {k1, mid, k2}; pass iff the decorated exponent exceeds
/// both endpoints by more than `sigmas` combined SE at the largest t.
inline Decision decide_decorated_gap(const NamedEstimates& in, double sigmas = kProbeSigmas) {
  const auto& k1 = detail::need(in, "simple_k1");
  const auto& k2 = detail::need(in, "simple_k2");
  const auto& mid = detail::need(in, "simple_mid");
  const auto& dec = detail::need(in, "decorated");
  const std::size_t last = dec.t_grid.size() - 1;
  const auto& top = k1.exponents[last] >= k2.exponents[last] ? k1 : k2;
  Decision d;
  const bool non_monotone = mid.exponents[last] > top.exponents[last];
  const double gap = dec.exponents[last] - top.exponents[last];
  const double tol = sigmas * detail::combined_se(dec.std_errors[last], top.std_errors[last]);
  d.margins = {{"non_monotone", non_monotone},
               {"decorated_minus_max_endpoint", gap},
               {"tolerance", tol},
               {"decorated_minus_mid", dec.exponents[last] - mid.exponents[last]}};
  if (!non_monotone)
    d.verdict = Verdict::inconclusive;
  else
    d.verdict = gap > tol ? Verdict::pass : Verdict::fail;
  return d;
}

/// Keys: ones, delta0. Pass iff the gap ones - delta0 is positive and
/// strictly decreasing along the grid.
inline Decision decide_init_invariance(const NamedEstimates& in) {
  const auto& a = detail::need(in, "ones");
  const auto& b = detail::need(in, "delta0");
  Decision d;
  nlohmann::json gaps = nlohmann::json::array();
  bool ok = true;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.t_grid.size(); ++i) {
    const double g = a.exponents[i] - b.exponents[i];
    gaps.push_back({{"t", a.t_grid[i]},
                    {"gap", g},
                    {"std_error", detail::combined_se(a.std_errors[i], b.std_errors[i])}});
    if (!(g < prev)) ok = false;
    prev = g;
  }
  d.margins = {{"gaps", gaps}, {"strictly_decreasing", ok}};
  d.verdict = ok ? Verdict::pass : Verdict::fail;
  return d;
}

inline Decision decide(Statement s, const NamedEstimates& in, double sigmas = kProbeSigmas) {
  switch (s) {
    case Statement::annealed_sup: return decide_annealed_sup(in, sigmas);
    case Statement::quenched_lower: return decide_quenched_lower(in, sigmas);
    case Statement::decorated_gap: return decide_decorated_gap(in, sigmas);
    default: return decide_init_invariance(in);
  }
}

// Probe drivers ---------------------------------------------------------------

using AnnealedDynamics = std::variant<WhiteNoise, FiniteWalks, InfiniteWalkOptions>;

inline std::string dynamics_name(const AnnealedDynamics& d) {
  switch (d.index()) {
    case 0: return "white_noise";
    case 1: return "finite_rw";
    default: return "infinite_rw";
  }
}

inline MomentSeries run_moments(const ConductanceField& field, const AnnealedDynamics& dyn,
                                const MomentOptions& opt) {
  if (std::holds_alternative<WhiteNoise>(dyn)) return moment_white_noise(field, opt);
  if (const auto* f = std::get_if<FiniteWalks>(&dyn))
    return moment_finite_rw(field, f->n, f->rho, opt);
  return moment_infinite_rw(field, std::get<InfiniteWalkOptions>(dyn), opt);
}

struct AnnealedProbeConfig {
  AnnealedDynamics dynamics = WhiteNoise{};
  int p = 2;
  std::vector<double> t_grid{4.0, 8.0, 16.0};
  std::size_t replicas = 10000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Pockets of this radius must exist at both ends of the support.
  int pocket_radius = 2;
  double pocket_tolerance = 1e-9;
  EstimateOptions estimate;
};

/// Field exponent against the constant fields at the ends of the support,
/// plus the origin-pinned estimate confined to the slowest-conductance pocket.
inline ProbeReport probe_annealed_sup(const ConductanceField& field,
                                       const AnnealedProbeConfig& cfg) {
  const double lo = field.lower(), hi = field.upper();
  const auto pocket_lo = verify_clustering(field, lo, cfg.pocket_tolerance, cfg.pocket_radius);
  const auto pocket_hi = verify_clustering(field, hi, cfg.pocket_tolerance, cfg.pocket_radius);
  if (!pocket_lo || !pocket_hi)
    throw std::invalid_argument("annealed probe: field lacks pockets at both support ends");
  const LatticeBox pocket = pocket_lo->pocket_box();
  if (!pocket.contains(field.box().point(origin_site(field.box()))))
    throw std::invalid_argument("annealed probe: the slow pocket must contain the origin");

  MomentOptions mo;
  mo.p = cfg.p;
  mo.t_grid = cfg.t_grid;
  mo.replicas = cfg.replicas;
  mo.seed = cfg.seed;
  mo.threads = cfg.threads;
  ProbeReport probe;
  probe.statement = Statement::annealed_sup;
  probe.seed = cfg.seed;
  probe.inputs = {{"dynamics", dynamics_name(cfg.dynamics)},
                  {"p", cfg.p},
                  {"t_grid", cfg.t_grid},
                  {"replicas", cfg.replicas},
                  {"support", field.support()},
                  {"pocket_center", pocket_lo->pocket_center},
                  {"pocket_radius", cfg.pocket_radius}};
  probe.estimates["field"] = estimate_exponent(run_moments(field, cfg.dynamics, mo), cfg.estimate);
  probe.estimates["const_low"] =
      estimate_exponent(run_moments(constant_field(field.box(), lo), cfg.dynamics, mo), cfg.estimate);
  probe.estimates["const_high"] =
      estimate_exponent(run_moments(constant_field(field.box(), hi), cfg.dynamics, mo), cfg.estimate);
  MomentOptions co = mo;
  co.pocket = pocket;
  co.initial = InitialCondition::delta0;
  probe.estimates["confined"] =
      estimate_exponent(run_moments(field, cfg.dynamics, co), cfg.estimate);
  probe.decision = decide_annealed_sup(probe.estimates);
  return probe;
}

struct QuenchedProbeConfig {
  std::vector<double> t_grid{4.0, 8.0, 16.0};
  double dt = 0.01;
  std::size_t replicas = 64;
  unsigned threads = 1;
  EstimateOptions estimate;
};

/// Field exponent against every constant field in the support, all driven
/// by the same environment realizations; delta_0 initial condition.
inline ProbeReport probe_quenched_lower(const ConductanceField& field, const Environment& env,
                                         const QuenchedProbeConfig& cfg) {
  QuenchedRunOptions ro;
  ro.dt = cfg.dt;
  ro.replicas = cfg.replicas;
  ro.threads = cfg.threads;
  ro.initial = InitialCondition::delta0;
  ProbeReport probe;
  probe.statement = Statement::quenched_lower;
  probe.seed = env.config().seed;
  probe.inputs = {{"environment", kind_name(env.config().kind)},
                  {"t_grid", cfg.t_grid},
                  {"dt", cfg.dt},
                  {"replicas", cfg.replicas},
                  {"support", field.support()}};
  probe.estimates["field"] =
      estimate_exponent(quenched_exponent_estimate(field, env, cfg.t_grid, ro), cfg.estimate);
  for (double k : field.support()) {
    probe.estimates["const_" + format_double(k)] = estimate_exponent(
        quenched_exponent_estimate(constant_field(field.box(), k), env, cfg.t_grid, ro),
        cfg.estimate);
  }
  probe.decision = decide_quenched_lower(probe.estimates);
  return probe;
}

/// Decorated constant field (k1/2, k2/2) against the monochrome decorated
/// fields (k1/2, k1/2) and (k2/2, k2/2), which equal the simple fields k1
/// and k2. The simple fields k1/2, k2/2 and (k1+k2)/2 are reported too.
inline ProbeReport probe_decorated_gap(double k1, double k2, const LatticeBox& box,
                                        const Environment& env, const QuenchedProbeConfig& cfg) {
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw std::invalid_argument("kappa values must be > 0");
  QuenchedRunOptions ro;
  ro.dt = cfg.dt;
  ro.replicas = cfg.replicas;
  ro.threads = cfg.threads;
  ProbeReport probe;
  probe.statement = Statement::decorated_gap;
  probe.seed = env.config().seed;
  probe.inputs = {{"kappa1", k1}, {"kappa2", k2}, {"environment", kind_name(env.config().kind)},
                  {"t_grid", cfg.t_grid}, {"dt", cfg.dt}, {"replicas", cfg.replicas}};
  auto simple = [&](double k) {
    return estimate_exponent(quenched_exponent_estimate(constant_field(box, k), env, cfg.t_grid, ro),
                             cfg.estimate);
  };
  probe.estimates["simple_k1"] = simple(k1);
  probe.estimates["simple_k2"] = simple(k2);
  probe.estimates["simple_half_k1"] = simple(0.5 * k1);
  probe.estimates["simple_half_k2"] = simple(0.5 * k2);
  probe.estimates["simple_mid"] = simple(0.5 * (k1 + k2));
  probe.estimates["decorated"] = estimate_exponent(
      quenched_exponent_estimate(DecoratedConductanceField::constant(box, 0.5 * k1, 0.5 * k2), env,
                                 cfg.t_grid, ro),
      cfg.estimate);
  probe.decision = decide_decorated_gap(probe.estimates);
  return probe;
}

/// delta_0 against constant-one initial conditions with shared walks.
inline ProbeReport probe_init_invariance(const ConductanceField& field,
                                          const AnnealedDynamics& dyn,
                                          const MomentOptions& base,
                                          const EstimateOptions& est = {}) {
  ProbeReport probe;
  probe.statement = Statement::init_invariance;
  probe.seed = base.seed;
  probe.inputs = {{"dynamics", dynamics_name(dyn)}, {"p", base.p},
                  {"t_grid", base.t_grid},         {"replicas", base.replicas}};
  MomentOptions a = base;
  a.initial = InitialCondition::ones;
  MomentOptions b = base;
  b.initial = InitialCondition::delta0;
  probe.estimates["ones"] = estimate_exponent(run_moments(field, dyn, a), est);
  probe.estimates["delta0"] = estimate_exponent(run_moments(field, dyn, b), est);
  probe.decision = decide_init_invariance(probe.estimates);
  return probe;
}

}  // namespace pam

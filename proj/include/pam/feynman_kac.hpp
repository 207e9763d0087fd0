// Feynman-Kac estimators for the parabolic Anderson model
//   d/dt u = Delta^K u + xi u,
// annealed moment representations driven by conductance walks, the
// w-equation for the Poisson system of walks, the lattice Green function,
// and a deterministic solver for u in a frozen environment.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pam/environments.hpp"
#include "pam/lattice.hpp"
#include "pam/parallel.hpp"
#include "pam/rng.hpp"
#include "pam/stats.hpp"
#include "pam/text.hpp"
#include "pam/walker.hpp"

namespace pam {

enum class InitialCondition { ones, delta0 };

inline const char* to_string(InitialCondition ic) {
  return ic == InitialCondition::ones ? "ones" : "delta0";
}

inline InitialCondition parse_initial(std::string_view s) {
  if (s == "ones") return InitialCondition::ones;
  if (s == "delta0") return InitialCondition::delta0;
  throw std::invalid_argument("unknown initial condition '" + std::string(s) + "'");
}

/// Thrown when a time step violates a stability requirement.
class StabilityError : public std::invalid_argument {
 public:
  StabilityError(const std::string& what, double suggested_dt)
      : std::invalid_argument(what), suggested_dt_(suggested_dt) {}
  double suggested_dt() const { return suggested_dt_; }

 private:
  double suggested_dt_;
};

struct MomentOptions {
  int p = 2;
  /// Increasing times; one estimate per entry from a single set of paths.
  std::vector<double> t_grid;
  std::size_t replicas = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Multiplies the integrand by 1{every walk stays in the pocket on [0,t]}.
  std::optional<LatticeBox> pocket;
  InitialCondition initial = InitialCondition::ones;
  /// Start site of the walks; defaults to the lattice origin.
  std::optional<std::size_t> start;
};

struct MomentEstimate {
  int p = 1;
  double t = 0.0;
  /// log of the estimate of E[u(0,t)^p]; -inf when every replica vanished.
  double log_value = kNegInf;
  /// Standard error of log_value (delta method).
  double log_std_error = 0.0;
  std::size_t replicas = 0;
  std::optional<int> confined_radius;
  InitialCondition initial = InitialCondition::ones;
  bool diverging = false;
};

struct MomentSeries {
  std::vector<MomentEstimate> estimates;
  /// log of the integrand per (grid time, replica).
  std::vector<std::vector<double>> log_samples;
};

namespace detail {

inline void check_grid(std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("time grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0) || !std::isfinite(grid[i]))
      throw std::invalid_argument("time grid entries must be finite and >= 0");
    if (i > 0 && !(grid[i] > grid[i - 1]))
      throw std::invalid_argument("time grid must be strictly increasing");
  }
}

inline std::size_t start_site(const LatticeBox& box, const MomentOptions& opt) {
  const std::size_t s = opt.start ? *opt.start : origin_site(box);
  if (s >= box.size()) throw std::out_of_range("start site outside the box");
  return s;
}

/// Merged sweep over several piecewise-constant paths. seg(t0, t1, pos) is
/// called on every interval where all positions are constant; mark(g, pos)
/// at each grid time (positions are the left limits there).
template <class Seg, class Mark>
void sweep_paths(std::span<const WalkPath* const> paths, std::span<const double> grid,
                 std::vector<std::size_t>& pos, Seg&& seg, Mark&& mark) {
  const std::size_t m = paths.size();
  std::vector<std::size_t> cursor(m, 0);
  pos.resize(m);
  for (std::size_t i = 0; i < m; ++i) pos[i] = paths[i]->start;
  double t = 0.0;
  std::size_t g = 0;
  constexpr double inf = std::numeric_limits<double>::infinity();
  while (g < grid.size()) {
    double next_jump = inf;
    for (std::size_t i = 0; i < m; ++i)
      if (cursor[i] < paths[i]->jumps()) next_jump = std::min(next_jump, paths[i]->jump_times[cursor[i]]);
    if (grid[g] <= next_jump) {
      if (grid[g] > t) seg(t, grid[g], pos);
      t = std::max(t, grid[g]);
      mark(g, pos);
      ++g;
      continue;
    }
    if (next_jump > t) seg(t, next_jump, pos);
    t = next_jump;
    for (std::size_t i = 0; i < m; ++i) {
      if (cursor[i] < paths[i]->jumps() && paths[i]->jump_times[cursor[i]] == next_jump) {
        ++cursor[i];
        pos[i] = paths[i]->positions[cursor[i]];
      }
    }
  }
}

/// Indicator and initial-condition factors, in log form, at a grid time.
struct EndFactor {
  const std::vector<char>* mask = nullptr;
  InitialCondition initial = InitialCondition::ones;
  std::size_t origin = 0;
  std::size_t walks = 0;  // number of leading positions subject to the factors

  bool alive(std::span<const std::size_t> pos) const {
    for (std::size_t i = 0; i < walks; ++i) {
      if (mask && !(*mask)[pos[i]]) return false;
      if (initial == InitialCondition::delta0 && pos[i] != origin) return false;
    }
    return true;
  }
};

inline MomentSeries assemble(const MomentOptions& opt,
                             std::vector<std::vector<double>> per_replica,
                             bool diverging) {
  MomentSeries out;
  const std::size_t nt = opt.t_grid.size();
  out.log_samples.assign(nt, std::vector<double>(per_replica.size()));
  for (std::size_t r = 0; r < per_replica.size(); ++r)
    for (std::size_t g = 0; g < nt; ++g) out.log_samples[g][r] = per_replica[r][g];
  for (std::size_t g = 0; g < nt; ++g) {
    const LogMean lm = log_mean_exp(out.log_samples[g]);
    MomentEstimate e;
    e.p = opt.p;
    e.t = opt.t_grid[g];
    e.log_value = lm.log_mean;
    e.log_std_error = lm.rel_std_error;
    e.replicas = per_replica.size();
    if (opt.pocket) e.confined_radius = opt.pocket->radius();
    e.initial = opt.initial;
    e.diverging = diverging;
    out.estimates.push_back(e);
  }
  return out;
}

/// Tracks confinement along a sweep: once a walk leaves the pocket the
/// replica is dead for all later grid times.
struct Confinement {
  const std::vector<char>* mask = nullptr;
  std::size_t walks = 0;
  bool ok = true;

  void check(std::span<const std::size_t> pos) {
    if (!mask || !ok) return;
    for (std::size_t i = 0; i < walks; ++i)
      if (!(*mask)[pos[i]]) ok = false;
  }
};

}  // namespace detail

/// E[u(0,t)^p] for space-time white noise:
/// E^{(p)}[exp(sum_{i<j} int_0^t 1{X_i = X_j} ds) prod_i u0(X_i(t))].
inline MomentSeries moment_white_noise(const ConductanceField& field, const MomentOptions& opt) {
  if (opt.p < 1) throw std::invalid_argument("p must be >= 1");
  detail::check_grid(opt.t_grid);
  const LatticeBox& box = field.box();
  const std::size_t start = detail::start_site(box, opt);
  const std::size_t origin = origin_site(box);
  std::optional<std::vector<char>> mask;
  if (opt.pocket) mask = pocket_mask(box, *opt.pocket);
  const double horizon = opt.t_grid.back();
  const auto p = static_cast<std::size_t>(opt.p);

  auto job = [&](std::size_t r) {
    std::vector<WalkPath> paths(p);
    std::vector<const WalkPath*> ptrs(p);
    for (std::size_t i = 0; i < p; ++i) {
      RngStream rng(opt.seed, stream_id(r, static_cast<std::uint16_t>(slot::walk_base + i)));
      simulate_path_into(field, start, horizon, rng, paths[i]);
      ptrs[i] = &paths[i];
    }
    std::vector<double> out(opt.t_grid.size());
    double overlap = 0.0;
    detail::Confinement conf{mask ? &*mask : nullptr, p};
    detail::EndFactor end{mask ? &*mask : nullptr, opt.initial, origin, p};
    std::vector<std::size_t> pos;
    conf.check(std::vector<std::size_t>(p, start));
    detail::sweep_paths(
        ptrs, opt.t_grid, pos,
        [&](double t0, double t1, const std::vector<std::size_t>& x) {
          conf.check(x);
          int pairs = 0;
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = i + 1; j < p; ++j) pairs += x[i] == x[j];
          overlap += pairs * (t1 - t0);
        },
        [&](std::size_t g, const std::vector<std::size_t>& x) {
          out[g] = conf.ok && end.alive(x) ? overlap : kNegInf;
        });
    return out;
  };
  return detail::assemble(opt, parallel_map(opt.replicas, opt.threads, job), false);
}

/// E[u(0,t)^p] for n independent simple walks of rate 2 d rho started at the
/// origin: cross intersection local time of p K-walks with the n walks. All
/// walks live on the field box (the environment walks with rate rho per
/// edge and the same boundary truncation).
inline MomentSeries moment_finite_rw(const ConductanceField& field, int n, double rho,
                                     const MomentOptions& opt) {
  if (opt.p < 1) throw std::invalid_argument("p must be >= 1");
  if (n < 0) throw std::invalid_argument("n must be >= 0");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be > 0");
  detail::check_grid(opt.t_grid);
  const LatticeBox& box = field.box();
  const std::size_t start = detail::start_site(box, opt);
  const std::size_t origin = origin_site(box);
  const ConductanceField env_field = constant_field(box, rho);
  std::optional<std::vector<char>> mask;
  if (opt.pocket) mask = pocket_mask(box, *opt.pocket);
  const double horizon = opt.t_grid.back();
  const auto p = static_cast<std::size_t>(opt.p);
  const auto nn = static_cast<std::size_t>(n);

  auto job = [&](std::size_t r) {
    std::vector<WalkPath> paths(p + nn);
    std::vector<const WalkPath*> ptrs(p + nn);
    for (std::size_t i = 0; i < p; ++i) {
      RngStream rng(opt.seed, stream_id(r, static_cast<std::uint16_t>(slot::walk_base + i)));
      simulate_path_into(field, start, horizon, rng, paths[i]);
    }
    for (std::size_t j = 0; j < nn; ++j) {
      RngStream rng(opt.seed, stream_id(r, static_cast<std::uint16_t>(slot::env_walk_base + j)));
      simulate_path_into(env_field, origin, horizon, rng, paths[p + j]);
    }
    for (std::size_t i = 0; i < p + nn; ++i) ptrs[i] = &paths[i];
    std::vector<double> out(opt.t_grid.size());
    double overlap = 0.0;
    detail::Confinement conf{mask ? &*mask : nullptr, p};
    detail::EndFactor end{mask ? &*mask : nullptr, opt.initial, origin, p};
    std::vector<std::size_t> pos;
    conf.check(std::vector<std::size_t>(p, start));
    detail::sweep_paths(
        ptrs, opt.t_grid, pos,
        [&](double t0, double t1, const std::vector<std::size_t>& x) {
          conf.check(x);
          int hits = 0;
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < nn; ++j) hits += x[i] == x[p + j];
          overlap += hits * (t1 - t0);
        },
        [&](std::size_t g, const std::vector<std::size_t>& x) {
          out[g] = conf.ok && end.alive(x) ? overlap : kNegInf;
        });
    return out;
  };
  return detail::assemble(opt, parallel_map(opt.replicas, opt.threads, job), false);
}

// Green function -------------------------------------------------------------

struct GreenFunctionResult {
  int dim = 1;
  int radius = 0;
  /// G(0) for the walk with rate 1 per edge; +inf when d <= 2.
  double value = std::numeric_limits<double>::infinity();
  bool divergent = true;
  std::string method = "divergent";
  /// G on the box of half the radius, and the 1/R extrapolation
  /// 2 G_R - G_{R/2} (a diagnostic only).
  double half_radius_value = std::numeric_limits<double>::infinity();
  double extrapolated = std::numeric_limits<double>::infinity();
  int cg_iterations = 0;

  /// 1/G(0): the critical p.
  double threshold() const { return divergent ? 0.0 : 1.0 / value; }

  /// p G / (1 - p G) for p < 1/G(0), +inf otherwise.
  double wbar_limit(double p) const {
    if (divergent || p * value >= 1.0) return std::numeric_limits<double>::infinity();
    return p * value / (1.0 - p * value);
  }
};

namespace detail {

/// Solves (-Delta) g = delta_0 with zero boundary values outside a box of
/// the given radius; Delta has rate 1 per edge. Matrix-free conjugate
/// gradients. Returns g at the centre.
inline double dirichlet_green_at_origin(int d, int radius, int* iterations = nullptr) {
  const LatticeBox box(d, radius, Geometry::absorbing);
  const std::size_t n = box.size();
  const int dirs = box.directions();
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t v = 0; v < n; ++v) {
      double s = dirs * x[v];
      for (int k = 0; k < dirs; ++k) {
        const auto w = box.neighbour(v, k);
        if (w >= 0) s -= x[static_cast<std::size_t>(w)];
      }
      y[v] = s;
    }
  };
  std::vector<double> x(n, 0.0), r(n, 0.0), p(n, 0.0), q(n, 0.0);
  r[box.center()] = 1.0;
  p = r;
  double rr = 1.0;
  int it = 0;
  const int max_it = static_cast<int>(20 * n + 100);
  while (std::sqrt(rr) > 1e-13 && it < max_it) {
    apply(p, q);
    double pq = 0.0;
    for (std::size_t v = 0; v < n; ++v) pq += p[v] * q[v];
    const double alpha = rr / pq;
    double rr_new = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      x[v] += alpha * p[v];
      r[v] -= alpha * q[v];
      rr_new += r[v] * r[v];
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t v = 0; v < n; ++v) p[v] = r[v] + beta * p[v];
    ++it;
  }
  if (iterations) *iterations = it;
  return x[box.center()];
}

}  // namespace detail

/// Green function at the origin of the simple walk jumping at rate 2d (rate
/// 1 per edge): G(0) = int_0^inf p_t(0,0) dt, which is the discrete-time
/// Green value divided by 2d. Divergent (recurrent) for d <= 2; otherwise the
/// Dirichlet value on a box of the given radius.
inline GreenFunctionResult green_function(int d, int radius) {
  if (d < 1) throw std::invalid_argument("dimension must be >= 1");
  GreenFunctionResult g;
  g.dim = d;
  g.radius = radius;
  if (d <= 2) return g;
  if (radius < 1) throw std::invalid_argument("radius must be >= 1");
  g.divergent = false;
  g.method = "linear_solve";
  g.value = detail::dirichlet_green_at_origin(d, radius, &g.cg_iterations);
  g.half_radius_value = detail::dirichlet_green_at_origin(d, std::max(1, radius / 2));
  g.extrapolated = 2.0 * g.value - g.half_radius_value;
  return g;
}

// w-equation ----------------------------------------------------------------

struct WSolution {
  LatticeBox box;
  double dt = 0.0;
  std::size_t steps = 0;
  /// w(origin, k dt) for k = 0..steps.
  std::vector<double> origin_trace;
  /// int_0^{t_g} w(X_i(s), s) ds per (walk i, record time g).
  std::vector<std::vector<double>> path_integrals;
  std::vector<double> record_times;
  /// w(., t_g) when requested.
  std::vector<std::vector<double>> snapshots;
};

/// Explicit solver for dw/dt = Delta w + [sum_i delta_{X_i(t)}](w + 1),
/// w(.,0) = 0, on a box with zero boundary values (rate 1 per edge). The
/// path coordinates are mapped into the box; sources outside it are dropped.
/// Requires dt * 2d <= 1/2, which keeps the scheme monotone.
inline WSolution solve_w_along_path(std::span<const WalkPath> paths, const LatticeBox& env_box,
                                    double horizon, double dt,
                                    std::span<const double> record_times = {},
                                    bool keep_snapshots = false) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (horizon < 0.0) throw std::invalid_argument("horizon must be >= 0");
  const int dirs = env_box.directions();
  if (dt * dirs > 0.5) {
    const double suggested = 0.5 / dirs;
    throw StabilityError("w-solver unstable: dt*2d = " + format_double(dt * dirs) +
                             " > 0.5; use dt <= " + format_double(suggested),
                         suggested);
  }
  for (double t : record_times)
    if (t < 0.0 || t > horizon + 1e-12) throw std::invalid_argument("record time outside [0,T]");

  WSolution sol;
  sol.box = env_box;
  sol.steps = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
  sol.dt = sol.steps > 0 ? horizon / static_cast<double>(sol.steps) : dt;
  sol.record_times.assign(record_times.begin(), record_times.end());
  const std::size_t n = env_box.size();
  const std::size_t m = paths.size();
  const std::size_t origin = origin_site(env_box);

  // Site of each walk in the w box, per path position index.
  std::vector<std::vector<std::int64_t>> mapped(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (auto v : paths[i].positions) {
      const auto idx = env_box.index(paths[i].box.point(v));
      mapped[i].push_back(idx ? static_cast<std::int64_t>(*idx) : -1);
    }
  }

  std::vector<double> w(n, 0.0), next(n, 0.0);
  std::vector<double> source(n, 0.0);
  std::vector<double> integral(m, 0.0);
  std::vector<std::size_t> cursor(m, 0);
  sol.path_integrals.assign(m, std::vector<double>(record_times.size(), 0.0));
  sol.origin_trace.reserve(sol.steps + 1);
  sol.origin_trace.push_back(0.0);

  std::size_t rec = 0;
  auto record = [&](double t) {
    while (rec < record_times.size() && record_times[rec] <= t + 1e-9 * (1.0 + t)) {
      for (std::size_t i = 0; i < m; ++i) sol.path_integrals[i][rec] = integral[i];
      if (keep_snapshots) sol.snapshots.push_back(w);
      ++rec;
    }
  };
  record(0.0);

  for (std::size_t k = 0; k < sol.steps; ++k) {
    const double t = static_cast<double>(k) * sol.dt;
    std::vector<std::int64_t> site(m, -1);
    for (std::size_t i = 0; i < m; ++i) {
      const auto& jt = paths[i].jump_times;
      while (cursor[i] < jt.size() && jt[cursor[i]] <= t) ++cursor[i];
      site[i] = mapped[i][cursor[i]];
      if (site[i] >= 0) source[static_cast<std::size_t>(site[i])] += 1.0;
    }
    for (std::size_t v = 0; v < n; ++v) {
      double lap = -dirs * w[v];
      for (int dir = 0; dir < dirs; ++dir) {
        const auto y = env_box.neighbour(v, dir);
        if (y >= 0) lap += w[static_cast<std::size_t>(y)];
      }
      next[v] = w[v] + sol.dt * (lap + source[v] * (w[v] + 1.0));
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (site[i] < 0) continue;
      const auto s = static_cast<std::size_t>(site[i]);
      integral[i] += 0.5 * sol.dt * (w[s] + next[s]);
    }
    for (std::size_t i = 0; i < m; ++i)
      if (site[i] >= 0) source[static_cast<std::size_t>(site[i])] = 0.0;
    w.swap(next);
    sol.origin_trace.push_back(w[origin]);
    record(t + sol.dt);
  }
  return sol;
}

struct InfiniteWalkOptions {
  double nu = 1.0;
  /// Time step of the w-solver.
  double dt = 0.05;
  /// Radius of the zero-boundary box for w (centred at the origin); 0 uses
  /// the field box radius.
  int w_radius = 0;
  /// Box radius of the Green-function solve behind the divergence flag.
  int green_radius = 20;
};

/// E[u(0,t)^p] for a Poisson(nu) system of independent rate-2d walks:
/// e^{nu p t} E[exp(nu sum_i int_0^t w(X_i(s),s) ds) prod u0(X_i(t))],
/// with one w-field driven by all p sources. Flags divergence when
/// p G(0) >= 1 (always for d <= 2).
inline MomentSeries moment_infinite_rw(const ConductanceField& field,
                                       const InfiniteWalkOptions& iw,
                                       const MomentOptions& opt) {
  if (opt.p < 1) throw std::invalid_argument("p must be >= 1");
  if (!(iw.nu > 0.0)) throw std::invalid_argument("nu must be > 0");
  detail::check_grid(opt.t_grid);
  const LatticeBox& box = field.box();
  const std::size_t start = detail::start_site(box, opt);
  const std::size_t origin = origin_site(box);
  std::optional<std::vector<char>> mask;
  if (opt.pocket) mask = pocket_mask(box, *opt.pocket);
  const double horizon = opt.t_grid.back();
  const auto p = static_cast<std::size_t>(opt.p);
  const LatticeBox w_box(box.dim(), iw.w_radius > 0 ? iw.w_radius : box.radius(),
                         Geometry::absorbing);
  const GreenFunctionResult g = green_function(box.dim(), iw.green_radius);
  const bool diverging = g.divergent || opt.p * g.value >= 1.0;

  auto job = [&](std::size_t r) {
    std::vector<WalkPath> paths(p);
    for (std::size_t i = 0; i < p; ++i) {
      RngStream rng(opt.seed, stream_id(r, static_cast<std::uint16_t>(slot::walk_base + i)));
      simulate_path_into(field, start, horizon, rng, paths[i]);
    }
    const WSolution sol = solve_w_along_path(paths, w_box, horizon, iw.dt, opt.t_grid);
    std::vector<double> out(opt.t_grid.size());
    for (std::size_t gi = 0; gi < opt.t_grid.size(); ++gi) {
      const double t = opt.t_grid[gi];
      bool alive = true;
      for (const auto& path : paths) {
        if (mask && !confined_until(path, *mask, t)) alive = false;
        if (opt.initial == InitialCondition::delta0 && path.position_at(t) != origin) alive = false;
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < p; ++i) sum += sol.path_integrals[i][gi];
      out[gi] = alive ? iw.nu * static_cast<double>(p) * t + iw.nu * sum : kNegInf;
    }
    return out;
  };
  return detail::assemble(opt, parallel_map(opt.replicas, opt.threads, job), diverging);
}

/// CSV rows `p,t,log_moment,std_error,replicas,confined_radius`.
inline void write_moments_csv(std::ostream& os, std::span<const MomentEstimate> estimates) {
  os << "p,t,log_moment,std_error,replicas,confined_radius\n";
  for (const auto& e : estimates) {
    os << e.p << ',' << format_double(e.t) << ',' << format_double(e.log_value) << ','
       << format_double(e.log_std_error) << ',' << e.replicas << ',';
    if (e.confined_radius) os << *e.confined_radius;
    os << '\n';
  }
}

// Quenched solver -----------------------------------------------------------

namespace detail {

/// Adjacency of the generator Delta^K: parallel edges (decorated fields)
/// appear as separate entries.
struct Stencil {
  std::vector<std::size_t> offset;  // size n+1
  std::vector<std::size_t> target;
  std::vector<double> rate;
  std::vector<double> total;

  static Stencil from(const ConductanceField& f) {
    Stencil s;
    build(s, f.box(), [&](std::size_t e, auto&& add) { add(f.rate(e)); });
    return s;
  }
  static Stencil from(const DecoratedConductanceField& f) {
    Stencil s;
    build(s, f.box(), [&](std::size_t e, auto&& add) {
      add(f.red()[e]);
      add(f.green()[e]);
    });
    return s;
  }

 private:
  template <class Rates>
  static void build(Stencil& s, const LatticeBox& box, Rates&& rates) {
    const std::size_t n = box.size();
    s.offset.assign(1, 0);
    s.total.assign(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      for (int dir = 0; dir < box.directions(); ++dir) {
        const auto e = box.edge(v, dir);
        if (e < 0) continue;
        const auto y = static_cast<std::size_t>(box.neighbour(v, dir));
        rates(static_cast<std::size_t>(e), [&](double r) {
          s.target.push_back(y);
          s.rate.push_back(r);
          s.total[v] += r;
        });
      }
      s.offset.push_back(s.target.size());
    }
  }
};

inline void apply_generator(const Stencil& s, const std::vector<double>& u,
                            std::vector<double>& out) {
  const std::size_t n = u.size();
  for (std::size_t v = 0; v < n; ++v) {
    double acc = 0.0;
    for (std::size_t k = s.offset[v]; k < s.offset[v + 1]; ++k)
      acc += s.rate[k] * (u[s.target[k]] - u[v]);
    out[v] = acc;
  }
}

}  // namespace detail

struct QuenchedOptions {
  double dt = 0.01;
  InitialCondition initial = InitialCondition::delta0;
  /// Kills u outside the pocket (walks confined to it).
  std::optional<LatticeBox> pocket;
  /// Times at which log u(0,t) is recorded; must be multiples of the step.
  std::vector<double> record_times;
  bool keep_snapshots = false;
};

struct QuenchedSolution {
  LatticeBox box;
  double dt = 0.0;
  InitialCondition initial = InitialCondition::delta0;
  std::vector<double> times;
  /// log u(origin, t) at the record times.
  std::vector<double> log_u_origin;
  /// u(., t) / exp(log_scale) at the record times (when kept).
  std::vector<std::vector<double>> snapshots;
  std::vector<double> snapshot_log_scale;
};

/// Solves du/dt = Delta^K u + xi u on the field box for one frozen
/// environment trajectory. Each step applies Heun's method to the generator
/// and then the exact factor exp(int xi(x,s) ds) over the step, with
/// environment events splitting the integral. White noise instead uses the
/// Ito factor exp(dW - dt/2), whose mean is exactly 1. u is kept in a
/// rescaled form so it never under- or overflows.
template <class Field>
QuenchedSolution solve_quenched(const Field& field, const EnvTrajectory& env,
                                const QuenchedOptions& opt) {
  const LatticeBox& box = field.box();
  if (!(opt.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (opt.record_times.empty()) throw std::invalid_argument("no record times");
  detail::check_grid(opt.record_times);
  const double horizon = opt.record_times.back();
  if (horizon > env.horizon + 1e-12 && !env.is_white_noise())
    throw std::invalid_argument("environment trajectory shorter than the solve horizon");

  const detail::Stencil stencil = detail::Stencil::from(field);
  double max_total = 0.0;
  for (double r : stencil.total) max_total = std::max(max_total, r);
  const double xi_max = env.is_white_noise() ? 0.0 : env.max_abs_value();
  if (opt.dt * (max_total + xi_max) >= 0.5) {
    const double suggested = 0.49 / (max_total + xi_max);
    throw StabilityError("quenched solver unstable: dt*max(K~+|xi|) = " +
                             format_double(opt.dt * (max_total + xi_max)) +
                             " >= 0.5; use dt <= " + format_double(suggested),
                         suggested);
  }

  // Field-box site -> environment-box site, and the reverse.
  const LatticeBox& env_box = env.config.env_box;
  const std::size_t n = box.size();
  std::vector<std::size_t> to_env(n);
  std::vector<std::int64_t> from_env(env_box.size(), -1);
  for (std::size_t v = 0; v < n; ++v) {
    const auto idx = env_box.index(box.point(v));
    if (!idx) throw std::invalid_argument("environment box must contain the field box");
    to_env[v] = *idx;
    from_env[*idx] = static_cast<std::int64_t>(v);
  }

  // Steps per record time.
  std::vector<std::size_t> record_step;
  for (double t : opt.record_times) {
    const double k = std::round(t / opt.dt);
    if (std::abs(k * opt.dt - t) > 1e-9 * std::max(1.0, t))
      throw std::invalid_argument("record time " + format_double(t) +
                                  " is not a multiple of dt");
    record_step.push_back(static_cast<std::size_t>(k));
  }
  const std::size_t total_steps = record_step.back();
  const double dt = opt.dt;

  std::optional<std::vector<char>> mask;
  if (opt.pocket) mask = pocket_mask(box, *opt.pocket);
  const std::size_t origin = origin_site(box);

  std::vector<double> u(n, 0.0);
  if (opt.initial == InitialCondition::ones)
    std::fill(u.begin(), u.end(), 1.0);
  else
    u[origin] = 1.0;
  if (mask)
    for (std::size_t v = 0; v < n; ++v)
      if (!(*mask)[v]) u[v] = 0.0;
  double log_scale = 0.0;

  QuenchedSolution sol;
  sol.box = box;
  sol.dt = dt;
  sol.initial = opt.initial;
  sol.times = opt.record_times;

  std::vector<double> xi;
  if (!env.is_white_noise()) xi = env.initial;
  std::size_t next_event = 0;
  std::vector<double> k1(n), mid(n), k2(n), integral(n);

  std::size_t rec = 0;
  auto record = [&](std::size_t step) {
    while (rec < record_step.size() && record_step[rec] == step) {
      sol.log_u_origin.push_back(u[origin] > 0.0 ? log_scale + std::log(u[origin]) : kNegInf);
      if (opt.keep_snapshots) {
        sol.snapshots.push_back(u);
        sol.snapshot_log_scale.push_back(log_scale);
      }
      ++rec;
    }
  };
  record(0);

  for (std::size_t k = 0; k < total_steps; ++k) {
    const double t0 = static_cast<double>(k) * dt;
    const double t1 = static_cast<double>(k + 1) * dt;
    // Heun step for the generator.
    detail::apply_generator(stencil, u, k1);
    for (std::size_t v = 0; v < n; ++v) mid[v] = u[v] + dt * k1[v];
    detail::apply_generator(stencil, mid, k2);
    for (std::size_t v = 0; v < n; ++v) u[v] += 0.5 * dt * (k1[v] + k2[v]);

    if (env.is_white_noise()) {
      for (std::size_t v = 0; v < n; ++v)
        u[v] *= std::exp(env.noise_increment(to_env[v], k, dt) - 0.5 * dt);
    } else {
      for (std::size_t v = 0; v < n; ++v) integral[v] = xi[to_env[v]] * dt;
      while (next_event < env.events.size() && env.events[next_event].time <= t1) {
        const EnvEvent& ev = env.events[next_event++];
        const double rest = t1 - std::max(ev.time, t0);
        auto shift = [&](std::size_t env_site, double delta) {
          xi[env_site] += delta;
          const auto fv = from_env[env_site];
          if (fv >= 0) integral[static_cast<std::size_t>(fv)] += delta * rest;
        };
        if (ev.kind == EventKind::flip) {
          shift(ev.site, 1.0 - 2.0 * xi[ev.site]);
        } else {
          shift(ev.site, -1.0);
          shift(static_cast<std::size_t>(ev.target), 1.0);
        }
      }
      for (std::size_t v = 0; v < n; ++v) u[v] *= std::exp(integral[v]);
    }
    if (mask)
      for (std::size_t v = 0; v < n; ++v)
        if (!(*mask)[v]) u[v] = 0.0;

    double top = 0.0;
    for (double x : u) top = std::max(top, x);
    if (top > 1e100 || (top > 0.0 && top < 1e-100)) {
      const double inv = 1.0 / top;
      for (auto& x : u) x *= inv;
      log_scale += std::log(top);
    }
    record(k + 1);
  }
  return sol;
}

struct QuenchedSeries {
  std::vector<double> t_grid;
  /// (1/t) log u(0,t) per (grid time, environment realization).
  std::vector<std::vector<double>> exponents;
  std::size_t replicas = 0;
};

struct QuenchedRunOptions {
  double dt = 0.01;
  std::size_t replicas = 32;
  unsigned threads = 1;
  std::optional<LatticeBox> pocket;
  InitialCondition initial = InitialCondition::delta0;
};

/// One frozen environment realization per replica; returns (1/t) log u(0,t)
/// for each grid time. Replica r uses the environment stream of replica r,
/// so runs on different fields share environment realizations.
template <class Field>
QuenchedSeries quenched_exponent_estimate(const Field& field, const Environment& env,
                                          std::span<const double> t_grid,
                                          const QuenchedRunOptions& opt) {
  detail::check_grid(t_grid);
  if (t_grid.front() <= 0.0) throw std::invalid_argument("quenched grid times must be > 0");
  QuenchedOptions qo;
  qo.dt = opt.dt;
  qo.initial = opt.initial;
  qo.pocket = opt.pocket;
  qo.record_times.assign(t_grid.begin(), t_grid.end());
  auto job = [&](std::size_t r) {
    const EnvTrajectory traj = make_trajectory(env, t_grid.back(), r);
    const QuenchedSolution sol = solve_quenched(field, traj, qo);
    std::vector<double> out(t_grid.size());
    for (std::size_t g = 0; g < t_grid.size(); ++g) out[g] = sol.log_u_origin[g] / t_grid[g];
    return out;
  };
  const auto per = parallel_map(opt.replicas, opt.threads, job);
  QuenchedSeries s;
  s.t_grid.assign(t_grid.begin(), t_grid.end());
  s.replicas = opt.replicas;
  s.exponents.assign(t_grid.size(), std::vector<double>(opt.replicas));
  for (std::size_t r = 0; r < opt.replicas; ++r)
    for (std::size_t g = 0; g < t_grid.size(); ++g) s.exponents[g][r] = per[r][g];
  return s;
}

}  // namespace pam

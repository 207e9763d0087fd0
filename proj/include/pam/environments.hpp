// Dynamic random environments xi(x,t) on a (periodic) environment box:
//   white noise, n finite random walks started at the origin, an infinite
//   (Poisson) system of random walks, and Glauber spin-flip dynamics.
// Trajectories are simulated event by event and stored as an event log, so
// xi is piecewise constant in time and can be integrated exactly.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "pam/lattice.hpp"
#include "pam/rng.hpp"
#include "pam/text.hpp"

namespace pam {

struct WhiteNoise {};

struct FiniteWalks {
  int n = 1;
  double rho = 1.0;
};

struct InfiniteWalks {
  double nu = 1.0;
};

enum class GibbsMethod { automatic, exact_enumeration, gibbs_chain };

/// Flip rate of site x in configuration eta (0/1 occupations).
using SpinRate = std::function<double(const LatticeBox&, std::span<const int>, std::size_t)>;

struct SpinFlip {
  double beta = 0.5;
  GibbsMethod method = GibbsMethod::automatic;
  int burn_in_sweeps = 500;
  int thinning_sweeps = 10;
  /// Optional non-Ising rates; must be attractive and reversible, with
  /// rate_bound >= every rate. Only the stochastic Ising form is tested.
  SpinRate rate;
  double rate_bound = 0.0;
};

/// A frozen potential xi(x,t) = values[x]; a diagnostic environment.
struct StaticPotential {
  std::vector<double> values;
};

using EnvKind = std::variant<WhiteNoise, FiniteWalks, InfiniteWalks, SpinFlip, StaticPotential>;

struct EnvConfig {
  EnvKind kind;
  LatticeBox env_box;
  std::uint64_t seed = 0;
};

inline std::string kind_name(const EnvKind& kind) {
  switch (kind.index()) {
    case 0: return "white_noise";
    case 1: return "finite_rw";
    case 2: return "infinite_rw";
    case 3: return "spin_flip";
    default: return "static";
  }
}

inline void validate(const EnvConfig& config) {
  if (const auto* f = std::get_if<FiniteWalks>(&config.kind)) {
    if (f->n < 0) throw std::invalid_argument("finite_rw: n must be >= 0");
    if (!(f->rho > 0.0)) throw std::invalid_argument("finite_rw: rho must be > 0");
  } else if (const auto* i = std::get_if<InfiniteWalks>(&config.kind)) {
    if (!(i->nu > 0.0)) throw std::invalid_argument("infinite_rw: nu must be > 0");
  } else if (const auto* s = std::get_if<SpinFlip>(&config.kind)) {
    if (!(s->beta >= 0.0)) throw std::invalid_argument("spin_flip: beta must be >= 0");
    if (s->rate && !(s->rate_bound > 0.0))
      throw std::invalid_argument("spin_flip: custom rates need a positive rate_bound");
  } else if (const auto* st = std::get_if<StaticPotential>(&config.kind)) {
    if (st->values.size() != config.env_box.size())
      throw std::invalid_argument("static potential needs one value per site");
  }
}

// Ising ----------------------------------------------------------------------

/// c(x, eta) = exp(-beta * sum_{y~x} sigma(x) sigma(y)), sigma = 2 eta - 1.
inline double ising_rate(const LatticeBox& box, std::span<const int> eta, std::size_t x,
                         double beta) {
  const int sx = 2 * eta[x] - 1;
  int sum = 0;
  for (int dir = 0; dir < box.directions(); ++dir) {
    const auto y = box.neighbour(x, dir);
    if (y >= 0) sum += sx * (2 * eta[static_cast<std::size_t>(y)] - 1);
  }
  return std::exp(-beta * sum);
}

inline double spin_rate(const SpinFlip& s, const LatticeBox& box, std::span<const int> eta,
                        std::size_t x) {
  return s.rate ? s.rate(box, eta, x) : ising_rate(box, eta, x, s.beta);
}

inline double spin_rate_bound(const SpinFlip& s, const LatticeBox& box) {
  return s.rate ? s.rate_bound : std::exp(s.beta * box.directions());
}

/// Unnormalized log Gibbs weight beta * sum_{edges} sigma(x) sigma(y).
inline double ising_log_weight(const LatticeBox& box, std::span<const int> eta, double beta) {
  long long sum = 0;
  for (std::size_t e = 0; e < box.edge_count(); ++e) {
    const auto [a, b] = box.edge_ends(e);
    sum += (2 * eta[a] - 1) * (2 * eta[b] - 1);
  }
  return beta * static_cast<double>(sum);
}

inline constexpr std::size_t kMaxExactSites = 20;

/// Samples the Ising Gibbs measure on a box: exact enumeration for small
/// boxes, otherwise a heat-bath chain.
class GibbsSampler {
 public:
  GibbsSampler(LatticeBox box, double beta, GibbsMethod method = GibbsMethod::automatic,
               int burn_in_sweeps = 500, int thinning_sweeps = 10)
      : box_(std::move(box)), beta_(beta), burn_in_(burn_in_sweeps), thinning_(thinning_sweeps) {
    if (method == GibbsMethod::automatic)
      method = box_.size() <= kMaxExactSites ? GibbsMethod::exact_enumeration
                                             : GibbsMethod::gibbs_chain;
    method_ = method;
    if (method_ == GibbsMethod::exact_enumeration) {
      if (box_.size() > kMaxExactSites)
        throw std::invalid_argument("exact Gibbs enumeration refused: box has " +
                                    std::to_string(box_.size()) + " sites (limit " +
                                    std::to_string(kMaxExactSites) + ")");
      enumerate();
    }
  }

  GibbsMethod method() const { return method_; }

  /// Exact probabilities indexed by configuration bits (site i = bit i).
  const std::vector<double>& probabilities() const { return probs_; }

  std::vector<int> sample(RngStream& rng) const {
    if (method_ == GibbsMethod::exact_enumeration) {
      const double u = rng.uniform();
      const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
      auto config = static_cast<std::size_t>(it - cdf_.begin());
      config = std::min(config, cdf_.size() - 1);
      std::vector<int> eta(box_.size());
      for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = static_cast<int>((config >> i) & 1u);
      return eta;
    }
    std::vector<int> eta(box_.size());
    for (auto& s : eta) s = rng.bernoulli(0.5) ? 1 : 0;
    for (int sweep = 0; sweep < burn_in_; ++sweep) heat_bath_sweep(eta, rng);
    return eta;
  }

  /// Successive chain states separated by `thinning` sweeps (independent
  /// draws for exact enumeration).
  std::vector<std::vector<int>> sample_many(std::size_t count, RngStream& rng) const {
    std::vector<std::vector<int>> out;
    if (method_ == GibbsMethod::exact_enumeration || count == 0) {
      for (std::size_t i = 0; i < count; ++i) out.push_back(sample(rng));
      return out;
    }
    auto eta = sample(rng);
    out.push_back(eta);
    while (out.size() < count) {
      for (int s = 0; s < thinning_; ++s) heat_bath_sweep(eta, rng);
      out.push_back(eta);
    }
    return out;
  }

 private:
  void enumerate() {
    const std::size_t n = box_.size();
    const std::size_t configs = std::size_t{1} << n;
    std::vector<double> logw(configs);
    std::vector<int> eta(n);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < configs; ++c) {
      for (std::size_t i = 0; i < n; ++i) eta[i] = static_cast<int>((c >> i) & 1u);
      logw[c] = ising_log_weight(box_, eta, beta_);
      top = std::max(top, logw[c]);
    }
    probs_.resize(configs);
    double z = 0.0;
    for (std::size_t c = 0; c < configs; ++c) {
      probs_[c] = std::exp(logw[c] - top);
      z += probs_[c];
    }
    cdf_.resize(configs);
    double acc = 0.0;
    for (std::size_t c = 0; c < configs; ++c) {
      probs_[c] /= z;
      acc += probs_[c];
      cdf_[c] = acc;
    }
  }

  void heat_bath_sweep(std::vector<int>& eta, RngStream& rng) const {
    for (std::size_t x = 0; x < eta.size(); ++x) {
      int field = 0;
      for (int dir = 0; dir < box_.directions(); ++dir) {
        const auto y = box_.neighbour(x, dir);
        if (y >= 0) field += 2 * eta[static_cast<std::size_t>(y)] - 1;
      }
      const double p_up = 1.0 / (1.0 + std::exp(-2.0 * beta_ * field));
      eta[x] = rng.uniform() < p_up ? 1 : 0;
    }
  }

  LatticeBox box_;
  double beta_;
  GibbsMethod method_;
  int burn_in_;
  int thinning_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

/// max over (eta, x) of |c(x,eta) pi(eta) - c(x,eta^x) pi(eta^x)| with the
/// exact Gibbs weights pi.
inline double check_detailed_balance(double beta, const LatticeBox& box) {
  GibbsSampler sampler(box, beta, GibbsMethod::exact_enumeration);
  const auto& pi = sampler.probabilities();
  const std::size_t n = box.size();
  std::vector<int> eta(n);
  std::vector<int> flipped(n);
  double worst = 0.0;
  for (std::size_t c = 0; c < pi.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i) eta[i] = static_cast<int>((c >> i) & 1u);
    for (std::size_t x = 0; x < n; ++x) {
      flipped = eta;
      flipped[x] = 1 - flipped[x];
      const std::size_t cx = c ^ (std::size_t{1} << x);
      const double lhs = ising_rate(box, eta, x, beta) * pi[c];
      const double rhs = ising_rate(box, flipped, x, beta) * pi[cx];
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

// State and evolution --------------------------------------------------------

enum class EventKind : std::uint8_t { jump, flip };

struct EnvEvent {
  double time = 0.0;
  EventKind kind = EventKind::jump;
  std::size_t site = 0;
  /// Destination of a jump; -1 for flips.
  std::int64_t target = -1;

  friend bool operator==(const EnvEvent&, const EnvEvent&) = default;
};

struct EnvState {
  /// Occupation counts (walks) or spins 0/1; zero for white noise.
  std::vector<int> occupation;
  /// Positions of the individual walks (finite and infinite systems).
  std::vector<std::size_t> particles;
  double time = 0.0;
};

inline std::size_t origin_site(const LatticeBox& box) {
  if (auto v = box.index(Point(static_cast<std::size_t>(box.dim()), 0))) return *v;
  return box.center();
}

/// Environment law plus whatever must be prepared once per configuration
/// (the exact Gibbs table).
class Environment {
 public:
  explicit Environment(EnvConfig config) : config_(std::move(config)) {
    validate(config_);
    if (const auto* s = std::get_if<SpinFlip>(&config_.kind)) {
      gibbs_ = std::make_shared<GibbsSampler>(config_.env_box, s->beta, s->method,
                                              s->burn_in_sweeps, s->thinning_sweeps);
    }
  }

  const EnvConfig& config() const { return config_; }
  const LatticeBox& box() const { return config_.env_box; }

  EnvState sample_initial(RngStream& rng) const {
    const LatticeBox& box = config_.env_box;
    EnvState state;
    state.occupation.assign(box.size(), 0);
    if (const auto* f = std::get_if<FiniteWalks>(&config_.kind)) {
      const auto o = origin_site(box);
      state.particles.assign(static_cast<std::size_t>(f->n), o);
      state.occupation[o] = f->n;
    } else if (const auto* i = std::get_if<InfiniteWalks>(&config_.kind)) {
      for (std::size_t x = 0; x < box.size(); ++x) {
        const int k = rng.poisson(i->nu);
        state.occupation[x] = k;
        for (int j = 0; j < k; ++j) state.particles.push_back(x);
      }
    } else if (std::holds_alternative<SpinFlip>(config_.kind)) {
      state.occupation = gibbs_->sample(rng);
    }
    return state;
  }

  /// Advances the state by dt; returns the time-sorted event log. Walks use
  /// uniformized clocks (a proposal across a missing edge is a no-op); spin
  /// flips use per-site clocks at rate 2*bound with the monotone acceptance
  /// rule, so two configurations driven by the same stream stay ordered.
  std::vector<EnvEvent> evolve(EnvState& state, double dt, RngStream& rng) const {
    if (!(dt > 0.0)) throw std::invalid_argument("evolve: dt must be positive");
    std::vector<EnvEvent> events;
    const LatticeBox& box = config_.env_box;
    const double t_end = state.time + dt;
    const int dirs = box.directions();

    auto run_walks = [&](double per_walk_rate) {
      const double total = per_walk_rate * static_cast<double>(state.particles.size());
      if (!(total > 0.0)) return;
      double t = state.time;
      for (;;) {
        t += rng.exponential(total);
        if (t > t_end) break;
        const std::size_t j = rng.index(state.particles.size());
        const int dir = static_cast<int>(rng.index(static_cast<std::size_t>(dirs)));
        const std::size_t from = state.particles[j];
        const auto to = box.neighbour(from, dir);
        if (to < 0) continue;
        state.particles[j] = static_cast<std::size_t>(to);
        --state.occupation[from];
        ++state.occupation[static_cast<std::size_t>(to)];
        events.push_back({t, EventKind::jump, from, to});
      }
    };

    if (const auto* f = std::get_if<FiniteWalks>(&config_.kind)) {
      run_walks(dirs * f->rho);
    } else if (std::holds_alternative<InfiniteWalks>(config_.kind)) {
      run_walks(static_cast<double>(dirs));
    } else if (const auto* s = std::get_if<SpinFlip>(&config_.kind)) {
      const double clock = 2.0 * spin_rate_bound(*s, box);
      const double total = clock * static_cast<double>(box.size());
      double t = state.time;
      for (;;) {
        t += rng.exponential(total);
        if (t > t_end) break;
        const std::size_t x = rng.index(box.size());
        const double u = rng.uniform();
        const double c = spin_rate(*s, box, state.occupation, x);
        const bool flip = state.occupation[x] == 0 ? u < c / clock : u > 1.0 - c / clock;
        if (!flip) continue;
        state.occupation[x] = 1 - state.occupation[x];
        events.push_back({t, EventKind::flip, x, -1});
      }
    }
    state.time = t_end;
    return events;
  }

  double value(const EnvState& state, std::size_t x) const {
    if (const auto* st = std::get_if<StaticPotential>(&config_.kind)) return st->values[x];
    return static_cast<double>(state.occupation[x]);
  }

 private:
  EnvConfig config_;
  std::shared_ptr<const GibbsSampler> gibbs_;
};

struct EnvTrajectory {
  EnvConfig config;
  double horizon = 0.0;
  std::uint64_t replica = 0;
  /// xi(., 0) as reals.
  std::vector<double> initial;
  std::vector<EnvEvent> events;

  bool is_white_noise() const { return std::holds_alternative<WhiteNoise>(config.kind); }

  /// Upper bound on |xi| over the trajectory (zero for white noise).
  double max_abs_value() const {
    if (std::holds_alternative<SpinFlip>(config.kind)) return 1.0;
    if (const auto* st = std::get_if<StaticPotential>(&config.kind)) {
      double m = 0.0;
      for (double v : st->values) m = std::max(m, std::abs(v));
      return m;
    }
    std::vector<double> xi = initial;
    double top = 0.0;
    for (double v : xi) top = std::max(top, v);
    for (const auto& ev : events) {
      if (ev.kind != EventKind::jump) continue;
      xi[ev.site] -= 1.0;
      const double v = xi[static_cast<std::size_t>(ev.target)] += 1.0;
      top = std::max(top, v);
    }
    return top;
  }

  /// Brownian increment of site x over step k of length dt.
  double noise_increment(std::size_t x, std::uint64_t step, double dt) const {
    return std::sqrt(dt) *
           counter_normal(config.seed, stream_id(replica, slot::white_noise), x, step);
  }
};

/// One realization on [0, horizon]; replica selects the random stream.
inline EnvTrajectory make_trajectory(const Environment& env, double horizon,
                                     std::uint64_t replica) {
  EnvTrajectory traj;
  traj.config = env.config();
  traj.horizon = horizon;
  traj.replica = replica;
  RngStream rng(env.config().seed, stream_id(replica, slot::environment));
  EnvState state = env.sample_initial(rng);
  traj.initial.resize(env.box().size());
  for (std::size_t x = 0; x < traj.initial.size(); ++x) traj.initial[x] = env.value(state, x);
  if (horizon > 0.0 && !traj.is_white_noise() &&
      !std::holds_alternative<StaticPotential>(env.config().kind)) {
    traj.events = env.evolve(state, horizon, rng);
  }
  return traj;
}

inline void apply_event(std::vector<double>& xi, const EnvEvent& ev) {
  if (ev.kind == EventKind::flip) {
    xi[ev.site] = 1.0 - xi[ev.site];
  } else {
    xi[ev.site] -= 1.0;
    xi[static_cast<std::size_t>(ev.target)] += 1.0;
  }
}

/// xi(., t), right-continuous, by replaying events up to time t.
inline std::vector<double> field_snapshot(const EnvTrajectory& traj, double t) {
  if (traj.is_white_noise())
    throw std::invalid_argument("white noise has no pointwise value");
  if (t < 0.0 || t > traj.horizon) throw std::out_of_range("time outside [0, horizon]");
  std::vector<double> xi = traj.initial;
  for (const auto& ev : traj.events) {
    if (ev.time > t) break;
    apply_event(xi, ev);
  }
  return xi;
}

inline double field_value(const EnvTrajectory& traj, std::size_t x, double t) {
  if (x >= traj.initial.size()) throw std::out_of_range("site outside the environment box");
  return field_snapshot(traj, t)[x];
}

/// `time,kind,site,target_site`; coordinates are space separated.
inline void write_events_csv(std::ostream& os, const EnvTrajectory& traj) {
  const LatticeBox& box = traj.config.env_box;
  auto coords = [&](std::size_t v) {
    const Point p = box.point(v);
    std::string s;
    for (std::size_t k = 0; k < p.size(); ++k) s += (k ? " " : "") + std::to_string(p[k]);
    return s;
  };
  os << "time,kind,site,target_site\n";
  for (const auto& ev : traj.events) {
    os << format_double(ev.time) << ',' << (ev.kind == EventKind::jump ? "jump" : "flip") << ','
       << coords(ev.site) << ',';
    if (ev.target >= 0) os << coords(static_cast<std::size_t>(ev.target));
    os << '\n';
  }
}

}  // namespace pam

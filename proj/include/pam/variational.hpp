// Finite truncations of the self-adjoint operators whose top eigenvalue
// gives p * lambda_p, and a Lanczos solver for that eigenvalue.
//
// State spaces are products of an environment component (possibly trivial)
// and p (or p + n) walk coordinates on a truncation box. The truncation
// box's geometry picks the boundary: absorbing boxes give zero-outside
// (Dirichlet) conditions, so the field must cover one extra layer; periodic
// boxes must coincide with the field box.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "pam/environments.hpp"
#include "pam/lattice.hpp"
#include "pam/text.hpp"

namespace pam {

enum class StateSpace { walks_p, walks_p_plus_n, env_occupancy, env_spin };

inline const char* to_string(StateSpace s) {
  switch (s) {
    case StateSpace::walks_p: return "walks_p";
    case StateSpace::walks_p_plus_n: return "walks_p_plus_n";
    case StateSpace::env_occupancy: return "env_occupancy";
    default: return "env_spin";
  }
}

/// Raised when an operator would exceed the configured dimension budget.
class BudgetError : public std::length_error {
 public:
  BudgetError(std::size_t dim, std::size_t budget)
      : std::length_error("operator dimension " + std::to_string(dim) + " exceeds budget " +
                          std::to_string(budget)),
        dim_(dim) {}
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
};

struct OperatorOptions {
  std::size_t max_dim = 4'000'000;
  /// Drops the walk Dirichlet form (the kappa = 0 degenerate mode).
  bool zero_conductance = false;
  /// Drops the potential A_1.
  bool drop_potential = false;
};

/// Sparse symmetric matrix. Entries are stored once per unordered index
/// pair (i <= j); the CSR form used by matvec mirrors them.
struct OperatorSpec {
  StateSpace kind = StateSpace::walks_p;
  int p = 1;
  std::size_t dim = 0;
  nlohmann::json state_space;
  std::vector<std::size_t> row, col;
  std::vector<double> val;
  /// sqrt(mu) per state for environment components; empty when unweighted.
  std::vector<double> weights;
  std::vector<std::string> warnings;

  std::vector<std::size_t> csr_offset;
  std::vector<std::uint32_t> csr_col;
  std::vector<double> csr_val;

  void finalize() {
    std::vector<std::size_t> count(dim + 1, 0);
    for (std::size_t k = 0; k < val.size(); ++k) {
      ++count[row[k] + 1];
      if (row[k] != col[k]) ++count[col[k] + 1];
    }
    std::partial_sum(count.begin(), count.end(), count.begin());
    csr_offset = count;
    csr_col.assign(count.back(), 0);
    csr_val.assign(count.back(), 0.0);
    std::vector<std::size_t> fill(csr_offset.begin(), csr_offset.end() - 1);
    for (std::size_t k = 0; k < val.size(); ++k) {
      csr_col[fill[row[k]]] = static_cast<std::uint32_t>(col[k]);
      csr_val[fill[row[k]]++] = val[k];
      if (row[k] != col[k]) {
        csr_col[fill[col[k]]] = static_cast<std::uint32_t>(row[k]);
        csr_val[fill[col[k]]++] = val[k];
      }
    }
  }

  void matvec(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (std::size_t k = csr_offset[i]; k < csr_offset[i + 1]; ++k)
        acc += csr_val[k] * x[csr_col[k]];
      y[i] = acc;
    }
  }

  /// max |H_ij - H_ji| over the stored (mirrored) entries.
  double max_asymmetry() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t k = csr_offset[i]; k < csr_offset[i + 1]; ++k) {
        const std::size_t j = csr_col[k];
        double back = 0.0;
        bool found = false;
        for (std::size_t q = csr_offset[j]; q < csr_offset[j + 1]; ++q) {
          if (csr_col[q] == i) {
            back += csr_val[q];
            found = true;
          }
        }
        worst = std::max(worst, found ? std::abs(csr_val[k] - back) : std::abs(csr_val[k]));
      }
    }
    return worst;
  }

  /// <f, H f> for a vector in the symmetrized coordinates.
  double quadratic_form(std::span<const double> f) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < val.size(); ++k)
      acc += (row[k] == col[k] ? 1.0 : 2.0) * val[k] * f[row[k]] * f[col[k]];
    return acc;
  }
};

namespace detail {

/// One walk coordinate restricted to a truncation box.
struct WalkComponent {
  std::size_t sites = 0;
  std::vector<double> out_rate;  // full jump rate, including edges leaving the box
  std::vector<std::vector<std::pair<std::size_t, double>>> nbrs;
};

inline WalkComponent walk_component(const ConductanceField& field, const LatticeBox& trunc,
                                    double scale) {
  const LatticeBox& fb = field.box();
  if (trunc.dim() != fb.dim()) throw std::invalid_argument("dimension mismatch");
  WalkComponent c;
  c.sites = trunc.size();
  c.out_rate.assign(c.sites, 0.0);
  c.nbrs.resize(c.sites);
  if (trunc.geometry() == Geometry::periodic) {
    if (!(trunc == fb))
      throw std::invalid_argument("periodic truncation requires the field box itself");
    for (std::size_t v = 0; v < c.sites; ++v) {
      for (int dir = 0; dir < fb.directions(); ++dir) {
        const auto y = fb.neighbour(v, dir);
        if (y < 0) continue;
        const double r = scale * field.rate(v, dir);
        c.out_rate[v] += r;
        c.nbrs[v].emplace_back(static_cast<std::size_t>(y), r);
      }
    }
    return c;
  }
  const LatticeBox grown(trunc.dim(), trunc.radius() + 1, Geometry::absorbing, trunc.origin());
  if (!fb.encloses(grown))
    throw std::invalid_argument(
        "zero-outside truncation needs the field on a box one layer larger");
  for (std::size_t v = 0; v < c.sites; ++v) {
    const std::size_t fv = fb.checked_index(trunc.point(v));
    for (int dir = 0; dir < fb.directions(); ++dir) {
      const double r = scale * field.rate(fv, dir);
      c.out_rate[v] += r;
      const auto y = trunc.neighbour(v, dir);
      if (y >= 0) c.nbrs[v].emplace_back(static_cast<std::size_t>(y), r);
    }
  }
  return c;
}

struct EnvComponent {
  std::size_t states = 1;
  std::vector<double> diag;
  std::vector<std::vector<std::pair<std::size_t, double>>> moves;
  std::vector<double> weights;  // sqrt(mu); empty if trivial
};

using Potential = std::function<double(std::size_t env_state, std::span<const std::size_t> x)>;

inline std::size_t checked_dim(std::size_t env_states, std::span<const WalkComponent> walks,
                               std::size_t budget) {
  long double dim = static_cast<long double>(env_states);
  for (const auto& w : walks) dim *= static_cast<long double>(w.sites);
  if (dim > static_cast<long double>(budget))
    throw BudgetError(dim > 1e18L ? std::size_t(-1) : static_cast<std::size_t>(dim), budget);
  return static_cast<std::size_t>(dim);
}

/// State index = env_state * W + sum_i x_i * stride_i (walk 0 fastest).
inline void assemble(OperatorSpec& op, const EnvComponent& env,
                     std::span<const WalkComponent> walks, const Potential& potential,
                     const OperatorOptions& opt) {
  const std::size_t dim = checked_dim(env.states, walks, opt.max_dim);
  op.dim = dim;
  const std::size_t m = walks.size();
  std::vector<std::size_t> stride(m, 1);
  std::size_t walk_states = 1;
  for (std::size_t i = 0; i < m; ++i) {
    stride[i] = walk_states;
    walk_states *= walks[i].sites;
  }
  std::vector<std::size_t> x(m, 0);
  for (std::size_t s = 0; s < dim; ++s) {
    const std::size_t e = s / walk_states;
    std::size_t rest = s % walk_states;
    for (std::size_t i = 0; i < m; ++i) {
      x[i] = rest % walks[i].sites;
      rest /= walks[i].sites;
    }
    double diag = env.diag.empty() ? 0.0 : env.diag[e];
    if (!opt.drop_potential) diag += potential(e, x);
    if (!opt.zero_conductance) {
      for (std::size_t i = 0; i < m; ++i) {
        diag -= walks[i].out_rate[x[i]];
        for (const auto& [y, r] : walks[i].nbrs[x[i]]) {
          const std::size_t t = s + (y - x[i]) * stride[i];  // unsigned wrap is fine
          if (t > s) {
            op.row.push_back(s);
            op.col.push_back(t);
            op.val.push_back(r);
          }
        }
      }
    }
    op.row.push_back(s);
    op.col.push_back(s);
    op.val.push_back(diag);
    if (!env.moves.empty()) {
      for (const auto& [e2, v] : env.moves[e]) {
        const std::size_t t = e2 * walk_states + (s % walk_states);
        if (t > s) {
          op.row.push_back(s);
          op.col.push_back(t);
          op.val.push_back(v);
        }
      }
    }
  }
  if (!env.weights.empty()) {
    op.weights.resize(dim);
    for (std::size_t s = 0; s < dim; ++s) op.weights[s] = env.weights[s / walk_states];
  }
  op.finalize();
}

inline nlohmann::json box_json(const LatticeBox& b) {
  return {{"dim", b.dim()}, {"radius", b.radius()}, {"geometry", to_string(b.geometry())}};
}

/// Environment-box site of each truncation-box site, wrapping coordinates
/// periodically into the environment box.
inline std::vector<std::size_t> env_sites(const LatticeBox& trunc, const LatticeBox& env_box) {
  if (trunc.dim() != env_box.dim()) throw std::invalid_argument("dimension mismatch");
  std::vector<std::size_t> out(trunc.size());
  const int side = env_box.side();
  const Point& o = env_box.origin();
  for (std::size_t v = 0; v < trunc.size(); ++v) {
    Point p = trunc.point(v);
    for (std::size_t k = 0; k < p.size(); ++k) {
      int c = p[k] - (o.empty() ? 0 : o[k]) + env_box.radius();
      c = ((c % side) + side) % side;
      p[k] = c - env_box.radius() + (o.empty() ? 0 : o[k]);
    }
    out[v] = env_box.checked_index(p);
  }
  return out;
}

}  // namespace detail

/// Space-time white noise: diag(sum_{i<j} 1{x_i = x_j}) plus the generator
/// of p independent K-walks on box^p.
inline OperatorSpec build_wn_operator(const ConductanceField& field, int p,
                                      const LatticeBox& box, const OperatorOptions& opt = {}) {
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  const auto walk = detail::walk_component(field, box, 1.0);
  std::vector<detail::WalkComponent> walks(static_cast<std::size_t>(p), walk);
  OperatorSpec op;
  op.kind = StateSpace::walks_p;
  op.p = p;
  op.state_space = {{"kind", "walks_p"}, {"p", p}, {"box", detail::box_json(box)}};
  auto pot = [p](std::size_t, std::span<const std::size_t> x) {
    double a = 0.0;
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) a += x[static_cast<std::size_t>(i)] == x[static_cast<std::size_t>(j)];
    return a;
  };
  detail::assemble(op, {}, walks, pot, opt);
  return op;
}

/// n independent simple walks with rate rho per edge: diag(sum_{i,j}
/// 1{x_i = y_j}) plus the K-walk generators and the rate-rho generators.
/// rho = 0 is allowed here (frozen environment walks).
inline OperatorSpec build_firw_operator(const ConductanceField& field, int p, int n, double rho,
                                        const LatticeBox& box, const OperatorOptions& opt = {}) {
  if (p < 1 || n < 0) throw std::invalid_argument("need p >= 1 and n >= 0");
  if (rho < 0.0) throw std::invalid_argument("rho must be >= 0");
  const auto walk = detail::walk_component(field, box, 1.0);
  // Rate-rho walk: reuse the box structure with a unit field, scaled.
  const ConductanceField unit(field.box(), std::vector<double>(field.box().edge_count(), 1.0));
  auto env_walk = detail::walk_component(unit, box, rho);
  std::vector<detail::WalkComponent> walks(static_cast<std::size_t>(p), walk);
  for (int j = 0; j < n; ++j) walks.push_back(env_walk);
  OperatorSpec op;
  op.kind = StateSpace::walks_p_plus_n;
  op.p = p;
  op.state_space = {{"kind", "walks_p_plus_n"}, {"p", p}, {"n", n},
                    {"rho", rho},             {"box", detail::box_json(box)}};
  auto pot = [p, n](std::size_t, std::span<const std::size_t> x) {
    double a = 0.0;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < n; ++j) a += x[static_cast<std::size_t>(i)] == x[static_cast<std::size_t>(p + j)];
    return a;
  };
  detail::assemble(op, {}, walks, pot, opt);
  return op;
}

struct IirwParams {
  double nu = 1.0;
  /// Potential cap: V_N = sum_i min(N, eta(x_i)).
  int N = 1;
  /// Occupancy cap of the truncated environment.
  int M = 2;
};

/// Poisson system of walks truncated to occupancies <= M on a periodic
/// environment box; particles hop at rate 1 per edge, moves into full sites
/// are suppressed. Symmetrized by sqrt of the truncated Poisson(nu) product
/// measure, which makes the hop entries sqrt(eta(a) (eta(b) + 1)).
inline OperatorSpec build_iirw_operator(const ConductanceField& field, int p,
                                        const IirwParams& ip, const LatticeBox& env_box,
                                        const LatticeBox& box, const OperatorOptions& opt = {}) {
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  if (!(ip.nu > 0.0)) throw std::invalid_argument("nu must be > 0");
  if (ip.N < 0 || ip.M < 0) throw std::invalid_argument("N and M must be >= 0");
  const std::size_t sites = env_box.size();
  const auto base = static_cast<std::size_t>(ip.M + 1);
  long double states_ld = 1.0L;
  for (std::size_t i = 0; i < sites; ++i) states_ld *= static_cast<long double>(base);
  if (states_ld > static_cast<long double>(opt.max_dim))
    throw BudgetError(static_cast<std::size_t>(std::min<long double>(states_ld, 1e18L)),
                      opt.max_dim);
  const auto states = static_cast<std::size_t>(states_ld);

  const auto walk = detail::walk_component(field, box, 1.0);
  std::vector<detail::WalkComponent> walks(static_cast<std::size_t>(p), walk);
  detail::checked_dim(states, walks, opt.max_dim);

  // Truncated Poisson weights per site.
  std::vector<double> pois(base);
  double z = 0.0;
  for (std::size_t k = 0; k < base; ++k) {
    pois[k] = std::exp(static_cast<double>(k) * std::log(ip.nu) - std::lgamma(static_cast<double>(k) + 1.0));
    z += pois[k];
  }
  for (auto& q : pois) q /= z;

  detail::EnvComponent env;
  env.states = states;
  env.diag.assign(states, 0.0);
  env.moves.resize(states);
  env.weights.assign(states, 1.0);
  std::vector<std::size_t> stride(sites, 1);
  for (std::size_t i = 1; i < sites; ++i) stride[i] = stride[i - 1] * base;
  std::vector<std::vector<int>> occ(states, std::vector<int>(sites));
  for (std::size_t e = 0; e < states; ++e) {
    std::size_t rest = e;
    double mu = 1.0;
    for (std::size_t a = 0; a < sites; ++a) {
      occ[e][a] = static_cast<int>(rest % base);
      rest /= base;
      mu *= pois[static_cast<std::size_t>(occ[e][a])];
    }
    env.weights[e] = std::sqrt(mu);
    for (std::size_t a = 0; a < sites; ++a) {
      const int ea = occ[e][a];
      if (ea == 0) continue;
      for (int dir = 0; dir < env_box.directions(); ++dir) {
        const auto b = env_box.neighbour(a, dir);
        if (b < 0) continue;
        const auto bb = static_cast<std::size_t>(b);
        const int eb = occ[e][bb];
        if (eb >= ip.M) continue;
        env.diag[e] -= ea;
        const std::size_t e2 = e - stride[a] + stride[bb];
        env.moves[e].emplace_back(e2, std::sqrt(static_cast<double>(ea) * (eb + 1)));
      }
    }
  }
  const auto site_of = detail::env_sites(box, env_box);
  const int cap = ip.N;
  auto pot = [&](std::size_t e, std::span<const std::size_t> x) {
    double a = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) a += std::min(cap, occ[e][site_of[x[i]]]);
    return a;
  };
  OperatorSpec op;
  op.kind = StateSpace::env_occupancy;
  op.p = p;
  op.state_space = {{"kind", "env_occupancy"}, {"p", p}, {"nu", ip.nu}, {"N", ip.N},
                    {"M", ip.M},               {"env_box", detail::box_json(env_box)},
                    {"box", detail::box_json(box)}};
  if (ip.M < ip.N) op.warnings.push_back("occupancy cap M is below the potential cap N");
  detail::assemble(op, env, walks, pot, opt);
  return op;
}

/// Glauber dynamics with the Ising rates on a periodic environment box,
/// symmetrized by sqrt of the exact Gibbs measure: flip entries are
/// sqrt(c(y,eta) c(y,eta^y)), the diagonal carries -sum_y c(y,eta), and the
/// potential is sum_i eta(x_i).
inline OperatorSpec build_spinflip_operator(const ConductanceField& field, int p, double beta,
                                            const LatticeBox& env_box, const LatticeBox& box,
                                            const OperatorOptions& opt = {}) {
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  const std::size_t sites = env_box.size();
  if (sites > kMaxExactSites)
    throw BudgetError(std::size_t{1} << std::min<std::size_t>(sites, 62), opt.max_dim);
  const std::size_t states = std::size_t{1} << sites;
  const auto walk = detail::walk_component(field, box, 1.0);
  std::vector<detail::WalkComponent> walks(static_cast<std::size_t>(p), walk);
  detail::checked_dim(states, walks, opt.max_dim);

  GibbsSampler gibbs(env_box, beta, GibbsMethod::exact_enumeration);
  detail::EnvComponent env;
  env.states = states;
  env.diag.assign(states, 0.0);
  env.moves.resize(states);
  env.weights.resize(states);
  std::vector<int> eta(sites), flipped(sites);
  for (std::size_t e = 0; e < states; ++e) {
    for (std::size_t a = 0; a < sites; ++a) eta[a] = static_cast<int>((e >> a) & 1u);
    env.weights[e] = std::sqrt(gibbs.probabilities()[e]);
    for (std::size_t y = 0; y < sites; ++y) {
      const double c = ising_rate(env_box, eta, y, beta);
      flipped = eta;
      flipped[y] = 1 - flipped[y];
      const double cf = ising_rate(env_box, flipped, y, beta);
      env.diag[e] -= c;
      env.moves[e].emplace_back(e ^ (std::size_t{1} << y), std::sqrt(c * cf));
    }
  }
  const auto site_of = detail::env_sites(box, env_box);
  auto pot = [&](std::size_t e, std::span<const std::size_t> x) {
    double a = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) a += static_cast<double>((e >> site_of[x[i]]) & 1u);
    return a;
  };
  OperatorSpec op;
  op.kind = StateSpace::env_spin;
  op.p = p;
  op.state_space = {{"kind", "env_spin"}, {"p", p}, {"beta", beta},
                    {"env_box", detail::box_json(env_box)}, {"box", detail::box_json(box)}};
  detail::assemble(op, env, walks, pot, opt);
  return op;
}

// Eigen-solver ---------------------------------------------------------------

struct EigenOptions {
  double tol = 1e-10;
  /// Maximum number of matrix-vector products.
  std::size_t max_iter = 20000;
  /// Krylov subspace size per restart (reduced for very large operators).
  std::size_t krylov = 60;
};

struct EigenResult {
  double lambda_max = 0.0;
  double lambda_p = 0.0;
  std::size_t iterations = 0;
  std::size_t restarts = 0;
  /// ||H v - lambda v|| / ||v||.
  double residual = 0.0;
  bool converged = false;
  std::vector<double> eigenvector;
};

/// Deterministic start vector: all ones plus the perturbation
/// 0.1 sin(1.2345 (i + 1)), which removes exact orthogonality to
/// eigenvectors that are odd under the lattice symmetries.
inline std::vector<double> lanczos_start(std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    v[i] = 1.0 + 0.1 * std::sin(1.2345 * static_cast<double>(i + 1));
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

/// Largest eigenvalue by restarted Lanczos with full reorthogonalization;
/// each cycle restarts from the current Ritz vector.
inline EigenResult top_eigenvalue(const OperatorSpec& op, const EigenOptions& eo = {}) {
  if (op.dim == 0) throw std::invalid_argument("empty operator");
  const std::size_t n = op.dim;
  std::size_t m = std::min(eo.krylov, n);
  m = std::max<std::size_t>(1, std::min<std::size_t>(m, std::max<std::size_t>(8, 50'000'000 / n)));
  m = std::min(m, n);

  EigenResult res;
  std::vector<double> x = lanczos_start(n);
  std::vector<std::vector<double>> V(m + 1, std::vector<double>(n));
  std::vector<double> w(n), hx(n);
  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  };

  double theta = 0.0;
  for (;;) {
    V[0] = x;
    std::vector<double> alpha, beta;
    std::size_t k = 0;
    for (; k < m; ++k) {
      op.matvec(V[k], w);
      ++res.iterations;
      const double a = dot(w, V[k]);
      alpha.push_back(a);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j <= k; ++j) {
          const double c = dot(w, V[j]);
          for (std::size_t i = 0; i < n; ++i) w[i] -= c * V[j][i];
        }
      }
      const double b = std::sqrt(dot(w, w));
      if (k + 1 == m || b <= 1e-13 * std::max(1.0, std::abs(a))) {
        ++k;
        break;
      }
      beta.push_back(b);
      for (std::size_t i = 0; i < n; ++i) V[k + 1][i] = w[i] / b;
    }
    const auto kk = static_cast<Eigen::Index>(k);
    Eigen::VectorXd diag(kk), sub(std::max<Eigen::Index>(kk - 1, 0));
    for (Eigen::Index i = 0; i < kk; ++i) diag[i] = alpha[static_cast<std::size_t>(i)];
    for (Eigen::Index i = 0; i + 1 < kk; ++i) sub[i] = beta[static_cast<std::size_t>(i)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    if (kk == 1) {
      theta = diag[0];
      x = V[0];
    } else {
      tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      theta = tri.eigenvalues()[kk - 1];
      const Eigen::VectorXd y = tri.eigenvectors().col(kk - 1);
      std::fill(x.begin(), x.end(), 0.0);
      for (Eigen::Index j = 0; j < kk; ++j)
        for (std::size_t i = 0; i < n; ++i) x[i] += y[j] * V[static_cast<std::size_t>(j)][i];
    }
    const double norm = std::sqrt(dot(x, x));
    for (auto& xi : x) xi /= norm;
    op.matvec(x, hx);
    ++res.iterations;
    double r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) r2 += (hx[i] - theta * x[i]) * (hx[i] - theta * x[i]);
    res.residual = std::sqrt(r2);
    if (res.residual <= eo.tol) {
      res.converged = true;
      break;
    }
    if (res.iterations >= eo.max_iter) break;
    ++res.restarts;
  }
  res.lambda_max = theta;
  res.lambda_p = theta / op.p;
  res.eigenvector = std::move(x);
  return res;
}

struct SweepRow {
  double kappa = 0.0;
  double lambda_p = 0.0;
  double residual = 0.0;
  /// Divided differences: first between this and the next grid point,
  /// second centred at this point (NaN where undefined).
  double first_difference = std::nan("");
  double second_difference = std::nan("");
};

/// lambda_p over a kappa grid with a fixed truncation. `builder` maps kappa
/// to an operator.
inline std::vector<SweepRow> kappa_sweep(const std::function<OperatorSpec(double)>& builder,
                                         std::span<const double> kappa_grid,
                                         const EigenOptions& eo = {}) {
  for (std::size_t i = 1; i < kappa_grid.size(); ++i)
    if (!(kappa_grid[i] > kappa_grid[i - 1]))
      throw std::invalid_argument("kappa grid must be strictly increasing");
  std::vector<SweepRow> rows;
  for (double k : kappa_grid) {
    const EigenResult r = top_eigenvalue(builder(k), eo);
    rows.push_back({k, r.lambda_p, r.residual});
  }
  for (std::size_t i = 0; i + 1 < rows.size(); ++i)
    rows[i].first_difference =
        (rows[i + 1].lambda_p - rows[i].lambda_p) / (rows[i + 1].kappa - rows[i].kappa);
  for (std::size_t i = 1; i + 1 < rows.size(); ++i)
    rows[i].second_difference = 2.0 * (rows[i].first_difference - rows[i - 1].first_difference) /
                                (rows[i + 1].kappa - rows[i - 1].kappa);
  return rows;
}

/// Coordinate text `i j value` (upper triangle) after a one-line JSON header.
inline void write_operator(std::ostream& os, const OperatorSpec& op) {
  nlohmann::json header = {{"state_space", op.state_space},
                           {"dim", op.dim},
                           {"p", op.p},
                           {"entries", op.val.size()},
                           {"weighting", op.weights.empty() ? "none" : "sqrt_mu_similarity"}};
  if (!op.warnings.empty()) header["warnings"] = op.warnings;
  os << header.dump() << '\n';
  for (std::size_t k = 0; k < op.val.size(); ++k)
    os << op.row[k] << ' ' << op.col[k] << ' ' << format_double(op.val[k]) << '\n';
}

inline nlohmann::json eigen_json(const EigenResult& r) {
  return {{"lambda_max", r.lambda_max}, {"lambda_p", r.lambda_p},
          {"iterations", r.iterations}, {"restarts", r.restarts},
          {"residual", r.residual},     {"converged", r.converged}};
}

}  // namespace pam

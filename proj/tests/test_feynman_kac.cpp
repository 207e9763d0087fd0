#include <gtest/gtest.h>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <cmath>
#include <sstream>

#include "oracles.hpp"

using namespace pam;

namespace {

Environment static_env(const LatticeBox& box, double c, std::uint64_t seed = 1) {
  return Environment(EnvConfig{StaticPotential{std::vector<double>(box.size(), c)}, box, seed});
}

MomentOptions opts(int p, std::vector<double> grid, std::size_t replicas, std::uint64_t seed) {
  MomentOptions o;
  o.p = p;
  o.t_grid = std::move(grid);
  o.replicas = replicas;
  o.seed = seed;
  return o;
}

/// (e^{TH} g)(s) for symmetric H.
double semigroup(const oracle::Mat& h, double T, const Eigen::VectorXd& g, Eigen::Index s) {
  return (oracle::expm_symmetric(h, T) * g)(s);
}

Eigen::Index diagonal_state(std::size_t site, std::size_t sites, int m) {
  Eigen::Index s = 0, stride = 1;
  for (int i = 0; i < m; ++i) {
    s += static_cast<Eigen::Index>(site) * stride;
    stride *= static_cast<Eigen::Index>(sites);
  }
  return s;
}

/// Independent Green-function solve with Eigen's sparse CG.
double eigen_green(int d, int radius) {
  const LatticeBox b(d, radius);
  const auto n = static_cast<Eigen::Index>(b.size());
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t v = 0; v < b.size(); ++v) {
    t.emplace_back(v, v, 2.0 * d);
    const Point p = b.point(v);
    for (int k = 0; k < d; ++k)
      for (int s : {-1, 1}) {
        Point q = p;
        q[static_cast<std::size_t>(k)] += s;
        if (b.contains(q)) t.emplace_back(v, *b.index(q), -1.0);
      }
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg(a);
  cg.setTolerance(1e-14);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(static_cast<Eigen::Index>(b.center())) = 1.0;
  return cg.solve(rhs)(static_cast<Eigen::Index>(b.center()));
}

}  // namespace

// quenched solver ------------------------------------------------------------

TEST(SolveQuenched, ZeroPotentialIsTheHeatKernel) {
  const auto f = generate_field(LatticeBox(1, 5), IidDiscreteLaw{{0.5, 1.0, 2.0}, {}}, 3);
  const auto env = static_env(LatticeBox(1, 5, Geometry::periodic), 0.0);
  const auto traj = make_trajectory(env, 2.0, 0);
  QuenchedOptions qo;
  qo.dt = 1e-3;
  qo.record_times = {0.5, 1.0, 2.0};
  const auto sol = solve_quenched(f, traj, qo);
  const auto q = oracle::walk_generator(f, f.box());
  const auto o = static_cast<Eigen::Index>(f.box().center());
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = oracle::expm_symmetric(q, qo.record_times[i])(o, o);
    EXPECT_NEAR(std::exp(sol.log_u_origin[i]) / exact, 1.0, 1e-3);
  }
}

TEST(SolveQuenched, ConstantPotentialFactorsOut) {
  const auto f = constant_field(LatticeBox(1, 5), 1.0);
  const LatticeBox eb(1, 5, Geometry::periodic);
  QuenchedOptions qo;
  qo.dt = 1e-3;
  qo.record_times = {1.0, 3.0};
  const auto zero = solve_quenched(f, make_trajectory(static_env(eb, 0.0), 3.0, 0), qo);
  const auto c = solve_quenched(f, make_trajectory(static_env(eb, 0.7), 3.0, 0), qo);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(c.log_u_origin[i] - zero.log_u_origin[i], 0.7 * qo.record_times[i], 1e-12);
}

TEST(SolveQuenched, LogDomainSurvivesUnderflow) {
  const auto f = constant_field(LatticeBox(1, 3), 1.0);
  const LatticeBox eb(1, 3, Geometry::periodic);
  QuenchedOptions qo;
  qo.dt = 0.005;
  qo.record_times = {40.0};
  const auto sol = solve_quenched(f, make_trajectory(static_env(eb, -50.0), 40.0, 0), qo);
  const auto ref = solve_quenched(f, make_trajectory(static_env(eb, 0.0), 40.0, 0), qo);
  ASSERT_TRUE(std::isfinite(sol.log_u_origin[0]));
  EXPECT_NEAR(sol.log_u_origin[0], -2000.0 + ref.log_u_origin[0], 1e-9);
}

TEST(SolveQuenched, WhiteNoiseMeanIsOne) {
  const auto f = constant_field(LatticeBox(1, 5), 1.0);
  const Environment env(EnvConfig{WhiteNoise{}, LatticeBox(1, 5, Geometry::periodic), 17});
  QuenchedOptions qo;
  qo.dt = 0.01;
  qo.initial = InitialCondition::ones;
  qo.record_times = {1.0};
  std::vector<double> u;
  for (std::uint64_t r = 0; r < 10000; ++r)
    u.push_back(std::exp(solve_quenched(f, make_trajectory(env, 1.0, r), qo).log_u_origin[0]));
  const auto ms = mean_and_se(u);
  EXPECT_NEAR(ms.mean, 1.0, 3 * ms.std_error);
}

TEST(SolveQuenched, StabilityRefusalSuggestsStep) {
  const auto f = constant_field(LatticeBox(1, 5), 2.0);
  const auto env = static_env(LatticeBox(1, 5, Geometry::periodic), 1.0);
  QuenchedOptions qo;
  qo.dt = 0.2;
  qo.record_times = {1.0};
  try {
    solve_quenched(f, make_trajectory(env, 1.0, 0), qo);
    FAIL() << "expected StabilityError";
  } catch (const StabilityError& e) {
    EXPECT_GT(e.suggested_dt(), 0.0);
    EXPECT_LT(e.suggested_dt() * (4.0 + 1.0), 0.5);
  }
  qo.record_times = {0.5};
  qo.dt = 0.3;
  EXPECT_THROW(solve_quenched(f, make_trajectory(env, 1.0, 0), qo), std::invalid_argument);
  qo.dt = 0.01;
  const auto small_env = static_env(LatticeBox(1, 2, Geometry::periodic), 0.0);
  EXPECT_THROW(solve_quenched(f, make_trajectory(small_env, 1.0, 0), qo), std::invalid_argument);
}

TEST(SolveQuenched, PocketKillingBoundsFromBelow) {
  const auto f = constant_field(LatticeBox(1, 8), 1.0);
  SpinFlip s;
  s.beta = 0.5;
  const Environment env(EnvConfig{s, LatticeBox(1, 8, Geometry::periodic), 5});
  QuenchedOptions qo;
  qo.dt = 0.01;
  qo.record_times = {1.0, 2.0, 4.0};
  QuenchedOptions qp = qo;
  qp.pocket = LatticeBox(1, 2);
  for (std::uint64_t r = 0; r < 5; ++r) {
    const auto traj = make_trajectory(env, 4.0, r);
    const auto a = solve_quenched(f, traj, qo), b = solve_quenched(f, traj, qp);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_LE(b.log_u_origin[i], a.log_u_origin[i]);
      EXPECT_TRUE(std::isfinite(b.log_u_origin[i]));
    }
  }
}

TEST(SolveQuenched, DecoratedEqualsEffective) {
  const LatticeBox box(1, 6);
  const auto dec = DecoratedConductanceField::constant(box, 0.3, 0.5);
  SpinFlip s;
  s.beta = 0.5;
  const Environment env(EnvConfig{s, LatticeBox(1, 6, Geometry::periodic), 5});
  QuenchedOptions qo;
  qo.dt = 0.01;
  qo.record_times = {2.0};
  const auto traj = make_trajectory(env, 2.0, 1);
  EXPECT_NEAR(solve_quenched(dec, traj, qo).log_u_origin[0],
              solve_quenched(decorated_to_effective(dec), traj, qo).log_u_origin[0], 1e-12);
}

// white-noise moments ----------------------------------------------------------

TEST(MomentWhiteNoise, FirstMomentIsOne) {
  const auto f = constant_field(LatticeBox(1, 10), 1.0);
  const auto s = moment_white_noise(f, opts(1, {1.0, 2.0}, 100, 1));
  for (const auto& e : s.estimates) EXPECT_EQ(e.log_value, 0.0);
}

TEST(MomentWhiteNoise, FrozenWalksGiveHalf) {
  const auto f = constant_field(LatticeBox(1, 10), 1e-6);
  const auto s = moment_white_noise(f, opts(2, {4.0}, 2000, 2));
  EXPECT_NEAR(s.estimates[0].log_value / 8.0, 0.5, 0.025);
}

TEST(MomentWhiteNoise, MatchesFiniteTimeSemigroup) {
  const auto f = generate_field(LatticeBox(1, 6), IidDiscreteLaw{{0.5, 1.0}, {}}, 4);
  const auto h = oracle::wn_dense(f, 2, f.box());
  const auto s0 = diagonal_state(f.box().center(), f.box().size(), 2);
  const auto s = moment_white_noise(f, opts(2, {1.0, 2.0}, 100000, 5));
  for (const auto& e : s.estimates) {
    const double exact = std::log(semigroup(h, e.t, Eigen::VectorXd::Ones(h.rows()), s0));
    EXPECT_NEAR(e.log_value, exact, 4 * e.log_std_error) << "t=" << e.t;
  }
  // delta_0 start: both walks must sit at the origin at time t
  auto o = opts(2, {2.0}, 100000, 6);
  o.initial = InitialCondition::delta0;
  const auto d = moment_white_noise(f, o).estimates[0];
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(h.rows());
  delta(s0) = 1.0;
  EXPECT_NEAR(d.log_value, std::log(semigroup(h, 2.0, delta, s0)), 4 * d.log_std_error);
}

TEST(MomentWhiteNoise, ConfinedNeverExceedsUnconfined) {
  const auto f = constant_field(LatticeBox(1, 20), 1.0);
  auto a = opts(2, {2.0, 4.0}, 2000, 7);
  auto b = a;
  b.pocket = LatticeBox(1, 2);
  const auto sa = moment_white_noise(f, a), sb = moment_white_noise(f, b);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t r = 0; r < 2000; ++r) EXPECT_LE(sb.log_samples[g][r], sa.log_samples[g][r]);
    EXPECT_EQ(sb.estimates[g].confined_radius, 2);
  }
}

TEST(MomentWhiteNoise, ThreadCountDoesNotChangeSamples) {
  const auto f = constant_field(LatticeBox(1, 20), 1.0);
  auto a = opts(3, {1.0, 2.0}, 500, 8);
  auto b = a;
  b.threads = 3;
  EXPECT_EQ(moment_white_noise(f, a).log_samples, moment_white_noise(f, b).log_samples);
}

// finite walks --------------------------------------------------------------

TEST(MomentFiniteWalks, Examples) {
  const auto f = constant_field(LatticeBox(1, 10), 1.0);
  for (const auto& e : moment_finite_rw(f, 0, 1.0, opts(2, {1.0, 2.0}, 50, 1)).estimates)
    EXPECT_EQ(e.log_value, 0.0);
  const auto frozen = constant_field(LatticeBox(1, 10), 1e-6);
  const auto s = moment_finite_rw(frozen, 1, 1e-6, opts(1, {3.0}, 500, 2));
  EXPECT_NEAR(s.estimates[0].log_value, 3.0, 1e-3);
}

TEST(MomentFiniteWalks, MatchesFiniteTimeSemigroup) {
  const auto f = constant_field(LatticeBox(1, 6), 1.0);
  const auto h = oracle::firw_dense(f, 1, 1, 1.0, f.box());
  const auto s0 = diagonal_state(f.box().center(), f.box().size(), 2);
  const auto s = moment_finite_rw(f, 1, 1.0, opts(1, {1.0, 4.0}, 100000, 3));
  for (const auto& e : s.estimates) {
    const double exact = std::log(semigroup(h, e.t, Eigen::VectorXd::Ones(h.rows()), s0));
    EXPECT_NEAR(e.log_value, exact, 4 * e.log_std_error) << "t=" << e.t;
  }
}

TEST(MomentFiniteWalks, ExponentConvergesToTheEigenvalue) {
  // p = n = 1, kappa = rho = 1 on a reflecting box: the finite-time exponent
  // of the exact semigroup approaches the top eigenvalue at rate O(1/T)
  const auto f = constant_field(LatticeBox(1, 6), 1.0);
  const auto h = oracle::firw_dense(f, 1, 1, 1.0, f.box());
  const auto s0 = diagonal_state(f.box().center(), f.box().size(), 2);
  const double top = oracle::top_symmetric(h);
  double prev_gap = std::numeric_limits<double>::infinity();
  for (double T : {32.0, 64.0, 128.0, 256.0}) {
    const double ex = std::log(semigroup(h, T, Eigen::VectorXd::Ones(h.rows()), s0)) / T;
    const double gap = std::abs(ex - top);
    EXPECT_LT(gap, prev_gap) << "T=" << T;
    EXPECT_LT(gap * T, 2.0) << "T=" << T;
    prev_gap = gap;
  }
}

// w-equation, Green function, infinite walks -------------------------------------

TEST(WEquation, ZeroHorizonAndMonotonePinnedSource) {
  const LatticeBox b(3, 6);
  WalkPath pinned;
  pinned.box = b;
  pinned.start = b.center();
  pinned.positions = {b.center()};
  pinned.horizon = 6.0;
  const std::vector<WalkPath> paths{pinned};
  const auto zero = solve_w_along_path(paths, b, 0.0, 0.05, {}, false);
  ASSERT_EQ(zero.origin_trace.size(), 1u);
  EXPECT_EQ(zero.origin_trace[0], 0.0);
  const std::vector<double> rec{0.0, 3.0, 6.0};
  const auto sol = solve_w_along_path(paths, b, 6.0, 0.05, rec, true);
  for (std::size_t k = 1; k < sol.origin_trace.size(); ++k)
    EXPECT_GE(sol.origin_trace[k], sol.origin_trace[k - 1]);
  for (const auto& snap : sol.snapshots)
    for (double w : snap) EXPECT_GE(w, 0.0);
  for (double w : sol.snapshots[0]) EXPECT_EQ(w, 0.0);
  // the path integral of a pinned walk is the integral of the origin trace
  double trap = 0.0;
  for (std::size_t k = 1; k < sol.origin_trace.size(); ++k)
    trap += 0.5 * 0.05 * (sol.origin_trace[k] + sol.origin_trace[k - 1]);
  EXPECT_NEAR(sol.path_integrals[0][2], trap, 1e-9);
  EXPECT_THROW(solve_w_along_path(paths, b, 1.0, 0.1), StabilityError);
}

TEST(GreenFunction, DivergenceAndValues) {
  EXPECT_TRUE(green_function(1, 20).divergent);
  EXPECT_TRUE(green_function(2, 20).divergent);
  EXPECT_TRUE(std::isinf(green_function(1, 20).wbar_limit(0.1)));
  const auto g = green_function(3, 12);
  ASSERT_FALSE(g.divergent);
  EXPECT_NEAR(g.value, eigen_green(3, 12), 1e-10);
  EXPECT_NEAR(g.half_radius_value, eigen_green(3, 6), 1e-10);
  // Dirichlet values increase towards the whole-space value 1.516386/6
  EXPECT_LT(g.half_radius_value, g.value);
  EXPECT_LT(g.value, 1.5163860591519780 / 6.0);
  EXPECT_GT(g.value, 0.0);
  EXPECT_TRUE(std::isinf(g.wbar_limit(g.threshold())));
  EXPECT_NEAR(g.wbar_limit(1.0), g.value / (1.0 - g.value), 1e-15);
}

TEST(MomentInfiniteWalks, VanishingDensityGivesOne) {
  const auto f = constant_field(LatticeBox(3, 5), 1.0);
  InfiniteWalkOptions iw;
  iw.nu = 1e-6;
  const auto s = moment_infinite_rw(f, iw, opts(1, {1.0, 2.0}, 20, 1));
  for (const auto& e : s.estimates) EXPECT_NEAR(e.log_value, 0.0, 1e-5);
}

TEST(MomentInfiniteWalks, RunningExponentIncreasesInThreeDimensions) {
  const auto f = constant_field(LatticeBox(3, 8), 1.0);
  InfiniteWalkOptions iw;
  iw.nu = 1.0;
  iw.dt = 0.05;
  const auto s = moment_infinite_rw(f, iw, opts(1, {2.0, 4.0, 8.0}, 100, 2));
  double prev = iw.nu;
  for (const auto& e : s.estimates) {
    EXPECT_FALSE(e.diverging);
    EXPECT_GT(e.log_value / e.t, prev);
    prev = e.log_value / e.t;
  }
}

TEST(MomentInfiniteWalks, OneDimensionIsFlaggedDiverging) {
  const auto f = constant_field(LatticeBox(1, 20), 1.0);
  InfiniteWalkOptions iw;
  iw.nu = 1.0;
  iw.dt = 0.1;
  const auto s = moment_infinite_rw(f, iw, opts(1, {4.0, 8.0, 16.0}, 50, 3));
  double prev = 0.0;
  for (const auto& e : s.estimates) {
    EXPECT_TRUE(e.diverging);
    EXPECT_GT(e.log_value / e.t, prev);
    prev = e.log_value / e.t;
  }
}

TEST(MomentsCsv, Header) {
  const auto f = constant_field(LatticeBox(1, 5), 1.0);
  const auto s = moment_white_noise(f, opts(2, {1.0}, 10, 1));
  std::ostringstream os;
  write_moments_csv(os, s.estimates);
  EXPECT_EQ(os.str().rfind("p,t,log_moment,std_error,replicas,confined_radius\n", 0), 0u);
}

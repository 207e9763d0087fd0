#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"

using namespace pam;

namespace {

RngStream walk_rng(std::uint64_t seed, std::uint64_t r) { return RngStream(seed, stream_id(r, slot::walk_base)); }

std::vector<double> end_histogram(const std::function<WalkPath(std::uint64_t)>& sim, std::size_t sites,
                                  std::size_t n) {
  std::vector<double> h(sites, 0.0);
  for (std::uint64_t r = 0; r < n; ++r) h[sim(r).final_position()] += 1.0;
  return h;
}

}  // namespace

TEST(SimulatePath, JumpCountIsPoisson) {
  const double kappa = 0.7, T = 2.0;
  const auto f = constant_field(LatticeBox(2, 6, Geometry::periodic), kappa);
  std::vector<double> n;
  for (std::uint64_t r = 0; r < 100000; ++r) {
    auto rng = walk_rng(1, r);
    n.push_back(static_cast<double>(simulate_path(f, f.box().center(), T, rng).jumps()));
  }
  const auto ms = mean_and_se(n);
  EXPECT_NEAR(ms.mean, 4 * kappa * T, 0.01 * 4 * kappa * T);
}

TEST(SimulatePath, PathValidity) {
  const auto f = generate_field(LatticeBox(2, 3), IidDiscreteLaw{{0.3, 1.0, 2.0}, {}}, 2);
  for (std::uint64_t r = 0; r < 500; ++r) {
    auto rng = walk_rng(2, r);
    const auto p = simulate_path(f, f.box().center(), 4.0, rng);
    double prev = 0.0;
    for (std::size_t l = 0; l < p.jumps(); ++l) {
      EXPECT_GT(p.jump_times[l], prev);
      prev = p.jump_times[l];
      EXPECT_EQ(f.box().neighbour(p.positions[l], p.dirs[l]), static_cast<std::int64_t>(p.positions[l + 1]));
      EXPECT_GT(f.rate(p.positions[l], p.dirs[l]), 0.0);
    }
    EXPECT_LE(prev, 4.0);
  }
}

TEST(SimulatePath, ThreeSiteOccupationMatchesMatrixExponential) {
  // odd box sides only: the smallest non-trivial box has three sites
  const ConductanceField f(LatticeBox(1, 1), {0.4, 1.3});
  const auto P = oracle::expm_symmetric(oracle::walk_generator(f, f.box()), 1.0);
  const std::size_t n = 400000;
  const auto h = end_histogram(
      [&](std::uint64_t r) {
        auto rng = walk_rng(3, r);
        return simulate_path(f, f.box().center(), 1.0, rng);
      },
      3, n);
  const auto c = static_cast<Eigen::Index>(f.box().center());
  for (Eigen::Index y = 0; y < 3; ++y) {
    const double p = P(c, y);
    EXPECT_NEAR(h[static_cast<std::size_t>(y)] / n, p, std::max(1e-3, 4 * std::sqrt(p * (1 - p) / n)));
  }
}

TEST(SimulatePath, DecoratedMatchesEffectiveInLaw) {
  const LatticeBox box(1, 8);
  const auto dec = DecoratedConductanceField::constant(box, 0.3, 0.9);
  const auto simple = constant_field(box, 1.2);
  const std::size_t n = 100000;
  const auto hd = end_histogram(
      [&](std::uint64_t r) {
        auto rng = walk_rng(14, r);
        RngStream labels(4, stream_id(r, slot::label));
        return simulate_path(dec, box.center(), 1.0, rng, labels);
      },
      box.size(), n);
  const auto hs = end_histogram(
      [&](std::uint64_t r) {
        auto rng = walk_rng(15, r);
        return simulate_path(simple, box.center(), 1.0, rng);
      },
      box.size(), n);
  const auto chi = chi2_two_sample(hd, hs, 0.01);
  EXPECT_TRUE(chi.passed) << chi.statistic << " > " << chi.critical;
}

TEST(SimulatePath, DecoratedSharesTheEffectiveLog) {
  const LatticeBox box(2, 4);
  const auto dec = DecoratedConductanceField::constant(box, 0.25, 0.5);
  const auto eff = decorated_to_effective(dec);
  std::size_t red = 0, total = 0;
  for (std::uint64_t r = 0; r < 2000; ++r) {
    auto a = walk_rng(6, r), b = walk_rng(6, r);
    RngStream labels(6, stream_id(r, slot::label));
    const auto pd = simulate_path(dec, box.center(), 3.0, a, labels);
    const auto pe = simulate_path(eff, box.center(), 3.0, b);
    ASSERT_EQ(pd.jump_times, pe.jump_times);
    ASSERT_EQ(pd.positions, pe.positions);
    ASSERT_EQ(pd.labels.size(), pd.jumps());
    for (auto l : pd.labels) red += l == 0;
    total += pd.jumps();
  }
  const double frac = static_cast<double>(red) / static_cast<double>(total);
  EXPECT_NEAR(frac, 1.0 / 3.0, 4 * std::sqrt(frac * (1 - frac) / static_cast<double>(total)));
}

TEST(SimulatePath, ReversibleOnPeriodicBox) {
  const auto f = generate_field(LatticeBox(1, 3, Geometry::periodic), IidDiscreteLaw{{0.5, 1.5}, {}}, 8);
  const auto& box = f.box();
  const std::size_t o = box.center(), x = *box.index({2});
  const std::size_t n = 200000;
  double to_x = 0, to_o = 0;
  for (std::uint64_t r = 0; r < n; ++r) {
    auto a = walk_rng(7, r), b = walk_rng(8, r);
    to_x += simulate_path(f, o, 1.5, a).final_position() == x;
    to_o += simulate_path(f, x, 1.5, b).final_position() == o;
  }
  const double p = 0.5 * (to_x + to_o) / n;
  EXPECT_NEAR(to_x / n, to_o / n, 4 * std::sqrt(2 * p * (1 - p) / n));
}

TEST(Confinement, Examples) {
  const LatticeBox box(1, 10);
  const auto f = constant_field(box, 1.0);
  const LatticeBox pocket(1, 3);
  WalkPath still;
  still.box = box;
  still.start = box.center();
  still.horizon = 5.0;
  still.positions = {box.center()};
  EXPECT_TRUE(confinement_indicator(still, pocket));

  WalkPath out = still;
  out.jump_times = {0.5, 1.0, 1.5, 2.0};
  out.positions.clear();
  for (int x : {0, 1, 2, 3, 4}) out.positions.push_back(*box.index({x}));
  out.dirs.assign(4, 0);
  EXPECT_FALSE(confinement_indicator(out, pocket));
  EXPECT_TRUE(confined_until(out, pocket_mask(box, pocket), 1.9));
}

TEST(Confinement, ProbabilityMatchesDirichletSemigroup) {
  const auto f = constant_field(LatticeBox(1, 10), 1.0);
  const LatticeBox pocket(1, 3);
  const auto P = oracle::expm_symmetric(oracle::walk_generator(f, pocket), 1.0);
  const double exact = P.row(*pocket.index({0})).sum();
  const std::size_t n = 1000000;
  double hits = 0;
  for (std::uint64_t r = 0; r < n; ++r) {
    auto rng = walk_rng(9, r);
    hits += confinement_indicator(simulate_path(f, f.box().center(), 1.0, rng), pocket);
  }
  EXPECT_NEAR(hits / n, exact, 1e-3);
}

TEST(Girsanov, IdentityAndZeroJumpForm) {
  const auto f = generate_field(LatticeBox(1, 4), IidDiscreteLaw{{0.5, 1.0, 1.5}, {}}, 10);
  const auto fn = discretize_field(f, 2);
  for (std::uint64_t r = 0; r < 200; ++r) {
    auto rng = walk_rng(10, r);
    const auto p = simulate_path(f, f.box().center(), 1.0, rng);
    EXPECT_EQ(girsanov_weight(p, f, f).log_weight, 0.0);
  }
  WalkPath still;
  still.box = f.box();
  still.start = 2;
  still.horizon = 0.7;
  still.positions = {2};
  const auto w = girsanov_weight(still, f, fn);
  EXPECT_DOUBLE_EQ(w.log_weight, -0.7 * (fn.total_rate(2) - f.total_rate(2)));
  EXPECT_THROW(girsanov_weight(still, f, constant_field(LatticeBox(1, 5), 1.0)), std::invalid_argument);
}

TEST(Girsanov, BoundHoldsOnEveryPath) {
  const auto f = generate_field(LatticeBox(2, 4), IidDiscreteLaw{{0.5, 0.8, 1.2, 1.5}, {}}, 11);
  const double T = 1.0;
  for (int n : {1, 2, 4}) {
    const auto fn = discretize_field(f, n);
    const double bound = 2.0 * 2 * T * (f.upper() - f.lower()) / n;
    for (std::uint64_t r = 0; r < 20000; ++r) {
      auto rng = walk_rng(12, r);
      const auto w = girsanov_weight(simulate_path(f, f.box().center(), T, rng), f, fn);
      ASSERT_LE(w.jump_term, 0.0);
      ASSERT_LE(w.time_term, bound + 1e-12);
    }
  }
}

TEST(Girsanov, ReweightingIsUnbiased) {
  const auto f = generate_field(LatticeBox(1, 4), IidDiscreteLaw{{0.5, 1.0, 1.5}, {}}, 13);
  const auto fn = discretize_field(f, 2);
  const double T = 0.5;
  const auto o = f.box().center();
  const double exact = oracle::expm_symmetric(oracle::walk_generator(fn, fn.box()), T)(
      static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(o));
  std::vector<double> xs;
  for (std::uint64_t r = 0; r < 200000; ++r) {
    auto rng = walk_rng(14, r);
    const auto p = simulate_path(f, o, T, rng);
    xs.push_back(p.final_position() == o ? std::exp(girsanov_weight(p, f, fn).log_weight) : 0.0);
  }
  const auto ms = mean_and_se(xs);
  EXPECT_NEAR(ms.mean, exact, 3 * ms.std_error);
}

TEST(PathCsv, HeaderAndRows) {
  const auto f = constant_field(LatticeBox(1, 3), 1.0);
  auto rng = walk_rng(15, 0);
  const auto p = simulate_path(f, f.box().center(), 2.0, rng);
  std::ostringstream os;
  write_path_csv(os, p);
  const auto text = os.str();
  EXPECT_EQ(text.rfind("jump_time,site_coords\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), p.jumps() + 2);
}

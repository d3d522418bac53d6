#include <gtest/gtest.h>

#include <cmath>

#include "embrenorm/theory_sim.hpp"
#include "oracles.hpp"

using namespace embrenorm;
using namespace embrenorm::sim;

namespace {

SimConfig standard() {
  SimConfig c;
  c.dim = 512;
  c.mu_norm = 0.8;
  c.eps_norm = 0.01;
  c.eps_parallel_fraction = 0.7;
  c.signal_norm = 0.6;
  c.trials = 1000;
  return c;
}

}  // namespace

TEST(SimConfig, Validation) {
  auto bad = [](auto mutate) {
    SimConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), Error);
  };
  bad([](SimConfig& c) { c.dim = 7; });
  bad([](SimConfig& c) { c.mu_norm = 0.0; });
  bad([](SimConfig& c) { c.mu_norm = 1.5; });
  bad([](SimConfig& c) { c.eps_norm = 0.0; });
  bad([](SimConfig& c) { c.eps_norm = 0.9; });
  bad([](SimConfig& c) { c.eps_parallel_fraction = 1.1; });
  bad([](SimConfig& c) { c.signal_norm = 0.0; });
  bad([](SimConfig& c) { c.trials = 0; });
  EXPECT_NO_THROW(SimConfig{}.validate());
}

TEST(Theory, R1GapIsZeroToMachinePrecision) {
  const auto r = run_sim(standard(), Parallelism{2});
  EXPECT_LE(r.max_gap_r1, 1e-12);
}

TEST(Theory, VanishingErrorLeavesNoGap) {
  auto c = standard();
  c.eps_norm = 1e-12;
  c.trials = 50;
  for (std::uint64_t t = 0; t < c.trials; ++t) {
    const auto r = run_trial(c, t);
    EXPECT_LE(r.gap_r2, 1e-9);
    EXPECT_LE(r.angle_r2, 1e-6);
  }
}

TEST(Theory, TrialMatchesClosedForm) {
  for (double f : {0.0, 0.3, 0.7, 1.0}) {
    for (double eps : {1e-3, 1e-2, 5e-2}) {
      auto c = standard();
      c.eps_parallel_fraction = f;
      c.eps_norm = eps;
      const auto want = oracle::theory(c.mu_norm, eps, f, c.signal_norm);
      for (std::uint64_t t = 0; t < 5; ++t) {
        const auto got = run_trial(c, t);
        EXPECT_NEAR(got.gap_r2, want.gap_r2, 1e-12 + 1e-9 * want.gap_r2);
        EXPECT_NEAR(got.angle_r1, want.angle_r1, 1e-12);
        EXPECT_NEAR(got.angle_r2, want.angle_r2, 1e-12);
      }
    }
  }
}

TEST(Theory, PurelyParallelErrorGapIsSecondOrder) {
  auto c = standard();
  c.eps_parallel_fraction = 1.0;
  const auto r = run_sim(c);
  EXPECT_LE(r.mean_gap_r2, 5.0 * c.eps_norm * c.eps_norm / c.mu_norm);
}

TEST(Theory, StandardConfigR2BeatsR1) {
  const auto r = run_sim(standard());
  EXPECT_LT(r.mean_angle_r2, r.mean_angle_r1);
}

TEST(Theory, PerpendicularErrorGivesMatchingAngles) {
  auto c = standard();
  c.eps_parallel_fraction = 0.0;
  const auto r = run_sim(c);
  const auto want = oracle::theory(c.mu_norm, c.eps_norm, 0.0, c.signal_norm);
  EXPECT_NEAR(r.mean_angle_r1, want.angle_r1, 1e-12);
  EXPECT_NEAR(r.mean_angle_r2, want.angle_r2, 1e-12);
  EXPECT_NEAR(r.mean_angle_r1, r.mean_angle_r2, 1e-4 * r.mean_angle_r1);
}

TEST(Theory, DeterministicAndThreadIndependent) {
  auto c = standard();
  c.trials = 1;
  const auto a = run_sim(c), b = run_sim(c);
  EXPECT_EQ(a.mean_angle_r1, b.mean_angle_r1);
  EXPECT_EQ(a.mean_gap_r2, b.mean_gap_r2);
  c.trials = 200;
  c.mode = Orthogonality::Relaxed;
  const auto x = run_sim(c, Parallelism{1}), y = run_sim(c, Parallelism{6});
  EXPECT_EQ(x.mean_angle_r2, y.mean_angle_r2);
  EXPECT_EQ(x.mean_gap_r2, y.mean_gap_r2);
}

TEST(Theory, QuadraticScalingInEps) {
  const std::vector<double> eps{1e-3, 3e-3, 1e-2, 3e-2};
  const auto pts = sweep_eps(standard(), eps);
  std::vector<double> gaps;
  for (const auto& p : pts) gaps.push_back(p.result.mean_gap_r2);
  EXPECT_NEAR(loglog_slope(eps, gaps), 2.0, 0.2);
}

TEST(Theory, GapShrinksWithLargerBias) {
  auto lo = standard(), hi = standard();
  lo.mu_norm = 0.4;
  const auto a = run_sim(lo), b = run_sim(hi);
  EXPECT_GE(a.mean_gap_r2, 1.5 * b.mean_gap_r2);
}

TEST(Theory, DominanceAcrossSeedsAndFractions) {
  for (double f : {0.3, 0.5, 0.7, 1.0}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      auto c = standard();
      c.eps_parallel_fraction = f;
      c.seed = seed;
      c.trials = 100;
      const auto r = run_sim(c);
      EXPECT_LE(r.mean_angle_r2, r.mean_angle_r1) << "f=" << f << " seed=" << seed;
    }
  }
}

TEST(Theory, RelaxedModeKeepsTheOrdering) {
  auto c = standard();
  c.mode = Orthogonality::Relaxed;
  const auto r = run_sim(c);
  EXPECT_LE(r.max_gap_r1, 1e-12);
  EXPECT_LT(r.mean_angle_r2, r.mean_angle_r1);
}

TEST(Theory, LogLogSlopeOfExactPowerLaw) {
  const std::vector<double> x{1, 2, 4, 8}, y{3, 12, 48, 192};
  EXPECT_NEAR(loglog_slope(x, y), 2.0, 1e-12);
  const std::vector<double> bad{0, 1, 2, 3};
  EXPECT_THROW(loglog_slope(bad, y), Error);
}

#include "pcwl/wmmse.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace pcwl;

namespace {

NetworkSnapshot two_link(double direct, double cross) {
  NetworkSnapshot s;
  s.gains.resize(2, 2);
  s.gains << direct, cross, cross, direct;
  s.noise_mw = Scenario{}.noise_power_mw();
  s.p_max_mw = 10.0;
  return s;
}

WmmseConfig cfg(UtilityTag t, int restarts = 100) {
  WmmseConfig c;
  c.utility.tag = t;
  c.restarts = restarts;
  return c;
}

bool feasible(const VecD& p, double pmax) { return (p.array() >= 0.0).all() && (p.array() <= pmax).all(); }

const UtilityTag kAll[] = {UtilityTag::SumRate, UtilityTag::ProportionalFairness, UtilityTag::Harmonic};

}  // namespace

TEST(Wmmse, SingleLinkReachesFullPowerQuickly) {
  Scenario sc;
  sc.pair_count = 1;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto s = generate_snapshot(sc, 0, i);
    for (auto t : kAll) {
      const auto c = cfg(t);
      const auto r = wmmse_solve(s, c, wmmse_initial_power(s, c, 0));
      EXPECT_LE(r.iterations_used, 2);
      EXPECT_NEAR(r.p[0], s.p_max_mw, 1e-9 * s.p_max_mw);
      EXPECT_NEAR(wmmse_best(s, c).p[0], s.p_max_mw, 1e-6 * s.p_max_mw);
    }
  }
}

TEST(Wmmse, SumRateTraceMonotone) {
  Scenario sc;
  sc.pair_count = 2;
  const auto c = cfg(UtilityTag::SumRate, 5);
  for (std::uint64_t i = 0; i < 300; ++i) {
    const auto s = generate_snapshot(sc, 0, i);
    for (const auto& run : wmmse_runs(s, c))
      for (std::size_t t = 1; t < run.trace.size(); ++t) ASSERT_GE(run.trace[t], run.trace[t - 1] - 1e-9);
  }
}

TEST(Wmmse, NearGridOptimumForThreeLinks) {
  Scenario sc;
  sc.pair_count = 3;
  const auto c = cfg(UtilityTag::SumRate);
  int close = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    const auto s = generate_snapshot(sc, 4, static_cast<std::uint64_t>(i));
    const double oracle = grid_oracle(s, 31, UtilityTag::SumRate).objective;
    if (wmmse_best(s, c).objective >= 0.99 * oracle) ++close;
  }
  EXPECT_GE(close, static_cast<int>(0.95 * n));
}

TEST(Wmmse, BestAndAverage) {
  const auto s = generate_snapshot(Scenario{}, 0, 1);
  for (auto t : kAll) {
    const auto one = cfg(t, 1);
    EXPECT_EQ(wmmse_best(s, one).objective, wmmse_avg(s, one));
    const auto many = cfg(t, 12);
    const auto runs = wmmse_runs(s, many);
    ASSERT_EQ(runs.size(), 12u);
    EXPECT_GE(best_of(runs).objective, average_objective(runs));
    for (std::size_t i = 0; i < runs.size(); ++i) EXPECT_EQ(runs[i].restart_index, static_cast<int>(i));
  }
}

TEST(Wmmse, FullReuseNeverBeatsBest) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto s = generate_snapshot(Scenario{}, 5, i);
    const double fr = objective_of(s, full_reuse(s), UtilityTag::SumRate);
    EXPECT_GE(wmmse_best(s, cfg(UtilityTag::SumRate, 4)).objective, fr);
  }
}

TEST(Wmmse, FeasibleAndFiniteUnderHarmonic) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto s = generate_snapshot(Scenario{}, 6, i);
    for (const auto& r : wmmse_runs(s, cfg(UtilityTag::Harmonic, 5))) {
      EXPECT_TRUE(r.p.allFinite());
      EXPECT_TRUE(feasible(r.p, s.p_max_mw));
      EXPECT_LE(r.trace.size(), 101u);
      EXPECT_FALSE(std::isnan(r.objective));
    }
  }
}

TEST(Wmmse, Deterministic) {
  const auto s = generate_snapshot(Scenario{}, 0, 9);
  const auto a = wmmse_best(s, cfg(UtilityTag::ProportionalFairness, 6));
  const auto b = wmmse_best(s, cfg(UtilityTag::ProportionalFairness, 6));
  EXPECT_EQ(std::memcmp(a.p.data(), b.p.data(), sizeof(double) * 20), 0);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(Wmmse, InitialPowers) {
  const auto s = generate_snapshot(Scenario{}, 0, 2);
  auto c = cfg(UtilityTag::SumRate);
  EXPECT_EQ(wmmse_initial_power(s, c, 0), full_power(s));
  for (int i = 1; i < 10; ++i) EXPECT_TRUE(feasible(wmmse_initial_power(s, c, i), s.p_max_mw));
  c.init = WmmseInit::UniformRandom;
  EXPECT_NE(wmmse_initial_power(s, c, 0), full_power(s));
}

TEST(Wmmse, RejectsInfeasibleInitAndBadConfig) {
  const auto s = generate_snapshot(Scenario{}, 0, 2);
  VecD p = full_power(s);
  p[0] = 11.0;
  EXPECT_THROW(wmmse_solve(s, cfg(UtilityTag::SumRate), p), DomainError);
  auto c = cfg(UtilityTag::SumRate);
  c.max_iterations = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = cfg(UtilityTag::SumRate, 0);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(FullReuse, AllAtMaxPower) {
  Scenario sc;
  sc.pair_count = 3;
  const auto s = generate_snapshot(sc, 0, 0);
  EXPECT_EQ(full_reuse(s), VecD::Constant(3, s.p_max_mw));
}

TEST(GridOracle, SingleLinkPicksMaxPower) {
  Scenario sc;
  sc.pair_count = 1;
  const auto s = generate_snapshot(sc, 0, 0);
  for (auto t : kAll) EXPECT_EQ(grid_oracle(s, 11, t).p[0], s.p_max_mw);
}

TEST(GridOracle, CrushingInterferenceSwitchesOneOff) {
  const auto s = two_link(1e-9, 1e-6);
  const auto r = grid_oracle(s, 101, UtilityTag::SumRate);
  const int zeros = (r.p[0] == 0.0) + (r.p[1] == 0.0);
  EXPECT_EQ(zeros, 1);
  EXPECT_EQ(r.p.maxCoeff(), s.p_max_mw);
}

TEST(GridOracle, WeakInterferenceUsesFullPower) {
  const auto s = two_link(1e-6, 1e-15);
  const auto r = grid_oracle(s, 101, UtilityTag::SumRate);
  EXPECT_EQ(r.p, VecD::Constant(2, s.p_max_mw));
}

TEST(GridOracle, BudgetAndLevels) {
  Scenario sc;
  sc.pair_count = 5;
  const auto s = generate_snapshot(sc, 0, 0);
  EXPECT_THROW(grid_oracle(s, 101, UtilityTag::SumRate), TooLarge);
  EXPECT_THROW(grid_oracle(s, 1, UtilityTag::SumRate), ConfigError);
}

TEST(GridOracle, DominatesEveryOtherAlgorithmOnItsGrid) {
  Scenario sc;
  sc.pair_count = 2;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = generate_snapshot(sc, 7, i);
    const auto g = grid_oracle(s, 101, UtilityTag::SumRate);
    EXPECT_GE(g.objective, objective_of(s, full_reuse(s), UtilityTag::SumRate));
    // Any grid point is no better.
    VecD q(2);
    q << 0.3 * s.p_max_mw, 0.7 * s.p_max_mw;
    EXPECT_GE(g.objective, objective_of(s, q, UtilityTag::SumRate));
  }
}

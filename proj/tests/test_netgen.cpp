#include "pcwl/netgen.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <tuple>

using namespace pcwl;

namespace {

double min_pairwise(const std::vector<Point>& pts) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) m = std::min(m, distance(pts[a], pts[b]));
  return m;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// Independent reference generator: transmitters by sequential inhibition,
// receivers by rejection from the bounding square of the outer disk until the
// point lands in the ring, inside the area, and nearest to its own
// transmitter.
Topology brute_force_topology(const Scenario& sc, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(0.0, sc.area_side);
  std::uniform_real_distribution<double> box(-sc.d_max, sc.d_max);
  Topology t;
  while (t.tx.size() < sc.pair_count) {
    const Point p{coord(rng), coord(rng)};
    bool ok = true;
    for (const auto& q : t.tx) ok = ok && distance(p, q) >= sc.min_tx_separation;
    if (ok) t.tx.push_back(p);
  }
  for (std::size_t k = 0; k < t.tx.size(); ++k) {
    for (;;) {
      const Point r{t.tx[k].x + box(rng), t.tx[k].y + box(rng)};
      const double d = distance(r, t.tx[k]);
      if (d < sc.d_min || d > sc.d_max) continue;
      if (r.x < 0 || r.y < 0 || r.x > sc.area_side || r.y > sc.area_side) continue;
      bool nearest = true;
      for (std::size_t j = 0; j < t.tx.size(); ++j)
        if (j != k && distance(r, t.tx[j]) <= d) nearest = false;
      if (!nearest) continue;
      t.rx.push_back(r);
      break;
    }
  }
  return t;
}

}  // namespace

TEST(PathGain, UnitDistanceIsReferenceLoss) {
  PathLossParams p;
  EXPECT_DOUBLE_EQ(path_gain_db(1.0, p), -40.0);
}

TEST(PathGain, ContinuousAtBreakpoint) {
  PathLossParams p;
  EXPECT_NEAR(path_gain_db(p.breakpoint, p), path_gain_db(p.breakpoint * (1.0 + 1e-12), p), 1e-9);
}

TEST(PathGain, FarSlopeValue) {
  PathLossParams p;
  // -40 - 20*log10(100) - 40*log10(2)
  EXPECT_NEAR(path_gain_db(200.0, p), -92.0411998265592, 1e-9);
}

TEST(PathGain, RejectsNonPositiveDistance) {
  PathLossParams p;
  EXPECT_THROW(path_gain_db(0.0, p), DomainError);
  EXPECT_THROW(path_gain_db(-3.0, p), DomainError);
}

TEST(PathGain, StrictlyDecreasing) {
  PathLossParams p;
  double prev = path_gain_db(0.01, p);
  for (double d = 0.02; d < 2000.0; d *= 1.07) {
    const double g = path_gain_db(d, p);
    ASSERT_LT(g, prev) << "d=" << d;
    prev = g;
  }
}

TEST(Scenario, NoisePowerFromBandwidth) {
  Scenario sc;
  EXPECT_NEAR(sc.noise_power_mw() / std::pow(10.0, -10.4), 1.0, 1e-12);
  EXPECT_NEAR(sc.p_max_mw(), 10.0, 1e-12);
}

TEST(Scenario, ValidationNamesField) {
  Scenario sc;
  sc.d_min = 70;
  try {
    sc.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("d_min"), std::string::npos);
  }
  Scenario s2;
  s2.pair_count = 0;
  EXPECT_THROW(s2.validate(), ConfigError);
  Scenario s3;
  s3.shadowing_std_db = -1;
  EXPECT_THROW(s3.validate(), ConfigError);
  Scenario s4;
  s4.pathloss.exponent_far = 1.0;
  EXPECT_THROW(s4.validate(), ConfigError);
}

TEST(Topology, SinglePairInRing) {
  Scenario sc;
  sc.pair_count = 1;
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto rng = snapshot_rng(3, 0, i);
    const auto t = sample_topology(sc, rng);
    ASSERT_EQ(t.tx.size(), 1u);
    const double d = distance(t.tx[0], t.rx[0]);
    EXPECT_GE(d, sc.d_min);
    EXPECT_LE(d, sc.d_max);
  }
}

TEST(Topology, HardCoreAssociationAndBounds) {
  Scenario sc;
  for (std::uint64_t i = 0; i < 300; ++i) {
    auto rng = snapshot_rng(11, 0, i);
    const auto t = sample_topology(sc, rng);
    ASSERT_GE(min_pairwise(t.tx), sc.min_tx_separation);
    for (std::size_t k = 0; k < t.tx.size(); ++k) {
      const double own = distance(t.rx[k], t.tx[k]);
      ASSERT_GE(own, sc.d_min);
      ASSERT_LE(own, sc.d_max);
      for (std::size_t j = 0; j < t.tx.size(); ++j)
        if (j != k) ASSERT_LT(own, distance(t.rx[k], t.tx[j]));
      for (const auto& p : {t.tx[k], t.rx[k]}) {
        ASSERT_GE(p.x, 0.0);
        ASSERT_GE(p.y, 0.0);
        ASSERT_LE(p.x, sc.area_side);
        ASSERT_LE(p.y, sc.area_side);
      }
    }
  }
}

TEST(Topology, LinkDistanceMatchesBruteForceSampler) {
  Scenario sc;
  std::vector<double> ours, ref;
  std::mt19937_64 oracle_rng(2024);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    auto rng = snapshot_rng(5, 0, i);
    const auto t = sample_topology(sc, rng);
    ours.push_back(distance(t.tx[0], t.rx[0]));
    const auto b = brute_force_topology(sc, oracle_rng);
    ref.push_back(distance(b.tx[0], b.rx[0]));
  }
  // Two-sample KS critical value at alpha = 0.001.
  const double crit = 1.95 * std::sqrt(2.0 / 10000.0);
  EXPECT_LT(ks_statistic(ours, ref), crit);
}

TEST(Topology, InfeasibleDensityThrows) {
  Scenario sc;
  sc.pair_count = 60;
  sc.area_side = 100;
  sc.d_max = 20;
  auto rng = snapshot_rng(1, 0, 0);
  EXPECT_THROW(sample_topology(sc, rng), PlacementFailure);
}

TEST(Channel, DegenerateRandomnessGivesPathGain) {
  Scenario sc;
  sc.pair_count = 6;
  sc.shadowing_std_db = 0.0;
  sc.rayleigh_fading = false;
  auto rng = snapshot_rng(9, 0, 0);
  const auto topo = sample_topology(sc, rng);
  const auto snap = sample_channel(topo, sc, rng);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 6; ++j)
      EXPECT_EQ(snap.gains(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)),
                std::pow(10.0, path_gain_db(distance(topo.rx[k], topo.tx[j]), sc.pathloss) / 10.0));
}

TEST(Channel, GainsPositiveAndFinite) {
  Scenario sc;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = generate_snapshot(sc, 0, i);
    EXPECT_TRUE(s.gains.allFinite());
    EXPECT_GT(s.gains.minCoeff(), 0.0);
    EXPECT_EQ(s.size(), sc.pair_count);
  }
}

TEST(Channel, FadingMeanAndShadowingStd) {
  Scenario sc;
  sc.pair_count = 10;
  Scenario fade = sc;
  fade.shadowing_std_db = 0.0;
  Scenario shadow = sc;
  shadow.rayleigh_fading = false;
  std::vector<double> f, x;
  for (std::uint64_t i = 0; f.size() < 100000; ++i) {
    auto r1 = snapshot_rng(21, 0, i);
    const auto t1 = sample_topology(fade, r1);
    const auto s1 = sample_channel(t1, fade, r1);
    auto r2 = snapshot_rng(22, 0, i);
    const auto t2 = sample_topology(shadow, r2);
    const auto s2 = sample_channel(t2, shadow, r2);
    for (std::size_t k = 0; k < 10; ++k)
      for (std::size_t j = 0; j < 10; ++j) {
        const auto ek = static_cast<Eigen::Index>(k), ej = static_cast<Eigen::Index>(j);
        f.push_back(s1.gains(ek, ej) / std::pow(10.0, path_gain_db(distance(t1.rx[k], t1.tx[j]), sc.pathloss) / 10.0));
        x.push_back(10.0 * std::log10(s2.gains(ek, ej)) - path_gain_db(distance(t2.rx[k], t2.tx[j]), sc.pathloss));
      }
  }
  const double mean_f = std::accumulate(f.begin(), f.end(), 0.0) / f.size();
  const double mean_x = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean_x) * (v - mean_x);
  const double std_x = std::sqrt(var / x.size());
  EXPECT_NEAR(mean_f, 1.0, 0.01);
  EXPECT_NEAR(std_x, 7.0, 0.14);
}

TEST(Dataset, RoundTripIsBitExact) {
  testutil::TempDir dir("ds");
  Scenario sc;
  sc.pair_count = 5;
  const auto path = dir / "a.pcwl";
  generate_dataset(sc, 3, path);
  const auto first = read_dataset(path);
  ASSERT_EQ(first.size(), 3u);
  const auto path2 = dir / "b.pcwl";
  write_dataset(path2, first);
  EXPECT_EQ(testutil::slurp(path), testutil::slurp(path2));
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto again = read_snapshot(path2, i);
    EXPECT_EQ(std::memcmp(again.gains.data(), first[i].gains.data(), sizeof(double) * 25), 0);
    const auto fresh = generate_snapshot(sc, 0, i);
    for (Eigen::Index k = 0; k < 25; ++k)
      EXPECT_NEAR(10 * std::log10(again.gains.data()[k]), 10 * std::log10(fresh.gains.data()[k]), 1e-4);
  }
}

TEST(Dataset, DeterministicAcrossRunsAndThreads) {
  testutil::TempDir dir("det");
  Scenario sc;
  sc.pair_count = 8;
  sc.rng_seed = 77;
  generate_dataset(sc, 700, dir / "a.pcwl", 1);
  generate_dataset(sc, 700, dir / "b.pcwl", 1);
  generate_dataset(sc, 700, dir / "c.pcwl", 3);
  const auto a = testutil::slurp(dir / "a.pcwl");
  EXPECT_EQ(a, testutil::slurp(dir / "b.pcwl"));
  EXPECT_EQ(a, testutil::slurp(dir / "c.pcwl"));
  EXPECT_EQ(testutil::slurp(dir / "a.pcwl.json"), testutil::slurp(dir / "b.pcwl.json"));
  generate_dataset(sc, 700, dir / "d.pcwl", 1, 1);
  EXPECT_NE(a, testutil::slurp(dir / "d.pcwl"));
}

TEST(Dataset, SidecarRecordsScenario) {
  testutil::TempDir dir("side");
  Scenario sc;
  sc.pair_count = 3;
  sc.d_min = 10;
  sc.d_max = 50;
  sc.rng_seed = 99;
  generate_dataset(sc, 2, dir / "x.pcwl");
  const auto back = read_sidecar_scenario(dir / "x.pcwl");
  EXPECT_EQ(nlohmann::json(to_json(back)), nlohmann::json(to_json(sc)));
  DatasetReader r(dir / "x.pcwl");
  EXPECT_EQ(r.pair_count(), 3u);
  EXPECT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r.summary().noise_mw, sc.noise_power_mw());
}

TEST(Dataset, ErrorContracts) {
  testutil::TempDir dir("err");
  Scenario sc;
  sc.pair_count = 2;
  const auto path = dir / "ok.pcwl";
  generate_dataset(sc, 2, path);
  EXPECT_THROW(read_snapshot(path, 2), IndexError);
  EXPECT_THROW(read_snapshot(dir / "missing.pcwl", 0), IoError);

  auto bytes = testutil::slurp(path);
  auto corrupt = bytes;
  corrupt[0] = 'X';
  io::write_text_atomic(dir / "magic.pcwl", corrupt);
  EXPECT_THROW(read_dataset(dir / "magic.pcwl"), FormatError);
  auto version = bytes;
  version[4] = 9;
  io::write_text_atomic(dir / "version.pcwl", version);
  EXPECT_THROW(read_dataset(dir / "version.pcwl"), FormatError);
  io::write_text_atomic(dir / "short.pcwl", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_dataset(dir / "short.pcwl"), FormatError);
}

TEST(Dataset, FifteenScenarioSweep) {
  testutil::TempDir dir("sweep");
  const auto scenarios = sweep_scenarios(Scenario{});
  ASSERT_EQ(scenarios.size(), 15u);
  std::set<std::tuple<std::uint32_t, double, double>> seen;
  for (const auto& s : scenarios) seen.insert({s.pair_count, s.d_min, s.d_max});
  EXPECT_EQ(seen.size(), 15u);
  for (std::uint32_t K : {20u, 35u, 50u, 65u, 80u}) {
    EXPECT_TRUE(seen.count({K, 2.0, 65.0}));
    EXPECT_TRUE(seen.count({K, 10.0, 50.0}));
    EXPECT_TRUE(seen.count({K, 30.0, 70.0}));
  }
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto p = dir / ("s" + std::to_string(i) + ".pcwl");
    generate_dataset(scenarios[i], 1, p);
    DatasetReader r(p);
    EXPECT_EQ(r.pair_count(), scenarios[i].pair_count);
    const auto back = read_sidecar_scenario(p);
    EXPECT_EQ(back.d_min, scenarios[i].d_min);
    EXPECT_EQ(back.d_max, scenarios[i].d_max);
  }
}

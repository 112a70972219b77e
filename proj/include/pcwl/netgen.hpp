#pragma once

// D2D network generation: hard-core transmitter layout, ring receivers with a
// nearest-transmitter association rule, dual-slope path loss with log-normal
// shadowing and Rayleigh fading, and the binary snapshot dataset format.

#include "pcwl/common.hpp"
#include "pcwl/io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace pcwl {

using RandomSource = std::mt19937_64;

struct PathLossParams {
  double ref_loss_db = 40.0;   // loss at 1 m
  double exponent_near = 2.0;  // n1, d <= breakpoint
  double exponent_far = 4.0;   // n2, d > breakpoint
  double breakpoint = 100.0;   // meters

  void validate() const {
    if (!(exponent_near >= 0.0)) throw ConfigError("pathloss.exponent_near must be >= 0");
    if (!(exponent_far >= exponent_near))
      throw ConfigError("pathloss.exponent_far must be >= pathloss.exponent_near");
    if (!(breakpoint > 0.0)) throw ConfigError("pathloss.breakpoint must be > 0");
    if (!std::isfinite(ref_loss_db)) throw ConfigError("pathloss.ref_loss_db must be finite");
  }
};

struct Scenario {
  std::uint32_t pair_count = 20;
  double area_side = 1000.0;
  double min_tx_separation = 30.0;
  double d_min = 2.0;
  double d_max = 65.0;
  double shadowing_std_db = 7.0;
  PathLossParams pathloss{};
  double bandwidth_hz = 1e7;
  double noise_psd_dbm_hz = -174.0;
  double p_max_dbm = 10.0;
  bool rayleigh_fading = true;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (pair_count < 1) throw ConfigError("pair_count must be >= 1");
    if (!(area_side > 0.0)) throw ConfigError("area_side must be > 0");
    if (!(d_min > 0.0)) throw ConfigError("d_min must be > 0");
    if (!(d_min < d_max)) throw ConfigError("d_min must be < d_max");
    if (!(d_max < area_side)) throw ConfigError("d_max must be < area_side");
    if (!(min_tx_separation > 0.0)) throw ConfigError("min_tx_separation must be > 0");
    if (!(shadowing_std_db >= 0.0)) throw ConfigError("shadowing_std_db must be >= 0");
    if (!(bandwidth_hz > 0.0)) throw ConfigError("bandwidth_hz must be > 0");
    if (!std::isfinite(noise_psd_dbm_hz)) throw ConfigError("noise_psd_dbm_hz must be finite");
    if (!std::isfinite(p_max_dbm)) throw ConfigError("p_max_dbm must be finite");
    pathloss.validate();
  }

  // Thermal noise over the band, in mW.
  double noise_power_mw() const {
    return dbm_to_mw(noise_psd_dbm_hz + 10.0 * std::log10(bandwidth_hz));
  }
  double p_max_mw() const { return dbm_to_mw(p_max_dbm); }
};

struct Topology {
  std::vector<Point> tx;
  std::vector<Point> rx;
};

// One channel realization. gains(k, j) is the linear power gain from
// transmitter j to receiver k.
struct NetworkSnapshot {
  MatD gains;
  std::vector<Point> tx;
  std::vector<Point> rx;
  double noise_mw = 0.0;
  double p_max_mw = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(gains.rows()); }
};

inline constexpr int kPlacementRetries = 10000;

inline RandomSource snapshot_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return RandomSource(seq);
}

inline double path_gain_db(double d, const PathLossParams& p) {
  if (!(d > 0.0)) throw DomainError("path_gain_db: distance must be > 0");
  if (d <= p.breakpoint) return -p.ref_loss_db - 10.0 * p.exponent_near * std::log10(d);
  return -p.ref_loss_db - 10.0 * p.exponent_near * std::log10(p.breakpoint) -
         10.0 * p.exponent_far * std::log10(d / p.breakpoint);
}

// Sequential inhibition for transmitters, then per-receiver rejection until
// the receiver sits in its ring, inside the area, and strictly closest to its
// own transmitter.
inline Topology sample_topology(const Scenario& sc, RandomSource& rng) {
  sc.validate();
  const std::size_t K = sc.pair_count;
  std::uniform_real_distribution<double> coord(0.0, sc.area_side);
  Topology topo;
  topo.tx.reserve(K);
  topo.rx.reserve(K);

  for (std::size_t i = 0; i < K; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const Point cand{coord(rng), coord(rng)};
      placed = std::all_of(topo.tx.begin(), topo.tx.end(), [&](const Point& q) {
        return distance(cand, q) >= sc.min_tx_separation;
      });
      if (placed) topo.tx.push_back(cand);
    }
    if (!placed)
      throw PlacementFailure("cannot place transmitter " + std::to_string(i) +
                             " within the retry budget");
  }

  const double r2_lo = sc.d_min * sc.d_min;
  const double r2_hi = sc.d_max * sc.d_max;
  std::uniform_real_distribution<double> radius_sq(r2_lo, r2_hi);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < K; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const double r = std::sqrt(radius_sq(rng));
      const double th = angle(rng);
      const Point cand{topo.tx[k].x + r * std::cos(th), topo.tx[k].y + r * std::sin(th)};
      if (cand.x < 0.0 || cand.x > sc.area_side || cand.y < 0.0 || cand.y > sc.area_side) continue;
      const double own = distance(cand, topo.tx[k]);
      placed = true;
      for (std::size_t j = 0; j < K && placed; ++j)
        if (j != k && distance(cand, topo.tx[j]) <= own) placed = false;
      if (placed) topo.rx.push_back(cand);
    }
    if (!placed)
      throw PlacementFailure("cannot place receiver " + std::to_string(k) +
                             " within the retry budget");
  }
  return topo;
}

inline NetworkSnapshot sample_channel(const Topology& topo, const Scenario& sc, RandomSource& rng) {
  const std::size_t K = topo.tx.size();
  if (topo.rx.size() != K) throw DimensionMismatch("sample_channel: tx/rx count differ");
  NetworkSnapshot snap;
  snap.gains.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  snap.tx = topo.tx;
  snap.rx = topo.rx;
  snap.noise_mw = sc.noise_power_mw();
  snap.p_max_mw = sc.p_max_mw();

  std::normal_distribution<double> shadow(0.0, sc.shadowing_std_db > 0.0 ? sc.shadowing_std_db : 1.0);
  std::exponential_distribution<double> fading(1.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < K; ++j) {
      const double d = distance(topo.rx[k], topo.tx[j]);
      const double x = sc.shadowing_std_db > 0.0 ? shadow(rng) : 0.0;
      const double f = sc.rayleigh_fading ? fading(rng) : 1.0;
      snap.gains(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          db_to_linear(path_gain_db(d, sc.pathloss) + x) * f;
    }
  }
  return snap;
}

// Snapshot `index` of stream `stream` for a scenario. Independent of any other
// index, so generation can be split across workers.
inline NetworkSnapshot generate_snapshot(const Scenario& sc, std::uint64_t stream, std::uint64_t index) {
  auto rng = snapshot_rng(sc.rng_seed, stream, index);
  const auto topo = sample_topology(sc, rng);
  return sample_channel(topo, sc, rng);
}

// ---------------------------------------------------------------------------
// Scenario <-> JSON (sidecar metadata and config echo)

inline nlohmann::json to_json(const Scenario& s) {
  return {{"pair_count", s.pair_count},
          {"area_side", s.area_side},
          {"min_tx_separation", s.min_tx_separation},
          {"d_min", s.d_min},
          {"d_max", s.d_max},
          {"shadowing_std_db", s.shadowing_std_db},
          {"pathloss",
           {{"ref_loss_db", s.pathloss.ref_loss_db},
            {"exponent_near", s.pathloss.exponent_near},
            {"exponent_far", s.pathloss.exponent_far},
            {"breakpoint", s.pathloss.breakpoint}}},
          {"bandwidth_hz", s.bandwidth_hz},
          {"noise_psd_dbm_hz", s.noise_psd_dbm_hz},
          {"p_max_dbm", s.p_max_dbm},
          {"rayleigh_fading", s.rayleigh_fading},
          {"rng_seed", s.rng_seed}};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  s.pair_count = j.at("pair_count").get<std::uint32_t>();
  s.area_side = j.at("area_side").get<double>();
  s.min_tx_separation = j.at("min_tx_separation").get<double>();
  s.d_min = j.at("d_min").get<double>();
  s.d_max = j.at("d_max").get<double>();
  s.shadowing_std_db = j.at("shadowing_std_db").get<double>();
  const auto& pl = j.at("pathloss");
  s.pathloss.ref_loss_db = pl.at("ref_loss_db").get<double>();
  s.pathloss.exponent_near = pl.at("exponent_near").get<double>();
  s.pathloss.exponent_far = pl.at("exponent_far").get<double>();
  s.pathloss.breakpoint = pl.at("breakpoint").get<double>();
  s.bandwidth_hz = j.at("bandwidth_hz").get<double>();
  s.noise_psd_dbm_hz = j.at("noise_psd_dbm_hz").get<double>();
  s.p_max_dbm = j.at("p_max_dbm").get<double>();
  s.rayleigh_fading = j.at("rayleigh_fading").get<bool>();
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return s;
}

// ---------------------------------------------------------------------------
// Dataset file
//
//   "PCWL" u32 version u32 K u64 count f64 noise_mw f64 p_max_mw
//   per snapshot: K*K f32 gains (dB, row-major), 2K f32 tx xy, 2K f32 rx xy
//
// All fields little-endian. A JSON sidecar "<path>.json" records the scenario.

inline constexpr char kDatasetMagic[5] = "PCWL";
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 4 + 4 + 8 + 8 + 8;

struct DatasetSummary {
  std::filesystem::path path;
  std::uint32_t pair_count = 0;
  std::uint64_t count = 0;
  double noise_mw = 0.0;
  double p_max_mw = 0.0;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  auto s = p;
  s += ".json";
  return s;
}

inline void write_snapshot_record(std::ostream& out, const NetworkSnapshot& s) {
  const auto K = s.gains.rows();
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < K; ++j)
      io::put<float>(out, static_cast<float>(10.0 * std::log10(s.gains(k, j))));
  for (const auto& p : s.tx) {
    io::put<float>(out, static_cast<float>(p.x));
    io::put<float>(out, static_cast<float>(p.y));
  }
  for (const auto& p : s.rx) {
    io::put<float>(out, static_cast<float>(p.x));
    io::put<float>(out, static_cast<float>(p.y));
  }
}

inline void write_dataset_header(std::ostream& out, std::uint32_t K, std::uint64_t count,
                                 double noise_mw, double p_max_mw) {
  io::put_magic(out, kDatasetMagic);
  io::put<std::uint32_t>(out, kDatasetVersion);
  io::put<std::uint32_t>(out, K);
  io::put<std::uint64_t>(out, count);
  io::put<double>(out, noise_mw);
  io::put<double>(out, p_max_mw);
}

// Writes `snapshots` as a dataset file (all must share K, noise and p_max).
inline void write_dataset(const std::filesystem::path& path, const std::vector<NetworkSnapshot>& snapshots) {
  if (snapshots.empty()) throw EmptyInput("write_dataset: no snapshots");
  const auto K = static_cast<std::uint32_t>(snapshots.front().size());
  io::write_atomic(path, [&](std::ostream& out) {
    write_dataset_header(out, K, snapshots.size(), snapshots.front().noise_mw, snapshots.front().p_max_mw);
    for (const auto& s : snapshots) {
      if (s.size() != K) throw DimensionMismatch("write_dataset: mixed K");
      write_snapshot_record(out, s);
    }
  });
}

// Random-access reader over a dataset file.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path) : path_(path), in_(io::open_in(path)) {
    io::expect_magic(in_, kDatasetMagic, path.string());
    const auto version = io::get<std::uint32_t>(in_);
    if (version != kDatasetVersion)
      throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
    summary_.path = path;
    summary_.pair_count = io::get<std::uint32_t>(in_);
    summary_.count = io::get<std::uint64_t>(in_);
    summary_.noise_mw = io::get<double>(in_);
    summary_.p_max_mw = io::get<double>(in_);
    if (summary_.pair_count == 0) throw FormatError(path.string() + ": K is zero");
    in_.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in_.tellg());
    if (size != kDatasetHeaderBytes + summary_.count * record_bytes())
      throw FormatError(path.string() + ": file size does not match header");
  }

  const DatasetSummary& summary() const { return summary_; }
  std::uint64_t size() const { return summary_.count; }
  std::uint32_t pair_count() const { return summary_.pair_count; }

  NetworkSnapshot read(std::uint64_t index) {
    if (index >= summary_.count)
      throw IndexError("snapshot index " + std::to_string(index) + " out of range [0, " +
                       std::to_string(summary_.count) + ")");
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(kDatasetHeaderBytes + index * record_bytes()));
    const auto K = static_cast<Eigen::Index>(summary_.pair_count);
    NetworkSnapshot s;
    s.noise_mw = summary_.noise_mw;
    s.p_max_mw = summary_.p_max_mw;
    s.gains.resize(K, K);
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < K; ++j)
        s.gains(k, j) = db_to_linear(static_cast<double>(io::get<float>(in_)));
    auto read_points = [&](std::vector<Point>& pts) {
      pts.resize(static_cast<std::size_t>(K));
      for (auto& p : pts) {
        p.x = io::get<float>(in_);
        p.y = io::get<float>(in_);
      }
    };
    read_points(s.tx);
    read_points(s.rx);
    return s;
  }

  std::vector<NetworkSnapshot> read_all() {
    std::vector<NetworkSnapshot> out;
    out.reserve(summary_.count);
    for (std::uint64_t i = 0; i < summary_.count; ++i) out.push_back(read(i));
    return out;
  }

 private:
  std::uint64_t record_bytes() const {
    const std::uint64_t K = summary_.pair_count;
    return 4 * (K * K + 4 * K);
  }

  std::filesystem::path path_;
  std::ifstream in_;
  DatasetSummary summary_;
};

inline NetworkSnapshot read_snapshot(const std::filesystem::path& path, std::uint64_t index) {
  return DatasetReader(path).read(index);
}

inline std::vector<NetworkSnapshot> read_dataset(const std::filesystem::path& path) {
  return DatasetReader(path).read_all();
}

// Generates `count` snapshots from stream `stream` of the scenario seed and
// writes them, plus the JSON sidecar. Output bytes depend only on
// (scenario, stream, count), never on `threads`.
inline DatasetSummary generate_dataset(const Scenario& sc, std::uint64_t count,
                                       const std::filesystem::path& out_path, unsigned threads = 1,
                                       std::uint64_t stream = 0) {
  sc.validate();
  if (count < 1) throw ConfigError("count must be >= 1");
  constexpr std::uint64_t kChunk = 512;
  io::write_atomic(out_path, [&](std::ostream& out) {
    write_dataset_header(out, sc.pair_count, count, sc.noise_power_mw(), sc.p_max_mw());
    std::vector<NetworkSnapshot> chunk;
    for (std::uint64_t begin = 0; begin < count; begin += kChunk) {
      const std::uint64_t n = std::min(kChunk, count - begin);
      chunk.assign(n, NetworkSnapshot{});
      parallel_for(n, threads, [&](std::size_t i) { chunk[i] = generate_snapshot(sc, stream, begin + i); });
      for (const auto& s : chunk) write_snapshot_record(out, s);
    }
  });
  nlohmann::json meta = {{"format", "PCWL"},
                         {"version", kDatasetVersion},
                         {"count", count},
                         {"stream", stream},
                         {"noise_mw", sc.noise_power_mw()},
                         {"p_max_mw", sc.p_max_mw()},
                         {"scenario", to_json(sc)}};
  io::write_text_atomic(sidecar_path(out_path), meta.dump(2) + "\n");

  DatasetSummary summary;
  summary.path = out_path;
  summary.pair_count = sc.pair_count;
  summary.count = count;
  summary.noise_mw = sc.noise_power_mw();
  summary.p_max_mw = sc.p_max_mw();
  return summary;
}

inline Scenario read_sidecar_scenario(const std::filesystem::path& dataset_path) {
  const auto text = io::read_text(sidecar_path(dataset_path));
  try {
    return scenario_from_json(nlohmann::json::parse(text).at("scenario"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(dataset_path).string() + ": " + e.what());
  }
}

// 15 scenarios: K in {20..80} x three link-distance rings.
inline std::vector<Scenario> sweep_scenarios(const Scenario& base) {
  std::vector<Scenario> out;
  for (std::uint32_t K : {20u, 35u, 50u, 65u, 80u}) {
    for (auto [lo, hi] : {std::pair{2.0, 65.0}, std::pair{10.0, 50.0}, std::pair{30.0, 70.0}}) {
      Scenario s = base;
      s.pair_count = K;
      s.d_min = lo;
      s.d_max = hi;
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace pcwl

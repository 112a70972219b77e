// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Training-based criteria share one desk-scale model.
//
//   acceptance [--only 1,5,7] [--epochs N] [--train-count N] [--verbose]

#include "pcwl/cli.hpp"
#include "pcwl/train.hpp"
#include "pcwl/wmmse.hpp"
#include "test_util.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

using namespace pcwl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::vector<NetworkSnapshot> snapshots(const Scenario& sc, std::size_t n, std::uint64_t stream) {
  std::vector<NetworkSnapshot> out(n);
  parallel_for(n, workers(), [&](std::size_t i) { out[i] = generate_snapshot(sc, stream, i); });
  return out;
}

Scenario ring(std::uint32_t K, double lo, double hi) {
  Scenario sc;
  sc.pair_count = K;
  sc.d_min = lo;
  sc.d_max = hi;
  return sc;
}

bool non_decreasing(const std::vector<double>& trace, double slack) {
  for (std::size_t t = 1; t < trace.size(); ++t)
    if (trace[t] < trace[t - 1] - slack) return false;
  return true;
}

ModelConfig desk_model() {
  ModelConfig mc;
  mc.layers = 2;
  mc.d_model = 64;
  mc.heads = 4;
  mc.lora_rank = 8;
  mc.lora_alpha = 16.0;
  // No pretrained backbone ships with the project, so the desk model trains every weight.
  mc.from_scratch = true;
  return mc;
}

template <typename S>
void perturb(ModelParameters<S>& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  p.visit([&](const std::string&, ParamRole, Mat<S>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += static_cast<S>(nd(rng));
  });
}

template <typename S>
GraphFeatures<S> permuted(const GraphFeatures<S>& f, const std::vector<int>& perm) {
  const auto K = f.size();
  GraphFeatures<S> g = f;
  for (Eigen::Index a = 0; a < K; ++a) {
    g.s[a] = f.s[perm[static_cast<std::size_t>(a)]];
    for (Eigen::Index b = 0; b < K; ++b)
      g.z.row(a * K + b) = f.z.row(perm[static_cast<std::size_t>(a)] * K + perm[static_cast<std::size_t>(b)]);
  }
  return g;
}

// Worst |out[a] - base[perm[a]]| / |base[perm[a]]|.
template <typename S>
double equivariance_error(const GraphFeatures<S>& f, const ModelParameters<S>& p, const ModelConfig& c,
                          const std::vector<int>& perm) {
  const Vec<S> base = forward(f, p, c);
  const Vec<S> out = forward(permuted(f, perm), p, c);
  double worst = 0.0;
  for (Eigen::Index a = 0; a < out.size(); ++a) {
    const double ref = static_cast<double>(base[perm[static_cast<std::size_t>(a)]]);
    worst = std::max(worst, std::abs(static_cast<double>(out[a]) - ref) / std::abs(ref));
  }
  return worst;
}

struct WmmseSummary {
  double avg_mean_rate = 0.0;   // arithmetic mean rate, averaged over restarts
  double best_mean_rate = 0.0;  // arithmetic mean rate of the best restart
  MetricsReport best_metrics;
  double nonmonotone_fraction = 0.0;  // snapshots with any non-monotone restart trace
};

WmmseSummary run_wmmse(const std::vector<NetworkSnapshot>& data, const WmmseConfig& wc) {
  const std::size_t n = data.size();
  std::vector<double> avg(n), best(n);
  std::vector<VecD> best_rates(n);
  std::vector<int> nonmono(n, 0);
  parallel_for(n, workers(), [&](std::size_t i) {
    const auto runs = wmmse_runs(data[i], wc);
    const double K = static_cast<double>(data[i].size());
    double a = 0.0;
    for (const auto& r : runs) {
      a += rate(sinr(data[i], r.p)).sum() / K;
      if (!non_decreasing(r.trace, 1e-9)) nonmono[i] = 1;
    }
    avg[i] = a / static_cast<double>(runs.size());
    best_rates[i] = rates(data[i], best_of(runs).p);
    best[i] = best_rates[i].sum() / K;
  });
  WmmseSummary s;
  s.avg_mean_rate = std::accumulate(avg.begin(), avg.end(), 0.0) / static_cast<double>(n);
  s.best_mean_rate = std::accumulate(best.begin(), best.end(), 0.0) / static_cast<double>(n);
  s.best_metrics = metrics(best_rates);
  s.nonmonotone_fraction = std::accumulate(nonmono.begin(), nonmono.end(), 0.0) / static_cast<double>(n);
  return s;
}

struct Options {
  std::set<int> only;
  int epochs = 200;
  std::size_t train_count = 20000;
  int harmonic_epochs = 20;
  std::size_t harmonic_train_count = 4000;
  bool verbose = false;
};

// Desk-scale sum-rate model shared by criteria 5 and 7.
struct DeskRun {
  Checkpoint ck;
  double train_seconds = 0.0;
  bool finite = true;
};

DeskRun train_desk(const Options& o, const Scenario& sc, UtilityTag tag, std::size_t count, int epochs,
                   const char* label) {
  TrainInputs in;
  in.train = snapshots(sc, count, 0);
  in.validation = snapshots(sc, 1000, 1);
  auto mc = desk_model();
  mc.p_max_mw = in.train.front().p_max_mw;
  TrainConfig tc;
  tc.utility.tag = tag;
  tc.epochs = epochs;
  tc.batch_size = 64;
  DeskRun run;
  const auto t0 = Clock::now();
  try {
    run.ck = train(in, mc, tc, std::nullopt, [&](const EpochLog& l) {
      run.finite = run.finite && std::isfinite(l.train_loss) && std::isfinite(l.val_utility);
      if (o.verbose || l.epoch % 10 == 0 || l.epoch == epochs)
        std::cerr << "  [" << label << "] epoch " << l.epoch << " loss " << num(l.train_loss) << " val "
                  << num(l.val_utility) << " lr " << num(l.group_lr.front(), 3) << " (" << num(seconds_since(t0), 4)
                  << " s)\n";
    });
  } catch (const NonFiniteLoss&) {
    run.finite = false;
  }
  run.train_seconds = seconds_since(t0);
  return run;
}

double model_mean_rate(const Checkpoint& ck, const std::vector<NetworkSnapshot>& data) {
  const UtilityTag tags[] = {UtilityTag::SumRate};
  return evaluate(ck.params, ck.model, data, tags)[0].metrics.arithmetic_mean;
}

// ---------------------------------------------------------------------------

Outcome c1_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string per;
  for (auto t : {UtilityTag::SumRate, UtilityTag::ProportionalFairness, UtilityTag::Harmonic}) {
    GradCheckConfig gc;
    gc.utility.tag = t;
    const auto rep = grad_check(gc);
    worst = std::max(worst, rep.max_rel_error);
    per += std::string(" ") + to_string(t) + "=" + num(rep.max_rel_error, 3);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, "max rel error" + per + " (< 1e-4), " + num(secs, 3) + " s (< 60 s)"};
}

Outcome c2_equivariance() {
  auto mc = desk_model();
  mc.from_scratch = false;
  const Scenario sc4 = ring(4, 2, 65), sc64 = ring(64, 2, 65);
  const auto s4 = generate_snapshot(sc4, 9, 0);
  const auto s64 = generate_snapshot(sc64, 9, 0);

  auto pd = init_parameters<double>(mc, 3);
  perturb(pd, 4, 0.1);
  const auto f4 = build_features<double>(s4, fit_norm_stats({&s4, 1}));
  std::vector<int> perm{0, 1, 2, 3};
  double worst4 = 0.0;
  int count = 0;
  do {
    worst4 = std::max(worst4, equivariance_error(f4, pd, mc, perm));
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));

  auto pf = init_parameters<float>(mc, 3);
  perturb(pf, 5, 0.1);
  const auto f64 = build_features<float>(s64, fit_norm_stats({&s64, 1}));
  std::vector<int> p64(64);
  std::iota(p64.begin(), p64.end(), 0);
  std::mt19937_64 rng(11);
  double worst64 = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::shuffle(p64.begin(), p64.end(), rng);
    worst64 = std::max(worst64, equivariance_error(f64, pf, mc, p64));
  }
  return {count == 24 && worst4 <= 1e-10 && worst64 <= 1e-5,
          "K=4 all " + std::to_string(count) + " perms max rel err " + num(worst4, 3) +
              " (<= 1e-10, 64-bit); K=64 20 perms max rel err " + num(worst64, 3) + " (<= 1e-5, 32-bit)"};
}

Outcome c3_zero_init() {
  auto mc = desk_model();
  mc.from_scratch = false;
  auto plain = mc;
  plain.use_bias = false;
  plain.use_lora = false;
  const auto p = init_parameters<float>(mc, 5);
  int identical = 0, total = 0;
  for (std::uint32_t K : {1u, 5u, 20u, 50u}) {
    const Scenario sc = ring(K, 2, 65);
    for (std::uint64_t i = 0; i < 5; ++i) {
      const auto s = generate_snapshot(sc, 3, i);
      const auto f = build_features<float>(s, NormStats{-80.0, 10.0, -110.0, 15.0});
      const Vec<float> a = forward(f, p, mc);
      const Vec<float> b = forward(f, p, plain);
      identical += std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
      ++total;
    }
  }
  return {identical == total,
          std::to_string(identical) + "/" + std::to_string(total) + " snapshots bitwise identical (K in {1,5,20,50})"};
}

Outcome c4_oracle_gap() {
  const Scenario sc1 = ring(1, 2, 65);
  bool k1 = true;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto s = generate_snapshot(sc1, 5, i);
    k1 = k1 && grid_oracle(s, 101, UtilityTag::SumRate).p[0] == s.p_max_mw;
  }
  const Scenario sc2 = ring(2, 2, 65);
  WmmseConfig wc;
  const std::size_t n = 500;
  std::vector<int> close(n, 0);
  parallel_for(n, workers(), [&](std::size_t i) {
    const auto s = generate_snapshot(sc2, 6, i);
    const double g = grid_oracle(s, 101, UtilityTag::SumRate).objective;
    close[i] = wmmse_best(s, wc).objective >= 0.98 * g;
  });
  const int hits = std::accumulate(close.begin(), close.end(), 0);
  return {k1 && hits >= 475, "K=1 grid optimum at p_max: " + std::string(k1 ? "yes" : "no") + "; K=2 within 2%: " +
                                 std::to_string(hits) + "/500 (>= 475)"};
}

Outcome c5_desk_training(const DeskRun& run, const std::vector<NetworkSnapshot>& test, const WmmseSummary& wm) {
  const double model = model_mean_rate(run.ck, test);
  const bool ok = model >= wm.avg_mean_rate && model >= 0.95 * wm.best_mean_rate && run.train_seconds <= 3600.0;
  return {ok, "model mean rate " + num(model) + " vs WMMSE-Avg " + num(wm.avg_mean_rate) + ", 0.95 x WMMSE-Best " +
                  num(0.95 * wm.best_mean_rate) + " (best " + num(wm.best_mean_rate) + "); training " +
                  num(run.train_seconds, 4) + " s (<= 3600 s), best epoch " + std::to_string(run.ck.epoch)};
}

Outcome c6_harmonic(const Options& o) {
  const Scenario sc = ring(20, 2, 65);
  const auto test = snapshots(sc, 500, 2);
  WmmseConfig wc;
  wc.utility.tag = UtilityTag::Harmonic;
  const auto wm = run_wmmse(test, wc);
  const auto run = train_desk(o, sc, UtilityTag::Harmonic, o.harmonic_train_count, o.harmonic_epochs, "harmonic");
  const UtilityTag tags[] = {UtilityTag::Harmonic};
  const double model = evaluate(run.ck.params, run.ck.model, test, tags)[0].metrics.harmonic_mean;
  const bool ok = run.finite && model > wm.best_metrics.harmonic_mean && wm.nonmonotone_fraction >= 0.5;
  return {ok, "model harmonic mean " + num(model) + " vs WMMSE-Best " + num(wm.best_metrics.harmonic_mean) +
                  "; non-monotone WMMSE traces on " + num(100.0 * wm.nonmonotone_fraction, 4) +
                  "% of snapshots (>= 50%); training losses finite: " + (run.finite ? "yes" : "no")};
}

Outcome c7_zero_shot(const DeskRun& run, const std::vector<NetworkSnapshot>& test, const WmmseSummary& wm) {
  const auto shifted = snapshots(ring(10, 1, 100), 1000, 2);
  const auto wm_shift = run_wmmse(shifted, WmmseConfig{});
  const double in_dist = model_mean_rate(run.ck, test) / wm.best_mean_rate;
  const double out_dist = model_mean_rate(run.ck, shifted) / wm_shift.best_mean_rate;
  return {out_dist >= 0.9 * in_dist, "normalized sum rate ring [1,100] " + num(out_dist) + " vs ring [2,65] " +
                                         num(in_dist) + " (ratio " + num(out_dist / in_dist, 4) + ", >= 0.9)"};
}

Outcome c8_complexity() {
  auto mc = desk_model();
  const auto p = init_parameters<float>(mc, 1);
  std::vector<GraphFeatures<float>> f;
  for (std::uint32_t K : {64u, 128u}) {
    const auto s = generate_snapshot(ring(K, 2, 65), 0, 0);
    f.push_back(build_features<float>(s, fit_norm_stats({&s, 1})));
  }
  std::vector<double> t64, t128;
  volatile float sink = 0.0f;
  for (int w = 0; w < 3; ++w) sink = sink + forward(f[0], p, mc)[0] + forward(f[1], p, mc)[0];
  for (int r = 0; r < 20; ++r) {
    auto t0 = Clock::now();
    sink = sink + forward(f[0], p, mc)[0];
    t64.push_back(seconds_since(t0));
    t0 = Clock::now();
    sink = sink + forward(f[1], p, mc)[0];
    t128.push_back(seconds_since(t0));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[9] + v[10]);
  };
  const double ratio = median(t128) / median(t64);
  return {ratio >= 3.0 && ratio <= 6.0, "median forward K=64 " + num(1e3 * median(t64), 4) + " ms, K=128 " +
                                            num(1e3 * median(t128), 4) + " ms, ratio " + num(ratio, 4) +
                                            " (in [3, 6])"};
}

Outcome c9_monotone() {
  WmmseConfig wc;
  wc.restarts = 5;
  int bad = 0, total = 0;
  for (std::uint32_t K : {2u, 5u, 10u}) {
    const std::size_t n = 1000;
    std::vector<int> ok(n, 1);
    parallel_for(n, workers(), [&](std::size_t i) {
      const auto s = generate_snapshot(ring(K, 2, 65), 7, i);
      for (const auto& r : wmmse_runs(s, wc))
        if (!non_decreasing(r.trace, 1e-9)) ok[i] = 0;
    });
    bad += static_cast<int>(n) - std::accumulate(ok.begin(), ok.end(), 0);
    total += static_cast<int>(n);
  }
  return {bad == 0, std::to_string(total - bad) + "/" + std::to_string(total) +
                        " snapshots with non-decreasing sum-rate traces over 5 restarts (K in {2,5,10})"};
}

int cli_run(const fs::path& dir, std::vector<std::string> args) {
  const fs::path old = fs::current_path();
  fs::current_path(dir);
  std::vector<const char*> argv{"pcwl"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::streambuf* saved = std::cout.rdbuf();
  std::ostringstream sink;
  std::cout.rdbuf(sink.rdbuf());
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(saved);
  fs::current_path(old);
  return rc;
}

Outcome c10_determinism() {
  testutil::TempDir dir("acceptance");
  std::vector<std::string> failures;
  // Library-level: generation across thread counts, dataset and checkpoint round trips, training.
  Scenario sc = ring(6, 2, 65);
  generate_dataset(sc, 300, dir / "g1.pcwl", 1);
  generate_dataset(sc, 300, dir / "g4.pcwl", 4);
  if (testutil::slurp(dir / "g1.pcwl") != testutil::slurp(dir / "g4.pcwl")) failures.push_back("gen threads");
  write_dataset(dir / "g1b.pcwl", read_dataset(dir / "g1.pcwl"));
  if (testutil::slurp(dir / "g1.pcwl") != testutil::slurp(dir / "g1b.pcwl")) failures.push_back("dataset round trip");

  TrainInputs in{read_dataset(dir / "g1.pcwl"), snapshots(sc, 20, 1)};
  auto mc = desk_model();
  mc.d_model = 16;
  mc.heads = 2;
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 32;
  save_checkpoint(dir / "a.pcck", train(in, mc, tc));
  save_checkpoint(dir / "b.pcck", train(in, mc, tc));
  if (testutil::slurp(dir / "a.pcck") != testutil::slurp(dir / "b.pcck")) failures.push_back("training");
  save_checkpoint(dir / "c.pcck", load_checkpoint(dir / "a.pcck"));
  if (testutil::slurp(dir / "a.pcck") != testutil::slurp(dir / "c.pcck")) failures.push_back("checkpoint round trip");

  // Every CLI command, twice.
  const std::vector<std::vector<std::string>> cmds = {
      {"gen", "--k", "5", "--count", "60", "--out", "tr.pcwl"},
      {"gen", "--k", "5", "--count", "10", "--stream", "1", "--out", "va.pcwl"},
      {"gen", "--sweep", "--count", "2", "--out", "sweep"},
      {"baseline", "--data", "va.pcwl", "--restarts", "4", "--algorithms", "full_reuse", "wmmse_avg", "wmmse_best",
       "--out", "base.csv"},
      {"train", "--train", "tr.pcwl", "--val", "va.pcwl", "--from-scratch", "--layers", "1", "--d-model", "16",
       "--heads", "2", "--epochs", "2", "--batch", "16", "--out", "m.pcck"},
      {"eval", "--checkpoint", "m.pcck", "--data", "va.pcwl", "--utility", "sum", "--utility", "pf", "--out",
       "eval.csv"},
      {"bench", "--data", "va.pcwl", "--checkpoint", "m.pcck", "--restarts", "4", "--out", "bench.csv"},
      {"gradcheck", "--utility", "sum", "--out", "grad.csv"}};
  const char* outputs[] = {"tr.pcwl", "va.pcwl",  "sweep/k80_d30-70.pcwl", "base.csv",
                           "m.pcck",  "m.pcck.csv", "eval.csv", "bench.csv", "bench.csv.long.csv", "grad.csv"};
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& c : cmds)
      if (cli_run(dir.path(), c) != 0) failures.push_back("cli " + c.front() + " exit status");
    for (const char* f : outputs) {
      const auto bytes = fs::exists(dir / f) ? testutil::slurp(dir / f) : std::string();
      if (bytes.empty()) failures.push_back(std::string("missing ") + f);
      if (pass == 0)
        first[f] = bytes;
      else if (first[f] != bytes)
        failures.push_back(std::string("cli output ") + f);
    }
  }
  std::string detail = failures.empty() ? "generation (1 vs 4 threads), dataset/checkpoint round trips, training "
                                          "and all six CLI commands byte-identical"
                                        : "differences:";
  for (const auto& f : failures) detail += " " + f + ";";
  return {failures.empty(), detail};
}

Outcome c11_channel_statistics() {
  Scenario sc = ring(10, 2, 65);
  Scenario fade = sc;
  fade.shadowing_std_db = 0.0;
  Scenario shadow = sc;
  shadow.rayleigh_fading = false;
  double sum_f = 0.0, sum_x = 0.0, sum_x2 = 0.0;
  std::size_t n = 0;
  for (std::uint64_t i = 0; n < 100000; ++i) {
    auto r1 = snapshot_rng(31, 0, i);
    const auto t1 = sample_topology(fade, r1);
    const auto s1 = sample_channel(t1, fade, r1);
    auto r2 = snapshot_rng(32, 0, i);
    const auto t2 = sample_topology(shadow, r2);
    const auto s2 = sample_channel(t2, shadow, r2);
    for (std::size_t k = 0; k < 10; ++k)
      for (std::size_t j = 0; j < 10; ++j) {
        const auto ek = static_cast<Eigen::Index>(k), ej = static_cast<Eigen::Index>(j);
        sum_f += s1.gains(ek, ej) / std::pow(10.0, path_gain_db(distance(t1.rx[k], t1.tx[j]), sc.pathloss) / 10.0);
        const double x =
            10.0 * std::log10(s2.gains(ek, ej)) - path_gain_db(distance(t2.rx[k], t2.tx[j]), sc.pathloss);
        sum_x += x;
        sum_x2 += x * x;
        ++n;
      }
  }
  const double dn = static_cast<double>(n);
  const double mean_f = sum_f / dn;
  const double std_x = std::sqrt(sum_x2 / dn - (sum_x / dn) * (sum_x / dn));
  const double noise = sc.noise_power_mw();
  const double expected_noise = std::pow(10.0, -10.4);
  const bool ok = std::abs(mean_f - 1.0) <= 0.01 && std::abs(std_x - 7.0) <= 0.14 &&
                  std::abs(noise - expected_noise) <= 1e-12 * expected_noise;
  return {ok, "fading mean " + num(mean_f) + " (1 +- 1%), shadowing std " + num(std_x) + " dB (7 +- 2%), noise " +
                  num(noise, 10) + " mW (10^-10.4 = " + num(expected_noise, 10) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  std::vector<int> only;
  CLI::App app{"Acceptance suite"};
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--epochs", o.epochs, "Desk sum-rate training epochs");
  app.add_option("--train-count", o.train_count, "Desk sum-rate training snapshots");
  app.add_option("--harmonic-epochs", o.harmonic_epochs, "Harmonic training epochs");
  app.add_option("--harmonic-train-count", o.harmonic_train_count, "Harmonic training snapshots");
  app.add_flag("--verbose", o.verbose, "Log every epoch");
  CLI11_PARSE(app, argc, argv);
  o.only.insert(only.begin(), only.end());
  auto wanted = [&](int c) { return o.only.empty() || o.only.count(c) > 0; };

  int failed = 0, ran = 0;
  auto report = [&](int id, const char* name, const Outcome& r, double secs) {
    ++ran;
    failed += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << r.detail << "  [" << num(secs, 4)
              << " s]" << std::endl;
  };
  auto timed = [&](int id, const char* name, auto&& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    const Outcome r = fn();
    report(id, name, r, seconds_since(t0));
  };

  timed(1, "gradient correctness", c1_gradients);
  timed(2, "permutation equivariance", c2_equivariance);
  timed(3, "zero-init equivalence", c3_zero_init);
  timed(4, "oracle gap", c4_oracle_gap);

  if (wanted(5) || wanted(7)) {
    const auto t0 = Clock::now();
    const Scenario sc = ring(10, 2, 65);
    const auto test = snapshots(sc, 1000, 2);
    const auto wm = run_wmmse(test, WmmseConfig{});
    const auto desk = train_desk(o, sc, UtilityTag::SumRate, o.train_count, o.epochs, "sum");
    if (wanted(5)) report(5, "desk-scale sum-rate training", c5_desk_training(desk, test, wm), seconds_since(t0));
    timed(7, "zero-shot extrapolation", [&] { return c7_zero_shot(desk, test, wm); });
  }
  timed(6, "harmonic-regime ordering", [&] { return c6_harmonic(o); });
  timed(8, "complexity scaling", c8_complexity);
  timed(9, "WMMSE monotone trace", c9_monotone);
  timed(10, "determinism and formats", c10_determinism);
  timed(11, "channel statistics", c11_channel_statistics);

  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

#pragma once

// Command-line front end: gen | baseline | train | eval | bench | gradcheck.
//
// Every option can also come from a TOML file given with --config; options of
// a subcommand live in the section named after it ([gen], [train], ...).
// Command-line flags override file values and unknown keys are rejected.
// Relative dataset paths are resolved against $PCWL_DATA_ROOT when it is set.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include "pcwl/common.hpp"
#include "pcwl/io.hpp"
#include "pcwl/model.hpp"
#include "pcwl/netgen.hpp"
#include "pcwl/pretrained.hpp"
#include "pcwl/rates.hpp"
#include "pcwl/train.hpp"
#include "pcwl/wmmse.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pcwl::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

inline fs::path data_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative())
    if (const char* root = std::getenv("PCWL_DATA_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

inline fs::path existing_input(const std::string& p, const std::string& what) {
  const fs::path path = data_path(p);
  if (!fs::exists(path)) throw ConfigError(what + ": no such file " + path.string());
  return path;
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

// "# key=value" header lines echoing the effective configuration.
inline std::string config_header(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += "# " + k + "=" + v + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Option sets

struct ScenarioOptions {
  std::uint32_t k = 20;
  double dmin = 2.0, dmax = 65.0;
  double area = 1000.0, separation = 30.0, shadowing = 7.0;
  double pmax_dbm = 10.0;
  bool no_fading = false;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--k", k, "Number of D2D pairs");
    app->add_option("--dmin", dmin, "Minimum link distance (m)");
    app->add_option("--dmax", dmax, "Maximum link distance (m)");
    app->add_option("--area", area, "Side of the square area (m)");
    app->add_option("--separation", separation, "Minimum transmitter separation (m)");
    app->add_option("--shadowing", shadowing, "Shadowing standard deviation (dB)");
    app->add_option("--pmax-dbm", pmax_dbm, "Maximum transmit power (dBm)");
    app->add_flag("--no-fading", no_fading, "Disable Rayleigh fading");
    app->add_option("--seed", seed, "Generator seed");
  }

  Scenario scenario() const {
    Scenario s;
    s.pair_count = k;
    s.d_min = dmin;
    s.d_max = dmax;
    s.area_side = area;
    s.min_tx_separation = separation;
    s.shadowing_std_db = shadowing;
    s.p_max_dbm = pmax_dbm;
    s.rayleigh_fading = !no_fading;
    s.rng_seed = seed;
    s.validate();
    return s;
  }
};

struct WmmseOptions {
  int iterations = 100;
  int restarts = 100;
  double tol = 1e-6;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--iterations", iterations, "WMMSE iteration cap");
    app->add_option("--restarts", restarts, "WMMSE restarts (restart 0 starts at full power)");
    app->add_option("--tol", tol, "WMMSE relative convergence tolerance");
    app->add_option("--wmmse-seed", seed, "Seed of the random WMMSE initializations");
  }

  WmmseConfig config(UtilityTag tag) const {
    WmmseConfig c;
    c.max_iterations = iterations;
    c.restarts = restarts;
    c.convergence_tol = tol;
    c.rng_seed = seed;
    c.utility.tag = tag;
    c.validate();
    return c;
  }
};

struct ModelOptions {
  int layers = 2, d_model = 64, heads = 4, d_proj = 128, lora_rank = 8;
  double lora_alpha = 16.0;
  bool no_bias = false, no_lora = false, from_scratch = false;
  std::string pretrained;

  void add(CLI::App* app) {
    app->add_option("--layers", layers, "Transformer layers");
    app->add_option("--d-model", d_model, "Hidden width");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--d-proj", d_proj, "Bias projector hidden width");
    app->add_option("--lora-rank", lora_rank, "LoRA rank");
    app->add_option("--lora-alpha", lora_alpha, "LoRA scale numerator");
    app->add_flag("--no-bias", no_bias, "Disable attention bias injection");
    app->add_flag("--no-lora", no_lora, "Disable LoRA adapters");
    app->add_flag("--from-scratch", from_scratch, "Train every parameter from random initialization");
    app->add_option("--pretrained", pretrained, "Backbone weight archive (PCWT)");
  }

  ModelConfig config(double p_max_mw) const {
    ModelConfig c;
    c.layers = layers;
    c.d_model = d_model;
    c.heads = heads;
    c.d_proj = d_proj;
    c.lora_rank = lora_rank;
    c.lora_alpha = lora_alpha;
    c.use_bias = !no_bias;
    c.use_lora = !no_lora;
    c.from_scratch = from_scratch;
    c.p_max_mw = p_max_mw;
    c.validate();
    if (!from_scratch && pretrained.empty())
      throw ConfigError("model.pretrained is required unless --from-scratch is given");
    return c;
  }
};

inline std::vector<UtilityTag> parse_utilities(const std::vector<std::string>& names) {
  std::vector<UtilityTag> out;
  for (const auto& n : names) out.push_back(parse_utility(n));
  if (out.empty()) throw ConfigError("at least one --utility is required");
  return out;
}

// Loads and concatenates datasets; all must share p_max and noise power.
inline std::vector<NetworkSnapshot> load_datasets(const std::vector<std::string>& paths, const std::string& what) {
  std::vector<NetworkSnapshot> all;
  for (const auto& p : paths) {
    auto part = read_dataset(existing_input(p, what));
    if (!all.empty() && (part.front().p_max_mw != all.front().p_max_mw || part.front().noise_mw != all.front().noise_mw))
      throw ConfigError(what + ": datasets disagree on p_max or noise power");
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (all.empty()) throw ConfigError(what + ": no snapshots");
  return all;
}

// ---------------------------------------------------------------------------
// gen

struct GenCommand {
  ScenarioOptions sc;
  std::uint64_t count = 1000;
  std::uint64_t stream = 0;
  std::string out;
  bool sweep = false;
  unsigned threads = 1;

  void add(CLI::App* app) {
    sc.add(app);
    app->add_option("--count", count, "Snapshots per file");
    app->add_option("--stream", stream, "Stream id (use distinct ids for train/val/test splits)");
    app->add_option("--out", out, "Output file, or directory with --sweep")->required();
    app->add_flag("--sweep", sweep, "Generate the 15-scenario sweep (K x link-distance range)");
    app->add_option("--threads", threads, "Worker threads");
  }

  int run() const {
    const Scenario base = sc.scenario();
    if (count < 1) throw ConfigError("count must be >= 1");
    const fs::path target = data_path(out);
    if (!sweep) {
      const auto s = generate_dataset(base, count, target, threads, stream);
      std::cout << s.path.string() << " K=" << s.pair_count << " count=" << s.count << "\n";
      return kExitOk;
    }
    fs::create_directories(target);
    for (const auto& s : sweep_scenarios(base)) {
      std::ostringstream name;
      name << "k" << s.pair_count << "_d" << s.d_min << "-" << s.d_max << ".pcwl";
      const auto sum = generate_dataset(s, count, target / name.str(), threads, stream);
      std::cout << sum.path.string() << " K=" << sum.pair_count << " count=" << sum.count << "\n";
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// baseline

struct BaselineCommand {
  std::string data, out;
  std::string utility = "sum";
  std::vector<std::string> algorithms{"full_reuse", "wmmse_avg", "wmmse_best"};
  int grid_levels = 101;
  WmmseOptions wm;
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Dataset file")->required();
    app->add_option("--out", out, "Output CSV")->required();
    app->add_option("--utility", utility, "sum | pf | harmonic");
    app->add_option("--algorithms", algorithms, "full_reuse wmmse_avg wmmse_best grid_oracle");
    app->add_option("--grid-levels", grid_levels, "Power levels per link for grid_oracle");
    app->add_option("--threads", threads, "Worker threads");
    wm.add(app);
  }

  int run() const {
    const UtilityTag tag = parse_utility(utility);
    const WmmseConfig wc = wm.config(tag);
    bool want_fr = false, want_avg = false, want_best = false, want_grid = false;
    for (const auto& a : algorithms) {
      if (a == "full_reuse") want_fr = true;
      else if (a == "wmmse_avg") want_avg = true;
      else if (a == "wmmse_best") want_best = true;
      else if (a == "grid_oracle") want_grid = true;
      else throw ConfigError("unknown algorithm '" + a + "'");
    }
    if (want_grid && grid_levels < 2) throw ConfigError("grid_levels must be >= 2");
    const auto snaps = load_datasets({data}, "data");
    const auto K = static_cast<Eigen::Index>(snaps.front().size());

    struct Row {
      double fr = 0, avg = 0, best = 0, grid = 0;
      VecD p_fr, p_best, p_grid;
      int best_iters = 0;
      bool failure = false;
    };
    std::vector<Row> rows(snaps.size());
    parallel_for(snaps.size(), threads, [&](std::size_t i) {
      const auto& s = snaps[i];
      Row& r = rows[i];
      if (want_fr) {
        r.p_fr = full_reuse(s);
        r.fr = objective_of(s, r.p_fr, tag);
      }
      if (want_avg || want_best) {
        const auto runs = wmmse_runs(s, wc);
        r.avg = average_objective(runs);
        const auto& b = best_of(runs);
        r.best = b.objective;
        r.p_best = b.p;
        r.best_iters = b.iterations_used;
        for (const auto& run : runs) r.failure = r.failure || run.numerical_failure;
      }
      if (want_grid) {
        const auto g = grid_oracle(s, grid_levels, tag);
        r.grid = g.objective;
        r.p_grid = g.p;
      }
    });

    std::ostringstream csv;
    csv << config_header({{"command", "baseline"},
                          {"data", data},
                          {"utility", to_string(tag)},
                          {"iterations", std::to_string(wc.max_iterations)},
                          {"restarts", std::to_string(wc.restarts)},
                          {"tol", fmt(wc.convergence_tol)},
                          {"wmmse_seed", std::to_string(wc.rng_seed)},
                          {"grid_levels", std::to_string(grid_levels)}});
    csv << "snapshot";
    if (want_fr) csv << ",full_reuse";
    if (want_avg) csv << ",wmmse_avg";
    if (want_best) csv << ",wmmse_best,wmmse_best_iterations,wmmse_numerical_failure";
    if (want_grid) csv << ",grid_oracle";
    auto power_cols = [&](const char* name) {
      for (Eigen::Index k = 0; k < K; ++k) csv << "," << name << "_p" << k;
    };
    if (want_fr) power_cols("full_reuse");
    if (want_best) power_cols("wmmse_best");
    if (want_grid) power_cols("grid_oracle");
    csv << "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Row& r = rows[i];
      csv << i;
      if (want_fr) csv << "," << fmt(r.fr);
      if (want_avg) csv << "," << fmt(r.avg);
      if (want_best) csv << "," << fmt(r.best) << "," << r.best_iters << "," << (r.failure ? 1 : 0);
      if (want_grid) csv << "," << fmt(r.grid);
      auto powers = [&](const VecD& p) {
        for (Eigen::Index k = 0; k < K; ++k) csv << "," << fmt(p[k]);
      };
      if (want_fr) powers(r.p_fr);
      if (want_best) powers(r.p_best);
      if (want_grid) powers(r.p_grid);
      csv << "\n";
    }
    io::write_text_atomic(data_path(out), csv.str());
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// train

struct TrainCommand {
  std::vector<std::string> train_data;
  std::string val_data, out, log;
  std::string utility = "sum";
  ModelOptions model;
  int batch = 64, epochs = 200, validation_interval = 1, patience = 15;
  double lr_init = 1e-3, lr_lora = 0.0, clip = 1.0, factor = 0.5, threshold = 1e-6;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--train", train_data, "Training dataset file(s)")->required();
    app->add_option("--val", val_data, "Validation dataset file")->required();
    app->add_option("--out", out, "Checkpoint path")->required();
    app->add_option("--log", log, "Per-epoch metrics CSV (default: <out>.csv)");
    app->add_option("--utility", utility, "sum | pf | harmonic");
    app->add_option("--batch", batch, "Batch size");
    app->add_option("--epochs", epochs, "Epochs");
    app->add_option("--lr-init", lr_init, "Rate of encoder, bias projectors and head");
    app->add_option("--lr-lora", lr_lora, "Rate of LoRA adapters (0: 1e-4 for sum, 3e-4 otherwise)");
    app->add_option("--clip", clip, "Global gradient-norm clip");
    app->add_option("--patience", patience, "Plateau patience (epochs)");
    app->add_option("--factor", factor, "Plateau decay factor");
    app->add_option("--threshold", threshold, "Minimum validation improvement");
    app->add_option("--validation-interval", validation_interval, "Epochs between validations");
    app->add_option("--seed", seed, "Training seed");
    app->add_option("--threads", threads, "Worker threads (1 is bit-reproducible)");
    model.add(app);
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.utility.tag = parse_utility(utility);
    t.batch_size = batch;
    t.epochs = epochs;
    t.lr_init = lr_init;
    t.lr_lora = lr_lora;
    t.clip_norm = clip;
    t.scheduler.patience = patience;
    t.scheduler.factor = factor;
    t.scheduler.threshold = threshold;
    t.validation_interval = validation_interval;
    t.seed = seed;
    t.validate();
    return t;
  }

  int run() const {
    const TrainConfig tc = train_config();
    TrainInputs in;
    in.train = load_datasets(train_data, "train");
    in.validation = load_datasets({val_data}, "val");
    const ModelConfig mc = model.config(in.train.front().p_max_mw);
    std::optional<ModelParameters<float>> initial;
    if (!model.pretrained.empty()) initial = import_pretrained(existing_input(model.pretrained, "pretrained"), mc, seed);

    std::ostringstream csv;
    std::vector<std::pair<std::string, std::string>> kv{{"command", "train"}};
    for (const auto& t : train_data) kv.emplace_back("train", t);
    kv.emplace_back("val", val_data);
    const auto tj = to_json(tc), mj = to_json(mc);
    for (auto& [k, v] : tj.items()) kv.emplace_back("train." + k, v.dump());
    for (auto& [k, v] : mj.items())
      if (k != "norm_stats") kv.emplace_back("model." + k, v.dump());
    if (!model.pretrained.empty()) kv.emplace_back("pretrained", model.pretrained);
    csv << config_header(kv);
    csv << "epoch,train_loss,val_utility,lr_init,lr_lora,grad_norm_pre_clip,grad_norm_post_clip,lr_reduced\n";
    const Checkpoint ck = train(in, mc, tc, std::move(initial), [&](const EpochLog& e) {
      csv << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.val_utility) << "," << fmt(e.group_lr.at(0)) << ","
          << (e.group_lr.size() > 1 ? fmt(e.group_lr[1]) : "") << "," << fmt(e.grad_norm_pre) << ","
          << fmt(e.grad_norm_post) << "," << (e.lr_reduced ? 1 : 0) << "\n";
    });
    const fs::path out_path = data_path(out);
    save_checkpoint(out_path, ck);
    fs::path log_path = log.empty() ? fs::path(out_path.string() + ".csv") : data_path(log);
    io::write_text_atomic(log_path, csv.str());
    std::cout << out_path.string() << " best_val=" << fmt(ck.best_validation) << "\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// eval

struct EvalCommand {
  std::string checkpoint, out;
  std::vector<std::string> data;
  std::vector<std::string> utilities{"sum"};

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
    app->add_option("--data", data, "Dataset file(s)")->required();
    app->add_option("--utility", utilities, "Utilities to report (repeatable)");
    app->add_option("--out", out, "Output CSV")->required();
  }

  int run() const {
    const auto tags = parse_utilities(utilities);
    const Checkpoint ck = load_checkpoint(existing_input(checkpoint, "checkpoint"));
    std::ostringstream csv;
    csv << config_header({{"command", "eval"}, {"checkpoint", checkpoint}});
    csv << "dataset,utility,snapshots,arithmetic_mean,geometric_mean,harmonic_mean,mean_utility\n";
    for (const auto& d : data) {
      const auto snaps = load_datasets({d}, "data");
      for (const auto& r : evaluate(ck.params, ck.model, snaps, tags, ck.train.utility.rate_floor))
        csv << d << "," << to_string(r.utility) << "," << r.metrics.snapshot_count << ","
            << fmt(r.metrics.arithmetic_mean) << "," << fmt(r.metrics.geometric_mean) << ","
            << fmt(r.metrics.harmonic_mean) << "," << fmt(r.mean_utility) << "\n";
    }
    io::write_text_atomic(data_path(out), csv.str());
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  std::string scenario;
  UtilityTag utility = UtilityTag::SumRate;
  std::string algorithm;
  MetricsReport metrics;
  double normalized = 0.0;
};

struct BenchCommand {
  std::vector<std::string> data;
  std::string checkpoint, out, long_out;
  std::string utility = "sum";
  std::string reference = "auto";
  WmmseOptions wm;
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Dataset file(s), one scenario each")->required();
    app->add_option("--checkpoint", checkpoint, "Learned model to include");
    app->add_option("--utility", utility, "sum | pf | harmonic");
    app->add_option("--reference", reference, "auto | full_reuse | wmmse_avg | wmmse_best | model");
    app->add_option("--out", out, "Table CSV")->required();
    app->add_option("--long", long_out, "Long-format CSV (default: <out>.long.csv)");
    app->add_option("--threads", threads, "Worker threads");
    wm.add(app);
  }

  int run() const {
    const UtilityTag tag = parse_utility(utility);
    const WmmseConfig wc = wm.config(tag);
    if (reference != "auto" && reference != "full_reuse" && reference != "wmmse_avg" && reference != "wmmse_best" &&
        reference != "model")
      throw ConfigError("unknown reference '" + reference + "'");
    if (reference == "model" && checkpoint.empty()) throw ConfigError("reference=model needs --checkpoint");
    std::optional<Checkpoint> ck;
    if (!checkpoint.empty()) ck = load_checkpoint(existing_input(checkpoint, "checkpoint"));
    for (const auto& d : data) existing_input(d, "data");

    std::vector<BenchRow> rows;
    std::vector<std::string> chosen_refs;
    for (const auto& d : data) {
      const auto snaps = load_datasets({d}, "data");
      const std::size_t n = snaps.size();
      std::vector<VecD> fr(n), best(n);
      std::vector<std::vector<VecD>> per_restart(static_cast<std::size_t>(wc.restarts), std::vector<VecD>(n));
      parallel_for(n, threads, [&](std::size_t i) {
        fr[i] = rates(snaps[i], full_reuse(snaps[i]));
        const auto runs = wmmse_runs(snaps[i], wc);
        best[i] = rates(snaps[i], best_of(runs).p);
        for (std::size_t r = 0; r < runs.size(); ++r) per_restart[r][i] = rates(snaps[i], runs[r].p);
      });
      std::vector<BenchRow> local;
      local.push_back({d, tag, "full_reuse", metrics(fr), 0.0});
      MetricsReport avg;
      for (const auto& pr : per_restart) {
        const auto m = metrics(pr);
        avg.arithmetic_mean += m.arithmetic_mean;
        avg.geometric_mean += m.geometric_mean;
        avg.harmonic_mean += m.harmonic_mean;
      }
      const double nr = static_cast<double>(per_restart.size());
      avg.arithmetic_mean /= nr;
      avg.geometric_mean /= nr;
      avg.harmonic_mean /= nr;
      avg.snapshot_count = n;
      local.push_back({d, tag, "wmmse_avg", avg, 0.0});
      local.push_back({d, tag, "wmmse_best", metrics(best), 0.0});
      if (ck) {
        const auto powers = infer_powers(snaps, ck->params, ck->model);
        std::vector<VecD> r(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = rates(snaps[i], powers[i]);
        local.push_back({d, tag, "model", metrics(r), 0.0});
      }
      std::string ref = reference;
      if (ref == "auto") {
        ref = "wmmse_best";
        if (tag == UtilityTag::Harmonic) {
          double top = -std::numeric_limits<double>::infinity();
          for (const auto& row : local)
            if (row.metrics.for_utility(tag) > top) {
              top = row.metrics.for_utility(tag);
              ref = row.algorithm;
            }
        }
      }
      double ref_value = 0.0;
      for (const auto& row : local)
        if (row.algorithm == ref) ref_value = row.metrics.for_utility(tag);
      for (auto& row : local) {
        row.normalized = row.algorithm == ref ? 1.0 : row.metrics.for_utility(tag) / ref_value;
        rows.push_back(row);
      }
      chosen_refs.push_back(d + ":" + ref);
    }

    std::vector<std::pair<std::string, std::string>> kv{{"command", "bench"},
                                                         {"utility", to_string(tag)},
                                                         {"reference_mode", reference},
                                                         {"iterations", std::to_string(wc.max_iterations)},
                                                         {"restarts", std::to_string(wc.restarts)},
                                                         {"tol", fmt(wc.convergence_tol)},
                                                         {"wmmse_seed", std::to_string(wc.rng_seed)}};
    if (!checkpoint.empty()) kv.emplace_back("checkpoint", checkpoint);
    for (const auto& r : chosen_refs) kv.emplace_back("reference", r);
    const std::string header = config_header(kv);

    std::ostringstream table, longf;
    table << header << "scenario,utility,algorithm,arithmetic_mean,geometric_mean,harmonic_mean,metric,normalized\n";
    longf << header << "scenario,utility,algorithm,measure,value\n";
    for (const auto& r : rows) {
      table << r.scenario << "," << to_string(r.utility) << "," << r.algorithm << "," << fmt(r.metrics.arithmetic_mean)
            << "," << fmt(r.metrics.geometric_mean) << "," << fmt(r.metrics.harmonic_mean) << ","
            << fmt(r.metrics.for_utility(r.utility)) << "," << fmt(r.normalized) << "\n";
      const std::pair<const char*, double> measures[] = {{"arithmetic_mean", r.metrics.arithmetic_mean},
                                                         {"geometric_mean", r.metrics.geometric_mean},
                                                         {"harmonic_mean", r.metrics.harmonic_mean},
                                                         {"normalized", r.normalized}};
      for (const auto& [name, value] : measures)
        longf << r.scenario << "," << to_string(r.utility) << "," << r.algorithm << "," << name << "," << fmt(value)
              << "\n";
    }
    const fs::path out_path = data_path(out);
    io::write_text_atomic(out_path, table.str());
    io::write_text_atomic(long_out.empty() ? fs::path(out_path.string() + ".long.csv") : data_path(long_out),
                          longf.str());
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckCommand {
  std::vector<std::string> utilities{"sum", "pf", "harmonic"};
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--utility", utilities, "Utilities to check (repeatable)");
    app->add_option("--seed", seed, "Seed of the toy model and data");
    app->add_option("--tolerance", tolerance, "Maximum accepted relative error");
    app->add_option("--out", out, "Per-tensor CSV (optional)");
  }

  int run() const {
    const auto tags = parse_utilities(utilities);
    std::ostringstream csv;
    csv << config_header({{"command", "gradcheck"}, {"seed", std::to_string(seed)}, {"tolerance", fmt(tolerance)}});
    csv << "utility,tensor,rel_error,grad_norm\n";
    double worst = 0.0;
    for (auto t : tags) {
      GradCheckConfig gc;
      gc.utility.tag = t;
      gc.seed = seed;
      const auto rep = grad_check(gc);
      for (const auto& e : rep.tensors)
        csv << to_string(t) << "," << e.name << "," << fmt(e.rel_error) << "," << fmt(e.grad_norm) << "\n";
      std::cout << to_string(t) << " max_rel_error=" << fmt(rep.max_rel_error) << "\n";
      worst = std::max(worst, rep.max_rel_error);
    }
    if (!out.empty()) io::write_text_atomic(data_path(out), csv.str());
    return worst < tolerance ? kExitOk : kExitRuntime;
  }
};

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Power control for D2D networks with an attention-biased transformer"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  GenCommand gen;
  BaselineCommand baseline;
  TrainCommand train_cmd;
  EvalCommand eval;
  BenchCommand bench;
  GradCheckCommand gradcheck;
  gen.add(app.add_subcommand("gen", "Generate snapshot datasets"));
  baseline.add(app.add_subcommand("baseline", "Run classical baselines over a dataset"));
  train_cmd.add(app.add_subcommand("train", "Train a model"));
  eval.add(app.add_subcommand("eval", "Evaluate a checkpoint"));
  bench.add(app.add_subcommand("bench", "Benchmark table normalized by a reference algorithm"));
  gradcheck.add(app.add_subcommand("gradcheck", "Finite-difference gradient check"));
  for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (app.got_subcommand("gen")) return gen.run();
    if (app.got_subcommand("baseline")) return baseline.run();
    if (app.got_subcommand("train")) return train_cmd.run();
    if (app.got_subcommand("eval")) return eval.run();
    if (app.got_subcommand("bench")) return bench.run();
    if (app.got_subcommand("gradcheck")) return gradcheck.run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace pcwl::cli

#pragma once

// Unsupervised training of the power-control model: discriminative Adam
// groups, global-norm clipping, plateau learning-rate decay, checkpointing,
// evaluation and the finite-difference gradient check.

#include "pcwl/common.hpp"
#include "pcwl/features.hpp"
#include "pcwl/io.hpp"
#include "pcwl/model.hpp"
#include "pcwl/netgen.hpp"
#include "pcwl/rates.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace pcwl {

struct SchedulerConfig {
  double factor = 0.5;
  int patience = 15;
  double threshold = 1e-6;  // absolute improvement of validation utility
};

struct TrainConfig {
  UtilityKind utility{};
  int batch_size = 64;
  int epochs = 200;
  double lr_init = 1e-3;
  double lr_lora = 0.0;  // 0 -> 1e-4 for sum rate, 3e-4 otherwise
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  SchedulerConfig scheduler{};
  std::uint64_t seed = 1;
  int validation_interval = 1;

  double resolved_lr_lora() const {
    if (lr_lora > 0.0) return lr_lora;
    return utility.tag == UtilityTag::SumRate ? 1e-4 : 3e-4;
  }

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(lr_init > 0.0)) throw ConfigError("train.lr_init must be > 0");
    if (lr_lora < 0.0) throw ConfigError("train.lr_lora must be > 0 (or 0 for the default)");
    if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be > 0");
    if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0))
      throw ConfigError("train.scheduler.factor must be in (0, 1)");
    if (scheduler.patience < 0) throw ConfigError("train.scheduler.patience must be >= 0");
    if (validation_interval < 1) throw ConfigError("train.validation_interval must be >= 1");
    if (!(utility.rate_floor > 0.0)) throw ConfigError("utility.rate_floor must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Optimizer state

struct ParamGroup {
  std::string name;
  double lr = 0.0;
  std::vector<std::size_t> tensors;  // indices in ModelParameters::visit order
};

struct OptimizerState {
  std::vector<ParamGroup> groups;
  ModelParameters<float> m;
  ModelParameters<float> v;
  std::int64_t step = 0;
};

inline std::vector<std::pair<std::string, ParamRole>> tensor_roles(const ModelParameters<float>& p) {
  std::vector<std::pair<std::string, ParamRole>> out;
  p.visit([&](const std::string& n, ParamRole r, const Mat<float>&) { out.emplace_back(n, r); });
  return out;
}

// Group "init" at lr_init: encoder, bias projectors, head, and (from scratch)
// the whole backbone. Group "lora" at the adapter rate: every LoRA tensor.
inline OptimizerState assign_param_groups(const ModelParameters<float>& params, const ModelConfig& mc,
                                          const TrainConfig& tc) {
  OptimizerState st;
  ParamGroup init{"init", tc.lr_init, {}};
  ParamGroup lora{"lora", tc.resolved_lr_lora(), {}};
  const auto roles = tensor_roles(params);
  for (std::size_t i = 0; i < roles.size(); ++i) {
    const ParamRole r = roles[i].second;
    if (!is_trainable(r, mc)) continue;
    switch (r) {
      case ParamRole::Encoder:
      case ParamRole::BiasProjector:
      case ParamRole::Head:
      case ParamRole::Base: init.tensors.push_back(i); break;
      case ParamRole::Lora: lora.tensors.push_back(i); break;
    }
  }
  st.groups.push_back(std::move(init));
  if (!lora.tensors.empty()) st.groups.push_back(std::move(lora));

  std::vector<int> seen(roles.size(), 0);
  for (const auto& g : st.groups)
    for (auto i : g.tensors) ++seen[i];
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (is_trainable(roles[i].second, mc) && seen[i] != 1)
      throw UnclassifiedParameter("tensor " + roles[i].first + " is not in exactly one group");
  st.m = params.zeros_like();
  st.v = params.zeros_like();
  return st;
}

template <typename S>
std::vector<Mat<S>*> tensor_list(ModelParameters<S>& p) {
  std::vector<Mat<S>*> out;
  p.visit([&](const std::string&, ParamRole, Mat<S>& m) { out.push_back(&m); });
  return out;
}

template <typename S>
std::vector<const Mat<S>*> tensor_list(const ModelParameters<S>& p) {
  std::vector<const Mat<S>*> out;
  p.visit([&](const std::string&, ParamRole, const Mat<S>& m) { out.push_back(&m); });
  return out;
}

// L2 norm over all tensors that belong to a group.
inline double grad_norm(const ModelParameters<float>& grads, const OptimizerState& st) {
  const auto g = tensor_list(grads);
  double sq = 0.0;
  for (const auto& grp : st.groups)
    for (auto i : grp.tensors) sq += g[i]->template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

// Scales grouped gradients so their global norm is at most max_norm. Returns
// the norm before clipping.
inline double clip_gradients(ModelParameters<float>& grads, const OptimizerState& st, double max_norm) {
  const double norm = grad_norm(grads, st);
  if (norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    auto g = tensor_list(grads);
    for (const auto& grp : st.groups)
      for (auto i : grp.tensors) *g[i] *= scale;
  }
  return norm;
}

inline void adam_update(ModelParameters<float>& params, const ModelParameters<float>& grads, OptimizerState& st,
                        const TrainConfig& tc) {
  ++st.step;
  const double b1 = tc.adam_beta1, b2 = tc.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  auto p = tensor_list(params);
  auto g = tensor_list(grads);
  auto m = tensor_list(st.m);
  auto v = tensor_list(st.v);
  for (const auto& grp : st.groups) {
    const auto step_size = static_cast<float>(grp.lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(tc.adam_eps);
    for (auto i : grp.tensors) {
      m[i]->array() = static_cast<float>(b1) * m[i]->array() + static_cast<float>(1.0 - b1) * g[i]->array();
      v[i]->array() = static_cast<float>(b2) * v[i]->array() + static_cast<float>(1.0 - b2) * g[i]->array().square();
      p[i]->array() -= step_size * m[i]->array() / ((v[i]->array() * inv_c2).sqrt() + eps);
    }
  }
}

// Reduce-on-plateau in "max" mode: after more than `patience` epochs without
// an improvement above `threshold`, every group rate is multiplied by factor.
struct PlateauScheduler {
  SchedulerConfig cfg;
  double best = -std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  // Records a validation value; returns true when the rates were reduced.
  bool step(double value, OptimizerState& st) {
    if (value > best + cfg.threshold) {
      best = value;
      bad_epochs = 0;
      return false;
    }
    if (++bad_epochs > cfg.patience) {
      for (auto& g : st.groups) g.lr *= cfg.factor;
      bad_epochs = 0;
      return true;
    }
    return false;
  }
};

// ---------------------------------------------------------------------------
// Steps and evaluation

struct StepReport {
  double loss = 0.0;
  double grad_norm_pre = 0.0;
  double grad_norm_post = 0.0;
};

template <typename S>
std::vector<VecD> split_powers(const Vec<S>& stacked, Eigen::Index K) {
  std::vector<VecD> out(static_cast<std::size_t>(stacked.size() / K));
  for (std::size_t b = 0; b < out.size(); ++b)
    out[b] = stacked.segment(static_cast<Eigen::Index>(b) * K, K).template cast<double>();
  return out;
}

// Loss and gradients of trainable tensors for one batch (no update).
template <typename S>
double loss_and_gradients(std::span<const GraphFeatures<S>* const> feats, std::span<const NetworkSnapshot> snaps,
                          const ModelParameters<S>& params, const ModelConfig& mc, const UtilityKind& u,
                          ModelParameters<S>& grads) {
  if (feats.size() != snaps.size()) throw DimensionMismatch("batch features and snapshots differ in size");
  ForwardCache<S> cache;
  const Vec<S> power = forward_batch<S>(feats, params, mc, &cache);
  const Eigen::Index K = cache.pairs;
  const auto powers = split_powers(power, K);
  const LossResult lr = loss(snaps, powers, u);
  Vec<S> dp(power.size());
  for (std::size_t b = 0; b < powers.size(); ++b)
    dp.segment(static_cast<Eigen::Index>(b) * K, K) = lr.grad[b].cast<S>();
  grads = params.zeros_like();
  backward_batch<S>(cache, dp, params, mc, grads);
  return lr.loss;
}

inline bool all_finite(const ModelParameters<float>& g, const OptimizerState& st) {
  const auto t = tensor_list(g);
  for (const auto& grp : st.groups)
    for (auto i : grp.tensors)
      if (!t[i]->allFinite()) return false;
  return true;
}

// One optimizer step. Throws NonFiniteLoss, leaving params and state
// untouched, when the loss or any gradient is not finite.
inline StepReport train_step(std::span<const GraphFeatures<float>* const> feats,
                             std::span<const NetworkSnapshot> snaps, ModelParameters<float>& params,
                             OptimizerState& st, const ModelConfig& mc, const TrainConfig& tc) {
  if (feats.empty()) throw EmptyInput("train_step: empty batch");
  ModelParameters<float> grads;
  StepReport rep;
  rep.loss = loss_and_gradients<float>(feats, snaps, params, mc, tc.utility, grads);
  if (!std::isfinite(rep.loss) || !all_finite(grads, st)) throw NonFiniteLoss("non-finite loss or gradient");
  rep.grad_norm_pre = clip_gradients(grads, st, tc.clip_norm);
  rep.grad_norm_post = grad_norm(grads, st);
  adam_update(params, grads, st, tc);
  return rep;
}

struct EvalReport {
  UtilityTag utility = UtilityTag::SumRate;
  MetricsReport metrics;
  double mean_utility = 0.0;  // clamped utility, averaged over snapshots
};

// Powers for every snapshot, computed in batches of equal K.
inline std::vector<VecD> infer_powers(std::span<const NetworkSnapshot> data, const ModelParameters<float>& params,
                                      const ModelConfig& mc, std::size_t chunk = 256) {
  std::vector<VecD> out(data.size());
  std::map<std::size_t, std::vector<std::size_t>> by_k;
  for (std::size_t i = 0; i < data.size(); ++i) by_k[data[i].size()].push_back(i);
  for (const auto& [K, idx] : by_k) {
    for (std::size_t begin = 0; begin < idx.size(); begin += chunk) {
      const std::size_t n = std::min(chunk, idx.size() - begin);
      std::vector<GraphFeatures<float>> feats(n);
      std::vector<const GraphFeatures<float>*> ptrs(n);
      for (std::size_t i = 0; i < n; ++i) {
        feats[i] = build_features<float>(data[idx[begin + i]], mc.norm_stats);
        ptrs[i] = &feats[i];
      }
      const Vec<float> p = forward_batch<float>(ptrs, params, mc);
      const auto split = split_powers(p, static_cast<Eigen::Index>(K));
      for (std::size_t i = 0; i < n; ++i) out[idx[begin + i]] = split[i];
    }
  }
  return out;
}

// Metrics of given power vectors under several utilities.
inline std::vector<EvalReport> evaluate_powers(std::span<const NetworkSnapshot> data, std::span<const VecD> powers,
                                               std::span<const UtilityTag> utilities, double rate_floor = 1e-5) {
  if (data.empty()) throw EmptyInput("evaluate: empty dataset");
  std::vector<VecD> r(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) r[i] = rates(data[i], powers[i]);
  std::vector<EvalReport> out;
  for (auto t : utilities) {
    EvalReport rep;
    rep.utility = t;
    rep.metrics = metrics(r, rate_floor);
    const UtilityKind u{t, rate_floor};
    for (const auto& ri : r) rep.mean_utility += utility(ri, u);
    rep.mean_utility /= static_cast<double>(data.size());
    out.push_back(rep);
  }
  return out;
}

inline std::vector<EvalReport> evaluate(const ModelParameters<float>& params, const ModelConfig& mc,
                                        std::span<const NetworkSnapshot> data, std::span<const UtilityTag> utilities,
                                        double rate_floor = 1e-5) {
  const auto powers = infer_powers(data, params, mc);
  return evaluate_powers(data, powers, utilities, rate_floor);
}

inline double mean_utility(const ModelParameters<float>& params, const ModelConfig& mc,
                           std::span<const NetworkSnapshot> data, const UtilityKind& u) {
  const auto powers = infer_powers(data, params, mc);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total += utility(rates(data[i], powers[i]), u);
  return total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr char kCheckpointMagic[5] = "PCCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  ModelParameters<float> params;
  OptimizerState optimizer;
  TrainConfig train;
  int epoch = 0;
  double best_validation = -std::numeric_limits<double>::infinity();
  std::string rng_state;
};

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"utility", to_string(t.utility.tag)},
          {"rate_floor", t.utility.rate_floor},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"lr_init", t.lr_init},
          {"lr_lora", t.lr_lora},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"clip_norm", t.clip_norm},
          {"scheduler_factor", t.scheduler.factor},
          {"scheduler_patience", t.scheduler.patience},
          {"scheduler_threshold", t.scheduler.threshold},
          {"seed", t.seed},
          {"validation_interval", t.validation_interval}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.utility.tag = parse_utility(j.at("utility").get<std::string>());
  t.utility.rate_floor = j.at("rate_floor").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.lr_init = j.at("lr_init").get<double>();
  t.lr_lora = j.at("lr_lora").get<double>();
  t.adam_beta1 = j.at("adam_beta1").get<double>();
  t.adam_beta2 = j.at("adam_beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.clip_norm = j.at("clip_norm").get<double>();
  t.scheduler.factor = j.at("scheduler_factor").get<double>();
  t.scheduler.patience = j.at("scheduler_patience").get<int>();
  t.scheduler.threshold = j.at("scheduler_threshold").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.validation_interval = j.at("validation_interval").get<int>();
  return t;
}

namespace detail {

inline void put_tensors(std::ostream& out, const ModelParameters<float>& p) {
  p.visit([&](const std::string& name, ParamRole, const Mat<float>& m) {
    io::put_string(out, name);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  });
}

inline void get_tensors(std::istream& in, ModelParameters<float>& p) {
  p.visit([&](const std::string& name, ParamRole, Mat<float>& m) {
    const std::string stored = io::get_string(in, 4096);
    if (stored != name) throw FormatError("checkpoint: expected tensor " + name + ", found " + stored);
    const auto rows = io::get<std::uint32_t>(in);
    const auto cols = io::get<std::uint32_t>(in);
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 30)) throw FormatError("checkpoint: tensor too large");
    m.resize(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw FormatError("checkpoint: truncated tensor " + name);
  });
}

}  // namespace detail

// "PCCK" u32 version, JSON header string, parameters, Adam m, Adam v.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : ck.optimizer.groups) groups.push_back({{"name", g.name}, {"lr", g.lr}, {"tensors", g.tensors}});
  const nlohmann::json header = {{"model", to_json(ck.model)},
                                 {"train", to_json(ck.train)},
                                 {"epoch", ck.epoch},
                                 {"best_validation", ck.best_validation},
                                 {"rng_state", ck.rng_state},
                                 {"optimizer", {{"step", ck.optimizer.step}, {"groups", groups}}}};
  io::write_atomic(path, [&](std::ostream& out) {
    io::put_magic(out, kCheckpointMagic);
    io::put<std::uint32_t>(out, kCheckpointVersion);
    io::put_string(out, header.dump());
    detail::put_tensors(out, ck.params);
    detail::put_tensors(out, ck.optimizer.m);
    detail::put_tensors(out, ck.optimizer.v);
  });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, kCheckpointMagic, path.string());
  const auto version = io::get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(io::get_string(in));
    ck.model = model_config_from_json(header.at("model"));
    ck.train = train_config_from_json(header.at("train"));
    ck.epoch = header.at("epoch").get<int>();
    ck.best_validation = header.at("best_validation").is_null()
                             ? -std::numeric_limits<double>::infinity()
                             : header.at("best_validation").get<double>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.optimizer.step = header.at("optimizer").at("step").get<std::int64_t>();
    for (const auto& g : header.at("optimizer").at("groups"))
      ck.optimizer.groups.push_back(
          {g.at("name").get<std::string>(), g.at("lr").get<double>(), g.at("tensors").get<std::vector<std::size_t>>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  ck.model.validate();
  ck.params.layers.resize(static_cast<std::size_t>(ck.model.layers));
  ck.optimizer.m.layers.resize(ck.params.layers.size());
  ck.optimizer.v.layers.resize(ck.params.layers.size());
  detail::get_tensors(in, ck.params);
  detail::get_tensors(in, ck.optimizer.m);
  detail::get_tensors(in, ck.optimizer.v);
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_utility = 0.0;
  std::vector<double> group_lr;
  double grad_norm_pre = 0.0;   // mean over steps
  double grad_norm_post = 0.0;  // mean over steps
  bool lr_reduced = false;
};

struct TrainInputs {
  std::vector<NetworkSnapshot> train;
  std::vector<NetworkSnapshot> validation;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains from `initial` (fresh parameters when empty). The normalization
// statistics are fitted on the training snapshots and stored in the returned
// checkpoint, which holds the best-validation state.
inline Checkpoint train(const TrainInputs& data, ModelConfig mc, const TrainConfig& tc,
                        std::optional<ModelParameters<float>> initial = std::nullopt,
                        const EpochCallback& on_epoch = {}) {
  tc.validate();
  const FlushSubnormals ftz;
  if (data.train.empty()) throw EmptyInput("train: empty training set");
  if (data.validation.empty()) throw EmptyInput("train: empty validation set");
  mc.norm_stats = fit_norm_stats(data.train);
  mc.validate();

  Checkpoint state;
  state.model = mc;
  state.train = tc;
  state.params = initial ? std::move(*initial) : init_parameters<float>(mc, tc.seed);
  state.optimizer = assign_param_groups(state.params, mc, tc);
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ull);

  std::vector<GraphFeatures<float>> feats(data.train.size());
  for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = build_features<float>(data.train[i], mc.norm_stats);
  std::map<std::size_t, std::vector<std::size_t>> by_k;
  for (std::size_t i = 0; i < data.train.size(); ++i) by_k[data.train[i].size()].push_back(i);

  PlateauScheduler sched{tc.scheduler};
  const double initial_val = mean_utility(state.params, mc, data.validation, tc.utility);
  sched.step(initial_val, state.optimizer);
  state.best_validation = initial_val;
  Checkpoint best = state;

  std::vector<const GraphFeatures<float>*> batch_feats;
  std::vector<NetworkSnapshot> batch_snaps;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> batches;
    for (auto& [K, idx] : by_k) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(tc.batch_size))
        batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                             idx.begin() + static_cast<std::ptrdiff_t>(
                                               std::min(idx.size(), b + static_cast<std::size_t>(tc.batch_size))));
    }
    if (by_k.size() > 1) std::shuffle(batches.begin(), batches.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    double weighted_loss = 0.0;
    std::size_t seen = 0;
    for (const auto& b : batches) {
      batch_feats.clear();
      batch_snaps.clear();
      for (auto i : b) {
        batch_feats.push_back(&feats[i]);
        batch_snaps.push_back(data.train[i]);
      }
      const auto rep = train_step(batch_feats, batch_snaps, state.params, state.optimizer, mc, tc);
      weighted_loss += rep.loss * static_cast<double>(b.size());
      seen += b.size();
      log.grad_norm_pre += rep.grad_norm_pre;
      log.grad_norm_post += rep.grad_norm_post;
    }
    log.train_loss = weighted_loss / static_cast<double>(seen);
    log.grad_norm_pre /= static_cast<double>(batches.size());
    log.grad_norm_post /= static_cast<double>(batches.size());
    state.epoch = epoch;

    if (epoch % tc.validation_interval == 0 || epoch == tc.epochs) {
      log.val_utility = mean_utility(state.params, mc, data.validation, tc.utility);
      log.lr_reduced = sched.step(log.val_utility, state.optimizer);
      if (log.val_utility > state.best_validation) {
        state.best_validation = log.val_utility;
        std::ostringstream rs;
        rs << rng;
        state.rng_state = rs.str();
        best = state;
      }
    } else {
      log.val_utility = std::numeric_limits<double>::quiet_NaN();
    }
    for (const auto& g : state.optimizer.groups) log.group_lr.push_back(g.lr);
    if (on_epoch) on_epoch(log);
  }
  if (best.rng_state.empty()) {
    std::ostringstream rs;
    rs << rng;
    best.rng_state = rs.str();
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckConfig {
  UtilityKind utility{};
  std::uint64_t seed = 7;
  std::uint32_t pairs = 4;
  int layers = 2;
  int d_model = 16;
  int heads = 2;
  int lora_rank = 4;
  int d_proj = 16;
  int batch = 2;
  double step = 5e-5;
  double norm_floor = 1e-6;  // keeps structurally zero gradients (key bias) out of 0/0
  double param_scale = 0.2;  // std of the random parameter draw
};

struct TensorGradError {
  std::string name;
  double rel_error = 0.0;
  double grad_norm = 0.0;
};

struct GradCheckReport {
  std::vector<TensorGradError> tensors;
  double max_rel_error = 0.0;
};

// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor) per
// trainable tensor, over two passes: adapter mode (encoder, bias projectors,
// LoRA, head) and from-scratch mode (backbone base weights).
inline GradCheckReport grad_check(const GradCheckConfig& gc) {
  Scenario sc;
  sc.pair_count = gc.pairs;
  sc.rng_seed = gc.seed;
  std::vector<NetworkSnapshot> snaps;
  for (int b = 0; b < gc.batch; ++b) snaps.push_back(generate_snapshot(sc, 0, static_cast<std::uint64_t>(b)));

  ModelConfig mc;
  mc.layers = gc.layers;
  mc.d_model = gc.d_model;
  mc.heads = gc.heads;
  mc.lora_rank = gc.lora_rank;
  mc.lora_alpha = 2.0 * gc.lora_rank;
  mc.d_proj = gc.d_proj;
  mc.p_max_mw = snaps.front().p_max_mw;
  mc.ln_eps = 1e-5;
  mc.norm_stats = fit_norm_stats(snaps);

  ModelParameters<double> params = init_parameters<double>(mc, gc.seed);
  {
    std::mt19937_64 rng(gc.seed + 1);
    std::normal_distribution<double> nd(0.0, gc.param_scale);
    params.visit([&](const std::string&, ParamRole, Mat<double>& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += nd(rng);
    });
  }
  std::vector<GraphFeatures<double>> feats;
  for (const auto& s : snaps) feats.push_back(build_features<double>(s, mc.norm_stats));
  std::vector<const GraphFeatures<double>*> ptrs;
  for (const auto& f : feats) ptrs.push_back(&f);

  GradCheckReport report;
  for (bool scratch : {false, true}) {
    ModelConfig c = mc;
    c.from_scratch = scratch;
    auto eval_loss = [&](const ModelParameters<double>& p) {
      const Vec<double> power = forward_batch<double>(ptrs, p, c);
      return loss(snaps, split_powers(power, static_cast<Eigen::Index>(gc.pairs)), gc.utility, false).loss;
    };
    ModelParameters<double> grads;
    loss_and_gradients<double>(ptrs, snaps, params, c, gc.utility, grads);
    auto work = params;
    auto wt = tensor_list(work);
    auto gt = tensor_list(grads);
    std::vector<std::pair<std::string, ParamRole>> roles;
    params.visit([&](const std::string& n, ParamRole r, const Mat<double>&) { roles.emplace_back(n, r); });
    for (std::size_t t = 0; t < wt.size(); ++t) {
      const ParamRole role = roles[t].second;
      if (!is_trainable(role, c)) continue;
      if (!scratch && role == ParamRole::Base) continue;
      if (scratch && role != ParamRole::Base) continue;
      Mat<double> numeric(wt[t]->rows(), wt[t]->cols());
      for (Eigen::Index i = 0; i < wt[t]->size(); ++i) {
        double& x = wt[t]->data()[i];
        const double orig = x;
        x = orig + gc.step;
        const double up = eval_loss(work);
        x = orig - gc.step;
        const double down = eval_loss(work);
        x = orig;
        numeric.data()[i] = (up - down) / (2.0 * gc.step);
      }
      const double denom = std::max({gt[t]->norm(), numeric.norm(), gc.norm_floor});
      TensorGradError e{roles[t].first, (*gt[t] - numeric).norm() / denom, gt[t]->norm()};
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.tensors.push_back(e);
    }
  }
  return report;
}

}  // namespace pcwl

#pragma once

// Classical power-control baselines: scalar SISO WMMSE with utility-derived
// weights, the multi-restart Best/Avg protocol, Full Reuse and a brute-force
// grid oracle for small networks.

#include "pcwl/common.hpp"
#include "pcwl/netgen.hpp"
#include "pcwl/rates.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pcwl {

enum class WmmseInit { MaxPower, UniformRandom };

struct WmmseConfig {
  int max_iterations = 100;
  int restarts = 100;
  UtilityKind utility{};
  double convergence_tol = 1e-6;
  WmmseInit init = WmmseInit::MaxPower;  // init of restart 0; the rest are random
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (max_iterations < 1) throw ConfigError("wmmse.max_iterations must be >= 1");
    if (restarts < 1) throw ConfigError("wmmse.restarts must be >= 1");
    if (!(convergence_tol > 0.0)) throw ConfigError("wmmse.convergence_tol must be > 0");
    if (!(utility.rate_floor > 0.0)) throw ConfigError("utility.rate_floor must be > 0");
  }
};

struct SolverResult {
  VecD p;
  double objective = kObjectiveFloor;
  std::vector<double> trace;
  int iterations_used = 0;
  int restart_index = 0;
  bool numerical_failure = false;
};

inline constexpr double kMseFloor = 1e-12;

inline double objective_of(const NetworkSnapshot& s, const VecD& p, UtilityTag tag) {
  return utility_unclamped(rates(s, p), tag);
}

inline SolverResult wmmse_solve(const NetworkSnapshot& s, const WmmseConfig& cfg, const VecD& init_p) {
  cfg.validate();
  check_power_dims(s, init_p);
  const auto K = init_p.size();
  const double v_max = std::sqrt(s.p_max_mw);
  if ((init_p.array() < 0.0).any() || (init_p.array() > s.p_max_mw).any())
    throw DomainError("wmmse_solve: initial power outside [0, p_max]");

  const VecD h = s.gains.diagonal().cwiseSqrt();
  const MatD& G = s.gains;
  VecD v = init_p.cwiseSqrt();
  VecD u(K), w(K), alpha(K);

  SolverResult res;
  res.trace.reserve(static_cast<std::size_t>(cfg.max_iterations) + 1);
  double obj = objective_of(s, init_p, cfg.utility.tag);
  res.trace.push_back(obj);
  VecD best_p = init_p;
  double best_obj = obj;

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const VecD p = v.cwiseProduct(v);
    const VecD r = rates(s, p);
    for (Eigen::Index k = 0; k < K; ++k) {
      const double z = clamp_rate(r[k], cfg.utility);
      switch (cfg.utility.tag) {
        case UtilityTag::SumRate: alpha[k] = 1.0; break;
        case UtilityTag::ProportionalFairness: alpha[k] = 1.0 / z; break;
        case UtilityTag::Harmonic: alpha[k] = 1.0 / (z * z); break;
      }
    }
    const VecD received = G * p;  // sum_j G_kj v_j^2
    for (Eigen::Index k = 0; k < K; ++k) {
      u[k] = h[k] * v[k] / (received[k] + s.noise_mw);
      const double e = std::max(1.0 - u[k] * h[k] * v[k], kMseFloor);
      w[k] = alpha[k] / e;
    }
    // denominator_k = sum_j w_j u_j^2 G_jk
    const VecD wu2 = w.cwiseProduct(u).cwiseProduct(u);
    const VecD denom = G.transpose() * wu2;
    VecD next(K);
    bool finite = true;
    for (Eigen::Index k = 0; k < K; ++k) {
      next[k] = std::clamp(w[k] * u[k] * h[k] / denom[k], 0.0, v_max);
      if (!std::isfinite(next[k]) || !std::isfinite(w[k])) finite = false;
    }
    if (!finite) {
      res.numerical_failure = true;
      res.iterations_used = it - 1;
      res.p = best_p;
      res.objective = best_obj;
      return res;
    }
    v = next;
    const double prev = obj;
    const VecD p_new = v.cwiseProduct(v);
    obj = objective_of(s, p_new, cfg.utility.tag);
    res.trace.push_back(obj);
    res.iterations_used = it;
    if (obj > best_obj) {
      best_obj = obj;
      best_p = p_new;
    }
    if (std::abs(obj - prev) <= cfg.convergence_tol * std::max(std::abs(prev), 1e-12)) break;
  }
  res.p = v.cwiseProduct(v);
  res.p = res.p.cwiseMin(s.p_max_mw).cwiseMax(0.0);
  res.objective = obj;
  return res;
}

// Initial power of restart `index`: restart 0 follows cfg.init, all others are
// i.i.d. uniform on [0, p_max] from a stream keyed by (seed, index).
inline VecD wmmse_initial_power(const NetworkSnapshot& s, const WmmseConfig& cfg, int index) {
  const auto K = static_cast<Eigen::Index>(s.size());
  if (index == 0 && cfg.init == WmmseInit::MaxPower) return full_power(s);
  auto rng = snapshot_rng(cfg.rng_seed, 0x5752u, static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> dist(0.0, s.p_max_mw);
  VecD p(K);
  for (Eigen::Index k = 0; k < K; ++k) p[k] = dist(rng);
  return p;
}

// All restarts, ordered by restart index.
inline std::vector<SolverResult> wmmse_runs(const NetworkSnapshot& s, const WmmseConfig& cfg) {
  cfg.validate();
  std::vector<SolverResult> out;
  out.reserve(static_cast<std::size_t>(cfg.restarts));
  for (int i = 0; i < cfg.restarts; ++i) {
    auto r = wmmse_solve(s, cfg, wmmse_initial_power(s, cfg, i));
    r.restart_index = i;
    out.push_back(std::move(r));
  }
  return out;
}

inline const SolverResult& best_of(const std::vector<SolverResult>& runs) {
  if (runs.empty()) throw EmptyInput("best_of: no runs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].objective > runs[best].objective) best = i;
  return runs[best];
}

inline double average_objective(const std::vector<SolverResult>& runs) {
  if (runs.empty()) throw EmptyInput("average_objective: no runs");
  double sum = 0.0;
  for (const auto& r : runs) sum += r.objective;
  return sum / static_cast<double>(runs.size());
}

inline SolverResult wmmse_best(const NetworkSnapshot& s, const WmmseConfig& cfg) {
  return best_of(wmmse_runs(s, cfg));
}

inline double wmmse_avg(const NetworkSnapshot& s, const WmmseConfig& cfg) {
  return average_objective(wmmse_runs(s, cfg));
}

inline VecD full_reuse(const NetworkSnapshot& s) { return full_power(s); }

inline constexpr double kGridBudget = 5e7;

// Exhaustive search over {0, p_max/(levels-1), ..., p_max}^K. Ties keep the
// first point in lexicographic order (first coordinate slowest).
inline SolverResult grid_oracle(const NetworkSnapshot& s, int levels, UtilityTag tag, double budget = kGridBudget) {
  const auto K = static_cast<Eigen::Index>(s.size());
  if (levels < 2) throw ConfigError("grid_oracle: levels must be >= 2");
  if (std::pow(static_cast<double>(levels), static_cast<double>(K)) > budget)
    throw TooLarge("grid_oracle: levels^K exceeds the search budget");
  const double step = s.p_max_mw / static_cast<double>(levels - 1);
  std::vector<int> idx(static_cast<std::size_t>(K), 0);
  VecD p = VecD::Zero(K);
  SolverResult best;
  best.p = p;
  for (;;) {
    for (Eigen::Index k = 0; k < K; ++k)
      p[k] = idx[static_cast<std::size_t>(k)] == levels - 1 ? s.p_max_mw : step * idx[static_cast<std::size_t>(k)];
    const double obj = objective_of(s, p, tag);
    if (obj > best.objective || best.trace.empty()) {
      best.objective = obj;
      best.p = p;
      best.trace.assign(1, obj);
    }
    Eigen::Index k = K - 1;
    while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == levels) idx[static_cast<std::size_t>(k--)] = 0;
    if (k < 0) break;
  }
  best.iterations_used = 1;
  return best;
}

}  // namespace pcwl

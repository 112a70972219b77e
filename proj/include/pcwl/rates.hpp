#pragma once

// SINR, Shannon rate, network utilities, mean-rate metrics and the
// unsupervised training loss with its analytic gradient in the powers.

#include "pcwl/common.hpp"
#include "pcwl/netgen.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace pcwl {

enum class UtilityTag { SumRate, ProportionalFairness, Harmonic };

struct UtilityKind {
  UtilityTag tag = UtilityTag::SumRate;
  double rate_floor = 1e-5;  // only used by ProportionalFairness and Harmonic

  bool clamped() const { return tag != UtilityTag::SumRate; }
};

inline std::string to_string(UtilityTag t) {
  switch (t) {
    case UtilityTag::SumRate: return "sum";
    case UtilityTag::ProportionalFairness: return "pf";
    case UtilityTag::Harmonic: return "harmonic";
  }
  return "?";
}

inline UtilityTag parse_utility(const std::string& s) {
  if (s == "sum" || s == "sumrate" || s == "sum-rate") return UtilityTag::SumRate;
  if (s == "pf" || s == "proportional" || s == "log") return UtilityTag::ProportionalFairness;
  if (s == "harmonic") return UtilityTag::Harmonic;
  throw ConfigError("unknown utility '" + s + "' (expected sum, pf or harmonic)");
}

// Minimum representable objective; stands in for -inf in solver traces.
inline constexpr double kObjectiveFloor = std::numeric_limits<double>::lowest();

inline void check_power_dims(const NetworkSnapshot& s, const VecD& p) {
  if (static_cast<std::size_t>(p.size()) != s.size())
    throw DimensionMismatch("power vector has length " + std::to_string(p.size()) + ", snapshot has K=" +
                            std::to_string(s.size()));
}

// Interference-plus-noise seen by each receiver.
inline VecD interference_plus_noise(const NetworkSnapshot& s, const VecD& p) {
  check_power_dims(s, p);
  VecD total = s.gains * p;
  total -= s.gains.diagonal().cwiseProduct(p);
  total.array() += s.noise_mw;
  return total;
}

inline VecD sinr(const NetworkSnapshot& s, const VecD& p) {
  const VecD ipn = interference_plus_noise(s, p);
  return s.gains.diagonal().cwiseProduct(p).cwiseQuotient(ipn);
}

inline VecD rate(const VecD& sinr_values) {
  return sinr_values.unaryExpr([](double x) { return std::log2(1.0 + x); });
}

inline VecD rates(const NetworkSnapshot& s, const VecD& p) { return rate(sinr(s, p)); }

inline double clamp_rate(double r, const UtilityKind& u) { return u.clamped() ? std::max(r, u.rate_floor) : r; }

inline double utility_term(double r, const UtilityKind& u) {
  const double z = clamp_rate(r, u);
  switch (u.tag) {
    case UtilityTag::SumRate: return z;
    case UtilityTag::ProportionalFairness: return std::log(z);
    case UtilityTag::Harmonic: return -1.0 / z;
  }
  return 0.0;
}

// d beta / d R at the clamped rate; zero below the floor (stop-gradient).
inline double utility_slope(double r, const UtilityKind& u) {
  switch (u.tag) {
    case UtilityTag::SumRate: return 1.0;
    case UtilityTag::ProportionalFairness: return r < u.rate_floor ? 0.0 : 1.0 / r;
    case UtilityTag::Harmonic: return r < u.rate_floor ? 0.0 : 1.0 / (r * r);
  }
  return 0.0;
}

inline double utility(const VecD& rate_values, const UtilityKind& u) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < rate_values.size(); ++k) total += utility_term(rate_values[k], u);
  return total;
}

// Utility on raw rates with no floor; -inf is reported as kObjectiveFloor.
inline double utility_unclamped(const VecD& rate_values, UtilityTag tag) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < rate_values.size(); ++k) {
    const double r = rate_values[k];
    switch (tag) {
      case UtilityTag::SumRate: total += r; break;
      case UtilityTag::ProportionalFairness:
        if (!(r > 0.0)) return kObjectiveFloor;
        total += std::log(r);
        break;
      case UtilityTag::Harmonic:
        if (!(r > 0.0)) return kObjectiveFloor;
        total -= 1.0 / r;
        break;
    }
  }
  return std::isfinite(total) ? total : kObjectiveFloor;
}

struct MetricsReport {
  double arithmetic_mean = 0.0;
  double geometric_mean = 0.0;
  double harmonic_mean = 0.0;
  std::size_t snapshot_count = 0;

  double for_utility(UtilityTag t) const {
    switch (t) {
      case UtilityTag::SumRate: return arithmetic_mean;
      case UtilityTag::ProportionalFairness: return geometric_mean;
      case UtilityTag::Harmonic: return harmonic_mean;
    }
    return 0.0;
  }
};

struct MeanRates {
  double arithmetic = 0.0;
  double geometric = 0.0;
  double harmonic = 0.0;
};

inline MeanRates mean_rates(const VecD& r, double floor = 1e-5) {
  if (r.size() == 0) throw EmptyInput("mean_rates: empty rate vector");
  const double n = static_cast<double>(r.size());
  double sum = 0.0, log_sum = 0.0, inv_sum = 0.0;
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    const double z = std::max(r[k], floor);
    sum += r[k];
    log_sum += std::log(z);
    inv_sum += 1.0 / z;
  }
  return {sum / n, std::exp(log_sum / n), n / inv_sum};
}

// Per-snapshot arithmetic/geometric/harmonic mean rates, averaged over
// snapshots. Geometric and harmonic use rates floored at `floor`.
inline MetricsReport metrics(std::span<const VecD> rate_vectors, double floor = 1e-5) {
  if (rate_vectors.empty()) throw EmptyInput("metrics: no rate vectors");
  MetricsReport out;
  for (const auto& r : rate_vectors) {
    const auto m = mean_rates(r, floor);
    out.arithmetic_mean += m.arithmetic;
    out.geometric_mean += m.geometric;
    out.harmonic_mean += m.harmonic;
  }
  const double n = static_cast<double>(rate_vectors.size());
  out.arithmetic_mean /= n;
  out.geometric_mean /= n;
  out.harmonic_mean /= n;
  out.snapshot_count = rate_vectors.size();
  return out;
}

// Gradient of utility(rates(s, p), u) with respect to p.
inline VecD utility_gradient(const NetworkSnapshot& s, const VecD& p, const UtilityKind& u) {
  const VecD ipn = interference_plus_noise(s, p);
  const VecD direct = s.gains.diagonal();
  const VecD sn = direct.cwiseProduct(p).cwiseQuotient(ipn);
  const auto K = p.size();
  // c_k = d beta/dR_k * dR_k/dsinr_k
  VecD c(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double r = std::log2(1.0 + sn[k]);
    c[k] = utility_slope(r, u) / ((1.0 + sn[k]) * std::numbers::ln2);
  }
  // dsinr_k/dp_j = -sinr_k G_kj / I_k (j != k), G_kk / I_k (j == k)
  const VecD t = c.cwiseProduct(sn).cwiseQuotient(ipn);
  VecD grad = -(s.gains.transpose() * t);
  for (Eigen::Index j = 0; j < K; ++j) grad[j] += t[j] * direct[j] + c[j] * direct[j] / ipn[j];
  return grad;
}

struct LossResult {
  double loss = 0.0;
  std::vector<VecD> grad;  // d loss / d p per batch element
};

// loss = -(1/B) sum_b utility(rates_b); gradients w.r.t. each power vector.
inline LossResult loss(std::span<const NetworkSnapshot> batch, std::span<const VecD> powers, const UtilityKind& u,
                       bool with_grad = true) {
  if (batch.size() != powers.size()) throw DimensionMismatch("loss: batch and power counts differ");
  if (batch.empty()) throw EmptyInput("loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossResult out;
  if (with_grad) out.grad.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.loss -= utility(rates(batch[b], powers[b]), u) * inv_b;
    if (with_grad) out.grad[b] = -inv_b * utility_gradient(batch[b], powers[b], u);
  }
  return out;
}

inline VecD full_power(const NetworkSnapshot& s) {
  return VecD::Constant(static_cast<Eigen::Index>(s.size()), s.p_max_mw);
}

}  // namespace pcwl

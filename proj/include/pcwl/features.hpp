#pragma once

// Node and edge inputs for the model: dB conversion and zero-mean/unit-variance
// normalization with statistics fitted on a training split.

#include "pcwl/common.hpp"
#include "pcwl/netgen.hpp"

#include <cmath>
#include <span>

namespace pcwl {

inline constexpr double kStdFloor = 1e-6;

inline double to_db(double g) {
  if (!(g > 0.0)) throw DomainError("to_db: gain must be > 0");
  return 10.0 * std::log10(g);
}

struct NormStats {
  double node_mean = 0.0;
  double node_std = 1.0;
  double edge_mean = 0.0;
  double edge_std = 1.0;
};

// Node statistics over direct gains, edge statistics over cross gains, both in
// dB. Population standard deviation, floored at kStdFloor.
inline NormStats fit_norm_stats(std::span<const NetworkSnapshot> data) {
  if (data.empty()) throw EmptyInput("fit_norm_stats: empty dataset");
  double node_sum = 0.0, edge_sum = 0.0;
  std::size_t node_n = 0, edge_n = 0;
  for (const auto& s : data) {
    const auto K = s.gains.rows();
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < K; ++j) {
        const double x = to_db(s.gains(k, j));
        if (k == j) {
          node_sum += x;
          ++node_n;
        } else {
          edge_sum += x;
          ++edge_n;
        }
      }
  }
  NormStats st;
  st.node_mean = node_sum / static_cast<double>(node_n);
  st.edge_mean = edge_n ? edge_sum / static_cast<double>(edge_n) : 0.0;
  double node_sq = 0.0, edge_sq = 0.0;
  for (const auto& s : data) {
    const auto K = s.gains.rows();
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < K; ++j) {
        const double x = to_db(s.gains(k, j));
        if (k == j)
          node_sq += (x - st.node_mean) * (x - st.node_mean);
        else
          edge_sq += (x - st.edge_mean) * (x - st.edge_mean);
      }
  }
  st.node_std = std::max(std::sqrt(node_sq / static_cast<double>(node_n)), kStdFloor);
  st.edge_std = edge_n ? std::max(std::sqrt(edge_sq / static_cast<double>(edge_n)), kStdFloor) : 1.0;
  return st;
}

// s: normalized direct gains (K). z: row k*K + j holds the normalized pair
// [psi(G_kj), psi(G_jk)]; diagonal rows are zero and never reach the bias path.
template <typename S>
struct GraphFeatures {
  Vec<S> s;
  Mat<S> z;

  Eigen::Index size() const { return s.size(); }
};

template <typename S>
GraphFeatures<S> build_features(const NetworkSnapshot& snap, const NormStats& st) {
  const auto K = snap.gains.rows();
  GraphFeatures<S> f;
  f.s.resize(K);
  f.z = Mat<S>::Zero(K * K, 2);
  MatD db(K, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < K; ++j) db(k, j) = to_db(snap.gains(k, j));
  for (Eigen::Index k = 0; k < K; ++k) {
    f.s[k] = static_cast<S>((db(k, k) - st.node_mean) / st.node_std);
    for (Eigen::Index j = 0; j < K; ++j) {
      if (j == k) continue;
      f.z(k * K + j, 0) = static_cast<S>((db(k, j) - st.edge_mean) / st.edge_std);
      f.z(k * K + j, 1) = static_cast<S>((db(j, k) - st.edge_mean) / st.edge_std);
    }
  }
  return f;
}

}  // namespace pcwl

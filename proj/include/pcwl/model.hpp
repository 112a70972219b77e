#pragma once

// Interference-aware bias-attention transformer for power control.
//
//   s_k  --node encoder-->  x_k^(0)
//   z_kj --per-layer bias projector--> B^(l)[m][k][j]   (diagonal pinned to 0)
//   L x { softmax(Q K^T / sqrt(d_m) + B) V, W_O, residual + LN, FFN, residual + LN }
//   x_k^(L) --power head--> p_k = p_max * sigmoid(.)
//
// Q/K/V/O projections carry optional LoRA adapters. There is no positional
// information anywhere, so the map is permutation equivariant in the pairs.
//
// Activations are processed batch-stacked: B snapshots with K pairs each form
// an (B*K) x d_model matrix, so every linear map is a single GEMM.

#include "pcwl/common.hpp"
#include "pcwl/features.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pcwl {

enum class ParamRole { Encoder, BiasProjector, Head, Lora, Base };

inline const char* to_string(ParamRole r) {
  switch (r) {
    case ParamRole::Encoder: return "encoder";
    case ParamRole::BiasProjector: return "bias_projector";
    case ParamRole::Head: return "head";
    case ParamRole::Lora: return "lora";
    case ParamRole::Base: return "base";
  }
  return "?";
}

struct ModelConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int d_mid = 0;   // 0 -> d_model
  int d_proj = 128;
  int d_hid = 0;   // 0 -> d_model / 2
  int ffn_mult = 4;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  double p_max_mw = 10.0;
  double ln_eps = 1e-12;
  NormStats norm_stats{};
  bool use_bias = true;       // interference bias injection
  bool use_lora = true;       // LoRA adapters on Q/K/V/O
  bool from_scratch = false;  // whole backbone trainable, adapters removed

  int head_dim() const { return d_model / heads; }
  int mid() const { return d_mid > 0 ? d_mid : d_model; }
  int hid() const { return d_hid > 0 ? d_hid : std::max(1, d_model / 2); }
  int ffn() const { return ffn_mult * d_model; }
  bool lora_active() const { return use_lora && !from_scratch; }
  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }

  void validate() const {
    if (layers < 1) throw ConfigError("model.layers must be >= 1");
    if (d_model < 1 || heads < 1) throw ConfigError("model.d_model and model.heads must be >= 1");
    if (d_model % heads != 0) throw ConfigError("model.d_model must be divisible by model.heads");
    if (d_mid < 0 || d_hid < 0 || d_proj < 1 || ffn_mult < 1)
      throw ConfigError("model widths must be positive");
    if (lora_rank < 1) throw ConfigError("model.lora_rank must be >= 1");
    if (lora_rank > d_model) throw ConfigError("model.lora_rank must be <= d_model");
    if (!(lora_alpha > 0.0)) throw ConfigError("model.lora_alpha must be > 0");
    if (!(p_max_mw > 0.0)) throw ConfigError("model.p_max_mw must be > 0");
    if (!(ln_eps > 0.0)) throw ConfigError("model.ln_eps must be > 0");
    if (!(norm_stats.node_std > 0.0) || !(norm_stats.edge_std > 0.0))
      throw ConfigError("model.norm_stats std must be > 0");
  }
};

// Whether tensors of a role receive gradients under a configuration.
inline bool is_trainable(ParamRole role, const ModelConfig& c) {
  switch (role) {
    case ParamRole::Encoder:
    case ParamRole::Head: return true;
    case ParamRole::BiasProjector: return c.use_bias;
    case ParamRole::Lora: return c.lora_active();
    case ParamRole::Base: return c.from_scratch;
  }
  return false;
}

// Linear maps store weights as (d_out x d_in); biases are 1 x d_out.
template <typename S>
struct LayerParams {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln1_g, ln1_b;
  Mat<S> ff1_w, ff1_b, ff2_w, ff2_b;
  Mat<S> ln2_g, ln2_b;
  Mat<S> q_down, q_up, k_down, k_up, v_down, v_up, o_down, o_up;
  Mat<S> bias_w1, bias_b1, bias_w2, bias_b2;
};

template <typename S>
struct ModelParameters {
  Mat<S> enc_w1, enc_b1, enc_w2, enc_b2;
  std::vector<LayerParams<S>> layers;
  Mat<S> head_w_hid, head_b_hid, head_w_out, head_b_out;

  // Visits every tensor in a fixed order: f(name, role, tensor).
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  ModelParameters zeros_like() const {
    ModelParameters z = *this;
    z.visit([](const std::string&, ParamRole, Mat<S>& m) { m.setZero(); });
    return z;
  }

  template <typename T>
  ModelParameters<T> cast() const {
    ModelParameters<T> out;
    out.layers.resize(layers.size());
    std::vector<const Mat<S>*> src;
    visit([&](const std::string&, ParamRole, const Mat<S>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.visit([&](const std::string&, ParamRole, Mat<T>& m) { m = src[i++]->template cast<T>(); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, ParamRole, const Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f("encoder.w1", ParamRole::Encoder, self.enc_w1);
    f("encoder.b1", ParamRole::Encoder, self.enc_b1);
    f("encoder.w2", ParamRole::Encoder, self.enc_w2);
    f("encoder.b2", ParamRole::Encoder, self.enc_b2);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer." + std::to_string(l) + ".";
      f(p + "attn.q.weight", ParamRole::Base, L.wq);
      f(p + "attn.q.bias", ParamRole::Base, L.bq);
      f(p + "attn.k.weight", ParamRole::Base, L.wk);
      f(p + "attn.k.bias", ParamRole::Base, L.bk);
      f(p + "attn.v.weight", ParamRole::Base, L.wv);
      f(p + "attn.v.bias", ParamRole::Base, L.bv);
      f(p + "attn.o.weight", ParamRole::Base, L.wo);
      f(p + "attn.o.bias", ParamRole::Base, L.bo);
      f(p + "ln1.gamma", ParamRole::Base, L.ln1_g);
      f(p + "ln1.beta", ParamRole::Base, L.ln1_b);
      f(p + "ffn.w1", ParamRole::Base, L.ff1_w);
      f(p + "ffn.b1", ParamRole::Base, L.ff1_b);
      f(p + "ffn.w2", ParamRole::Base, L.ff2_w);
      f(p + "ffn.b2", ParamRole::Base, L.ff2_b);
      f(p + "ln2.gamma", ParamRole::Base, L.ln2_g);
      f(p + "ln2.beta", ParamRole::Base, L.ln2_b);
      f(p + "lora.q.down", ParamRole::Lora, L.q_down);
      f(p + "lora.q.up", ParamRole::Lora, L.q_up);
      f(p + "lora.k.down", ParamRole::Lora, L.k_down);
      f(p + "lora.k.up", ParamRole::Lora, L.k_up);
      f(p + "lora.v.down", ParamRole::Lora, L.v_down);
      f(p + "lora.v.up", ParamRole::Lora, L.v_up);
      f(p + "lora.o.down", ParamRole::Lora, L.o_down);
      f(p + "lora.o.up", ParamRole::Lora, L.o_up);
      f(p + "bias.w1", ParamRole::BiasProjector, L.bias_w1);
      f(p + "bias.b1", ParamRole::BiasProjector, L.bias_b1);
      f(p + "bias.w2", ParamRole::BiasProjector, L.bias_w2);
      f(p + "bias.b2", ParamRole::BiasProjector, L.bias_b2);
    }
    f("head.w_hid", ParamRole::Head, self.head_w_hid);
    f("head.b_hid", ParamRole::Head, self.head_b_hid);
    f("head.w_out", ParamRole::Head, self.head_w_out);
    f("head.b_out", ParamRole::Head, self.head_b_out);
  }
};

// Normal(0, std) truncated to two standard deviations.
template <typename S>
Mat<S> truncated_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double x;
    do x = nd(rng);
    while (std::abs(x) > 2.0);
    m.data()[i] = static_cast<S>(x * std);
  }
  return m;
}

// Fresh parameters: weights ~ truncated normal(0.02), biases 0, layer-norm
// gain 1, and zero for the bias-projector output layer and every LoRA up
// matrix.
template <typename S>
ModelParameters<S> init_parameters(const ModelConfig& c, std::uint64_t seed, double weight_std = 0.02) {
  c.validate();
  std::mt19937_64 rng(seed);
  auto W = [&](int r, int k) { return truncated_normal<S>(r, k, weight_std, rng); };
  auto Z = [](int r, int k) { return Mat<S>::Zero(r, k).eval(); };
  auto One = [](int r, int k) { return Mat<S>::Ones(r, k).eval(); };
  const int d = c.d_model, r = c.lora_rank;
  ModelParameters<S> p;
  p.enc_w1 = W(c.mid(), 1);
  p.enc_b1 = Z(1, c.mid());
  p.enc_w2 = W(d, c.mid());
  p.enc_b2 = Z(1, d);
  p.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& L : p.layers) {
    L.wq = W(d, d); L.bq = Z(1, d);
    L.wk = W(d, d); L.bk = Z(1, d);
    L.wv = W(d, d); L.bv = Z(1, d);
    L.wo = W(d, d); L.bo = Z(1, d);
    L.ln1_g = One(1, d); L.ln1_b = Z(1, d);
    L.ff1_w = W(c.ffn(), d); L.ff1_b = Z(1, c.ffn());
    L.ff2_w = W(d, c.ffn()); L.ff2_b = Z(1, d);
    L.ln2_g = One(1, d); L.ln2_b = Z(1, d);
    L.q_down = W(r, d); L.q_up = Z(d, r);
    L.k_down = W(r, d); L.k_up = Z(d, r);
    L.v_down = W(r, d); L.v_up = Z(d, r);
    L.o_down = W(r, d); L.o_up = Z(d, r);
    L.bias_w1 = W(c.d_proj, 2); L.bias_b1 = Z(1, c.d_proj);
    L.bias_w2 = Z(c.heads, c.d_proj); L.bias_b2 = Z(1, c.heads);
  }
  p.head_w_hid = W(c.hid(), d);
  p.head_b_hid = Z(1, c.hid());
  p.head_w_out = W(1, c.hid());
  p.head_b_out = Z(1, 1);
  return p;
}

namespace detail {

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.5 * std::numbers::sqrt2)));
}
template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(0.5 * std::numbers::sqrt2)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}
template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

template <typename S>
Mat<S> affine(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

// Accumulates weight/bias gradients of y = x w^T + b.
template <typename S>
void affine_grad(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dw, Mat<S>& db) {
  dw.noalias() += dy.transpose() * x;
  db += dy.colwise().sum();
}

// Row-wise layer norm. Stores the normalized input and reciprocal std.
template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, S eps, Mat<S>* xhat_out, Vec<S>* rstd_out) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat<S> xhat(n, d);
  Vec<S> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    rstd[i] = S(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd[i];
  }
  Mat<S> y = xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  if (xhat_out) *xhat_out = std::move(xhat);
  if (rstd_out) *rstd_out = std::move(rstd);
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Vec<S>& rstd, const Mat<S>& g, Mat<S>* dg,
                           Mat<S>* db) {
  if (dg) *dg += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (db) *db += dy.colwise().sum();
  const Eigen::Index n = dy.rows(), d = dy.cols();
  Mat<S> dxhat = dy.array().rowwise() * g.row(0).array();
  Mat<S> dx(n, d);
  const S inv_d = S(1) / static_cast<S>(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S sum = dxhat.row(i).sum();
    const S dot = dxhat.row(i).dot(xhat.row(i));
    dx.row(i) = (dxhat.row(i).array() - inv_d * sum - xhat.row(i).array() * (inv_d * dot)) * rstd[i];
  }
  return dx;
}

}  // namespace detail

// (W0 + (alpha/r) W_up W_down) x, via the factored product.
template <typename S>
Vec<S> lora_apply(const Mat<S>& w0, const Mat<S>& w_down, const Mat<S>& w_up, double alpha, int r, const Vec<S>& x) {
  if (w0.cols() != x.size() || w_down.cols() != w0.cols() || w_up.rows() != w0.rows() ||
      w_down.rows() != w_up.cols() || w_down.rows() != r)
    throw DimensionMismatch("lora_apply: inconsistent shapes");
  const Vec<S> low = w_down * x;
  return w0 * x + static_cast<S>(alpha / r) * (w_up * low);
}

// Per-layer activations kept for the reverse pass.
template <typename S>
struct LayerCache {
  Mat<S> x_in;
  Mat<S> bias_pre;          // E x d_proj, pre-ReLU
  Mat<S> bias_act;          // E x d_proj
  Mat<S> bias_out;          // E x M (off-diagonal edges only)
  Mat<S> q, k, v;           // N x d
  Mat<S> q_low, k_low, v_low, o_low;  // N x r
  Mat<S> probs;             // (B*M*K) x K softmax rows, block (b, m)
  Mat<S> concat;            // N x d
  Mat<S> ln1_xhat, ln2_xhat, h1, ff_pre, ff_act;
  Vec<S> ln1_rstd, ln2_rstd;
};

template <typename S>
struct ForwardCache {
  Eigen::Index batch = 0;
  Eigen::Index pairs = 0;
  Mat<S> s;        // N x 1
  Mat<S> edges;    // E x 2
  Mat<S> enc_pre;  // N x d_mid
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final;
  Mat<S> head_pre;  // N x d_hid
  Mat<S> head_act;
  Vec<S> sig;       // N
};

namespace detail {

// Off-diagonal edge features of every sample, ordered (b, k, j != k).
template <typename S>
Mat<S> stack_edges(std::span<const GraphFeatures<S>* const> batch, Eigen::Index K) {
  const Eigen::Index per = K * (K - 1);
  Mat<S> e(static_cast<Eigen::Index>(batch.size()) * per, 2);
  Eigen::Index row = 0;
  for (const auto* f : batch)
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < K; ++j)
        if (j != k) e.row(row++) = f->z.row(k * K + j);
  return e;
}

inline Eigen::Index edge_index(Eigen::Index b, Eigen::Index k, Eigen::Index j, Eigen::Index K) {
  return b * K * (K - 1) + k * (K - 1) + (j < k ? j : j - 1);
}

template <typename S>
Mat<S> project_bias(const Mat<S>& edges, const LayerParams<S>& L, Mat<S>* pre, Mat<S>* act) {
  Mat<S> h = affine(edges, L.bias_w1, L.bias_b1);
  Mat<S> a = h.cwiseMax(S(0));
  Mat<S> out = affine(a, L.bias_w2, L.bias_b2);
  if (pre) *pre = std::move(h);
  if (act) *act = std::move(a);
  return out;
}

template <typename S>
Mat<S> adapted_linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, const Mat<S>& down, const Mat<S>& up,
                      const ModelConfig& c, Mat<S>* low_out) {
  Mat<S> y = affine(x, w, b);
  if (c.lora_active()) {
    Mat<S> low = x * down.transpose();
    y.noalias() += static_cast<S>(c.lora_scale()) * (low * up.transpose());
    if (low_out) *low_out = std::move(low);
  }
  return y;
}

// Reverse of adapted_linear. Returns dx; accumulates trainable weight grads.
template <typename S>
Mat<S> adapted_linear_backward(const Mat<S>& x, const Mat<S>& dy, const Mat<S>& w, const Mat<S>& down,
                               const Mat<S>& up, const Mat<S>& low, const ModelConfig& c, Mat<S>& dw, Mat<S>& db,
                               Mat<S>& d_down, Mat<S>& d_up) {
  if (is_trainable(ParamRole::Base, c)) affine_grad(x, dy, dw, db);
  Mat<S> dx = dy * w;
  if (c.lora_active()) {
    const S scale = static_cast<S>(c.lora_scale());
    d_up.noalias() += scale * (dy.transpose() * low);
    const Mat<S> dlow = scale * (dy * up);
    d_down.noalias() += dlow.transpose() * x;
    dx.noalias() += dlow * down;
  }
  return dx;
}

template <typename S>
Mat<S> encode(const Mat<S>& s, const ModelParameters<S>& p, Mat<S>* pre) {
  Mat<S> a = affine(s, p.enc_w1, p.enc_b1);
  Mat<S> g = a.unaryExpr([](S x) { return gelu(x); });
  Mat<S> out = affine(g, p.enc_w2, p.enc_b2);
  if (pre) *pre = std::move(a);
  return out;
}

// Scatters off-diagonal edge biases (E x M) into score blocks (B*M*K) x K with
// a zero diagonal.
template <typename S>
Mat<S> dense_bias(const Mat<S>& bias_out, Eigen::Index batch, Eigen::Index K, Eigen::Index M) {
  Mat<S> dense = Mat<S>::Zero(batch * M * K, K);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index m = 0; m < M; ++m)
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < K; ++j)
          if (j != k) dense((b * M + m) * K + k, j) = bias_out(edge_index(b, k, j, K), m);
  return dense;
}

// One transformer layer on the stacked batch. `score_bias` holds one K x K
// block per (sample, head), or is null for unbiased attention.
template <typename S>
Mat<S> attention_layer(const Mat<S>& x, const Mat<S>* score_bias, Eigen::Index batch, Eigen::Index K,
                       const LayerParams<S>& L, const ModelConfig& c, LayerCache<S>& lc) {
  const Eigen::Index M = c.heads, dm = c.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dm));
  lc.q = adapted_linear(x, L.wq, L.bq, L.q_down, L.q_up, c, &lc.q_low);
  lc.k = adapted_linear(x, L.wk, L.bk, L.k_down, L.k_up, c, &lc.k_low);
  lc.v = adapted_linear(x, L.wv, L.bv, L.v_down, L.v_up, c, &lc.v_low);
  lc.probs.resize(batch * M * K, K);
  lc.concat.resize(batch * K, c.d_model);
  Mat<S> a(K, K);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index m = 0; m < M; ++m) {
      a.noalias() = lc.q.block(b * K, m * dm, K, dm) * lc.k.block(b * K, m * dm, K, dm).transpose();
      a *= scale;
      if (score_bias) a += score_bias->block((b * M + m) * K, 0, K, K);
      for (Eigen::Index k = 0; k < K; ++k) {
        const S mx = a.row(k).maxCoeff();
        a.row(k) = (a.row(k).array() - mx).exp();
        a.row(k) /= a.row(k).sum();
      }
      lc.probs.block((b * M + m) * K, 0, K, K) = a;
      lc.concat.block(b * K, m * dm, K, dm).noalias() = a * lc.v.block(b * K, m * dm, K, dm);
    }
  }
  const Mat<S> o = adapted_linear(lc.concat, L.wo, L.bo, L.o_down, L.o_up, c, &lc.o_low);
  const S eps = static_cast<S>(c.ln_eps);
  lc.h1 = layer_norm<S>(x + o, L.ln1_g, L.ln1_b, eps, &lc.ln1_xhat, &lc.ln1_rstd);
  lc.ff_pre = affine(lc.h1, L.ff1_w, L.ff1_b);
  lc.ff_act = lc.ff_pre.unaryExpr([](S v) { return gelu(v); });
  const Mat<S> f2 = affine(lc.ff_act, L.ff2_w, L.ff2_b);
  return layer_norm<S>(lc.h1 + f2, L.ln2_g, L.ln2_b, eps, &lc.ln2_xhat, &lc.ln2_rstd);
}

// Reverse of attention_layer. Returns d x_in; fills d_scores with the gradient
// of every pre-softmax score block when given.
template <typename S>
Mat<S> attention_layer_backward(const Mat<S>& dout, Eigen::Index batch, Eigen::Index K, const LayerParams<S>& L,
                                const ModelConfig& c, const LayerCache<S>& lc, LayerParams<S>& g, Mat<S>* d_scores) {
  const bool base = is_trainable(ParamRole::Base, c);
  const Eigen::Index M = c.heads, dm = c.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dm));

  Mat<S> dr2 = layer_norm_backward<S>(dout, lc.ln2_xhat, lc.ln2_rstd, L.ln2_g, base ? &g.ln2_g : nullptr,
                                      base ? &g.ln2_b : nullptr);
  if (base) affine_grad(lc.ff_act, dr2, g.ff2_w, g.ff2_b);
  Mat<S> dff = dr2 * L.ff2_w;
  dff.array() *= lc.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
  if (base) affine_grad(lc.h1, dff, g.ff1_w, g.ff1_b);
  Mat<S> dh1 = dr2;
  dh1.noalias() += dff * L.ff1_w;
  const Mat<S> dr1 = layer_norm_backward<S>(dh1, lc.ln1_xhat, lc.ln1_rstd, L.ln1_g, base ? &g.ln1_g : nullptr,
                                            base ? &g.ln1_b : nullptr);

  Mat<S> dx = dr1;
  const Mat<S> dconcat = adapted_linear_backward(lc.concat, dr1, L.wo, L.o_down, L.o_up, lc.o_low, c, g.wo, g.bo,
                                                 g.o_down, g.o_up);
  Mat<S> dq(batch * K, c.d_model), dk(batch * K, c.d_model), dv(batch * K, c.d_model);
  if (d_scores) d_scores->resize(batch * M * K, K);
  Mat<S> dp(K, K), da(K, K);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto P = lc.probs.block((b * M + m) * K, 0, K, K);
      const auto dh = dconcat.block(b * K, m * dm, K, dm);
      dv.block(b * K, m * dm, K, dm).noalias() = P.transpose() * dh;
      dp.noalias() = dh * lc.v.block(b * K, m * dm, K, dm).transpose();
      for (Eigen::Index k = 0; k < K; ++k) {
        const S dot = dp.row(k).dot(P.row(k));
        da.row(k) = P.row(k).array() * (dp.row(k).array() - dot);
      }
      if (d_scores) d_scores->block((b * M + m) * K, 0, K, K) = da;
      da *= scale;
      dq.block(b * K, m * dm, K, dm).noalias() = da * lc.k.block(b * K, m * dm, K, dm);
      dk.block(b * K, m * dm, K, dm).noalias() = da.transpose() * lc.q.block(b * K, m * dm, K, dm);
    }
  }
  dx += adapted_linear_backward(lc.x_in, dq, L.wq, L.q_down, L.q_up, lc.q_low, c, g.wq, g.bq, g.q_down, g.q_up);
  dx += adapted_linear_backward(lc.x_in, dk, L.wk, L.k_down, L.k_up, lc.k_low, c, g.wk, g.bk, g.k_down, g.k_up);
  dx += adapted_linear_backward(lc.x_in, dv, L.wv, L.v_down, L.v_up, lc.v_low, c, g.wv, g.bv, g.v_down, g.v_up);
  return dx;
}

template <typename S>
Vec<S> head_forward(const Mat<S>& x, const ModelParameters<S>& p, double p_max, Mat<S>* pre, Mat<S>* act,
                    Vec<S>* sig) {
  Mat<S> a = affine(x, p.head_w_hid, p.head_b_hid);
  Mat<S> g = a.unaryExpr([](S v) { return gelu(v); });
  const Mat<S> logit = affine(g, p.head_w_out, p.head_b_out);
  Vec<S> s = logit.col(0).unaryExpr([](S v) { return sigmoid(v); });
  Vec<S> power = static_cast<S>(p_max) * s;
  if (pre) *pre = std::move(a);
  if (act) *act = std::move(g);
  if (sig) *sig = std::move(s);
  return power;
}

}  // namespace detail

// Batched forward. Every feature set in the batch must share K. Returns the
// stacked power vector (B*K); fills `cache` when given.
template <typename S>
Vec<S> forward_batch(std::span<const GraphFeatures<S>* const> batch, const ModelParameters<S>& p,
                     const ModelConfig& c, ForwardCache<S>* cache = nullptr) {
  if (batch.empty()) throw EmptyInput("forward_batch: empty batch");
  const Eigen::Index K = batch.front()->size();
  if (K < 1) throw DimensionMismatch("forward_batch: K must be >= 1");
  if (static_cast<int>(p.layers.size()) != c.layers) throw DimensionMismatch("forward_batch: layer count mismatch");
  for (const auto* f : batch)
    if (f->size() != K || f->z.rows() != K * K || f->z.cols() != 2)
      throw DimensionMismatch("forward_batch: inconsistent feature shapes in batch");
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());

  ForwardCache<S> local;
  ForwardCache<S>& fc = cache ? *cache : local;
  fc.batch = B;
  fc.pairs = K;
  fc.s.resize(B * K, 1);
  for (Eigen::Index b = 0; b < B; ++b) fc.s.block(b * K, 0, K, 1) = batch[static_cast<std::size_t>(b)]->s;
  fc.edges = c.use_bias ? detail::stack_edges<S>(batch, K) : Mat<S>();

  Mat<S> x = detail::encode(fc.s, p, &fc.enc_pre);
  fc.layers.resize(static_cast<std::size_t>(c.layers));
  for (int l = 0; l < c.layers; ++l) {
    auto& lc = fc.layers[static_cast<std::size_t>(l)];
    const auto& L = p.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;
    if (c.use_bias && K > 1) {
      lc.bias_out = detail::project_bias(fc.edges, L, &lc.bias_pre, &lc.bias_act);
      const Mat<S> dense = detail::dense_bias(lc.bias_out, B, K, c.heads);
      x = detail::attention_layer(x, &dense, B, K, L, c, lc);
    } else {
      lc.bias_out.resize(0, 0);
      x = detail::attention_layer<S>(x, nullptr, B, K, L, c, lc);
    }
  }
  fc.x_final = x;
  return detail::head_forward(x, p, c.p_max_mw, &fc.head_pre, &fc.head_act, &fc.sig);
}

// Reverse pass: d_power is d loss / d p (B*K stacked). Accumulates gradients of
// trainable tensors into `grad` (same shapes as the parameters).
template <typename S>
void backward_batch(const ForwardCache<S>& fc, const Vec<S>& d_power, const ModelParameters<S>& p,
                    const ModelConfig& c, ModelParameters<S>& grad) {
  const Eigen::Index B = fc.batch, K = fc.pairs;
  if (d_power.size() != B * K) throw DimensionMismatch("backward_batch: gradient length mismatch");
  const Vec<S> dlogit =
      (d_power.array() * static_cast<S>(c.p_max_mw) * fc.sig.array() * (S(1) - fc.sig.array())).matrix();
  const Mat<S> dlogit_m = dlogit;
  detail::affine_grad(fc.head_act, dlogit_m, grad.head_w_out, grad.head_b_out);
  Mat<S> dact = dlogit_m * p.head_w_out;
  dact.array() *= fc.head_pre.unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
  detail::affine_grad(fc.x_final, dact, grad.head_w_hid, grad.head_b_hid);
  Mat<S> dx = dact * p.head_w_hid;

  Mat<S> d_scores, d_bias;
  for (int l = c.layers - 1; l >= 0; --l) {
    const auto& lc = fc.layers[static_cast<std::size_t>(l)];
    const auto& L = p.layers[static_cast<std::size_t>(l)];
    auto& G = grad.layers[static_cast<std::size_t>(l)];
    const bool biased = c.use_bias && K > 1;
    dx = detail::attention_layer_backward(dx, B, K, L, c, lc, G, biased ? &d_scores : nullptr);
    if (biased) {
      d_bias.resize(B * K * (K - 1), c.heads);
      for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index m = 0; m < c.heads; ++m)
          for (Eigen::Index k = 0; k < K; ++k)
            for (Eigen::Index j = 0; j < K; ++j)
              if (j != k) d_bias(detail::edge_index(b, k, j, K), m) = d_scores((b * c.heads + m) * K + k, j);
      detail::affine_grad(lc.bias_act, d_bias, G.bias_w2, G.bias_b2);
      Mat<S> dh = d_bias * L.bias_w2;
      dh.array() *= (lc.bias_pre.array() > S(0)).template cast<S>();
      detail::affine_grad(fc.edges, dh, G.bias_w1, G.bias_b1);
    }
  }
  Mat<S> dg = dx * p.enc_w2;
  const Mat<S> g = fc.enc_pre.unaryExpr([](S v) { return detail::gelu(v); });
  detail::affine_grad(g, dx, grad.enc_w2, grad.enc_b2);
  dg.array() *= fc.enc_pre.unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
  detail::affine_grad(fc.s, dg, grad.enc_w1, grad.enc_b1);
}

template <typename S>
Vec<S> forward(const GraphFeatures<S>& f, const ModelParameters<S>& p, const ModelConfig& c) {
  const GraphFeatures<S>* one[] = {&f};
  return forward_batch<S>(std::span<const GraphFeatures<S>* const>(one), p, c);
}

// ---------------------------------------------------------------------------
// Single-sample views of the individual stages.

template <typename S>
Mat<S> node_encode(const Vec<S>& s, const ModelParameters<S>& p) {
  return detail::encode<S>(Mat<S>(s), p, nullptr);
}

// Per-head K x K bias matrices of layer l; the diagonal is always 0.
template <typename S>
std::vector<Mat<S>> bias_project(const Mat<S>& z, int layer, const ModelParameters<S>& p, const ModelConfig& c) {
  const Eigen::Index K = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(z.rows()))));
  if (K * K != z.rows() || z.cols() != 2) throw DimensionMismatch("bias_project: z must be (K*K) x 2");
  std::vector<Mat<S>> out(static_cast<std::size_t>(c.heads), Mat<S>::Zero(K, K));
  if (K < 2) return out;
  GraphFeatures<S> f;
  f.s = Vec<S>::Zero(K);
  f.z = z;
  const GraphFeatures<S>* one[] = {&f};
  const Mat<S> edges = detail::stack_edges<S>(std::span<const GraphFeatures<S>* const>(one), K);
  const Mat<S> b = detail::project_bias<S>(edges, p.layers.at(static_cast<std::size_t>(layer)), nullptr, nullptr);
  for (int m = 0; m < c.heads; ++m)
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < K; ++j)
        if (j != k) out[static_cast<std::size_t>(m)](k, j) = b(detail::edge_index(0, k, j, K), m);
  return out;
}

// Applies layer l to X with explicit per-head K x K score biases. Optionally
// returns the softmax matrices (M of K x K).
template <typename S>
Mat<S> biased_attention_layer(const Mat<S>& x, const std::vector<Mat<S>>& bias, int layer,
                              const ModelParameters<S>& p, const ModelConfig& c,
                              std::vector<Mat<S>>* probs = nullptr) {
  const Eigen::Index K = x.rows();
  if (x.cols() != c.d_model || static_cast<int>(bias.size()) != c.heads)
    throw DimensionMismatch("biased_attention_layer: shape mismatch");
  Mat<S> dense(c.heads * K, K);
  for (int m = 0; m < c.heads; ++m) {
    const auto& b = bias[static_cast<std::size_t>(m)];
    if (b.rows() != K || b.cols() != K) throw DimensionMismatch("biased_attention_layer: bias must be K x K");
    dense.block(m * K, 0, K, K) = b;
  }
  LayerCache<S> lc;
  lc.x_in = x;
  Mat<S> y = detail::attention_layer(x, &dense, 1, K, p.layers.at(static_cast<std::size_t>(layer)), c, lc);
  if (probs) {
    probs->clear();
    for (int m = 0; m < c.heads; ++m) probs->push_back(lc.probs.block(m * K, 0, K, K));
  }
  return y;
}

template <typename S>
Vec<S> power_head(const Mat<S>& x, const ModelParameters<S>& p, double p_max) {
  return detail::head_forward<S>(x, p, p_max, nullptr, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Config serialization

inline nlohmann::json to_json(const NormStats& s) {
  return {{"node_mean", s.node_mean}, {"node_std", s.node_std}, {"edge_mean", s.edge_mean}, {"edge_std", s.edge_std}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  return {j.at("node_mean").get<double>(), j.at("node_std").get<double>(), j.at("edge_mean").get<double>(),
          j.at("edge_std").get<double>()};
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"layers", c.layers},       {"d_model", c.d_model},       {"heads", c.heads},
          {"d_mid", c.d_mid},         {"d_proj", c.d_proj},         {"d_hid", c.d_hid},
          {"ffn_mult", c.ffn_mult},   {"lora_rank", c.lora_rank},   {"lora_alpha", c.lora_alpha},
          {"p_max_mw", c.p_max_mw},   {"ln_eps", c.ln_eps},         {"norm_stats", to_json(c.norm_stats)},
          {"use_bias", c.use_bias},   {"use_lora", c.use_lora},     {"from_scratch", c.from_scratch}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_mid = j.at("d_mid").get<int>();
  c.d_proj = j.at("d_proj").get<int>();
  c.d_hid = j.at("d_hid").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.lora_rank = j.at("lora_rank").get<int>();
  c.lora_alpha = j.at("lora_alpha").get<double>();
  c.p_max_mw = j.at("p_max_mw").get<double>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.norm_stats = norm_stats_from_json(j.at("norm_stats"));
  c.use_bias = j.at("use_bias").get<bool>();
  c.use_lora = j.at("use_lora").get<bool>();
  c.from_scratch = j.at("from_scratch").get<bool>();
  return c;
}

}  // namespace pcwl

// The learnable network: patch embedding with positions, mask-token
// substitution, pre-norm transformer encoder, spectral head, and per-position
// temporal heads over mean-pooled segments. Forward and backward are written
// out by hand; everything is templated on the scalar type so the float
// training path and the double verification path share one implementation.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "maskspec/common.hpp"
#include "maskspec/loss.hpp"

namespace maskspec::model {

struct ModelConfig {
  int d_model = 768;
  int n_layers = 12;
  int n_heads = 12;
  int mlp_ratio = 4;
  int k_s = 100;
  int k_t = 500;
  int r_s = 8;
  int r_t = 8;
  int n_max = 50;       // maximum segments per clip
  int patch_dim = 256;  // P * P
  double dropout_rate = 0.0;

  int max_tokens() const { return n_max * r_s; }
  int ffn_dim() const { return mlp_ratio * d_model; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || mlp_ratio <= 0)
      throw ConfigError("model: dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (k_s <= 0 || k_t <= 0) throw ConfigError("model: codebook sizes must be positive");
    if (r_s <= 0 || r_t <= 0 || n_max <= 0 || patch_dim <= 0)
      throw ConfigError("model: grid geometry must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("model: dropout_rate must be in [0, 1)");
  }
};

template <typename T>
struct LayerParams {
  Vec<T> norm1_gain, norm1_bias;
  Mat<T> wq, wk, wv, wo;  // each d_model x d_model
  Vec<T> bq, bk, bv, bo;
  Vec<T> norm2_gain, norm2_bias;
  Mat<T> fc1_w;  // ffn_dim x d_model
  Vec<T> fc1_b;
  Mat<T> fc2_w;  // d_model x ffn_dim
  Vec<T> fc2_b;
};

template <typename T>
struct HeadParams {
  Mat<T> fc1_w;  // d_model x d_model
  Vec<T> fc1_b;
  Mat<T> fc2_w;  // n_classes x d_model
  Vec<T> fc2_b;
};

template <typename T>
struct ModelState {
  Mat<T> patch_proj_w;  // d_model x patch_dim
  Vec<T> patch_proj_b;
  Mat<T> pos_table;  // max_tokens x d_model
  Vec<T> mask_token;
  std::vector<LayerParams<T>> layers;
  HeadParams<T> spectral_head;
  std::vector<HeadParams<T>> temporal_heads;  // one per frame position j
};

// Uniform view over every parameter tensor, in a fixed enumeration order.
template <typename T>
struct TensorRef {
  std::string name;
  T* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

template <typename T>
std::vector<TensorRef<T>> collect_tensor_refs(ModelState<T>& state) {
  std::vector<TensorRef<T>> refs;
  auto add_mat = [&](const std::string& name, Mat<T>& m) {
    refs.push_back({name, m.data(), m.rows(), m.cols()});
  };
  auto add_vec = [&](const std::string& name, Vec<T>& v) {
    refs.push_back({name, v.data(), v.size(), 1});
  };
  add_mat("embed.proj.w", state.patch_proj_w);
  add_vec("embed.proj.b", state.patch_proj_b);
  add_mat("embed.pos", state.pos_table);
  add_vec("embed.mask_token", state.mask_token);
  for (size_t l = 0; l < state.layers.size(); ++l) {
    auto& lp = state.layers[l];
    const std::string base = "enc." + std::to_string(l) + ".";
    add_vec(base + "norm1.g", lp.norm1_gain);
    add_vec(base + "norm1.b", lp.norm1_bias);
    add_mat(base + "attn.wq.w", lp.wq);
    add_vec(base + "attn.wq.b", lp.bq);
    add_mat(base + "attn.wk.w", lp.wk);
    add_vec(base + "attn.wk.b", lp.bk);
    add_mat(base + "attn.wv.w", lp.wv);
    add_vec(base + "attn.wv.b", lp.bv);
    add_mat(base + "attn.wo.w", lp.wo);
    add_vec(base + "attn.wo.b", lp.bo);
    add_vec(base + "norm2.g", lp.norm2_gain);
    add_vec(base + "norm2.b", lp.norm2_bias);
    add_mat(base + "ffn.fc1.w", lp.fc1_w);
    add_vec(base + "ffn.fc1.b", lp.fc1_b);
    add_mat(base + "ffn.fc2.w", lp.fc2_w);
    add_vec(base + "ffn.fc2.b", lp.fc2_b);
  }
  auto add_head = [&](const std::string& base, HeadParams<T>& h) {
    add_mat(base + "fc1.w", h.fc1_w);
    add_vec(base + "fc1.b", h.fc1_b);
    add_mat(base + "fc2.w", h.fc2_w);
    add_vec(base + "fc2.b", h.fc2_b);
  };
  add_head("head.spec.", state.spectral_head);
  for (size_t j = 0; j < state.temporal_heads.size(); ++j)
    add_head("head.temp." + std::to_string(j) + ".", state.temporal_heads[j]);
  return refs;
}

// Parameters that decoupled weight decay skips: normalization gains/biases
// and the mask token.
inline bool weight_decay_exempt(const std::string& name) {
  return name.find(".norm") != std::string::npos || name.find("mask_token") != std::string::npos;
}

template <typename T>
ModelState<T> zeros_like_state(const ModelConfig& cfg) {
  const int d = cfg.d_model;
  const int f = cfg.ffn_dim();
  ModelState<T> s;
  s.patch_proj_w = Mat<T>::Zero(d, cfg.patch_dim);
  s.patch_proj_b = Vec<T>::Zero(d);
  s.pos_table = Mat<T>::Zero(cfg.max_tokens(), d);
  s.mask_token = Vec<T>::Zero(d);
  s.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& lp : s.layers) {
    lp.norm1_gain = Vec<T>::Zero(d);
    lp.norm1_bias = Vec<T>::Zero(d);
    lp.wq = Mat<T>::Zero(d, d);
    lp.wk = Mat<T>::Zero(d, d);
    lp.wv = Mat<T>::Zero(d, d);
    lp.wo = Mat<T>::Zero(d, d);
    lp.bq = Vec<T>::Zero(d);
    lp.bk = Vec<T>::Zero(d);
    lp.bv = Vec<T>::Zero(d);
    lp.bo = Vec<T>::Zero(d);
    lp.norm2_gain = Vec<T>::Zero(d);
    lp.norm2_bias = Vec<T>::Zero(d);
    lp.fc1_w = Mat<T>::Zero(f, d);
    lp.fc1_b = Vec<T>::Zero(f);
    lp.fc2_w = Mat<T>::Zero(d, f);
    lp.fc2_b = Vec<T>::Zero(d);
  }
  auto zero_head = [&](int n_out) {
    HeadParams<T> h;
    h.fc1_w = Mat<T>::Zero(d, d);
    h.fc1_b = Vec<T>::Zero(d);
    h.fc2_w = Mat<T>::Zero(n_out, d);
    h.fc2_b = Vec<T>::Zero(n_out);
    return h;
  };
  s.spectral_head = zero_head(cfg.k_s);
  s.temporal_heads.resize(static_cast<size_t>(cfg.r_t));
  for (auto& h : s.temporal_heads) h = zero_head(cfg.k_t);
  return s;
}

template <typename T>
void set_zero(ModelState<T>& s) {
  for (auto& ref : collect_tensor_refs(s)) std::fill(ref.data, ref.data + ref.size(), T(0));
}

template <typename T>
void scale_state(ModelState<T>& s, T factor) {
  for (auto& ref : collect_tensor_refs(s))
    for (Eigen::Index i = 0; i < ref.size(); ++i) ref.data[i] *= factor;
}

// Weights ~ N(0, 0.02^2), biases 0, norm gains 1. Tensors are filled in
// enumeration order so a seed pins the whole state.
template <typename T>
ModelState<T> init_model_state(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelState<T> s = zeros_like_state<T>(cfg);
  Rng rng = Rng::derive(seed, "model-init");
  for (auto& ref : collect_tensor_refs(s)) {
    const bool is_weight = ref.name.ends_with(".w") || ref.name == "embed.mask_token";
    const bool is_gain = ref.name.ends_with("norm1.g") || ref.name.ends_with("norm2.g");
    if (is_weight) {
      for (Eigen::Index i = 0; i < ref.size(); ++i)
        ref.data[i] = static_cast<T>(0.02 * rng.normal());
    } else if (is_gain) {
      for (Eigen::Index i = 0; i < ref.size(); ++i) ref.data[i] = static_cast<T>(1);
    }
  }
  // The positional table is factored at init: row (n, r) = seg_code[n] +
  // band_code[r], drawn from a dedicated stream. Tokens sharing a segment (or
  // a band block) start with a common additive component, so position splits
  // into two independently recoverable coordinates instead of per-cell noise.
  Rng pos_rng = Rng::derive(seed, "model-init-pos");
  Mat<T> seg_code(cfg.n_max, cfg.d_model);
  Mat<T> band_code(cfg.r_s, cfg.d_model);
  for (int n = 0; n < cfg.n_max; ++n)
    for (int d = 0; d < cfg.d_model; ++d) seg_code(n, d) = static_cast<T>(0.02 * pos_rng.normal());
  for (int r = 0; r < cfg.r_s; ++r)
    for (int d = 0; d < cfg.d_model; ++d) band_code(r, d) = static_cast<T>(0.02 * pos_rng.normal());
  for (int g = 0; g < s.pos_table.rows(); ++g)
    s.pos_table.row(g) = seg_code.row(g / cfg.r_s) + band_code.row(g % cfg.r_s);
  return s;
}

template <typename T>
uint64_t state_hash(ModelState<T>& state) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& ref : collect_tensor_refs(state))
    h = fnv1a64(ref.data, static_cast<size_t>(ref.size()) * sizeof(T), h);
  return h;
}

// ---------------------------------------------------------------------------
// Parameter counting.

struct ParameterBreakdown {
  long long embedding = 0;   // patch projection + mask token
  long long positional = 0;
  long long encoder = 0;
  long long heads = 0;
  long long total = 0;
};

inline ParameterBreakdown parameter_breakdown(const ModelConfig& cfg) {
  const long long d = cfg.d_model;
  const long long f = cfg.ffn_dim();
  ParameterBreakdown b;
  b.embedding = d * cfg.patch_dim + d + d;  // proj w + proj b + mask token
  b.positional = static_cast<long long>(cfg.max_tokens()) * d;
  const long long per_layer = 4 * d            // two norms, gain + bias
                              + 4 * (d * d + d)  // q, k, v, o
                              + (f * d + f) + (d * f + d);
  b.encoder = cfg.n_layers * per_layer;
  const long long spec_head = (d * d + d) + (static_cast<long long>(cfg.k_s) * d + cfg.k_s);
  const long long temp_head = (d * d + d) + (static_cast<long long>(cfg.k_t) * d + cfg.k_t);
  b.heads = spec_head + cfg.r_t * temp_head;
  b.total = b.embedding + b.positional + b.encoder + b.heads;
  return b;
}

inline long long parameter_count(const ModelConfig& cfg) { return parameter_breakdown(cfg).total; }

// ---------------------------------------------------------------------------
// Activation.

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
T gelu_derivative(T x) {
  const T phi = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.3989422804014326779);
  return phi + x * pdf;
}

// ---------------------------------------------------------------------------
// Embedding.

// patches: one flattened patch vector per row, grid order. Masked rows are
// replaced by the mask token; content of masked patches never reaches the
// encoder.
template <typename T>
Mat<T> embed(const ModelConfig& cfg, const ModelState<T>& state, const Mat<T>& patches,
             const std::vector<int>& masked) {
  if (patches.cols() != cfg.patch_dim)
    throw GeometryError("embed: patch vector length != P^2");
  if (patches.rows() > cfg.max_tokens())
    throw GeometryError("embed: more patches than the positional table holds");
  const auto g_count = patches.rows();
  Mat<T> tokens = patches * state.patch_proj_w.transpose();
  tokens.rowwise() += state.patch_proj_b.transpose();
  for (int g : masked) {
    if (g < 0 || g >= g_count) throw GeometryError("embed: masked index out of range");
    tokens.row(g) = state.mask_token.transpose();
  }
  tokens += state.pos_table.topRows(g_count);
  return tokens;
}

template <typename T>
void embed_backward(const ModelConfig& cfg, const Mat<T>& patches, const std::vector<int>& masked,
                    const Mat<T>& d_tokens, ModelState<T>& grads) {
  const auto g_count = patches.rows();
  std::vector<char> is_masked(static_cast<size_t>(g_count), 0);
  for (int g : masked) is_masked[static_cast<size_t>(g)] = 1;

  grads.pos_table.topRows(g_count) += d_tokens;
  for (Eigen::Index g = 0; g < g_count; ++g) {
    if (is_masked[static_cast<size_t>(g)]) {
      grads.mask_token += d_tokens.row(g).transpose();
    } else {
      grads.patch_proj_w.noalias() += d_tokens.row(g).transpose() * patches.row(g);
      grads.patch_proj_b += d_tokens.row(g).transpose();
    }
  }
}

// ---------------------------------------------------------------------------
// Encoder.

template <typename T>
struct EncodeOutput {
  std::vector<Mat<T>> per_layer_tokens;  // one G x d_model matrix per layer
  Mat<T> final_tokens;                   // last layer output (input copy when n_layers == 0)
  Mat<T> pooled;                         // N x d_model segment means of final tokens
};

namespace detail {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerTrace {
  Mat<T> x_in;
  Vec<T> mu1, istd1;
  Mat<T> n1;
  Mat<T> q, k, v;
  std::vector<Mat<T>> attn;  // per head, G x G softmax rows
  Mat<T> o_concat;
  Mat<T> attn_drop_mask;  // empty when dropout off
  Mat<T> x2;
  Vec<T> mu2, istd2;
  Mat<T> n2;
  Mat<T> h1_pre;
  Mat<T> h1_act;
  Mat<T> ffn_drop_mask;
};

template <typename T>
void layernorm_forward(const Mat<T>& x, const Vec<T>& gain, const Vec<T>& bias, Mat<T>& out,
                       Vec<T>& mu, Vec<T>& istd) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  out.resize(rows, cols);
  mu.resize(rows);
  istd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T m = x.row(r).mean();
    const T var = (x.row(r).array() - m).square().sum() / static_cast<T>(cols);
    const T is = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    mu[r] = m;
    istd[r] = is;
    out.row(r) = (((x.row(r).array() - m) * is) * gain.transpose().array() +
                  bias.transpose().array())
                     .matrix();
  }
}

template <typename T>
Mat<T> layernorm_backward(const Mat<T>& dy, const Mat<T>& x, const Vec<T>& mu, const Vec<T>& istd,
                          const Vec<T>& gain, Vec<T>& dgain, Vec<T>& dbias) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  Mat<T> dx(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto xhat = ((x.row(r).array() - mu[r]) * istd[r]).eval();
    dgain += (dy.row(r).array() * xhat).matrix().transpose();
    dbias += dy.row(r).transpose();
    const auto dxhat = (dy.row(r).array() * gain.transpose().array()).eval();
    const T m1 = dxhat.mean();
    const T m2 = (dxhat * xhat).mean();
    dx.row(r) = (istd[r] * (dxhat - m1 - xhat * m2)).matrix();
  }
  return dx;
}

template <typename T>
void softmax_rows_inplace(Mat<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const T mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// Inverted dropout mask with keep scaling.
template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Mat<T> mask(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      mask(r, c) = rng.uniform01() < rate ? static_cast<T>(0) : scale;
  return mask;
}

}  // namespace detail

template <typename T>
struct EncodeTrace {
  Mat<T> tokens_in;
  std::vector<detail::LayerTrace<T>> layers;
};

// Pre-norm transformer stack. Per-layer outputs are retained for probing.
// When dropout_rng is supplied and cfg.dropout_rate > 0, inverted dropout is
// applied to both sublayer outputs (training mode).
template <typename T>
EncodeOutput<T> encode(const ModelConfig& cfg, const ModelState<T>& state, const Mat<T>& tokens,
                       EncodeTrace<T>* trace = nullptr, Rng* dropout_rng = nullptr) {
  const auto g_count = tokens.rows();
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const bool use_dropout = dropout_rng != nullptr && cfg.dropout_rate > 0.0;

  if (tokens.cols() != d) throw GeometryError("encode: token width != d_model");
  if (g_count % cfg.r_s != 0) throw GeometryError("encode: token count not a multiple of R_s");

  if (trace) {
    trace->tokens_in = tokens;
    trace->layers.clear();
    trace->layers.resize(static_cast<size_t>(cfg.n_layers));
  }

  EncodeOutput<T> out;
  out.per_layer_tokens.reserve(static_cast<size_t>(cfg.n_layers));

  Mat<T> x = tokens;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = state.layers[static_cast<size_t>(l)];
    detail::LayerTrace<T> local;
    detail::LayerTrace<T>& lt = trace ? trace->layers[static_cast<size_t>(l)] : local;
    lt.x_in = x;

    detail::layernorm_forward(x, lp.norm1_gain, lp.norm1_bias, lt.n1, lt.mu1, lt.istd1);

    lt.q = lt.n1 * lp.wq.transpose();
    lt.q.rowwise() += lp.bq.transpose();
    lt.k = lt.n1 * lp.wk.transpose();
    lt.k.rowwise() += lp.bk.transpose();
    lt.v = lt.n1 * lp.wv.transpose();
    lt.v.rowwise() += lp.bv.transpose();

    lt.attn.resize(static_cast<size_t>(heads));
    lt.o_concat.resize(g_count, d);
    for (int h = 0; h < heads; ++h) {
      auto qh = lt.q.middleCols(h * dh, dh);
      auto kh = lt.k.middleCols(h * dh, dh);
      auto vh = lt.v.middleCols(h * dh, dh);
      Mat<T>& a = lt.attn[static_cast<size_t>(h)];
      a = (qh * kh.transpose()) * scale;
      detail::softmax_rows_inplace(a);
      lt.o_concat.middleCols(h * dh, dh) = a * vh;
    }

    Mat<T> attn_out = lt.o_concat * lp.wo.transpose();
    attn_out.rowwise() += lp.bo.transpose();
    if (use_dropout) {
      lt.attn_drop_mask = detail::dropout_mask<T>(g_count, d, cfg.dropout_rate, *dropout_rng);
      attn_out = attn_out.cwiseProduct(lt.attn_drop_mask);
    }
    lt.x2 = x + attn_out;

    detail::layernorm_forward(lt.x2, lp.norm2_gain, lp.norm2_bias, lt.n2, lt.mu2, lt.istd2);
    lt.h1_pre = lt.n2 * lp.fc1_w.transpose();
    lt.h1_pre.rowwise() += lp.fc1_b.transpose();
    lt.h1_act = lt.h1_pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> ffn_out = lt.h1_act * lp.fc2_w.transpose();
    ffn_out.rowwise() += lp.fc2_b.transpose();
    if (use_dropout) {
      lt.ffn_drop_mask = detail::dropout_mask<T>(g_count, d, cfg.dropout_rate, *dropout_rng);
      ffn_out = ffn_out.cwiseProduct(lt.ffn_drop_mask);
    }

    x = lt.x2 + ffn_out;
    out.per_layer_tokens.push_back(x);
  }

  out.final_tokens = x;
  if (!out.final_tokens.allFinite())
    throw NumericError("encode: non-finite activations (divergence)");

  const auto n_segments = g_count / cfg.r_s;
  out.pooled.resize(n_segments, d);
  for (Eigen::Index n = 0; n < n_segments; ++n)
    out.pooled.row(n) = x.middleRows(n * cfg.r_s, cfg.r_s).colwise().mean();
  return out;
}

// Backward through the encoder stack. d_final is the gradient on the final
// tokens (the pooled path must already be folded in by the caller). Returns
// the gradient on the embedded tokens.
template <typename T>
Mat<T> encode_backward(const ModelConfig& cfg, const ModelState<T>& state,
                       const EncodeTrace<T>& trace, const Mat<T>& d_final, ModelState<T>& grads) {
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto g_count = d_final.rows();

  Mat<T> dx = d_final;
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lp = state.layers[static_cast<size_t>(l)];
    auto& gp = grads.layers[static_cast<size_t>(l)];
    const auto& lt = trace.layers[static_cast<size_t>(l)];

    // x3 = x2 + drop(ffn(n2))
    Mat<T> d_x2 = dx;
    Mat<T> d_ffn = lt.ffn_drop_mask.size() ? dx.cwiseProduct(lt.ffn_drop_mask).eval() : dx;

    Mat<T> d_h1_act = d_ffn * lp.fc2_w;
    gp.fc2_w.noalias() += d_ffn.transpose() * lt.h1_act;
    gp.fc2_b += d_ffn.colwise().sum().transpose();
    Mat<T> d_h1 = d_h1_act.cwiseProduct(lt.h1_pre.unaryExpr([](T v) { return gelu_derivative(v); }));
    gp.fc1_w.noalias() += d_h1.transpose() * lt.n2;
    gp.fc1_b += d_h1.colwise().sum().transpose();
    Mat<T> d_n2 = d_h1 * lp.fc1_w;

    d_x2 += detail::layernorm_backward(d_n2, lt.x2, lt.mu2, lt.istd2, lp.norm2_gain, gp.norm2_gain,
                                       gp.norm2_bias);

    // x2 = x + drop(attn(n1))
    Mat<T> d_attn_out = lt.attn_drop_mask.size() ? d_x2.cwiseProduct(lt.attn_drop_mask).eval() : d_x2;
    Mat<T> d_o = d_attn_out * lp.wo;
    gp.wo.noalias() += d_attn_out.transpose() * lt.o_concat;
    gp.bo += d_attn_out.colwise().sum().transpose();

    Mat<T> d_q(g_count, d), d_k(g_count, d), d_v(g_count, d);
    for (int h = 0; h < heads; ++h) {
      auto qh = lt.q.middleCols(h * dh, dh);
      auto kh = lt.k.middleCols(h * dh, dh);
      auto vh = lt.v.middleCols(h * dh, dh);
      const Mat<T>& a = lt.attn[static_cast<size_t>(h)];
      auto d_oh = d_o.middleCols(h * dh, dh);

      Mat<T> d_a = d_oh * vh.transpose();
      d_v.middleCols(h * dh, dh).noalias() = a.transpose() * d_oh;

      // Softmax backward, row-wise.
      Mat<T> d_s(a.rows(), a.cols());
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const T dot = a.row(r).dot(d_a.row(r));
        d_s.row(r) = (a.row(r).array() * (d_a.row(r).array() - dot)).matrix();
      }
      d_q.middleCols(h * dh, dh).noalias() = d_s * kh * scale;
      d_k.middleCols(h * dh, dh).noalias() = d_s.transpose() * qh * scale;
    }

    Mat<T> d_n1 = d_q * lp.wq;
    d_n1.noalias() += d_k * lp.wk;
    d_n1.noalias() += d_v * lp.wv;
    gp.wq.noalias() += d_q.transpose() * lt.n1;
    gp.bq += d_q.colwise().sum().transpose();
    gp.wk.noalias() += d_k.transpose() * lt.n1;
    gp.bk += d_k.colwise().sum().transpose();
    gp.wv.noalias() += d_v.transpose() * lt.n1;
    gp.bv += d_v.colwise().sum().transpose();

    dx = d_x2 + detail::layernorm_backward(d_n1, lt.x_in, lt.mu1, lt.istd1, lp.norm1_gain,
                                           gp.norm1_gain, gp.norm1_bias);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Heads (two-layer MLPs).

template <typename T>
struct HeadTrace {
  Mat<T> input;
  Mat<T> h_pre;
};

template <typename T>
Mat<T> head_forward(const HeadParams<T>& head, const Mat<T>& input, HeadTrace<T>* trace = nullptr) {
  Mat<T> h_pre = input * head.fc1_w.transpose();
  h_pre.rowwise() += head.fc1_b.transpose();
  Mat<T> h = h_pre.unaryExpr([](T v) { return gelu(v); });
  Mat<T> logits = h * head.fc2_w.transpose();
  logits.rowwise() += head.fc2_b.transpose();
  if (trace) {
    trace->input = input;
    trace->h_pre = std::move(h_pre);
  }
  return logits;
}

template <typename T>
Mat<T> head_backward(const HeadParams<T>& head, const HeadTrace<T>& trace, const Mat<T>& d_logits,
                     HeadParams<T>& grads) {
  Mat<T> h = trace.h_pre.unaryExpr([](T v) { return gelu(v); });
  grads.fc2_w.noalias() += d_logits.transpose() * h;
  grads.fc2_b += d_logits.colwise().sum().transpose();
  Mat<T> d_h = d_logits * head.fc2_w;
  Mat<T> d_h_pre =
      d_h.cwiseProduct(trace.h_pre.unaryExpr([](T v) { return gelu_derivative(v); }));
  grads.fc1_w.noalias() += d_h_pre.transpose() * trace.input;
  grads.fc1_b += d_h_pre.colwise().sum().transpose();
  return d_h_pre * head.fc1_w;
}

// Spectral logits for every token position; softmax is deferred to the loss.
template <typename T>
Mat<T> spectral_logits(const ModelConfig& cfg, const ModelState<T>& state,
                       const EncodeOutput<T>& out, HeadTrace<T>* trace = nullptr) {
  (void)cfg;
  return head_forward(state.spectral_head, out.final_tokens, trace);
}

// Temporal logits: head j applied to every pooled segment embedding.
// Returned as one N x K_t matrix per frame position.
template <typename T>
std::vector<Mat<T>> temporal_logits(const ModelConfig& cfg, const ModelState<T>& state,
                                    const EncodeOutput<T>& out,
                                    std::vector<HeadTrace<T>>* traces = nullptr) {
  std::vector<Mat<T>> logits;
  logits.reserve(static_cast<size_t>(cfg.r_t));
  if (traces) traces->resize(static_cast<size_t>(cfg.r_t));
  for (int j = 0; j < cfg.r_t; ++j)
    logits.push_back(head_forward(state.temporal_heads[static_cast<size_t>(j)], out.pooled,
                                  traces ? &(*traces)[static_cast<size_t>(j)] : nullptr));
  return logits;
}

// ---------------------------------------------------------------------------
// Full training-objective forward/backward for one clip.

template <typename T>
struct ClipExample {
  const Mat<T>& patch_vecs;  // (N * R_s) x patch_dim, grid order
  const masking::MaskPlan& plan;
  const quant::TargetSet& targets;
};

// Evaluates the training loss for one clip. Phase A (temporal_enabled ==
// false) uses the spectral loss alone; the joint phase uses the lambda
// mixture. When grads is non-null, exact gradients of the per-clip loss are
// accumulated into it.
template <typename T>
loss::LossBreakdown clip_loss(const ModelConfig& cfg, const ModelState<T>& state,
                              const grid::GridConfig& gc, const ClipExample<T>& example,
                              double lambda, bool temporal_enabled, ModelState<T>* grads,
                              Rng* dropout_rng = nullptr) {
  const std::vector<int> masked_patches = masking::masked_patch_indices(example.plan, gc);

  Mat<T> tokens = embed(cfg, state, example.patch_vecs, masked_patches);
  EncodeTrace<T> trace;
  EncodeOutput<T> out =
      encode(cfg, state, tokens, grads ? &trace : nullptr, dropout_rng);

  HeadTrace<T> spec_trace;
  Mat<T> spec_logits = head_forward(state.spectral_head, out.final_tokens,
                                    grads ? &spec_trace : nullptr);

  loss::LossBreakdown breakdown;
  breakdown.n_masked_segments =
      example.plan.mode == masking::MaskMode::kSegment ? static_cast<int>(example.plan.masked.size()) : 0;
  breakdown.spectral = loss::spectral_loss(spec_logits, example.targets, example.plan, gc);

  std::vector<Mat<T>> temp_logits;
  std::vector<HeadTrace<T>> temp_traces;
  if (temporal_enabled) {
    temp_logits = temporal_logits(cfg, state, out, grads ? &temp_traces : nullptr);
    breakdown.temporal = loss::temporal_loss(temp_logits, example.targets, example.plan, gc);
    breakdown.lambda = lambda;
    breakdown.total = loss::total_loss(breakdown.spectral, breakdown.temporal, lambda);
  } else {
    breakdown.temporal = 0.0;
    breakdown.lambda = 0.0;
    breakdown.total = breakdown.spectral;
  }
  if (!std::isfinite(breakdown.total))
    throw NumericError("clip_loss: non-finite loss");

  if (!grads) return breakdown;

  const T spec_weight = static_cast<T>(temporal_enabled ? 1.0 - lambda : 1.0);
  Mat<T> d_spec_logits =
      loss::spectral_loss_grad(spec_logits, example.targets, example.plan, gc) * spec_weight;
  Mat<T> d_final = head_backward(state.spectral_head, spec_trace, d_spec_logits,
                                 grads->spectral_head);

  if (temporal_enabled) {
    const T temp_weight = static_cast<T>(lambda);
    std::vector<Mat<T>> d_temp =
        loss::temporal_loss_grad(temp_logits, example.targets, example.plan, gc);
    Mat<T> d_pooled = Mat<T>::Zero(out.pooled.rows(), out.pooled.cols());
    for (int j = 0; j < cfg.r_t; ++j) {
      Mat<T> scaled = d_temp[static_cast<size_t>(j)] * temp_weight;
      d_pooled += head_backward(state.temporal_heads[static_cast<size_t>(j)],
                                temp_traces[static_cast<size_t>(j)], scaled,
                                grads->temporal_heads[static_cast<size_t>(j)]);
    }
    // pooled[n] is the mean of the segment's R_s final tokens.
    const T inv_rs = static_cast<T>(1) / static_cast<T>(cfg.r_s);
    for (Eigen::Index n = 0; n < d_pooled.rows(); ++n)
      for (int r = 0; r < cfg.r_s; ++r)
        d_final.row(n * cfg.r_s + r) += d_pooled.row(n) * inv_rs;
  }

  Mat<T> d_tokens = encode_backward(cfg, state, trace, d_final, *grads);
  embed_backward(cfg, example.patch_vecs, masked_patches, d_tokens, *grads);
  return breakdown;
}

}  // namespace maskspec::model

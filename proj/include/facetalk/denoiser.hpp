#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facetalk/common.hpp"
#include "facetalk/condstream.hpp"
#include "facetalk/rng.hpp"

namespace facetalk {
namespace model {

struct DenoiserConfig {
  int blocks = 4;
  Index d_model = 256;
  int heads = 8;
  Index d_attn = 1024;  // attention inner width (all heads)
  Index d_ff = 1024;    // feed-forward inner width
  Index in_dim = kExpressionDim;
  Index d_c = 40;       // conditioning width
  int timesteps = 1000;

  void validate() const {
    if (blocks < 1 || d_model < 1 || heads < 1 || d_attn < 1 || d_ff < 1 ||
        in_dim < 1 || d_c < 1 || timesteps < 1)
      throw ConfigError("denoiser config fields must be positive");
    if (d_model % heads != 0 || d_attn % heads != 0)
      throw ConfigError("d_model and d_attn must be divisible by heads");
    if (d_model % 2 != 0)
      throw ConfigError("d_model must be even for sinusoidal embeddings");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

// Boolean attention mask; entry (i,j) true iff query frame i may attend key
// frame j. Every row keeps at least its diagonal entry, so no softmax row is
// ever fully masked.
struct AttentionMask {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> allowed;

  Index rows() const { return allowed.rows(); }
  Index cols() const { return allowed.cols(); }
};

// Allowed iff j <= i: attends past and self, never the future.
inline AttentionMask build_target_mask(Index n) {
  if (n < 1) throw ConfigError("target mask needs at least one frame");
  AttentionMask m;
  m.allowed.resize(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m.allowed(i, j) = j <= i;
  return m;
}

// Kronecker delta: expression frame i attends conditioning frame i only.
inline AttentionMask build_alignment_mask(Index n) {
  if (n < 1) throw ConfigError("alignment mask needs at least one frame");
  AttentionMask m;
  m.allowed.resize(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m.allowed(i, j) = i == j;
  return m;
}

namespace act {

template <typename S>
S silu(S x) {
  const S sig = S(1) / (S(1) + std::exp(-x));
  return x * sig;
}
template <typename S>
S silu_grad(S x) {
  const S sig = S(1) / (S(1) + std::exp(-x));
  return sig * (S(1) + x * (S(1) - sig));
}

template <typename S>
S softplus(S x) {
  if (x > S(20)) return x;
  return std::log1p(std::exp(x));
}
template <typename S>
S mish(S x) {
  return x * std::tanh(softplus(x));
}
template <typename S>
S mish_grad(S x) {
  const S sp = softplus(x);
  const S th = std::tanh(sp);
  const S sig = S(1) / (S(1) + std::exp(-x));
  return th + x * (S(1) - th * th) * sig;
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
}
template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(M_SQRT1_2)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.3989422804014327);
  return cdf + x * pdf;
}

}  // namespace act

// PE(pos, 2i) = sin(pos / 10000^{2i/d}), PE(pos, 2i+1) = cos(same).
template <typename S>
VecX<S> sinusoidal_embedding(double pos, Index d) {
  VecX<S> pe(d);
  for (Index i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
    pe[2 * i] = static_cast<S>(std::sin(pos * freq));
    pe[2 * i + 1] = static_cast<S>(std::cos(pos * freq));
  }
  return pe;
}

template <typename S>
struct BlockParams {
  MatX<S> ln1_g, ln1_b;
  MatX<S> sa_wq, sa_bq, sa_wk, sa_bk, sa_wv, sa_bv, sa_wo, sa_bo;
  MatX<S> film1_w, film1_b;
  MatX<S> ln2_g, ln2_b;
  MatX<S> ca_wq, ca_bq, ca_wk, ca_bk, ca_wv, ca_bv, ca_wo, ca_bo;
  MatX<S> film2_w, film2_b;
  MatX<S> ln3_g, ln3_b;
  MatX<S> ff_w1, ff_b1, ff_w2, ff_b2;
  MatX<S> film3_w, film3_b;
};

template <typename S>
struct DenoiserParams {
  DenoiserConfig config;
  MatX<S> in_proj_w, in_proj_b;
  MatX<S> cond_proj_w, cond_proj_b;
  MatX<S> time_w1, time_b1, time_w2, time_b2;
  MatX<S> null_token;  // 1 x d_c
  std::vector<BlockParams<S>> block;
  MatX<S> out_proj_w, out_proj_b;

  VecX<S> null_token_vec() const { return null_token.row(0).transpose(); }

  // Stable name -> tensor enumeration used by the optimizer, checkpoints,
  // and the finite-difference harness.
  std::vector<std::pair<std::string, MatX<S>*>> tensors() {
    std::vector<std::pair<std::string, MatX<S>*>> out;
    auto add = [&out](const std::string& name, MatX<S>& m) {
      out.emplace_back(name, &m);
    };
    add("in_proj.w", in_proj_w);
    add("in_proj.b", in_proj_b);
    add("cond_proj.w", cond_proj_w);
    add("cond_proj.b", cond_proj_b);
    add("time.w1", time_w1);
    add("time.b1", time_b1);
    add("time.w2", time_w2);
    add("time.b2", time_b2);
    add("null_token", null_token);
    for (size_t b = 0; b < block.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      BlockParams<S>& blk = block[b];
      add(p + "ln1.g", blk.ln1_g);
      add(p + "ln1.b", blk.ln1_b);
      add(p + "sa.wq", blk.sa_wq);
      add(p + "sa.bq", blk.sa_bq);
      add(p + "sa.wk", blk.sa_wk);
      add(p + "sa.bk", blk.sa_bk);
      add(p + "sa.wv", blk.sa_wv);
      add(p + "sa.bv", blk.sa_bv);
      add(p + "sa.wo", blk.sa_wo);
      add(p + "sa.bo", blk.sa_bo);
      add(p + "film1.w", blk.film1_w);
      add(p + "film1.b", blk.film1_b);
      add(p + "ln2.g", blk.ln2_g);
      add(p + "ln2.b", blk.ln2_b);
      add(p + "ca.wq", blk.ca_wq);
      add(p + "ca.bq", blk.ca_bq);
      add(p + "ca.wk", blk.ca_wk);
      add(p + "ca.bk", blk.ca_bk);
      add(p + "ca.wv", blk.ca_wv);
      add(p + "ca.bv", blk.ca_bv);
      add(p + "ca.wo", blk.ca_wo);
      add(p + "ca.bo", blk.ca_bo);
      add(p + "film2.w", blk.film2_w);
      add(p + "film2.b", blk.film2_b);
      add(p + "ln3.g", blk.ln3_g);
      add(p + "ln3.b", blk.ln3_b);
      add(p + "ff.w1", blk.ff_w1);
      add(p + "ff.b1", blk.ff_b1);
      add(p + "ff.w2", blk.ff_w2);
      add(p + "ff.b2", blk.ff_b2);
      add(p + "film3.w", blk.film3_w);
      add(p + "film3.b", blk.film3_b);
    }
    add("out_proj.w", out_proj_w);
    add("out_proj.b", out_proj_b);
    return out;
  }

  std::vector<std::pair<std::string, const MatX<S>*>> tensors() const {
    auto mut = const_cast<DenoiserParams*>(this)->tensors();
    std::vector<std::pair<std::string, const MatX<S>*>> out;
    out.reserve(mut.size());
    for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
    return out;
  }

  DenoiserParams zeros_like() const {
    DenoiserParams z = *this;
    for (auto& [name, ptr] : z.tensors()) ptr->setZero();
    return z;
  }

  template <typename T>
  DenoiserParams<T> cast() const {
    DenoiserParams<T> out;
    out.config = config;
    out.block.resize(block.size());
    auto src = tensors();
    auto dst = out.tensors();
    for (size_t i = 0; i < src.size(); ++i)
      *dst[i].second = src[i].second->template cast<T>();
    return out;
  }
};

// Fan-in-scaled uniform init for projections, zero biases, identity-start
// FiLM (gamma = 1, beta = 0), unit LayerNorm gains.
template <typename S>
DenoiserParams<S> init_params(const DenoiserConfig& config, uint64_t seed) {
  config.validate();
  DenoiserParams<S> p;
  p.config = config;
  const Index d = config.d_model;
  const Index a = config.d_attn;

  auto matrix = [&](Index rows, Index cols) { return MatX<S>(rows, cols); };
  p.in_proj_w = matrix(config.in_dim, d);
  p.in_proj_b = MatX<S>::Zero(1, d);
  p.cond_proj_w = matrix(config.d_c, d);
  p.cond_proj_b = MatX<S>::Zero(1, d);
  p.time_w1 = matrix(d, d);
  p.time_b1 = MatX<S>::Zero(1, d);
  p.time_w2 = matrix(d, d);
  p.time_b2 = MatX<S>::Zero(1, d);
  p.null_token = MatX<S>::Zero(1, config.d_c);
  p.out_proj_w = matrix(d, config.in_dim);
  p.out_proj_b = MatX<S>::Zero(1, config.in_dim);

  p.block.resize(config.blocks);
  for (auto& blk : p.block) {
    blk.ln1_g = MatX<S>::Ones(1, d);
    blk.ln1_b = MatX<S>::Zero(1, d);
    blk.sa_wq = matrix(d, a);
    blk.sa_bq = MatX<S>::Zero(1, a);
    blk.sa_wk = matrix(d, a);
    blk.sa_bk = MatX<S>::Zero(1, a);
    blk.sa_wv = matrix(d, a);
    blk.sa_bv = MatX<S>::Zero(1, a);
    blk.sa_wo = matrix(a, d);
    blk.sa_bo = MatX<S>::Zero(1, d);
    blk.film1_w = MatX<S>::Zero(d, 2 * d);
    blk.film1_b = MatX<S>::Zero(1, 2 * d);
    blk.film1_b.row(0).head(d).setOnes();
    blk.ln2_g = MatX<S>::Ones(1, d);
    blk.ln2_b = MatX<S>::Zero(1, d);
    blk.ca_wq = matrix(d, a);
    blk.ca_bq = MatX<S>::Zero(1, a);
    blk.ca_wk = matrix(d, a);
    blk.ca_bk = MatX<S>::Zero(1, a);
    blk.ca_wv = matrix(d, a);
    blk.ca_bv = MatX<S>::Zero(1, a);
    blk.ca_wo = matrix(a, d);
    blk.ca_bo = MatX<S>::Zero(1, d);
    blk.film2_w = MatX<S>::Zero(d, 2 * d);
    blk.film2_b = MatX<S>::Zero(1, 2 * d);
    blk.film2_b.row(0).head(d).setOnes();
    blk.ln3_g = MatX<S>::Ones(1, d);
    blk.ln3_b = MatX<S>::Zero(1, d);
    blk.ff_w1 = matrix(d, config.d_ff);
    blk.ff_b1 = MatX<S>::Zero(1, config.d_ff);
    blk.ff_w2 = matrix(config.d_ff, d);
    blk.ff_b2 = MatX<S>::Zero(1, d);
    blk.film3_w = MatX<S>::Zero(d, 2 * d);
    blk.film3_b = MatX<S>::Zero(1, 2 * d);
    blk.film3_b.row(0).head(d).setOnes();
  }

  CounterRng rng(CounterRng::mix(seed, /*stream=*/0x9e7u));
  for (auto& [name, ptr] : p.tensors()) {
    const bool projection = name.ends_with(".w") || name.ends_with(".wq") ||
                            name.ends_with(".wk") || name.ends_with(".wv") ||
                            name.ends_with(".wo") || name.ends_with(".w1") ||
                            name.ends_with(".w2");
    const bool film = name.find("film") != std::string::npos;
    if (!projection || film) continue;  // FiLM keeps the identity start
    const double bound = 1.0 / std::sqrt(double(ptr->rows()));
    for (Index i = 0; i < ptr->rows(); ++i)
      for (Index j = 0; j < ptr->cols(); ++j)
        (*ptr)(i, j) = static_cast<S>(rng.uniform(-bound, bound));
  }
  return p;
}

namespace detail {

template <typename S>
struct LayerNormCache {
  MatX<S> xhat;
  VecX<S> inv_std;
};

template <typename S>
MatX<S> layer_norm_fwd(const MatX<S>& x, const MatX<S>& g, const MatX<S>& b,
                       LayerNormCache<S>& cache) {
  const Index n = x.rows(), d = x.cols();
  const S eps = S(1e-5);
  cache.xhat.resize(n, d);
  cache.inv_std.resize(n);
  MatX<S> out(n, d);
  for (Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().sum() / S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    cache.inv_std[i] = inv;
    cache.xhat.row(i) = (x.row(i).array() - mean) * inv;
    out.row(i) = cache.xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return out;
}

template <typename S>
MatX<S> layer_norm_bwd(const MatX<S>& dout, const MatX<S>& g,
                       const LayerNormCache<S>& cache, MatX<S>& dg,
                       MatX<S>& db) {
  const Index n = dout.rows(), d = dout.cols();
  MatX<S> dx(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto dy = dout.row(i);
    dg.row(0) += dy.cwiseProduct(cache.xhat.row(i));
    db.row(0) += dy;
    const Eigen::Matrix<S, 1, Eigen::Dynamic> dxhat =
        dy.cwiseProduct(g.row(0));
    const S m1 = dxhat.mean();
    const S m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = (dxhat.array() - m1 - cache.xhat.row(i).array() * m2) *
                cache.inv_std[i];
  }
  return dx;
}

template <typename S>
struct AttentionCache {
  MatX<S> q_in, kv_in;           // pre-projection inputs
  MatX<S> q, k, v;               // N x A, M x A
  std::vector<MatX<S>> weights;  // per head, N x M; zero where masked
  MatX<S> concat;                // N x A
};

// Multi-head attention that only ever touches allowed keys, so masked
// positions cannot influence the result even at the bit level.
template <typename S>
struct AttentionWeights {
  const MatX<S>&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo;
};

template <typename S>
MatX<S> attention_fwd(const MatX<S>& q_in, const MatX<S>& kv_in,
                      const AttentionWeights<S>& w, const AttentionMask& mask,
                      int heads, AttentionCache<S>& cache) {
  const Index n = q_in.rows();
  const Index m = kv_in.rows();
  const Index a = w.wq.cols();
  const Index ah = a / heads;
  const S scale = S(1) / std::sqrt(S(ah));

  cache.q_in = q_in;
  cache.kv_in = kv_in;
  cache.q = (q_in * w.wq).rowwise() + w.bq.row(0);
  cache.k = (kv_in * w.wk).rowwise() + w.bk.row(0);
  cache.v = (kv_in * w.wv).rowwise() + w.bv.row(0);
  cache.weights.assign(heads, MatX<S>::Zero(n, m));
  cache.concat.resize(n, a);

  std::vector<Index> keys;
  keys.reserve(m);
  for (Index i = 0; i < n; ++i) {
    keys.clear();
    for (Index j = 0; j < m; ++j)
      if (mask.allowed(i, j)) keys.push_back(j);
    if (keys.empty())
      throw NumericalError("attention row fully masked at i=" +
                           std::to_string(i));
    for (int h = 0; h < heads; ++h) {
      const Index off = h * ah;
      S maxlogit = -std::numeric_limits<S>::infinity();
      std::vector<S> logits(keys.size());
      for (size_t s = 0; s < keys.size(); ++s) {
        const S l = cache.q.row(i).segment(off, ah)
                        .dot(cache.k.row(keys[s]).segment(off, ah)) *
                    scale;
        logits[s] = l;
        maxlogit = std::max(maxlogit, l);
      }
      S denom = S(0);
      for (size_t s = 0; s < keys.size(); ++s) {
        logits[s] = std::exp(logits[s] - maxlogit);
        denom += logits[s];
      }
      Eigen::Matrix<S, 1, Eigen::Dynamic> acc =
          Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(ah);
      for (size_t s = 0; s < keys.size(); ++s) {
        const S wgt = logits[s] / denom;
        cache.weights[h](i, keys[s]) = wgt;
        acc += wgt * cache.v.row(keys[s]).segment(off, ah);
      }
      cache.concat.row(i).segment(off, ah) = acc;
    }
  }
  return (cache.concat * w.wo).rowwise() + w.bo.row(0);
}

template <typename S>
struct AttentionGrads {
  MatX<S>&dwq, &dbq, &dwk, &dbk, &dwv, &dbv, &dwo, &dbo;
};

// Returns (d q_in, d kv_in).
template <typename S>
std::pair<MatX<S>, MatX<S>> attention_bwd(const MatX<S>& dout,
                                          const AttentionWeights<S>& w,
                                          const AttentionMask& mask,
                                          int heads,
                                          const AttentionCache<S>& cache,
                                          AttentionGrads<S>& g) {
  const Index n = cache.q.rows();
  const Index m = cache.k.rows();
  const Index a = w.wq.cols();
  const Index ah = a / heads;
  const S scale = S(1) / std::sqrt(S(ah));

  g.dwo += cache.concat.transpose() * dout;
  g.dbo.row(0) += dout.colwise().sum();
  const MatX<S> dconcat = dout * w.wo.transpose();

  MatX<S> dq = MatX<S>::Zero(n, a);
  MatX<S> dk = MatX<S>::Zero(m, a);
  MatX<S> dv = MatX<S>::Zero(m, a);

  for (Index i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      const Index off = h * ah;
      const auto dacc = dconcat.row(i).segment(off, ah);
      // dw_ij and the softmax Jacobian, over allowed keys only.
      S inner = S(0);
      for (Index j = 0; j < m; ++j) {
        if (!mask.allowed(i, j)) continue;
        const S wgt = cache.weights[h](i, j);
        const S dwgt = dacc.dot(cache.v.row(j).segment(off, ah));
        inner += wgt * dwgt;
      }
      for (Index j = 0; j < m; ++j) {
        if (!mask.allowed(i, j)) continue;
        const S wgt = cache.weights[h](i, j);
        const S dwgt = dacc.dot(cache.v.row(j).segment(off, ah));
        const S dlogit = wgt * (dwgt - inner);
        dq.row(i).segment(off, ah) +=
            dlogit * scale * cache.k.row(j).segment(off, ah);
        dk.row(j).segment(off, ah) +=
            dlogit * scale * cache.q.row(i).segment(off, ah);
        dv.row(j).segment(off, ah) += wgt * dacc;
      }
    }
  }

  g.dwq += cache.q_in.transpose() * dq;
  g.dbq.row(0) += dq.colwise().sum();
  g.dwk += cache.kv_in.transpose() * dk;
  g.dbk.row(0) += dk.colwise().sum();
  g.dwv += cache.kv_in.transpose() * dv;
  g.dbv.row(0) += dv.colwise().sum();

  MatX<S> dq_in = dq * w.wq.transpose();
  MatX<S> dkv_in = dk * w.wk.transpose() + dv * w.wv.transpose();
  return {std::move(dq_in), std::move(dkv_in)};
}

template <typename S>
struct FilmCache {
  MatX<S> x_in;           // N x D input being modulated
  VecX<S> gamma, beta;    // D
  VecX<S> mish_out;       // D, mish(t_emb)
};

template <typename S>
MatX<S> film_fwd(const MatX<S>& x, const VecX<S>& t_emb, const MatX<S>& w,
                 const MatX<S>& b, FilmCache<S>& cache) {
  const Index d = x.cols();
  cache.x_in = x;
  cache.mish_out.resize(t_emb.size());
  for (Index i = 0; i < t_emb.size(); ++i)
    cache.mish_out[i] = act::mish(t_emb[i]);
  const VecX<S> gb =
      (cache.mish_out.transpose() * w).transpose() + b.row(0).transpose();
  cache.gamma = gb.head(d);
  cache.beta = gb.tail(d);
  MatX<S> out(x.rows(), d);
  for (Index i = 0; i < x.rows(); ++i)
    out.row(i) = x.row(i).cwiseProduct(cache.gamma.transpose()) +
                 cache.beta.transpose();
  return out;
}

// Returns dx; accumulates dW, db and the gradient w.r.t. t_emb.
template <typename S>
MatX<S> film_bwd(const MatX<S>& dout, const VecX<S>& t_emb, const MatX<S>& w,
                 const FilmCache<S>& cache, MatX<S>& dw, MatX<S>& db,
                 VecX<S>& dt_emb) {
  const Index d = dout.cols();
  VecX<S> dgamma = VecX<S>::Zero(d), dbeta = VecX<S>::Zero(d);
  MatX<S> dx(dout.rows(), d);
  for (Index i = 0; i < dout.rows(); ++i) {
    dgamma += dout.row(i).cwiseProduct(cache.x_in.row(i)).transpose();
    dbeta += dout.row(i).transpose();
    dx.row(i) = dout.row(i).cwiseProduct(cache.gamma.transpose());
  }
  VecX<S> dgb(2 * d);
  dgb.head(d) = dgamma;
  dgb.tail(d) = dbeta;
  dw += cache.mish_out * dgb.transpose();
  db.row(0) += dgb.transpose();
  const VecX<S> dmish = w * dgb;
  for (Index i = 0; i < t_emb.size(); ++i)
    dt_emb[i] += dmish[i] * act::mish_grad(t_emb[i]);
  return dx;
}

template <typename S>
struct TimeCache {
  VecX<S> pe, h1, h1_act, t_emb;
};

template <typename S>
struct BlockCache {
  MatX<S> x0, x1, x2;  // residual-stream inputs of the three sublayers
  LayerNormCache<S> ln1, ln2, ln3;
  AttentionCache<S> sa, ca;
  FilmCache<S> film1, film2, film3;
  MatX<S> ff_in, ff_pre, ff_act;
};

template <typename S>
struct ForwardCache {
  TimeCache<S> time;
  MatX<S> cond_in, cond_proj;  // N x d_c, N x D
  MatX<S> x_in;                // projected input + positions
  std::vector<BlockCache<S>> block;
  MatX<S> x_final;             // stream value entering the output projection
};

}  // namespace detail

// Sinusoidal embedding of the diffusion timestamp followed by the 2-layer
// SiLU MLP.
template <typename S>
VecX<S> embed_timestamp(int t, const DenoiserParams<S>& params,
                        detail::TimeCache<S>* cache = nullptr) {
  if (t < 0 || t > params.config.timesteps)
    throw ConfigError("timestamp outside schedule range");
  const Index d = params.config.d_model;
  detail::TimeCache<S> local;
  detail::TimeCache<S>& c = cache ? *cache : local;
  c.pe = sinusoidal_embedding<S>(double(t), d);
  c.h1 = (c.pe.transpose() * params.time_w1).transpose() +
         params.time_b1.row(0).transpose();
  c.h1_act.resize(d);
  for (Index i = 0; i < d; ++i) c.h1_act[i] = act::silu(c.h1[i]);
  c.t_emb = (c.h1_act.transpose() * params.time_w2).transpose() +
            params.time_b2.row(0).transpose();
  return c.t_emb;
}

// FiLM over rows: out_i = x_i .* gamma + beta with (gamma, beta) produced by
// the Mish-then-linear MLP from the timestamp embedding.
template <typename S>
MatX<S> film_modulate(const MatX<S>& x, const VecX<S>& t_emb,
                      const MatX<S>& film_w, const MatX<S>& film_b) {
  detail::FilmCache<S> cache;
  return detail::film_fwd(x, t_emb, film_w, film_b, cache);
}

template <typename S>
MatX<S> forward_impl(const DenoiserParams<S>& params, const MatX<S>& noisy,
                     const audio::ConditioningStream<S>& cond, int t,
                     detail::ForwardCache<S>* cache) {
  const DenoiserConfig& cfg = params.config;
  if (noisy.cols() != cfg.in_dim)
    throw DimensionError("noisy sequence width must equal in_dim");
  if (cond.size() != noisy.rows())
    throw DimensionError("conditioning frame count must match sequence");
  if (cond.width() != cfg.d_c)
    throw DimensionError("conditioning width must equal d_c");

  const Index n = noisy.rows();
  detail::ForwardCache<S> local;
  detail::ForwardCache<S>& cc = cache ? *cache : local;

  const VecX<S> t_emb = embed_timestamp(t, params, &cc.time);

  cc.cond_in = cond.frames;
  cc.cond_proj =
      (cond.frames * params.cond_proj_w).rowwise() + params.cond_proj_b.row(0);

  MatX<S> x = (noisy * params.in_proj_w).rowwise() + params.in_proj_b.row(0);
  for (Index i = 0; i < n; ++i)
    x.row(i) +=
        sinusoidal_embedding<S>(double(i), cfg.d_model).transpose();
  cc.x_in = x;

  const AttentionMask target = build_target_mask(n);
  const AttentionMask align = build_alignment_mask(n);

  cc.block.resize(cfg.blocks);
  for (int b = 0; b < cfg.blocks; ++b) {
    const BlockParams<S>& blk = params.block[b];
    detail::BlockCache<S>& bc = cc.block[b];

    bc.x0 = x;
    const MatX<S> h1 = detail::layer_norm_fwd(x, blk.ln1_g, blk.ln1_b, bc.ln1);
    detail::AttentionWeights<S> saw{blk.sa_wq, blk.sa_bq, blk.sa_wk, blk.sa_bk,
                                    blk.sa_wv, blk.sa_bv, blk.sa_wo, blk.sa_bo};
    x = x + detail::attention_fwd(h1, h1, saw, target, cfg.heads, bc.sa);
    bc.x1 = x;
    x = detail::film_fwd(x, t_emb, blk.film1_w, blk.film1_b, bc.film1);

    const MatX<S> h2 = detail::layer_norm_fwd(x, blk.ln2_g, blk.ln2_b, bc.ln2);
    detail::AttentionWeights<S> caw{blk.ca_wq, blk.ca_bq, blk.ca_wk, blk.ca_bk,
                                    blk.ca_wv, blk.ca_bv, blk.ca_wo, blk.ca_bo};
    x = x +
        detail::attention_fwd(h2, cc.cond_proj, caw, align, cfg.heads, bc.ca);
    bc.x2 = x;
    x = detail::film_fwd(x, t_emb, blk.film2_w, blk.film2_b, bc.film2);

    bc.ff_in = detail::layer_norm_fwd(x, blk.ln3_g, blk.ln3_b, bc.ln3);
    bc.ff_pre = (bc.ff_in * blk.ff_w1).rowwise() + blk.ff_b1.row(0);
    bc.ff_act = bc.ff_pre.unaryExpr([](S v) { return act::gelu(v); });
    const MatX<S> ff_out =
        (bc.ff_act * blk.ff_w2).rowwise() + blk.ff_b2.row(0);
    x = detail::film_fwd(MatX<S>(x + ff_out), t_emb, blk.film3_w, blk.film3_b,
                         bc.film3);
  }

  cc.x_final = x;
  return (x * params.out_proj_w).rowwise() + params.out_proj_b.row(0);
}

template <typename S>
MatX<S> forward(const DenoiserParams<S>& params, const MatX<S>& noisy,
                const audio::ConditioningStream<S>& cond, int t) {
  return forward_impl<S>(params, noisy, cond, t, nullptr);
}

template <typename S>
struct LossGradients {
  S loss = S(0);
  DenoiserParams<S> grads;
};

// Mean-squared-error loss against the clean sequence plus reverse-mode
// gradients for every parameter tensor. All loops run in a fixed order, so
// repeated calls are bitwise identical.
template <typename S>
LossGradients<S> loss_gradients(const DenoiserParams<S>& params,
                                const MatX<S>& x0, const MatX<S>& noisy,
                                const audio::ConditioningStream<S>& cond,
                                int t) {
  require_same_shape("loss_gradients", x0.rows(), x0.cols(), noisy.rows(),
                     noisy.cols());
  const DenoiserConfig& cfg = params.config;
  const Index n = noisy.rows();

  detail::ForwardCache<S> cc;
  const MatX<S> out = forward_impl<S>(params, noisy, cond, t, &cc);

  LossGradients<S> result;
  result.loss = (x0 - out).squaredNorm() / static_cast<S>(x0.size());
  if (!std::isfinite(double(result.loss))) {
    for (const auto& [name, ptr] : params.tensors())
      if (!ptr->allFinite())
        throw NumericalError("non-finite loss; offending tensor: " + name);
    throw NumericalError("non-finite loss with finite parameters (inputs?)");
  }
  result.grads = params.zeros_like();
  DenoiserParams<S>& g = result.grads;

  const AttentionMask target = build_target_mask(n);
  const AttentionMask align = build_alignment_mask(n);
  const VecX<S>& t_emb = cc.time.t_emb;
  VecX<S> dt_emb = VecX<S>::Zero(cfg.d_model);

  // d loss / d out
  MatX<S> dout = (out - x0) * (S(2) / static_cast<S>(x0.size()));

  // output projection
  g.out_proj_w += cc.x_final.transpose() * dout;
  g.out_proj_b.row(0) += dout.colwise().sum();
  MatX<S> dx = dout * params.out_proj_w.transpose();

  MatX<S> dcond_proj = MatX<S>::Zero(n, cfg.d_model);

  for (int b = cfg.blocks - 1; b >= 0; --b) {
    const BlockParams<S>& blk = params.block[b];
    detail::BlockCache<S>& bc = cc.block[b];
    BlockParams<S>& gb = g.block[b];

    // film3 over (x2' + ff_out)
    dx = detail::film_bwd(dx, t_emb, blk.film3_w, bc.film3, gb.film3_w,
                          gb.film3_b, dt_emb);
    // feed-forward sublayer
    {
      const MatX<S> dff_out = dx;  // residual: same grad flows to both paths
      MatX<S> dact = dff_out * blk.ff_w2.transpose();
      gb.ff_w2 += bc.ff_act.transpose() * dff_out;
      gb.ff_b2.row(0) += dff_out.colwise().sum();
      MatX<S> dpre =
          dact.binaryExpr(bc.ff_pre, [](S d, S x) { return d * act::gelu_grad(x); });
      gb.ff_w1 += bc.ff_in.transpose() * dpre;
      gb.ff_b1.row(0) += dpre.colwise().sum();
      const MatX<S> dff_in = dpre * blk.ff_w1.transpose();
      dx += detail::layer_norm_bwd(dff_in, blk.ln3_g, bc.ln3, gb.ln3_g,
                                   gb.ln3_b);
    }

    // film2 over x2
    dx = detail::film_bwd(dx, t_emb, blk.film2_w, bc.film2, gb.film2_w,
                          gb.film2_b, dt_emb);
    // cross-attention sublayer
    {
      detail::AttentionWeights<S> caw{blk.ca_wq, blk.ca_bq, blk.ca_wk,
                                      blk.ca_bk, blk.ca_wv, blk.ca_bv,
                                      blk.ca_wo, blk.ca_bo};
      detail::AttentionGrads<S> cag{gb.ca_wq, gb.ca_bq, gb.ca_wk, gb.ca_bk,
                                    gb.ca_wv, gb.ca_bv, gb.ca_wo, gb.ca_bo};
      auto [dh2, dkv] =
          detail::attention_bwd(dx, caw, align, cfg.heads, bc.ca, cag);
      dcond_proj += dkv;
      dx += detail::layer_norm_bwd(dh2, blk.ln2_g, bc.ln2, gb.ln2_g,
                                   gb.ln2_b);
    }

    // film1 over x1
    dx = detail::film_bwd(dx, t_emb, blk.film1_w, bc.film1, gb.film1_w,
                          gb.film1_b, dt_emb);
    // self-attention sublayer
    {
      detail::AttentionWeights<S> saw{blk.sa_wq, blk.sa_bq, blk.sa_wk,
                                      blk.sa_bk, blk.sa_wv, blk.sa_bv,
                                      blk.sa_wo, blk.sa_bo};
      detail::AttentionGrads<S> sag{gb.sa_wq, gb.sa_bq, gb.sa_wk, gb.sa_bk,
                                    gb.sa_wv, gb.sa_bv, gb.sa_wo, gb.sa_bo};
      auto [dq, dkv] =
          detail::attention_bwd(dx, saw, target, cfg.heads, bc.sa, sag);
      const MatX<S> dh1 = dq + dkv;
      dx += detail::layer_norm_bwd(dh1, blk.ln1_g, bc.ln1, gb.ln1_g,
                                   gb.ln1_b);
    }
  }

  // input projection (positional encodings are constants)
  g.in_proj_w += noisy.transpose() * dx;
  g.in_proj_b.row(0) += dx.colwise().sum();

  // conditioning projection
  g.cond_proj_w += cc.cond_in.transpose() * dcond_proj;
  g.cond_proj_b.row(0) += dcond_proj.colwise().sum();
  if (cond.kind == audio::StreamKind::kNull) {
    const MatX<S> dcond_in = dcond_proj * params.cond_proj_w.transpose();
    g.null_token.row(0) += dcond_in.colwise().sum();
  }

  // timestamp MLP
  {
    const detail::TimeCache<S>& tc = cc.time;
    g.time_w2 += tc.h1_act * dt_emb.transpose();
    g.time_b2.row(0) += dt_emb.transpose();
    VecX<S> dh1_act = params.time_w2 * dt_emb;
    VecX<S> dh1(dh1_act.size());
    for (Index i = 0; i < dh1.size(); ++i)
      dh1[i] = dh1_act[i] * act::silu_grad(tc.h1[i]);
    g.time_w1 += tc.pe * dh1.transpose();
    g.time_b1.row(0) += dh1.transpose();
  }

  return result;
}

}  // namespace model
}  // namespace facetalk

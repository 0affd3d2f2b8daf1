#include "depo/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "depo/errors.hpp"

namespace depo {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

using kernels::column_sum_acc;
using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn_acc;

std::span<const double> view(std::span<const double> p, std::size_t offset, std::size_t n) {
  return p.subspan(offset, n);
}

std::span<double> view(std::span<double> p, std::size_t offset, std::size_t n) { return p.subspan(offset, n); }

std::size_t sz(int n) { return static_cast<std::size_t>(n); }

void layer_norm_row(const double* x, const double* g, const double* b, int d, double* xhat, double& rstd,
                    double* y) {
  double mean = 0.0;
  for (int j = 0; j < d; ++j) mean += x[j];
  mean /= d;
  double var = 0.0;
  for (int j = 0; j < d; ++j) {
    const double c = x[j] - mean;
    var += c * c;
  }
  var /= d;
  rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int j = 0; j < d; ++j) {
    xhat[j] = (x[j] - mean) * rstd;
    y[j] = xhat[j] * g[j] + b[j];
  }
}

void layer_norm_backward_row(const double* dy, const double* xhat, double rstd, const double* g, int d, double* dx,
                             double* dg, double* db) {
  double mean1 = 0.0;
  double mean2 = 0.0;
  for (int j = 0; j < d; ++j) {
    const double dxh = dy[j] * g[j];
    mean1 += dxh;
    mean2 += dxh * xhat[j];
    dg[j] += dy[j] * xhat[j];
    db[j] += dy[j];
  }
  mean1 /= d;
  mean2 /= d;
  for (int j = 0; j < d; ++j) dx[j] += rstd * (dy[j] * g[j] - mean1 - xhat[j] * mean2);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Causal attention for query row i of one head. keys/values rows are `stride`
// apart; p receives the i+1 attention weights.
void attend_row(const double* q, const double* keys, const double* values, std::size_t stride, int i, int hd,
                double scale, double* p, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j <= i; ++j) {
    const double* k = keys + static_cast<std::size_t>(j) * stride;
    double s = 0.0;
    for (int c = 0; c < hd; ++c) s += q[c] * k[c];
    p[j] = s * scale;
    mx = std::max(mx, p[j]);
  }
  double sum = 0.0;
  for (int j = 0; j <= i; ++j) {
    p[j] = std::exp(p[j] - mx);
    sum += p[j];
  }
  for (int j = 0; j <= i; ++j) p[j] /= sum;
  for (int c = 0; c < hd; ++c) out[c] = 0.0;
  for (int j = 0; j <= i; ++j) {
    const double* v = values + static_cast<std::size_t>(j) * stride;
    for (int c = 0; c < hd; ++c) out[c] += p[j] * v[c];
  }
}

void add_bias_rows(std::span<double> y, std::span<const double> bias, int rows, int m) {
  for (int r = 0; r < rows; ++r) {
    double* row = y.data() + static_cast<std::ptrdiff_t>(r) * m;
    for (int j = 0; j < m; ++j) row[j] += bias[sz(j)];
  }
}

}  // namespace

std::size_t ModelConfig::parameter_count() const { return Layout(*this).total; }

void validate(const ModelConfig& cfg) {
  if (cfg.vocab_size < 1 || cfg.context < 1 || cfg.d_model < 1 || cfg.n_layers < 0 || cfg.n_heads < 1 ||
      cfg.d_ff < 1) {
    throw ConfigError("policy architecture sizes must be positive");
  }
  if (cfg.d_model % cfg.n_heads != 0) throw ConfigError("policy d_model must be divisible by n_heads");
}

Layout::Layout(const ModelConfig& cfg) {
  const std::size_t d = sz(cfg.d_model), f = sz(cfg.d_ff), v = sz(cfg.vocab_size);
  std::size_t at = 0;
  const auto take = [&at](std::size_t n) {
    const std::size_t o = at;
    at += n;
    return o;
  };
  tok_emb = take(v * d);
  pos_emb = take(sz(cfg.context) * d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerOffsets o{};
    o.ln1_g = take(d);
    o.ln1_b = take(d);
    o.w_qkv = take(d * 3 * d);
    o.b_qkv = take(3 * d);
    o.w_o = take(d * d);
    o.b_o = take(d);
    o.ln2_g = take(d);
    o.ln2_b = take(d);
    o.w1 = take(d * f);
    o.b1 = take(f);
    o.w2 = take(f * d);
    o.b2 = take(d);
    layers.push_back(o);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  w_out = take(d * v);
  b_out = take(v);
  total = at;
}

void init_parameters(const ModelConfig& cfg, std::span<double> params, Rng& rng) {
  validate(cfg);
  const Layout lay(cfg);
  if (params.size() != lay.total) throw std::invalid_argument("parameter vector has the wrong size");
  std::fill(params.begin(), params.end(), 0.0);
  const std::size_t d = sz(cfg.d_model), f = sz(cfg.d_ff), v = sz(cfg.vocab_size);
  const double resid_std = kInitStd / std::sqrt(2.0 * std::max(1, cfg.n_layers));
  const auto normal_fill = [&](std::size_t offset, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) params[offset + i] = stddev * standard_normal(rng);
  };
  const auto const_fill = [&](std::size_t offset, std::size_t n, double value) {
    std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(offset), n, value);
  };
  normal_fill(lay.tok_emb, v * d, kInitStd);
  normal_fill(lay.pos_emb, sz(cfg.context) * d, kInitStd);
  for (const auto& o : lay.layers) {
    const_fill(o.ln1_g, d, 1.0);
    normal_fill(o.w_qkv, d * 3 * d, kInitStd);
    normal_fill(o.w_o, d * d, resid_std);
    const_fill(o.ln2_g, d, 1.0);
    normal_fill(o.w1, d * f, kInitStd);
    normal_fill(o.w2, f * d, resid_std);
  }
  const_fill(lay.lnf_g, d, 1.0);
  normal_fill(lay.w_out, d * v, kInitStd);
}

Transformer::Transformer(const ModelConfig& cfg, std::span<const double> params)
    : cfg_(cfg), layout_(cfg), p_(params) {
  validate(cfg_);
  if (params.size() != layout_.total) {
    throw std::invalid_argument("parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                                std::to_string(layout_.total));
  }
}

void Transformer::forward(std::span<const TokenId> tokens, std::span<const int> rows, ForwardCache& cache,
                          std::vector<double>& logits, Exec exec) const {
  const int T = static_cast<int>(tokens.size());
  const int d = cfg_.d_model, H = cfg_.n_heads, hd = d / H, f = cfg_.d_ff, V = cfg_.vocab_size;
  if (T == 0) throw std::invalid_argument("forward on an empty sequence");
  if (T > cfg_.context) {
    throw std::invalid_argument("sequence of " + std::to_string(T) + " tokens exceeds context " +
                                std::to_string(cfg_.context));
  }
  for (auto t : tokens) {
    if (t < 0 || t >= V) throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
  }
  for (int r : rows) {
    if (r < 0 || r >= T) throw std::out_of_range("logit row outside sequence");
  }
  const std::size_t Td = sz(T) * sz(d);
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.rows.assign(rows.begin(), rows.end());
  cache.layers.resize(sz(cfg_.n_layers));

  std::vector<double> x(Td);
  for (int t = 0; t < T; ++t) {
    const double* te = p_.data() + layout_.tok_emb + sz(tokens[sz(t)]) * sz(d);
    const double* pe = p_.data() + layout_.pos_emb + sz(t) * sz(d);
    for (int j = 0; j < d; ++j) x[sz(t) * sz(d) + sz(j)] = te[j] + pe[j];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> tmp(Td);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const LayerOffsets& o = layout_.layers[sz(l)];
    LayerCache& c = cache.layers[sz(l)];
    c.x_in = x;
    c.ln1_xhat.resize(Td);
    c.ln1_rstd.resize(sz(T));
    c.h1.resize(Td);
    for (int t = 0; t < T; ++t) {
      layer_norm_row(&x[sz(t) * sz(d)], &p_[o.ln1_g], &p_[o.ln1_b], d, &c.ln1_xhat[sz(t) * sz(d)],
                     c.ln1_rstd[sz(t)], &c.h1[sz(t) * sz(d)]);
    }
    c.qkv.resize(Td * 3);
    gemm_nn(exec, c.h1, view(p_, o.w_qkv, sz(d) * 3 * sz(d)), c.qkv, T, d, 3 * d);
    add_bias_rows(c.qkv, view(p_, o.b_qkv, 3 * sz(d)), T, 3 * d);
    c.att_p.assign(sz(H) * sz(T) * sz(T), 0.0);
    c.att_out.resize(Td);
    const std::size_t stride = 3 * sz(d);
    const int work = H * T;
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel && work > 64)
    for (int w = 0; w < work; ++w) {
      const int h = w / T;
      const int i = w % T;
      const double* base = c.qkv.data();
      attend_row(base + sz(i) * stride + sz(h) * sz(hd), base + sz(d) + sz(h) * sz(hd),
                 base + 2 * sz(d) + sz(h) * sz(hd), stride, i, hd, scale,
                 &c.att_p[(sz(h) * sz(T) + sz(i)) * sz(T)], &c.att_out[sz(i) * sz(d) + sz(h) * sz(hd)]);
    }
    gemm_nn(exec, c.att_out, view(p_, o.w_o, sz(d) * sz(d)), tmp, T, d, d);
    add_bias_rows(tmp, view(p_, o.b_o, sz(d)), T, d);
    for (std::size_t i = 0; i < Td; ++i) x[i] += tmp[i];
    c.x_mid = x;
    c.ln2_xhat.resize(Td);
    c.ln2_rstd.resize(sz(T));
    c.h2.resize(Td);
    for (int t = 0; t < T; ++t) {
      layer_norm_row(&x[sz(t) * sz(d)], &p_[o.ln2_g], &p_[o.ln2_b], d, &c.ln2_xhat[sz(t) * sz(d)],
                     c.ln2_rstd[sz(t)], &c.h2[sz(t) * sz(d)]);
    }
    c.u.resize(sz(T) * sz(f));
    gemm_nn(exec, c.h2, view(p_, o.w1, sz(d) * sz(f)), c.u, T, d, f);
    add_bias_rows(c.u, view(p_, o.b1, sz(f)), T, f);
    c.g.resize(c.u.size());
    for (std::size_t i = 0; i < c.u.size(); ++i) c.g[i] = gelu(c.u[i]);
    gemm_nn(exec, c.g, view(p_, o.w2, sz(f) * sz(d)), tmp, T, f, d);
    add_bias_rows(tmp, view(p_, o.b2, sz(d)), T, d);
    for (std::size_t i = 0; i < Td; ++i) x[i] += tmp[i];
  }
  cache.x_final = std::move(x);
  const int R = static_cast<int>(rows.size());
  cache.lnf_xhat.resize(sz(R) * sz(d));
  cache.lnf_rstd.resize(sz(R));
  cache.hf.resize(sz(R) * sz(d));
  for (int r = 0; r < R; ++r) {
    layer_norm_row(&cache.x_final[sz(rows[sz(r)]) * sz(d)], &p_[layout_.lnf_g], &p_[layout_.lnf_b], d,
                   &cache.lnf_xhat[sz(r) * sz(d)], cache.lnf_rstd[sz(r)], &cache.hf[sz(r) * sz(d)]);
  }
  logits.resize(sz(R) * sz(V));
  gemm_nn(exec, cache.hf, view(p_, layout_.w_out, sz(d) * sz(V)), logits, R, d, V);
  add_bias_rows(logits, view(p_, layout_.b_out, sz(V)), R, V);
}

void Transformer::backward(const ForwardCache& cache, std::span<const double> dlogits, std::span<double> grad,
                           Exec exec) const {
  const int T = static_cast<int>(cache.tokens.size());
  const int R = static_cast<int>(cache.rows.size());
  const int d = cfg_.d_model, H = cfg_.n_heads, hd = d / H, f = cfg_.d_ff, V = cfg_.vocab_size;
  if (grad.size() != layout_.total) throw std::invalid_argument("gradient vector has the wrong size");
  if (dlogits.size() != sz(R) * sz(V)) throw std::invalid_argument("dlogits has the wrong size");
  const std::size_t Td = sz(T) * sz(d);

  gemm_tn_acc(exec, cache.hf, dlogits, view(grad, layout_.w_out, sz(d) * sz(V)), R, d, V);
  column_sum_acc(dlogits, view(grad, layout_.b_out, sz(V)), R, V);
  std::vector<double> dhf(sz(R) * sz(d));
  gemm_nt(exec, dlogits, view(p_, layout_.w_out, sz(d) * sz(V)), dhf, R, V, d);
  std::vector<double> dx(Td, 0.0);
  for (int r = 0; r < R; ++r) {
    layer_norm_backward_row(&dhf[sz(r) * sz(d)], &cache.lnf_xhat[sz(r) * sz(d)], cache.lnf_rstd[sz(r)],
                            &p_[layout_.lnf_g], d, &dx[sz(cache.rows[sz(r)]) * sz(d)], &grad[layout_.lnf_g],
                            &grad[layout_.lnf_b]);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dg(sz(T) * sz(f));
  std::vector<double> dh(Td);
  std::vector<double> datt(Td);
  std::vector<double> dqkv(Td * 3);
  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const LayerOffsets& o = layout_.layers[sz(l)];
    const LayerCache& c = cache.layers[sz(l)];
    // MLP branch
    gemm_tn_acc(exec, c.g, dx, view(grad, o.w2, sz(f) * sz(d)), T, f, d);
    column_sum_acc(dx, view(grad, o.b2, sz(d)), T, d);
    gemm_nt(exec, dx, view(p_, o.w2, sz(f) * sz(d)), dg, T, d, f);
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_grad(c.u[i]);
    gemm_tn_acc(exec, c.h2, dg, view(grad, o.w1, sz(d) * sz(f)), T, d, f);
    column_sum_acc(dg, view(grad, o.b1, sz(f)), T, f);
    gemm_nt(exec, dg, view(p_, o.w1, sz(d) * sz(f)), dh, T, f, d);
    for (int t = 0; t < T; ++t) {
      layer_norm_backward_row(&dh[sz(t) * sz(d)], &c.ln2_xhat[sz(t) * sz(d)], c.ln2_rstd[sz(t)], &p_[o.ln2_g], d,
                              &dx[sz(t) * sz(d)], &grad[o.ln2_g], &grad[o.ln2_b]);
    }
    // attention branch
    gemm_tn_acc(exec, c.att_out, dx, view(grad, o.w_o, sz(d) * sz(d)), T, d, d);
    column_sum_acc(dx, view(grad, o.b_o, sz(d)), T, d);
    gemm_nt(exec, dx, view(p_, o.w_o, sz(d) * sz(d)), datt, T, d, d);
    std::fill(dqkv.begin(), dqkv.end(), 0.0);
    const std::size_t stride = 3 * sz(d);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel && H > 1)
    for (int h = 0; h < H; ++h) {
      std::vector<double> dp(sz(T));
      const std::size_t qo = sz(h) * sz(hd), ko = sz(d) + qo, vo = 2 * sz(d) + qo;
      for (int i = 0; i < T; ++i) {
        const double* p = &c.att_p[(sz(h) * sz(T) + sz(i)) * sz(T)];
        const double* da = &datt[sz(i) * sz(d) + qo];
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) {
          const double* v = &c.qkv[sz(j) * stride + vo];
          double s = 0.0;
          for (int e = 0; e < hd; ++e) s += da[e] * v[e];
          dp[sz(j)] = s;
          dot += p[j] * s;
          double* dv = &dqkv[sz(j) * stride + vo];
          for (int e = 0; e < hd; ++e) dv[e] += p[j] * da[e];
        }
        const double* q = &c.qkv[sz(i) * stride + qo];
        double* dq = &dqkv[sz(i) * stride + qo];
        for (int j = 0; j <= i; ++j) {
          const double ds = p[j] * (dp[sz(j)] - dot) * scale;
          if (ds == 0.0) continue;
          const double* k = &c.qkv[sz(j) * stride + ko];
          double* dk = &dqkv[sz(j) * stride + ko];
          for (int e = 0; e < hd; ++e) {
            dq[e] += ds * k[e];
            dk[e] += ds * q[e];
          }
        }
      }
    }
    gemm_tn_acc(exec, c.h1, dqkv, view(grad, o.w_qkv, sz(d) * 3 * sz(d)), T, d, 3 * d);
    column_sum_acc(dqkv, view(grad, o.b_qkv, 3 * sz(d)), T, 3 * d);
    gemm_nt(exec, dqkv, view(p_, o.w_qkv, sz(d) * 3 * sz(d)), dh, T, 3 * d, d);
    for (int t = 0; t < T; ++t) {
      layer_norm_backward_row(&dh[sz(t) * sz(d)], &c.ln1_xhat[sz(t) * sz(d)], c.ln1_rstd[sz(t)], &p_[o.ln1_g], d,
                              &dx[sz(t) * sz(d)], &grad[o.ln1_g], &grad[o.ln1_b]);
    }
  }
  for (int t = 0; t < T; ++t) {
    double* te = &grad[layout_.tok_emb + sz(cache.tokens[sz(t)]) * sz(d)];
    double* pe = &grad[layout_.pos_emb + sz(t) * sz(d)];
    const double* g = &dx[sz(t) * sz(d)];
    for (int j = 0; j < d; ++j) {
      te[j] += g[j];
      pe[j] += g[j];
    }
  }
}

Decoder::Decoder(const Transformer& model) : model_(model) { reset(); }

void Decoder::reset() {
  length_ = 0;
  keys_.assign(sz(model_.cfg_.n_layers), {});
  values_.assign(sz(model_.cfg_.n_layers), {});
  logits_.clear();
}

std::span<const double> Decoder::feed(TokenId token) {
  const ModelConfig& cfg = model_.cfg_;
  const Layout& lay = model_.layout_;
  const auto p = model_.p_;
  const int d = cfg.d_model, H = cfg.n_heads, hd = d / H, f = cfg.d_ff, V = cfg.vocab_size;
  if (static_cast<int>(length_) >= cfg.context) throw std::invalid_argument("decoder context exhausted");
  if (token < 0 || token >= V) throw std::out_of_range("token id " + std::to_string(token) + " outside vocabulary");
  const std::size_t pos = length_;
  std::vector<double> x(sz(d)), xhat(sz(d)), h(sz(d)), qkv(3 * sz(d)), att(sz(d)), tmp(sz(d)), u(sz(f));
  std::vector<double> prob(pos + 1);
  for (int j = 0; j < d; ++j) x[sz(j)] = p[lay.tok_emb + sz(token) * sz(d) + sz(j)] + p[lay.pos_emb + pos * sz(d) + sz(j)];
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  double rstd = 0.0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerOffsets& o = lay.layers[sz(l)];
    layer_norm_row(x.data(), &p[o.ln1_g], &p[o.ln1_b], d, xhat.data(), rstd, h.data());
    gemm_nn(Exec::Serial, h, view(p, o.w_qkv, sz(d) * 3 * sz(d)), qkv, 1, d, 3 * d);
    add_bias_rows(qkv, view(p, o.b_qkv, 3 * sz(d)), 1, 3 * d);
    auto& keys = keys_[sz(l)];
    auto& values = values_[sz(l)];
    keys.insert(keys.end(), qkv.begin() + d, qkv.begin() + 2 * d);
    values.insert(values.end(), qkv.begin() + 2 * d, qkv.end());
    for (int hh = 0; hh < H; ++hh) {
      attend_row(&qkv[sz(hh) * sz(hd)], keys.data() + sz(hh) * sz(hd), values.data() + sz(hh) * sz(hd), sz(d),
                 static_cast<int>(pos), hd, scale, prob.data(), &att[sz(hh) * sz(hd)]);
    }
    gemm_nn(Exec::Serial, att, view(p, o.w_o, sz(d) * sz(d)), tmp, 1, d, d);
    add_bias_rows(tmp, view(p, o.b_o, sz(d)), 1, d);
    for (int j = 0; j < d; ++j) x[sz(j)] += tmp[sz(j)];
    layer_norm_row(x.data(), &p[o.ln2_g], &p[o.ln2_b], d, xhat.data(), rstd, h.data());
    gemm_nn(Exec::Serial, h, view(p, o.w1, sz(d) * sz(f)), u, 1, d, f);
    add_bias_rows(u, view(p, o.b1, sz(f)), 1, f);
    for (auto& e : u) e = gelu(e);
    gemm_nn(Exec::Serial, u, view(p, o.w2, sz(f) * sz(d)), tmp, 1, f, d);
    add_bias_rows(tmp, view(p, o.b2, sz(d)), 1, d);
    for (int j = 0; j < d; ++j) x[sz(j)] += tmp[sz(j)];
  }
  layer_norm_row(x.data(), &p[lay.lnf_g], &p[lay.lnf_b], d, xhat.data(), rstd, h.data());
  logits_.resize(sz(V));
  gemm_nn(Exec::Serial, h, view(p, lay.w_out, sz(d) * sz(V)), logits_, 1, d, V);
  add_bias_rows(logits_, view(p, lay.b_out, sz(V)), 1, V);
  ++length_;
  return logits_;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

}  // namespace depo

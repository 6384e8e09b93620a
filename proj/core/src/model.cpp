#include "tegu/model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>

#include "tegu/rng.hpp"

namespace tegu {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;
using HeadMap = Eigen::Map<Mat, 0, Stride>;
using ConstHeadMap = Eigen::Map<const Mat, 0, Stride>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

ConstHeadMap head_view(const DenseArray& a, std::size_t rows, std::size_t d_model,
                       std::size_t head, std::size_t d_head) {
  return ConstHeadMap(a.data() + head * d_head, static_cast<Eigen::Index>(rows),
                      static_cast<Eigen::Index>(d_head), Stride(static_cast<Eigen::Index>(d_model)));
}

HeadMap head_view(DenseArray& a, std::size_t rows, std::size_t d_model, std::size_t head,
                  std::size_t d_head) {
  return HeadMap(a.data() + head * d_head, static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(d_head), Stride(static_cast<Eigen::Index>(d_model)));
}

void check_tokens(const ModelConfig& cfg, const std::vector<std::int32_t>& tokens) {
  if (tokens.size() > cfg.max_seq_len) {
    throw ValueError("sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= cfg.vocab_size) {
      throw ValueError("token id " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " out of range [0, " +
                       std::to_string(cfg.vocab_size) + ")");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (vocab_size < 2) {
    throw ConfigError("vocab_size must be >= 2, got " + std::to_string(vocab_size));
  }
  if (max_seq_len < 8) {
    throw ConfigError("max_seq_len must be >= 8, got " + std::to_string(max_seq_len));
  }
}

std::vector<NamedParamView> named_params(BackboneParams& p) {
  std::vector<NamedParamView> out;
  out.push_back({"tok_emb", &p.tok_emb});
  out.push_back({"pos_emb", &p.pos_emb});
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    LayerParams& l = p.layers[i];
    out.push_back({prefix + "attn_norm.gain", &l.attn_norm_gain});
    out.push_back({prefix + "attn.wq", &l.wq});
    out.push_back({prefix + "attn.wk", &l.wk});
    out.push_back({prefix + "attn.wv", &l.wv});
    out.push_back({prefix + "attn.wo", &l.wo});
    out.push_back({prefix + "ffn_norm.gain", &l.ffn_norm_gain});
    out.push_back({prefix + "ffn.w_gate", &l.w_gate});
    out.push_back({prefix + "ffn.w_up", &l.w_up});
    out.push_back({prefix + "ffn.w_down", &l.w_down});
  }
  out.push_back({"final_norm.gain", &p.final_norm_gain});
  out.push_back({"lm_head", &p.lm_head});
  return out;
}

std::vector<ConstNamedParamView> named_params(const BackboneParams& p) {
  auto views = named_params(const_cast<BackboneParams&>(p));
  std::vector<ConstNamedParamView> out;
  out.reserve(views.size());
  for (auto& v : views) out.push_back({v.name, v.array});
  return out;
}

BackboneParams init_backbone(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff();
  BackboneParams p;
  p.tok_emb = rng.normal_array({cfg.vocab_size, d}, 0.0, 0.02);
  p.pos_emb = rng.normal_array({cfg.max_seq_len, d}, 0.0, 0.02);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.attn_norm_gain = DenseArray::full({d}, 1.0);
    l.wq = rng.normal_array({d, d}, 0.0, 0.02);
    l.wk = rng.normal_array({d, d}, 0.0, 0.02);
    l.wv = rng.normal_array({d, d}, 0.0, 0.02);
    l.wo = rng.normal_array({d, d}, 0.0, 0.02);
    l.ffn_norm_gain = DenseArray::full({d}, 1.0);
    l.w_gate = rng.normal_array({d, ff}, 0.0, 0.02);
    l.w_up = rng.normal_array({d, ff}, 0.0, 0.02);
    l.w_down = rng.normal_array({ff, d}, 0.0, 0.02);
  }
  p.final_norm_gain = DenseArray::full({d}, 1.0);
  p.lm_head = rng.normal_array({d, cfg.vocab_size}, 0.0, 0.02);
  return p;
}

BackboneParams zeros_like(const BackboneParams& p) {
  BackboneParams z;
  z.tok_emb = DenseArray(p.tok_emb.shape());
  z.pos_emb = DenseArray(p.pos_emb.shape());
  z.layers.resize(p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const LayerParams& l = p.layers[i];
    LayerParams& o = z.layers[i];
    o.attn_norm_gain = DenseArray(l.attn_norm_gain.shape());
    o.wq = DenseArray(l.wq.shape());
    o.wk = DenseArray(l.wk.shape());
    o.wv = DenseArray(l.wv.shape());
    o.wo = DenseArray(l.wo.shape());
    o.ffn_norm_gain = DenseArray(l.ffn_norm_gain.shape());
    o.w_gate = DenseArray(l.w_gate.shape());
    o.w_up = DenseArray(l.w_up.shape());
    o.w_down = DenseArray(l.w_down.shape());
  }
  z.final_norm_gain = DenseArray(p.final_norm_gain.shape());
  z.lm_head = DenseArray(p.lm_head.shape());
  return z;
}

std::size_t param_count(const BackboneParams& p) {
  std::size_t n = 0;
  for (const auto& v : named_params(p)) n += v.array->numel();
  return n;
}

ForwardActivations backbone_forward_cached(const BackboneParams& p, const ModelConfig& cfg,
                                           const std::vector<std::int32_t>& tokens) {
  check_tokens(cfg, tokens);
  const std::size_t T = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t H = cfg.n_heads;
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardActivations acts;
  acts.tokens = tokens;
  DenseArray x = embedding_lookup(p.tok_emb, tokens);
  for (std::size_t i = 0; i < T; ++i) {
    const double* pe = p.pos_emb.data() + i * d;
    double* xi = x.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) xi[j] += pe[j];
  }

  acts.layers.resize(cfg.n_layers);
  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const LayerParams& l = p.layers[li];
    LayerActivations& la = acts.layers[li];
    la.x_in = x;
    la.x_norm1 = rmsnorm(la.x_in, l.attn_norm_gain, cfg.norm_eps);
    la.q = matmul(la.x_norm1, l.wq);
    la.k = matmul(la.x_norm1, l.wk);
    la.v = matmul(la.x_norm1, l.wv);

    la.attn_concat = DenseArray({T, d});
    la.attn_probs.resize(H);
    for (std::size_t h = 0; h < H; ++h) {
      auto qh = head_view(la.q, T, d, h, dh);
      auto kh = head_view(la.k, T, d, h, dh);
      auto vh = head_view(la.v, T, d, h, dh);
      Mat scores = qh * kh.transpose() * inv_sqrt_dh;  // T x T
      // causal softmax over columns 0..row
      DenseArray probs({T, T});
      for (std::size_t i = 0; i < T; ++i) {
        double m = scores(static_cast<Eigen::Index>(i), 0);
        for (std::size_t j = 1; j <= i; ++j)
          m = std::max(m, scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double e =
              std::exp(scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - m);
          probs.at(i, j) = e;
          sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j <= i; ++j) probs.at(i, j) *= inv;
        for (std::size_t j = i + 1; j < T; ++j) probs.at(i, j) = 0.0;
      }
      auto oh = head_view(la.attn_concat, T, d, h, dh);
      oh.noalias() = ConstMatMap(probs.data(), static_cast<Eigen::Index>(T),
                                 static_cast<Eigen::Index>(T)) *
                     vh;
      la.attn_probs[h] = std::move(probs);
    }

    DenseArray attn_out = matmul(la.attn_concat, l.wo);
    la.x_mid = add(la.x_in, attn_out);
    la.x_norm2 = rmsnorm(la.x_mid, l.ffn_norm_gain, cfg.norm_eps);
    la.gate = matmul(la.x_norm2, l.w_gate);
    la.up = matmul(la.x_norm2, l.w_up);
    la.act = mul(silu(la.gate), la.up);
    DenseArray ffn_out = matmul(la.act, l.w_down);
    x = add(la.x_mid, ffn_out);
  }

  acts.x_final = x;
  acts.hidden = rmsnorm(acts.x_final, p.final_norm_gain, cfg.norm_eps);
  acts.logits = matmul(acts.hidden, p.lm_head);
  return acts;
}

ForwardResult backbone_forward(const BackboneParams& p, const ModelConfig& cfg,
                               const std::vector<std::int32_t>& tokens) {
  ForwardActivations acts = backbone_forward_cached(p, cfg, tokens);
  return {std::move(acts.hidden), std::move(acts.logits)};
}

void backbone_backward(const BackboneParams& p, const ModelConfig& cfg,
                       const ForwardActivations& acts, const DenseArray& grad_logits,
                       BackboneParams& grads) {
  const std::size_t T = acts.tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t H = cfg.n_heads;
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // logits = hidden * lm_head
  auto [dhidden, dlm] = matmul_backward(grad_logits, acts.hidden, p.lm_head);
  axpy(1.0, dlm, grads.lm_head);

  RmsnormGrads fg = rmsnorm_backward(dhidden, acts.x_final, p.final_norm_gain, cfg.norm_eps);
  axpy(1.0, fg.dgain, grads.final_norm_gain);
  DenseArray dx = std::move(fg.dx);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const LayerParams& l = p.layers[li];
    const LayerActivations& la = acts.layers[li];
    LayerParams& gl = grads.layers[li];

    // x_out = x_mid + act * w_down
    auto [dact, dw_down] = matmul_backward(dx, la.act, l.w_down);
    axpy(1.0, dw_down, gl.w_down);
    DenseArray dx_mid = dx;  // residual branch

    DenseArray silu_gate = silu(la.gate);
    auto [dsilu, dup] = mul_backward(dact, silu_gate, la.up);
    DenseArray dgate = silu_backward(dsilu, la.gate);

    auto [dxn2_a, dw_gate] = matmul_backward(dgate, la.x_norm2, l.w_gate);
    auto [dxn2_b, dw_up] = matmul_backward(dup, la.x_norm2, l.w_up);
    axpy(1.0, dw_gate, gl.w_gate);
    axpy(1.0, dw_up, gl.w_up);
    DenseArray dx_norm2 = add(dxn2_a, dxn2_b);

    RmsnormGrads ng2 = rmsnorm_backward(dx_norm2, la.x_mid, l.ffn_norm_gain, cfg.norm_eps);
    axpy(1.0, ng2.dgain, gl.ffn_norm_gain);
    axpy(1.0, ng2.dx, dx_mid);

    // x_mid = x_in + attn_concat * wo
    auto [dconcat, dwo] = matmul_backward(dx_mid, la.attn_concat, l.wo);
    axpy(1.0, dwo, gl.wo);
    DenseArray dx_in = dx_mid;  // residual branch

    DenseArray dq({T, d}), dk({T, d}), dv({T, d});
    for (std::size_t h = 0; h < H; ++h) {
      auto qh = head_view(la.q, T, d, h, dh);
      auto kh = head_view(la.k, T, d, h, dh);
      auto vh = head_view(la.v, T, d, h, dh);
      auto doh = head_view(dconcat, T, d, h, dh);
      ConstMatMap ph(la.attn_probs[h].data(), static_cast<Eigen::Index>(T),
                     static_cast<Eigen::Index>(T));

      Mat dP = doh * vh.transpose();        // T x T
      Mat dVh = ph.transpose() * Mat(doh);  // T x dh
      // softmax backward row-wise: dS = P .* (dP - rowsum(dP .* P))
      Mat dS(T, T);
      for (std::size_t i = 0; i < T; ++i) {
        double rowdot = 0.0;
        for (std::size_t j = 0; j <= i; ++j)
          rowdot += dP(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                    ph(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        for (std::size_t j = 0; j < T; ++j) {
          const double pij = ph(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          dS(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              pij * (dP(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - rowdot);
        }
      }
      head_view(dq, T, d, h, dh).noalias() = dS * kh * inv_sqrt_dh;
      head_view(dk, T, d, h, dh).noalias() = dS.transpose() * qh * inv_sqrt_dh;
      head_view(dv, T, d, h, dh) = dVh;
    }

    auto [dxn1_q, dwq] = matmul_backward(dq, la.x_norm1, l.wq);
    auto [dxn1_k, dwk] = matmul_backward(dk, la.x_norm1, l.wk);
    auto [dxn1_v, dwv] = matmul_backward(dv, la.x_norm1, l.wv);
    axpy(1.0, dwq, gl.wq);
    axpy(1.0, dwk, gl.wk);
    axpy(1.0, dwv, gl.wv);
    DenseArray dx_norm1 = add(add(dxn1_q, dxn1_k), dxn1_v);

    RmsnormGrads ng1 = rmsnorm_backward(dx_norm1, la.x_in, l.attn_norm_gain, cfg.norm_eps);
    axpy(1.0, ng1.dgain, gl.attn_norm_gain);
    axpy(1.0, ng1.dx, dx_in);

    dx = std::move(dx_in);
  }

  // x0 = tok_emb[ids] + pos_emb[0..T)
  DenseArray demb = embedding_backward(dx, p.tok_emb.shape(), acts.tokens);
  axpy(1.0, demb, grads.tok_emb);
  for (std::size_t i = 0; i < T; ++i) {
    double* dst = grads.pos_emb.data() + i * d;
    const double* src = dx.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
}

KVCache::KVCache(const ModelConfig& cfg) : capacity_(cfg.max_seq_len) {
  k_.reserve(cfg.n_layers);
  v_.reserve(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    k_.emplace_back(Shape{cfg.max_seq_len, cfg.d_model});
    v_.emplace_back(Shape{cfg.max_seq_len, cfg.d_model});
  }
}

std::size_t KVCache::persistent_bytes() const {
  std::size_t n = 0;
  for (const auto& a : k_) n += a.numel();
  for (const auto& a : v_) n += a.numel();
  return n * sizeof(double);
}

StepResult backbone_step(const BackboneParams& p, const ModelConfig& cfg, std::int32_t token,
                         KVCache& cache) {
  if (cache.length() >= cache.capacity()) {
    throw ValueError("KVCache full: length " + std::to_string(cache.length()) +
                     " at capacity " + std::to_string(cache.capacity()));
  }
  check_tokens(cfg, {token});
  const std::size_t pos = cache.length();
  const std::size_t d = cfg.d_model;
  const std::size_t H = cfg.n_heads;
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  DenseArray x({1, d});
  {
    const double* te = p.tok_emb.data() + static_cast<std::size_t>(token) * d;
    const double* pe = p.pos_emb.data() + pos * d;
    for (std::size_t j = 0; j < d; ++j) x[j] = te[j] + pe[j];
  }

  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const LayerParams& l = p.layers[li];
    DenseArray xn = rmsnorm(x, l.attn_norm_gain, cfg.norm_eps);
    DenseArray q = matmul(xn, l.wq);
    DenseArray k = matmul(xn, l.wk);
    DenseArray v = matmul(xn, l.wv);

    DenseArray& kbuf = cache.keys_mut(li);
    DenseArray& vbuf = cache.vals_mut(li);
    for (std::size_t j = 0; j < d; ++j) {
      kbuf.at(pos, j) = k[j];
      vbuf.at(pos, j) = v[j];
    }

    DenseArray concat({1, d});
    const std::size_t ctx = pos + 1;
    std::vector<double> scores(ctx);
    for (std::size_t h = 0; h < H; ++h) {
      const double* qh = q.data() + h * dh;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < ctx; ++t) {
        const double* kt = kbuf.data() + t * d + h * dh;
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) dot += qh[j] * kt[j];
        scores[t] = dot * inv_sqrt_dh;
        m = std::max(m, scores[t]);
      }
      double sum = 0.0;
      for (std::size_t t = 0; t < ctx; ++t) {
        scores[t] = std::exp(scores[t] - m);
        sum += scores[t];
      }
      const double inv = 1.0 / sum;
      double* out = concat.data() + h * dh;
      for (std::size_t j = 0; j < dh; ++j) out[j] = 0.0;
      for (std::size_t t = 0; t < ctx; ++t) {
        const double w = scores[t] * inv;
        const double* vt = vbuf.data() + t * d + h * dh;
        for (std::size_t j = 0; j < dh; ++j) out[j] += w * vt[j];
      }
    }

    DenseArray attn_out = matmul(concat, l.wo);
    DenseArray x_mid = add(x, attn_out);
    DenseArray xn2 = rmsnorm(x_mid, l.ffn_norm_gain, cfg.norm_eps);
    DenseArray gate = matmul(xn2, l.w_gate);
    DenseArray up = matmul(xn2, l.w_up);
    DenseArray act = mul(silu(gate), up);
    DenseArray ffn_out = matmul(act, l.w_down);
    x = add(x_mid, ffn_out);
  }

  cache.advance();

  DenseArray hidden_row = rmsnorm(x, p.final_norm_gain, cfg.norm_eps);
  DenseArray logits_row = matmul(hidden_row, p.lm_head);

  StepResult r;
  r.hidden = DenseArray({d}, std::vector<double>(hidden_row.data(), hidden_row.data() + d));
  r.logits = DenseArray({cfg.vocab_size},
                        std::vector<double>(logits_row.data(), logits_row.data() + cfg.vocab_size));
  return r;
}

}  // namespace tegu

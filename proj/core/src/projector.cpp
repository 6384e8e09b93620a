#include "tegu/projector.hpp"

#include <cmath>

#include "tegu/ops.hpp"
#include "tegu/rng.hpp"

namespace tegu {

void ProjectorConfig::validate() const {
  if (k_max < 1) {
    throw ConfigError("projector k_max must be >= 1, got " + std::to_string(k_max));
  }
  if (d_model == 0 || d_step == 0) {
    throw ConfigError("projector dimensions must be positive");
  }
}

std::vector<NamedParamView> named_params(ProjectorParams& p) {
  return {
      {"step_emb", &p.step_emb},   {"adaln.w", &p.adaln_w}, {"norm.gain", &p.norm_gain},
      {"ffn.w_gate", &p.w_gate},   {"ffn.w_up", &p.w_up},   {"ffn.w_down", &p.w_down},
  };
}

std::vector<ConstNamedParamView> named_params(const ProjectorParams& p) {
  auto views = named_params(const_cast<ProjectorParams&>(p));
  std::vector<ConstNamedParamView> out;
  out.reserve(views.size());
  for (auto& v : views) out.push_back({v.name, v.array});
  return out;
}

ProjectorParams init_projector(const ProjectorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff();
  ProjectorParams p;
  p.step_emb = rng.normal_array({cfg.k_max, cfg.d_step}, 0.0, 0.02);
  // gamma half zero so modulation starts neutral; beta half small.
  p.adaln_w = DenseArray({cfg.d_step, 2 * d});
  for (std::size_t i = 0; i < cfg.d_step; ++i) {
    for (std::size_t j = d; j < 2 * d; ++j) p.adaln_w.at(i, j) = rng.gaussian(0.0, 0.02);
  }
  p.norm_gain = DenseArray::full({d}, 1.0);
  p.w_gate = rng.normal_array({d, ff}, 0.0, 0.02);
  p.w_up = rng.normal_array({d, ff}, 0.0, 0.02);
  p.w_down = DenseArray({ff, d});  // zero init
  return p;
}

ProjectorParams zeros_like(const ProjectorParams& p) {
  ProjectorParams z;
  z.step_emb = DenseArray(p.step_emb.shape());
  z.adaln_w = DenseArray(p.adaln_w.shape());
  z.norm_gain = DenseArray(p.norm_gain.shape());
  z.w_gate = DenseArray(p.w_gate.shape());
  z.w_up = DenseArray(p.w_up.shape());
  z.w_down = DenseArray(p.w_down.shape());
  return z;
}

std::size_t param_count(const ProjectorParams& p) {
  std::size_t n = 0;
  for (const auto& v : named_params(p)) n += v.array->numel();
  return n;
}

std::size_t analytic_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff();
  const std::size_t per_layer = 2 * d + 4 * d * d + 3 * d * ff;
  return cfg.vocab_size * d + cfg.max_seq_len * d + cfg.n_layers * per_layer + d +
         d * cfg.vocab_size;
}

std::size_t analytic_param_count(const ProjectorConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t ff = cfg.d_ff();
  return cfg.k_max * cfg.d_step + cfg.d_step * 2 * d + d + 3 * d * ff;
}

namespace {

void check_offset(const ProjectorConfig& cfg, std::size_t k) {
  if (k < 1 || k > cfg.k_max) {
    throw ValueError("offset k=" + std::to_string(k) + " outside supported range [1, " +
                     std::to_string(cfg.k_max) + "]");
  }
}

}  // namespace

ProjectorActivations cmtpp_forward_cached(const ProjectorParams& p, const ProjectorConfig& cfg,
                                          const DenseArray& h_stale, std::size_t k) {
  check_offset(cfg, k);
  if (h_stale.rank() != 2 || h_stale.cols() != cfg.d_model) {
    throw ShapeError("cmtpp: expected N x " + std::to_string(cfg.d_model) +
                     " hidden rows, got " + shape_to_string(h_stale.shape()));
  }
  h_stale.require_finite("cmtpp input");
  const std::size_t N = h_stale.rows();
  const std::size_t d = cfg.d_model;

  ProjectorActivations a;
  a.k = k;
  a.h = h_stale;
  a.hn = rmsnorm(a.h, p.norm_gain, cfg.norm_eps);

  // (gamma, beta) = e_k * adaln_w
  DenseArray ek({1, cfg.d_step},
                std::vector<double>(p.step_emb.data() + (k - 1) * cfg.d_step,
                                    p.step_emb.data() + k * cfg.d_step));
  DenseArray gb = matmul(ek, p.adaln_w);  // 1 x 2d
  a.gamma = DenseArray({d}, std::vector<double>(gb.data(), gb.data() + d));
  a.beta = DenseArray({d}, std::vector<double>(gb.data() + d, gb.data() + 2 * d));

  a.h_tilde = DenseArray({N, d});
  for (std::size_t r = 0; r < N; ++r) {
    const double* hn = a.hn.data() + r * d;
    double* ht = a.h_tilde.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) ht[j] = hn[j] * (1.0 + a.gamma[j]) + a.beta[j];
  }

  a.gate = matmul(a.h_tilde, p.w_gate);
  a.up = matmul(a.h_tilde, p.w_up);
  a.act = mul(silu(a.gate), a.up);
  DenseArray ffn = matmul(a.act, p.w_down);
  a.out = add(a.h, ffn);
  return a;
}

DenseArray cmtpp_forward_rows(const ProjectorParams& p, const ProjectorConfig& cfg,
                              const DenseArray& h_stale, std::size_t k) {
  return cmtpp_forward_cached(p, cfg, h_stale, k).out;
}

DenseArray cmtpp_forward(const ProjectorParams& p, const ProjectorConfig& cfg,
                         const DenseArray& h, std::size_t k) {
  if (h.rank() != 1) {
    throw ShapeError("cmtpp_forward: expected a d-vector, got " + shape_to_string(h.shape()));
  }
  DenseArray rows({1, h.numel()}, std::vector<double>(h.values()));
  DenseArray out = cmtpp_forward_rows(p, cfg, rows, k);
  return DenseArray({h.numel()}, std::move(out.values()));
}

DenseArray amateur_logits_rows(const DenseArray& h_stale, std::size_t k,
                               const BackboneParams& backbone, const ProjectorParams& p,
                               const ProjectorConfig& cfg) {
  DenseArray out = cmtpp_forward_rows(p, cfg, h_stale, k);
  return matmul(out, backbone.lm_head);
}

LogProbVector amateur_logprobs_at(const DenseArray& h_stale, std::size_t k,
                                  const BackboneParams& backbone, const ProjectorParams& p,
                                  const ProjectorConfig& cfg) {
  DenseArray h = cmtpp_forward(p, cfg, h_stale, k);
  DenseArray row({1, h.numel()}, std::vector<double>(h.values()));
  DenseArray logits = matmul(row, backbone.lm_head);
  return log_softmax_vector(logits.values());
}

void cmtpp_backward(const ProjectorParams& p, const ProjectorConfig& cfg,
                    const ProjectorActivations& acts, const DenseArray& grad_out,
                    ProjectorParams& grads) {
  const std::size_t N = acts.h.rows();
  const std::size_t d = cfg.d_model;
  require_same_shape(grad_out, acts.out, "cmtpp_backward");

  // out = h + act * w_down; the h branch carries no trainable parameters.
  auto [dact, dw_down] = matmul_backward(grad_out, acts.act, p.w_down);
  axpy(1.0, dw_down, grads.w_down);

  DenseArray silu_gate = silu(acts.gate);
  auto [dsilu, dup] = mul_backward(dact, silu_gate, acts.up);
  DenseArray dgate = silu_backward(dsilu, acts.gate);

  auto [dht_a, dw_gate] = matmul_backward(dgate, acts.h_tilde, p.w_gate);
  auto [dht_b, dw_up] = matmul_backward(dup, acts.h_tilde, p.w_up);
  axpy(1.0, dw_gate, grads.w_gate);
  axpy(1.0, dw_up, grads.w_up);
  DenseArray dht = add(dht_a, dht_b);

  // h~ = hn (1+gamma) + beta
  DenseArray dgamma({d}), dbeta({d});
  DenseArray dhn({N, d});
  for (std::size_t r = 0; r < N; ++r) {
    const double* hn = acts.hn.data() + r * d;
    const double* g = dht.data() + r * d;
    double* dh = dhn.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      dgamma[j] += g[j] * hn[j];
      dbeta[j] += g[j];
      dh[j] = g[j] * (1.0 + acts.gamma[j]);
    }
  }

  // (gamma, beta) = e_k * adaln_w
  DenseArray dgb({1, 2 * d});
  for (std::size_t j = 0; j < d; ++j) {
    dgb[j] = dgamma[j];
    dgb[d + j] = dbeta[j];
  }
  DenseArray ek({1, cfg.d_step},
                std::vector<double>(p.step_emb.data() + (acts.k - 1) * cfg.d_step,
                                    p.step_emb.data() + acts.k * cfg.d_step));
  auto [dek, dadaln] = matmul_backward(dgb, ek, p.adaln_w);
  axpy(1.0, dadaln, grads.adaln_w);
  double* se = grads.step_emb.data() + (acts.k - 1) * cfg.d_step;
  for (std::size_t j = 0; j < cfg.d_step; ++j) se[j] += dek[j];

  RmsnormGrads ng = rmsnorm_backward(dhn, acts.h, p.norm_gain, cfg.norm_eps);
  axpy(1.0, ng.dgain, grads.norm_gain);
  // ng.dx is the gradient w.r.t. the frozen hidden input; intentionally dropped.
}

}  // namespace tegu

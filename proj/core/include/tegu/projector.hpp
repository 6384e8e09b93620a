#pragma once

#include <cstdint>
#include <vector>

#include "tegu/array.hpp"
#include "tegu/logprob.hpp"
#include "tegu/model.hpp"

namespace tegu {

struct ProjectorConfig {
  std::size_t d_model = 128;  // must match the backbone
  std::size_t d_step = 128;   // step-embedding width
  std::size_t k_max = 2;      // supported offsets are exactly 1..k_max
  double ffn_ratio = 2.7;
  double norm_eps = 1e-6;
  std::uint64_t seed = 1;

  std::size_t d_ff() const {
    return static_cast<std::size_t>(ffn_ratio * static_cast<double>(d_model) + 0.5);
  }
  void validate() const;

  bool operator==(const ProjectorConfig&) const = default;
};

// Shared conditional projector: one module for every offset, conditioned on k
// through adaLN modulation of the normalized stale hidden state.
struct ProjectorParams {
  DenseArray step_emb;    // k_max x d_step
  DenseArray adaln_w;     // d_step x 2d, output split as [gamma | beta]
  DenseArray norm_gain;   // d
  DenseArray w_gate, w_up;  // d x d_ff
  DenseArray w_down;        // d_ff x d, zero at init
};

std::vector<NamedParamView> named_params(ProjectorParams& p);
std::vector<ConstNamedParamView> named_params(const ProjectorParams& p);

ProjectorParams init_projector(const ProjectorConfig& cfg);
ProjectorParams zeros_like(const ProjectorParams& p);
std::size_t param_count(const ProjectorParams& p);

// Analytic parameter counts, for sizing claims without allocating.
std::size_t analytic_param_count(const ModelConfig& cfg);
std::size_t analytic_param_count(const ProjectorConfig& cfg);

// out = h + W_down(silu(W_gate h~) . W_up h~),  h~ = rmsnorm(h)(1+gamma_k) + beta_k.
// Rows of `h_stale` are independent stale hidden states, all at offset k.
DenseArray cmtpp_forward_rows(const ProjectorParams& p, const ProjectorConfig& cfg,
                              const DenseArray& h_stale, std::size_t k);

// Single-vector convenience.
DenseArray cmtpp_forward(const ProjectorParams& p, const ProjectorConfig& cfg,
                         const DenseArray& h, std::size_t k);

// log_softmax(W_LM(cMTPP(h_stale, k)))
LogProbVector amateur_logprobs_at(const DenseArray& h_stale, std::size_t k,
                                  const BackboneParams& backbone, const ProjectorParams& p,
                                  const ProjectorConfig& cfg);

// N x V amateur logits for rows of stale hiddens.
DenseArray amateur_logits_rows(const DenseArray& h_stale, std::size_t k,
                               const BackboneParams& backbone, const ProjectorParams& p,
                               const ProjectorConfig& cfg);

struct ProjectorActivations {
  std::size_t k = 0;
  DenseArray h;            // N x d input rows
  DenseArray hn;           // N x d normalized
  DenseArray gamma, beta;  // d
  DenseArray h_tilde;      // N x d
  DenseArray gate, up, act;  // N x d_ff
  DenseArray out;            // N x d
};
ProjectorActivations cmtpp_forward_cached(const ProjectorParams& p, const ProjectorConfig& cfg,
                                          const DenseArray& h_stale, std::size_t k);

// Accumulates projector gradients given dL/d(out). Gradients never flow into
// the backbone: the stale hidden is treated as a constant input.
void cmtpp_backward(const ProjectorParams& p, const ProjectorConfig& cfg,
                    const ProjectorActivations& acts, const DenseArray& grad_out,
                    ProjectorParams& grads);

}  // namespace tegu

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tegu/array.hpp"
#include "tegu/ops.hpp"

namespace tegu {

struct ModelConfig {
  std::size_t vocab_size = 256;  // byte-level
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  double ffn_ratio = 2.7;
  double norm_eps = 1e-6;
  std::uint64_t seed = 1;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t d_ff() const {
    return static_cast<std::size_t>(ffn_ratio * static_cast<double>(d_model) + 0.5);
  }
  // Enforces: d_model divisible by n_heads, vocab >= 2, max_seq_len >= 8.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  DenseArray attn_norm_gain;  // d
  DenseArray wq, wk, wv, wo;  // d x d
  DenseArray ffn_norm_gain;   // d
  DenseArray w_gate, w_up;    // d x d_ff
  DenseArray w_down;          // d_ff x d
};

// The frozen expert. lm_head is bias-free so a zero hidden state maps to the
// uniform distribution.
struct BackboneParams {
  DenseArray tok_emb;  // V x d
  DenseArray pos_emb;  // L x d (learned positions)
  std::vector<LayerParams> layers;
  DenseArray final_norm_gain;  // d
  DenseArray lm_head;          // d x V, no bias
};

struct NamedParamView {
  std::string name;
  DenseArray* array;
};
struct ConstNamedParamView {
  std::string name;
  const DenseArray* array;
};

std::vector<NamedParamView> named_params(BackboneParams& p);
std::vector<ConstNamedParamView> named_params(const BackboneParams& p);

BackboneParams init_backbone(const ModelConfig& cfg);
BackboneParams zeros_like(const BackboneParams& p);
std::size_t param_count(const BackboneParams& p);

// Per-layer key/value history for one decode session. Buffers are
// preallocated at max_seq_len; append-only within a session.
class KVCache {
public:
  explicit KVCache(const ModelConfig& cfg);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t persistent_bytes() const;

  // Rows [0, length) of layer `l`.
  const DenseArray& keys(std::size_t l) const { return k_[l]; }
  const DenseArray& vals(std::size_t l) const { return v_[l]; }

  // Used by backbone_step only: writes the row at the current position, then
  // advance() commits it.
  DenseArray& keys_mut(std::size_t l) { return k_[l]; }
  DenseArray& vals_mut(std::size_t l) { return v_[l]; }
  void advance() { ++length_; }

private:
  std::vector<DenseArray> k_, v_;  // per layer, L x d
  std::size_t length_ = 0;
  std::size_t capacity_ = 0;
};

// Full-sequence forward. hidden[i] is the post-final-norm state after
// consuming tokens[0..i]; logits = hidden * lm_head. Strictly causal.
struct ForwardResult {
  DenseArray hidden;  // T x d
  DenseArray logits;  // T x V
};
ForwardResult backbone_forward(const BackboneParams& p, const ModelConfig& cfg,
                               const std::vector<std::int32_t>& tokens);

// Forward keeping every intermediate needed by the backward pass.
struct LayerActivations {
  DenseArray x_in;      // T x d
  DenseArray x_norm1;   // T x d
  DenseArray q, k, v;   // T x d
  std::vector<DenseArray> attn_probs;  // per head, T x T
  DenseArray attn_concat;              // T x d
  DenseArray x_mid;     // T x d
  DenseArray x_norm2;   // T x d
  DenseArray gate, up, act;  // T x d_ff
};
struct ForwardActivations {
  std::vector<std::int32_t> tokens;
  std::vector<LayerActivations> layers;
  DenseArray x_final;  // T x d, pre final norm
  DenseArray hidden;   // T x d, post final norm
  DenseArray logits;   // T x V
};
ForwardActivations backbone_forward_cached(const BackboneParams& p, const ModelConfig& cfg,
                                           const std::vector<std::int32_t>& tokens);

// Accumulates parameter gradients for one sequence given dL/dlogits.
void backbone_backward(const BackboneParams& p, const ModelConfig& cfg,
                       const ForwardActivations& acts, const DenseArray& grad_logits,
                       BackboneParams& grads);

// Incremental single-token forward; equals the matching slice of
// backbone_forward on the concatenated sequence.
struct StepResult {
  DenseArray hidden;  // d
  DenseArray logits;  // V
};
StepResult backbone_step(const BackboneParams& p, const ModelConfig& cfg, std::int32_t token,
                         KVCache& cache);

}  // namespace tegu

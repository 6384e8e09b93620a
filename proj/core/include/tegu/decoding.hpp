#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tegu/logprob.hpp"
#include "tegu/model.hpp"
#include "tegu/projector.hpp"

namespace tegu {

enum class Sampling { kArgmax, kCategorical };

struct GuidanceConfig {
  std::vector<std::size_t> offsets = {1};  // K, each >= 1
  std::vector<double> weights = {1.0};     // normalized w_k
  double alpha = 0.2;                      // guidance strength
  double tau = 0.1;                        // plausibility threshold
  std::size_t max_new_tokens = 64;
  Sampling sampling = Sampling::kArgmax;
  std::uint64_t sample_seed = 1;

  std::size_t max_offset() const;
  void validate(std::size_t projector_k_max) const;
};

// Bounded cache of the most recent final-layer hidden states, keyed by
// position. Capacity is max(K) for the decode session.
class HiddenRing {
public:
  explicit HiddenRing(std::size_t capacity);

  // Positions must arrive strictly increasing; evicts the oldest entry once
  // the ring is full.
  void push(std::size_t position, DenseArray hidden);
  const DenseArray* find(long long position) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::vector<std::size_t> positions() const;
  std::size_t capacity_bytes(std::size_t d_model) const {
    return capacity_ * d_model * sizeof(double);
  }

private:
  std::size_t capacity_;
  std::deque<std::pair<std::size_t, DenseArray>> entries_;
};

struct StepTrace {
  std::size_t step = 0;  // index of the emitted token within the continuation
  std::int32_t chosen_id = 0;
  double logp_exp_chosen = 0.0;
  // Aligned with the configured offsets; NaN where the offset was dropped
  // during warm-up (exported as null).
  std::vector<double> logp_amt_chosen_per_k;
  std::size_t masked_count = 0;
  double guided_chosen = 0.0;
  double entropy_exp = 0.0;
  std::uint64_t ops_backbone = 0;   // cumulative, generation phase
  std::uint64_t ops_projector = 0;  // cumulative
  std::vector<std::pair<std::int32_t, double>> top_expert;  // top-5 (id, logp)
};

struct DecodeTrace {
  std::vector<StepTrace> steps;
  std::uint64_t prefill_backbone_steps = 0;
  std::uint64_t ops_backbone = 0;   // generation-phase backbone forwards
  std::uint64_t ops_projector = 0;  // projector forwards
  std::size_t persistent_state_bytes = 0;  // params + caches held for the session
  double generation_seconds = 0.0;

  std::size_t tokens() const { return steps.size(); }
  double mean_ms_per_token() const {
    return steps.empty() ? 0.0 : 1e3 * generation_seconds / static_cast<double>(steps.size());
  }
};

struct DecodeResult {
  std::vector<std::int32_t> tokens;  // prompt followed by the continuation
  DecodeTrace trace;
};

// Weighted LSE mixture of per-offset amateur log-probs (Bi-step when a single
// offset carries weight 1).
LogProbVector aggregate_amateur(const std::vector<LogProbVector>& per_offset_logps,
                                const std::vector<double>& logweights);

// V(x) = logp_exp + alpha (logp_exp - logp_amt); verified against the
// algebraically identical (1+alpha) logp_exp - alpha logp_amt within 1e-12.
std::vector<double> guided_scores(const LogProbVector& logp_exp, const LogProbVector& logp_amt,
                                  double alpha);

struct ApcResult {
  std::vector<double> scores;  // failing entries set to -inf
  std::size_t masked_count = 0;
};

// Masks tokens with P_exp(x) < tau * max_v P_exp(v). The expert argmax always
// survives; tau = 0 is a no-op.
ApcResult apc_mask(const std::vector<double>& scores, const std::vector<double>& p_exp,
                   double tau);

// Argmax expert decoding (ties broken toward the lowest token id).
DecodeResult greedy_decode(const std::vector<std::int32_t>& prompt, const BackboneParams& backbone,
                           const ModelConfig& mcfg, std::size_t max_new_tokens);

// Temporal guidance: one backbone step and |K| projector calls per token,
// self-contrasting against stale-state predictions.
DecodeResult tegu_decode(const std::vector<std::int32_t>& prompt, const BackboneParams& backbone,
                         const ModelConfig& mcfg, const ProjectorParams& projector,
                         const ProjectorConfig& pcfg, const GuidanceConfig& cfg);

// Standard two-model contrastive decoding (expert vs a separate amateur
// checkpoint); two backbone steps per token.
DecodeResult cd_decode(const std::vector<std::int32_t>& prompt, const BackboneParams& expert,
                       const ModelConfig& expert_cfg, const BackboneParams& amateur,
                       const ModelConfig& amateur_cfg, double alpha, double tau,
                       std::size_t max_new_tokens,
                       Sampling sampling = Sampling::kArgmax, std::uint64_t sample_seed = 1);

// JSON-lines export, one record per emitted token.
void write_trace_jsonl(const std::string& path, const DecodeTrace& trace);

}  // namespace tegu

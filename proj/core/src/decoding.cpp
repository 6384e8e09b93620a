#include "tegu/decoding.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "tegu/checkpoint.hpp"
#include "tegu/rng.hpp"

namespace tegu {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t argmax_lowest_id(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::int32_t select_token(const std::vector<double>& scores, Sampling sampling, Rng& rng) {
  if (sampling == Sampling::kArgmax) {
    return static_cast<std::int32_t>(argmax_lowest_id(scores));
  }
  // categorical over the surviving (finite) entries
  double m = kNegInf;
  for (double s : scores) m = std::max(m, s);
  std::vector<double> w(scores.size(), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] != kNegInf) w[i] = std::exp(scores[i] - m);
  }
  return static_cast<std::int32_t>(rng.categorical(w));
}

std::vector<std::pair<std::int32_t, double>> top_k_logps(const LogProbVector& lp, std::size_t k) {
  std::vector<std::int32_t> ids(lp.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i);
  const std::size_t n = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](std::int32_t a, std::int32_t b) {
                      if (lp[static_cast<std::size_t>(a)] != lp[static_cast<std::size_t>(b)])
                        return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)];
                      return a < b;
                    });
  std::vector<std::pair<std::int32_t, double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(ids[i], lp[static_cast<std::size_t>(ids[i])]);
  return out;
}

void check_context_budget(std::size_t prompt_len, std::size_t max_new, std::size_t max_seq_len) {
  if (prompt_len == 0) throw ValueError("decode: prompt must contain at least one token");
  if (prompt_len + max_new > max_seq_len) {
    throw ValueError("decode: prompt length " + std::to_string(prompt_len) + " + max_new " +
                     std::to_string(max_new) + " exceeds context budget " +
                     std::to_string(max_seq_len));
  }
}

double entropy_from_logps(const LogProbVector& lp) {
  double h = 0.0;
  for (double x : lp.values) {
    if (x != kNegInf) {
      const double p = std::exp(x);
      if (p > 0.0) h -= p * x;
    }
  }
  return std::max(h, 0.0);
}

}  // namespace

std::size_t GuidanceConfig::max_offset() const {
  std::size_t m = 0;
  for (std::size_t k : offsets) m = std::max(m, k);
  return m;
}

void GuidanceConfig::validate(std::size_t projector_k_max) const {
  if (offsets.empty()) throw ConfigError("guidance offsets must be non-empty");
  if (offsets.size() != weights.size()) {
    throw ConfigError("guidance offsets and weights differ in length: " +
                      std::to_string(offsets.size()) + " vs " + std::to_string(weights.size()));
  }
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("guidance weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("guidance weights must sum to 1, got " + std::to_string(sum));
  }
  for (std::size_t k : offsets) {
    if (k < 1) throw ConfigError("guidance offsets must be >= 1");
    if (k > projector_k_max) {
      throw ConfigError("guidance offset " + std::to_string(k) + " exceeds projector k_max " +
                        std::to_string(projector_k_max));
    }
  }
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0, got " + std::to_string(alpha));
  if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must be in [0, 1], got " + std::to_string(tau));
}

HiddenRing::HiddenRing(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ValueError("HiddenRing capacity must be >= 1");
}

void HiddenRing::push(std::size_t position, DenseArray hidden) {
  if (!entries_.empty() && position <= entries_.back().first) {
    throw ValueError("HiddenRing: position " + std::to_string(position) +
                     " not increasing past " + std::to_string(entries_.back().first));
  }
  entries_.emplace_back(position, std::move(hidden));
  if (entries_.size() > capacity_) entries_.pop_front();
}

const DenseArray* HiddenRing::find(long long position) const {
  if (position < 0) return nullptr;
  for (const auto& [pos, h] : entries_) {
    if (static_cast<long long>(pos) == position) return &h;
  }
  return nullptr;
}

std::vector<std::size_t> HiddenRing::positions() const {
  std::vector<std::size_t> out;
  out.reserve(entries_.size());
  for (const auto& [pos, h] : entries_) out.push_back(pos);
  return out;
}

LogProbVector aggregate_amateur(const std::vector<LogProbVector>& per_offset_logps,
                                const std::vector<double>& logweights) {
  return weighted_logsumexp(per_offset_logps, logweights);
}

std::vector<double> guided_scores(const LogProbVector& logp_exp, const LogProbVector& logp_amt,
                                  double alpha) {
  if (alpha < 0.0) throw ValueError("guided_scores: alpha must be >= 0");
  if (logp_exp.size() != logp_amt.size()) {
    throw ShapeError("guided_scores: expert length " + std::to_string(logp_exp.size()) +
                     " vs amateur length " + std::to_string(logp_amt.size()));
  }
  std::vector<double> v(logp_exp.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = logp_exp[i] + alpha * (logp_exp[i] - logp_amt[i]);
    const double alt = (1.0 + alpha) * logp_exp[i] - alpha * logp_amt[i];
    if (std::abs(v[i] - alt) > 1e-12) {
      throw ValueError("guided_scores: algebraic forms disagree by " +
                       std::to_string(std::abs(v[i] - alt)) + " at index " + std::to_string(i));
    }
  }
  return v;
}

ApcResult apc_mask(const std::vector<double>& scores, const std::vector<double>& p_exp,
                   double tau) {
  if (scores.size() != p_exp.size()) {
    throw ShapeError("apc_mask: scores length " + std::to_string(scores.size()) +
                     " vs p_exp length " + std::to_string(p_exp.size()));
  }
  ApcResult r;
  r.scores = scores;
  if (tau <= 0.0) return r;
  double pmax = 0.0;
  for (double p : p_exp) pmax = std::max(pmax, p);
  const double cutoff = tau * pmax;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (p_exp[i] < cutoff) {
      r.scores[i] = kNegInf;
      ++r.masked_count;
    }
  }
  return r;
}

DecodeResult greedy_decode(const std::vector<std::int32_t>& prompt, const BackboneParams& backbone,
                           const ModelConfig& mcfg, std::size_t max_new_tokens) {
  check_context_budget(prompt.size(), max_new_tokens, mcfg.max_seq_len);
  DecodeResult out;
  out.tokens = prompt;
  KVCache cache(mcfg);
  out.trace.persistent_state_bytes = param_bytes(backbone) + cache.persistent_bytes();

  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
    backbone_step(backbone, mcfg, prompt[i], cache);
    ++out.trace.prefill_backbone_steps;
  }
  if (max_new_tokens == 0) return out;

  const auto start = Clock::now();
  std::int32_t feed = prompt.back();
  for (std::size_t n = 0; n < max_new_tokens; ++n) {
    StepResult sr = backbone_step(backbone, mcfg, feed, cache);
    ++out.trace.ops_backbone;
    LogProbVector lp = log_softmax_vector(sr.logits.values());

    StepTrace st;
    st.step = n;
    st.chosen_id = static_cast<std::int32_t>(argmax_lowest_id(sr.logits.values()));
    st.logp_exp_chosen = lp[static_cast<std::size_t>(st.chosen_id)];
    st.guided_chosen = st.logp_exp_chosen;
    st.entropy_exp = entropy_from_logps(lp);
    st.ops_backbone = out.trace.ops_backbone;
    st.ops_projector = 0;
    st.top_expert = top_k_logps(lp, 5);
    out.trace.steps.push_back(std::move(st));

    out.tokens.push_back(out.trace.steps.back().chosen_id);
    feed = out.trace.steps.back().chosen_id;
  }
  out.trace.generation_seconds = seconds_since(start);
  return out;
}

DecodeResult tegu_decode(const std::vector<std::int32_t>& prompt, const BackboneParams& backbone,
                         const ModelConfig& mcfg, const ProjectorParams& projector,
                         const ProjectorConfig& pcfg, const GuidanceConfig& cfg) {
  cfg.validate(pcfg.k_max);
  check_context_budget(prompt.size(), cfg.max_new_tokens, mcfg.max_seq_len);

  DecodeResult out;
  out.tokens = prompt;
  KVCache cache(mcfg);
  HiddenRing ring(cfg.max_offset());
  out.trace.persistent_state_bytes = param_bytes(backbone) + cache.persistent_bytes() +
                                     param_bytes(projector) +
                                     ring.capacity_bytes(mcfg.d_model);
  Rng rng(cfg.sample_seed);
  std::vector<double> logw(cfg.weights.size());
  for (std::size_t i = 0; i < cfg.weights.size(); ++i) {
    logw[i] = cfg.weights[i] > 0.0 ? std::log(cfg.weights[i]) : kNegInf;
  }

  // Prefill: hidden states of all but the last prompt token enter the ring.
  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
    StepResult sr = backbone_step(backbone, mcfg, prompt[i], cache);
    ++out.trace.prefill_backbone_steps;
    ring.push(i, std::move(sr.hidden));
  }
  if (cfg.max_new_tokens == 0) return out;

  const auto start = Clock::now();
  std::int32_t feed = prompt.back();
  for (std::size_t n = 0; n < cfg.max_new_tokens; ++n) {
    const std::size_t t = prompt.size() + n;  // position of the token being emitted
    StepResult sr = backbone_step(backbone, mcfg, feed, cache);
    ++out.trace.ops_backbone;
    LogProbVector logp_exp = log_softmax_vector(sr.logits.values());

    StepTrace st;
    st.step = n;
    st.logp_amt_chosen_per_k.assign(cfg.offsets.size(),
                                    std::numeric_limits<double>::quiet_NaN());

    // Amateur predictions from stale states still in the ring. Offsets whose
    // state precedes the first cached position are dropped and the remaining
    // weights renormalized.
    std::vector<LogProbVector> amateurs;
    std::vector<double> active_logw;
    std::vector<std::size_t> active_idx;
    for (std::size_t ki = 0; ki < cfg.offsets.size(); ++ki) {
      const long long pos = static_cast<long long>(t) - 1 - static_cast<long long>(cfg.offsets[ki]);
      const DenseArray* h = ring.find(pos);
      if (h == nullptr || cfg.weights[ki] <= 0.0) continue;
      amateurs.push_back(amateur_logprobs_at(*h, cfg.offsets[ki], backbone, projector, pcfg));
      ++out.trace.ops_projector;
      active_logw.push_back(logw[ki]);
      active_idx.push_back(ki);
    }

    std::vector<double> scores;
    if (amateurs.empty()) {
      // Warm-up degenerate case: pure expert step.
      scores = logp_exp.values;
    } else {
      const double logz = logsumexp(active_logw);
      for (double& lw : active_logw) lw -= logz;
      LogProbVector logp_amt = aggregate_amateur(amateurs, active_logw);
      for (std::size_t a = 0; a < active_idx.size(); ++a) {
        st.logp_amt_chosen_per_k[active_idx[a]] = 0.0;  // patched after selection
      }
      scores = guided_scores(logp_exp, logp_amt, cfg.alpha);
    }

    std::vector<double> p_exp(logp_exp.size());
    for (std::size_t i = 0; i < p_exp.size(); ++i) p_exp[i] = std::exp(logp_exp[i]);
    ApcResult masked = apc_mask(scores, p_exp, cfg.tau);

    const std::int32_t chosen = select_token(masked.scores, cfg.sampling, rng);
    st.chosen_id = chosen;
    st.logp_exp_chosen = logp_exp[static_cast<std::size_t>(chosen)];
    for (std::size_t a = 0; a < active_idx.size(); ++a) {
      st.logp_amt_chosen_per_k[active_idx[a]] = amateurs[a][static_cast<std::size_t>(chosen)];
    }
    st.masked_count = masked.masked_count;
    st.guided_chosen = masked.scores[static_cast<std::size_t>(chosen)];
    st.entropy_exp = entropy_from_logps(logp_exp);
    st.ops_backbone = out.trace.ops_backbone;
    st.ops_projector = out.trace.ops_projector;
    st.top_expert = top_k_logps(logp_exp, 5);
    out.trace.steps.push_back(std::move(st));

    // Cache h_{t-1} after the amateurs consumed their older states.
    ring.push(t - 1, std::move(sr.hidden));

    out.tokens.push_back(chosen);
    feed = chosen;
  }
  out.trace.generation_seconds = seconds_since(start);
  return out;
}

DecodeResult cd_decode(const std::vector<std::int32_t>& prompt, const BackboneParams& expert,
                       const ModelConfig& expert_cfg, const BackboneParams& amateur,
                       const ModelConfig& amateur_cfg, double alpha, double tau,
                       std::size_t max_new_tokens, Sampling sampling, std::uint64_t sample_seed) {
  if (expert_cfg.vocab_size != amateur_cfg.vocab_size) {
    throw ValueError("cd_decode: vocab mismatch, expert " + std::to_string(expert_cfg.vocab_size) +
                     " vs amateur " + std::to_string(amateur_cfg.vocab_size));
  }
  if (alpha < 0.0) throw ValueError("cd_decode: alpha must be >= 0");
  check_context_budget(prompt.size(), max_new_tokens,
                       std::min(expert_cfg.max_seq_len, amateur_cfg.max_seq_len));

  DecodeResult out;
  out.tokens = prompt;
  KVCache expert_cache(expert_cfg);
  KVCache amateur_cache(amateur_cfg);
  out.trace.persistent_state_bytes = param_bytes(expert) + param_bytes(amateur) +
                                     expert_cache.persistent_bytes() +
                                     amateur_cache.persistent_bytes();
  Rng rng(sample_seed);

  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
    backbone_step(expert, expert_cfg, prompt[i], expert_cache);
    backbone_step(amateur, amateur_cfg, prompt[i], amateur_cache);
    out.trace.prefill_backbone_steps += 2;
  }
  if (max_new_tokens == 0) return out;

  const auto start = Clock::now();
  std::int32_t feed = prompt.back();
  for (std::size_t n = 0; n < max_new_tokens; ++n) {
    StepResult se = backbone_step(expert, expert_cfg, feed, expert_cache);
    StepResult sa = backbone_step(amateur, amateur_cfg, feed, amateur_cache);
    out.trace.ops_backbone += 2;

    LogProbVector logp_exp = log_softmax_vector(se.logits.values());
    LogProbVector logp_amt = log_softmax_vector(sa.logits.values());
    std::vector<double> scores = guided_scores(logp_exp, logp_amt, alpha);

    std::vector<double> p_exp(logp_exp.size());
    for (std::size_t i = 0; i < p_exp.size(); ++i) p_exp[i] = std::exp(logp_exp[i]);
    ApcResult masked = apc_mask(scores, p_exp, tau);

    const std::int32_t chosen = select_token(masked.scores, sampling, rng);

    StepTrace st;
    st.step = n;
    st.chosen_id = chosen;
    st.logp_exp_chosen = logp_exp[static_cast<std::size_t>(chosen)];
    st.logp_amt_chosen_per_k = {logp_amt[static_cast<std::size_t>(chosen)]};
    st.masked_count = masked.masked_count;
    st.guided_chosen = masked.scores[static_cast<std::size_t>(chosen)];
    st.entropy_exp = entropy_from_logps(logp_exp);
    st.ops_backbone = out.trace.ops_backbone;
    st.ops_projector = 0;
    st.top_expert = top_k_logps(logp_exp, 5);
    out.trace.steps.push_back(std::move(st));

    out.tokens.push_back(chosen);
    feed = chosen;
  }
  out.trace.generation_seconds = seconds_since(start);
  return out;
}

void write_trace_jsonl(const std::string& path, const DecodeTrace& trace) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open trace for writing: " + path);
  for (const StepTrace& st : trace.steps) {
    nlohmann::ordered_json j;
    j["step"] = st.step;
    j["chosen_id"] = st.chosen_id;
    j["logp_exp_chosen"] = st.logp_exp_chosen;
    nlohmann::ordered_json amt = nlohmann::ordered_json::array();
    for (double v : st.logp_amt_chosen_per_k) {
      if (std::isnan(v)) {
        amt.push_back(nullptr);
      } else {
        amt.push_back(v);
      }
    }
    j["logp_amt_chosen_per_k"] = amt;
    j["masked_count"] = st.masked_count;
    j["entropy_exp"] = st.entropy_exp;
    j["ops_backbone"] = st.ops_backbone;
    j["ops_projector"] = st.ops_projector;
    f << j.dump() << "\n";
  }
}

}  // namespace tegu

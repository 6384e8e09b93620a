#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tegu/array.hpp"
#include "tegu/model.hpp"
#include "tegu/projector.hpp"
#include "tegu/rng.hpp"

namespace tegu {

constexpr std::int32_t kIgnoreTarget = -1;

struct TrainingConfig {
  std::size_t seq_len = 256;
  std::size_t batch_size = 32;
  std::size_t total_steps = 3000;
  double peak_lr = 2.0e-4;
  double warmup_ratio = 0.05;
  double lambda_kd = 0.7;       // KD weight; CE gets 1 - lambda_kd
  double temperature = 2.0;     // distillation temperature
  std::vector<std::size_t> offsets = {1};  // projector offsets K
  std::vector<double> offset_weights;      // lambda_k; empty -> uniform
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
  std::vector<double> resolved_offset_weights() const;
  std::size_t warmup_steps() const {
    return static_cast<std::size_t>(warmup_ratio * static_cast<double>(total_steps) + 0.5);
  }
};

// --- corpus ---

std::vector<std::int32_t> tokenize_bytes(const std::string& text);
std::string detokenize_bytes(const std::vector<std::int32_t>& tokens);

// Byte-level ingestion (V = 256); errors on missing or empty files.
std::vector<std::int32_t> ingest_corpus(const std::string& path);

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;  // batch_size x seq_len, row-major

  const std::int32_t* row(std::size_t b) const { return tokens.data() + b * seq_len; }
};

Batch sample_batch(const std::vector<std::int32_t>& corpus, std::size_t batch_size,
                   std::size_t seq_len, Rng& rng);

// target[i] = tokens[i+1+k] where in range, else kIgnoreTarget. k = 0 is NTP.
std::vector<std::int32_t> mtp_targets(const std::vector<std::int32_t>& tokens, long long k);

// --- losses ---

// Mean of -logp[target] over non-ignored positions; 0 when everything is
// ignored (reported through all_ignored when given).
double ce_loss(const DenseArray& logps, const std::vector<std::int32_t>& targets,
               bool* all_ignored = nullptr);

// T^2-scaled KL(teacher_T || student_T) with both sides softened by the
// temperature, averaged over rows. The teacher carries no gradient.
double kd_loss(const DenseArray& teacher_logits, const DenseArray& student_logits,
               double temperature);

struct TotalLoss {
  double total = 0.0;
  std::vector<double> ce_per_offset;  // aligned with cfg.offsets
  std::vector<double> kd_per_offset;
  ProjectorParams grads;
};

// Hybrid objective over a batch: sum_k lambda_k ((1-l_kd) CE_k + l_kd KD_k),
// per-offset terms averaged over valid positions. Gradients flow only into
// the projector; the backbone is read-only.
TotalLoss total_loss(const Batch& batch, const BackboneParams& backbone, const ModelConfig& mcfg,
                     const ProjectorParams& projector, const ProjectorConfig& pcfg,
                     const TrainingConfig& cfg);

// --- schedule and optimizer ---

// Linear warmup to peak_lr, then cosine annealing to zero.
double lr_at(std::size_t step, const TrainingConfig& cfg);

class AdamW {
public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);

  // params and grads must be aligned views of identical shapes.
  void step(const std::vector<NamedParamView>& params,
            const std::vector<ConstNamedParamView>& grads, double lr);

private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<DenseArray> m_, v_;
};

// --- training loops ---

struct TrainStepInfo {
  std::size_t step = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0;
  std::vector<double> ce_per_offset;
  std::vector<double> kd_per_offset;
};
using TrainObserver = std::function<void(const TrainStepInfo&)>;

// NTP pretraining of the backbone from scratch.
BackboneParams train_backbone(const std::vector<std::int32_t>& corpus, const ModelConfig& mcfg,
                              const TrainingConfig& cfg, const TrainObserver& observer = {});

// Projector training on the frozen backbone (hybrid CE+KD objective).
ProjectorParams train_projector(const std::vector<std::int32_t>& corpus,
                                const BackboneParams& backbone, const ModelConfig& mcfg,
                                const ProjectorConfig& pcfg, const TrainingConfig& cfg,
                                const TrainObserver& observer = {});

// CSV loss log: header "step,lr,total,ce_<k>...,kd_<k>..." one row per step.
// Copyable so it can be composed into a TrainObserver.
class LossLogger {
public:
  LossLogger(const std::string& path, const std::vector<std::size_t>& offsets, bool with_kd);
  void operator()(const TrainStepInfo& info);

private:
  std::shared_ptr<std::ofstream> out_;
};

}  // namespace tegu

#include "tegu/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "tegu/logprob.hpp"
#include "tegu/ops.hpp"

namespace tegu {

void TrainingConfig::validate() const {
  if (lambda_kd < 0.0 || lambda_kd > 1.0) {
    throw ConfigError("lambda_kd must be in [0, 1], got " + std::to_string(lambda_kd));
  }
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
  }
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
    throw ConfigError("warmup_ratio must be in [0, 1), got " + std::to_string(warmup_ratio));
  }
  if (offsets.empty()) {
    throw ConfigError("offsets must be non-empty");
  }
  for (std::size_t k : offsets) {
    if (k < 1) throw ConfigError("offsets must be >= 1");
  }
  if (!offset_weights.empty()) {
    if (offset_weights.size() != offsets.size()) {
      throw ConfigError("offset_weights length " + std::to_string(offset_weights.size()) +
                        " does not match offsets length " + std::to_string(offsets.size()));
    }
    double sum = 0.0;
    for (double w : offset_weights) {
      if (w < 0.0) throw ConfigError("offset_weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("offset_weights must sum to 1, got " + std::to_string(sum));
    }
  }
  if (seq_len < 2 || batch_size == 0 || total_steps == 0) {
    throw ConfigError("seq_len >= 2, batch_size >= 1 and total_steps >= 1 required");
  }
}

std::vector<double> TrainingConfig::resolved_offset_weights() const {
  if (!offset_weights.empty()) return offset_weights;
  return std::vector<double>(offsets.size(), 1.0 / static_cast<double>(offsets.size()));
}

std::vector<std::int32_t> tokenize_bytes(const std::string& text) {
  std::vector<std::int32_t> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<std::int32_t>(c));
  return out;
}

std::string detokenize_bytes(const std::vector<std::int32_t>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (std::int32_t t : tokens) {
    if (t < 0 || t > 255) {
      throw ValueError("detokenize_bytes: token " + std::to_string(t) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

std::vector<std::int32_t> ingest_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read corpus: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  if (text.empty()) throw IoError("corpus is empty: " + path);
  return tokenize_bytes(text);
}

Batch sample_batch(const std::vector<std::int32_t>& corpus, std::size_t batch_size,
                   std::size_t seq_len, Rng& rng) {
  if (corpus.size() < seq_len) {
    throw ValueError("corpus of " + std::to_string(corpus.size()) +
                     " tokens is shorter than seq_len " + std::to_string(seq_len));
  }
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = seq_len;
  b.tokens.resize(batch_size * seq_len);
  const std::size_t span = corpus.size() - seq_len + 1;
  for (std::size_t r = 0; r < batch_size; ++r) {
    const std::size_t start = rng.uniform_index(span);
    for (std::size_t i = 0; i < seq_len; ++i) b.tokens[r * seq_len + i] = corpus[start + i];
  }
  return b;
}

std::vector<std::int32_t> mtp_targets(const std::vector<std::int32_t>& tokens, long long k) {
  if (k < 0) throw ValueError("mtp_targets: offset must be non-negative, got " + std::to_string(k));
  const std::size_t T = tokens.size();
  const std::size_t shift = static_cast<std::size_t>(k) + 1;
  std::vector<std::int32_t> targets(T, kIgnoreTarget);
  for (std::size_t i = 0; i + shift < T; ++i) targets[i] = tokens[i + shift];
  return targets;
}

double ce_loss(const DenseArray& logps, const std::vector<std::int32_t>& targets,
               bool* all_ignored) {
  if (logps.rank() != 2 || logps.rows() != targets.size()) {
    throw ShapeError("ce_loss: logps shape " + shape_to_string(logps.shape()) +
                     " does not match " + std::to_string(targets.size()) + " targets");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= logps.cols()) {
      throw ValueError("ce_loss: target " + std::to_string(targets[i]) + " out of vocab range");
    }
    sum -= logps.at(i, static_cast<std::size_t>(targets[i]));
    ++n;
  }
  if (all_ignored) *all_ignored = (n == 0);
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double kd_loss(const DenseArray& teacher_logits, const DenseArray& student_logits,
               double temperature) {
  require_same_shape(teacher_logits, student_logits, "kd_loss");
  if (teacher_logits.rank() != 2) {
    throw ShapeError("kd_loss: expected rank-2 logits, got " +
                     shape_to_string(teacher_logits.shape()));
  }
  if (!(temperature > 0.0)) {
    throw ValueError("kd_loss: temperature must be positive");
  }
  const std::size_t N = teacher_logits.rows();
  const std::size_t V = teacher_logits.cols();
  if (N == 0) return 0.0;

  double sum = 0.0;
  std::vector<double> t_row(V), s_row(V);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < V; ++j) {
      t_row[j] = teacher_logits.at(i, j) / temperature;
      s_row[j] = student_logits.at(i, j) / temperature;
    }
    LogProbVector lt = log_softmax_vector(t_row);
    LogProbVector ls = log_softmax_vector(s_row);
    double kl = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      const double p = std::exp(lt[j]);
      if (p > 0.0) kl += p * (lt[j] - ls[j]);
    }
    sum += kl;
  }
  return temperature * temperature * sum / static_cast<double>(N);
}

TotalLoss total_loss(const Batch& batch, const BackboneParams& backbone, const ModelConfig& mcfg,
                     const ProjectorParams& projector, const ProjectorConfig& pcfg,
                     const TrainingConfig& cfg) {
  cfg.validate();
  for (std::size_t k : cfg.offsets) {
    if (k > pcfg.k_max) {
      throw ValueError("training offset " + std::to_string(k) + " exceeds projector k_max " +
                       std::to_string(pcfg.k_max));
    }
  }
  const std::vector<double> lambda = cfg.resolved_offset_weights();
  const std::size_t T = batch.seq_len;
  const std::size_t B = batch.batch_size;
  const std::size_t V = mcfg.vocab_size;
  const double temp = cfg.temperature;

  TotalLoss result;
  result.ce_per_offset.assign(cfg.offsets.size(), 0.0);
  result.kd_per_offset.assign(cfg.offsets.size(), 0.0);
  result.grads = zeros_like(projector);
  // valid positions per row for offset k: i in [0, T-2-k]
  std::vector<std::size_t> valid(cfg.offsets.size(), 0);
  for (std::size_t ki = 0; ki < cfg.offsets.size(); ++ki) {
    const std::size_t k = cfg.offsets[ki];
    valid[ki] = (T >= k + 2) ? (T - 1 - k) : 0;
  }

  for (std::size_t r = 0; r < B; ++r) {
    std::vector<std::int32_t> row(batch.row(r), batch.row(r) + T);
    ForwardResult fwd = backbone_forward(backbone, mcfg, row);

    for (std::size_t ki = 0; ki < cfg.offsets.size(); ++ki) {
      const std::size_t k = cfg.offsets[ki];
      const std::size_t n = valid[ki];
      if (n == 0) continue;
      const double denom = static_cast<double>(n * B);

      DenseArray h_stale({n, mcfg.d_model},
                         std::vector<double>(fwd.hidden.data(), fwd.hidden.data() + n * mcfg.d_model));
      ProjectorActivations acts = cmtpp_forward_cached(projector, pcfg, h_stale, k);
      DenseArray student_logits = matmul(acts.out, backbone.lm_head);
      DenseArray student_logps = log_softmax(student_logits, 1);

      // CE over targets tokens[i+1+k]
      std::vector<std::int32_t> targets(n);
      for (std::size_t i = 0; i < n; ++i) targets[i] = row[i + 1 + k];
      result.ce_per_offset[ki] += ce_loss(student_logps, targets) / static_cast<double>(B);

      // teacher for student position i is the NTP row at position i+k
      DenseArray teacher_logits({n, V});
      for (std::size_t i = 0; i < n; ++i) {
        const double* src = fwd.logits.data() + (i + k) * V;
        double* dst = teacher_logits.data() + i * V;
        for (std::size_t j = 0; j < V; ++j) dst[j] = src[j];
      }
      result.kd_per_offset[ki] += kd_loss(teacher_logits, student_logits, temp) /
                                  static_cast<double>(B);

      // dL/d(student_logits)
      DenseArray dlogits({n, V});
      std::vector<double> t_row(V), s_row(V);
      for (std::size_t i = 0; i < n; ++i) {
        // CE branch: softmax(s) - onehot
        for (std::size_t j = 0; j < V; ++j) s_row[j] = student_logps.at(i, j);
        for (std::size_t j = 0; j < V; ++j) {
          dlogits.at(i, j) = lambda[ki] * (1.0 - cfg.lambda_kd) * std::exp(s_row[j]) / denom;
        }
        dlogits.at(i, static_cast<std::size_t>(targets[i])) -=
            lambda[ki] * (1.0 - cfg.lambda_kd) / denom;
        // KD branch: T * (softmax(s/T) - softmax(t/T))
        for (std::size_t j = 0; j < V; ++j) {
          t_row[j] = teacher_logits.at(i, j) / temp;
          s_row[j] = student_logits.at(i, j) / temp;
        }
        std::vector<double> pt = softmax_vector(t_row);
        std::vector<double> ps = softmax_vector(s_row);
        for (std::size_t j = 0; j < V; ++j) {
          dlogits.at(i, j) += lambda[ki] * cfg.lambda_kd * temp * (ps[j] - pt[j]) / denom;
        }
      }

      // back through the frozen head into the projector
      auto [dout, dlm_unused] = matmul_backward(dlogits, acts.out, backbone.lm_head);
      (void)dlm_unused;  // the head is frozen
      cmtpp_backward(projector, pcfg, acts, dout, result.grads);
    }
  }

  for (std::size_t ki = 0; ki < cfg.offsets.size(); ++ki) {
    result.total += lambda[ki] * ((1.0 - cfg.lambda_kd) * result.ce_per_offset[ki] +
                                  cfg.lambda_kd * result.kd_per_offset[ki]);
  }
  return result;
}

double lr_at(std::size_t step, const TrainingConfig& cfg) {
  if (step > cfg.total_steps) {
    throw ValueError("lr_at: step " + std::to_string(step) + " beyond total " +
                     std::to_string(cfg.total_steps));
  }
  const std::size_t warmup = cfg.warmup_steps();
  if (warmup > 0 && step <= warmup) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(cfg.total_steps - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(const std::vector<NamedParamView>& params,
                 const std::vector<ConstNamedParamView>& grads, double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("AdamW: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.array->shape());
      v_.emplace_back(p.array->shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseArray& p = *params[i].array;
    const DenseArray& g = *grads[i].array;
    require_same_shape(p, g, "AdamW::step");
    DenseArray& m = m_[i];
    DenseArray& v = v_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[j]);
    }
  }
}

namespace {

void check_corpus_size(const std::vector<std::int32_t>& corpus, const TrainingConfig& cfg) {
  const std::size_t need = 10 * cfg.batch_size * cfg.seq_len;
  if (corpus.size() < need) {
    throw ValueError("corpus of " + std::to_string(corpus.size()) + " tokens is below the " +
                     std::to_string(need) + "-token minimum (10 x batch x seq_len)");
  }
}

void check_loss_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw ValueError("training diverged: non-finite loss at step " + std::to_string(step));
  }
}

}  // namespace

BackboneParams train_backbone(const std::vector<std::int32_t>& corpus, const ModelConfig& mcfg,
                              const TrainingConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  mcfg.validate();
  check_corpus_size(corpus, cfg);
  if (cfg.seq_len > mcfg.max_seq_len) {
    throw ConfigError("seq_len " + std::to_string(cfg.seq_len) + " exceeds model max_seq_len " +
                      std::to_string(mcfg.max_seq_len));
  }

  BackboneParams params = init_backbone(mcfg);
  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  Rng rng(cfg.seed);
  const std::size_t V = mcfg.vocab_size;
  const std::size_t T = cfg.seq_len;

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    Batch batch = sample_batch(corpus, cfg.batch_size, T, rng);
    BackboneParams grads = zeros_like(params);
    double loss = 0.0;
    const double denom = static_cast<double>(cfg.batch_size * (T - 1));

    for (std::size_t r = 0; r < cfg.batch_size; ++r) {
      std::vector<std::int32_t> row(batch.row(r), batch.row(r) + T);
      ForwardActivations acts = backbone_forward_cached(params, mcfg, row);
      DenseArray logps = log_softmax(acts.logits, 1);
      DenseArray dlogits({T, V});
      for (std::size_t i = 0; i + 1 < T; ++i) {
        const std::int32_t target = row[i + 1];
        loss -= logps.at(i, static_cast<std::size_t>(target)) / denom;
        for (std::size_t j = 0; j < V; ++j) {
          dlogits.at(i, j) = std::exp(logps.at(i, j)) / denom;
        }
        dlogits.at(i, static_cast<std::size_t>(target)) -= 1.0 / denom;
      }
      backbone_backward(params, mcfg, acts, dlogits, grads);
    }

    check_loss_finite(loss, step);
    const double lr = lr_at(step, cfg);
    opt.step(named_params(params), named_params(const_cast<const BackboneParams&>(grads)), lr);

    if (observer) {
      TrainStepInfo info;
      info.step = step;
      info.lr = lr;
      info.total = loss;
      info.ce_per_offset = {loss};
      observer(info);
    }
  }
  return params;
}

ProjectorParams train_projector(const std::vector<std::int32_t>& corpus,
                                const BackboneParams& backbone, const ModelConfig& mcfg,
                                const ProjectorConfig& pcfg, const TrainingConfig& cfg,
                                const TrainObserver& observer) {
  cfg.validate();
  pcfg.validate();
  check_corpus_size(corpus, cfg);
  if (pcfg.d_model != mcfg.d_model) {
    throw ConfigError("projector d_model " + std::to_string(pcfg.d_model) +
                      " does not match backbone d_model " + std::to_string(mcfg.d_model));
  }

  ProjectorParams params = init_projector(pcfg);
  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  Rng rng(cfg.seed);

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    Batch batch = sample_batch(corpus, cfg.batch_size, cfg.seq_len, rng);
    TotalLoss tl = total_loss(batch, backbone, mcfg, params, pcfg, cfg);
    check_loss_finite(tl.total, step);
    const double lr = lr_at(step, cfg);
    opt.step(named_params(params), named_params(const_cast<const ProjectorParams&>(tl.grads)), lr);

    if (observer) {
      TrainStepInfo info;
      info.step = step;
      info.lr = lr;
      info.total = tl.total;
      info.ce_per_offset = tl.ce_per_offset;
      info.kd_per_offset = tl.kd_per_offset;
      observer(info);
    }
  }
  return params;
}

LossLogger::LossLogger(const std::string& path, const std::vector<std::size_t>& offsets,
                       bool with_kd)
    : out_(std::make_shared<std::ofstream>(path, std::ios::trunc)) {
  if (!*out_) throw IoError("cannot open loss log for writing: " + path);
  *out_ << "step,lr,total";
  for (std::size_t k : offsets) *out_ << ",ce_" << k;
  if (with_kd) {
    for (std::size_t k : offsets) *out_ << ",kd_" << k;
  }
  *out_ << "\n";
}

void LossLogger::operator()(const TrainStepInfo& info) {
  *out_ << info.step << "," << info.lr << "," << info.total;
  for (double v : info.ce_per_offset) *out_ << "," << v;
  for (double v : info.kd_per_offset) *out_ << "," << v;
  *out_ << "\n";
  out_->flush();
}

}  // namespace tegu

#include "tegu/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "tegu/logprob.hpp"

namespace tegu {

namespace {

constexpr std::size_t kHistogramBins = 50;

void add_sample(EntropyEntry& e, double h) {
  e.samples.push_back(h);
  const double hi = e.histogram.hi;
  std::size_t bin = hi > 0.0 ? static_cast<std::size_t>(h / hi * kHistogramBins) : 0;
  if (bin >= kHistogramBins) bin = kHistogramBins - 1;
  ++e.histogram.counts[bin];
}

void finalize(EntropyEntry& e) {
  e.count = e.samples.size();
  double sum = 0.0;
  for (double h : e.samples) sum += h;
  e.mean = e.count ? sum / static_cast<double>(e.count) : 0.0;
}

double entropy_of_logits_row(const double* logits, std::size_t v) {
  std::vector<double> row(logits, logits + v);
  LogProbVector lp = log_softmax_vector(row);
  double h = 0.0;
  for (double x : lp.values) {
    const double p = std::exp(x);
    if (p > 0.0) h -= p * x;
  }
  return std::max(h, 0.0);
}

}  // namespace

EntropyReport entropy_sweep(const std::vector<std::int32_t>& eval_tokens,
                            const BackboneParams& backbone, const ModelConfig& mcfg,
                            const ProjectorParams& projector, const ProjectorConfig& pcfg,
                            const std::vector<std::size_t>& offsets) {
  if (eval_tokens.size() < 64) {
    throw ValueError("entropy_sweep: need at least 64 eval tokens, got " +
                     std::to_string(eval_tokens.size()));
  }
  for (std::size_t k : offsets) {
    if (k < 1 || k > pcfg.k_max) {
      throw ValueError("entropy_sweep: offset " + std::to_string(k) +
                       " outside projector range [1, " + std::to_string(pcfg.k_max) + "]");
    }
  }
  const std::size_t V = mcfg.vocab_size;
  const double log_v = std::log(static_cast<double>(V));
  std::size_t max_k = 0;
  for (std::size_t k : offsets) max_k = std::max(max_k, k);

  EntropyReport report;
  report.entries.resize(offsets.size() + 1);
  report.entries[0].offset = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) report.entries[i + 1].offset = offsets[i];
  for (auto& e : report.entries) {
    e.histogram.lo = 0.0;
    e.histogram.hi = log_v;
    e.histogram.counts.assign(kHistogramBins, 0);
  }

  // Teacher-forced, in non-overlapping windows of the model context size.
  const std::size_t window = mcfg.max_seq_len;
  for (std::size_t begin = 0; begin + max_k + 2 <= eval_tokens.size(); begin += window) {
    const std::size_t len = std::min(window, eval_tokens.size() - begin);
    if (len < max_k + 2) break;
    std::vector<std::int32_t> slice(eval_tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                                    eval_tokens.begin() + static_cast<std::ptrdiff_t>(begin + len));
    ForwardResult fwd = backbone_forward(backbone, mcfg, slice);

    for (std::size_t i = max_k; i < len; ++i) {
      add_sample(report.entries[0], entropy_of_logits_row(fwd.logits.data() + i * V, V));
      for (std::size_t ki = 0; ki < offsets.size(); ++ki) {
        const std::size_t k = offsets[ki];
        DenseArray h_stale({mcfg.d_model},
                           std::vector<double>(fwd.hidden.data() + (i - k) * mcfg.d_model,
                                               fwd.hidden.data() + (i - k + 1) * mcfg.d_model));
        LogProbVector lp = amateur_logprobs_at(h_stale, k, backbone, projector, pcfg);
        double h = 0.0;
        for (double x : lp.values) {
          const double p = std::exp(x);
          if (p > 0.0) h -= p * x;
        }
        add_sample(report.entries[ki + 1], std::max(h, 0.0));
      }
    }
  }

  for (auto& e : report.entries) finalize(e);
  return report;
}

double distinct_n(const std::vector<std::int32_t>& tokens, std::size_t n) {
  if (n == 0) throw ValueError("distinct_n: n must be >= 1");
  if (tokens.size() < n) {
    throw ValueError("distinct_n: need at least " + std::to_string(n) + " tokens, got " +
                     std::to_string(tokens.size()));
  }
  const std::size_t total = tokens.size() - n + 1;
  std::unordered_set<std::string> seen;
  seen.reserve(total);
  std::string key(n * sizeof(std::int32_t), '\0');
  for (std::size_t i = 0; i < total; ++i) {
    std::memcpy(key.data(), tokens.data() + i, n * sizeof(std::int32_t));
    seen.insert(key);
  }
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

double rep_n(const std::vector<std::int32_t>& tokens, std::size_t n) {
  return 1.0 - distinct_n(tokens, n);
}

DiversityReport diversity_report(const std::vector<std::int32_t>& tokens) {
  DiversityReport r;
  r.token_count = tokens.size();
  r.distinct_1 = distinct_n(tokens, 1);
  r.distinct_2 = distinct_n(tokens, 2);
  r.rep_4 = rep_n(tokens, 4);
  return r;
}

EfficiencyReport efficiency_report(const std::vector<MethodTraces>& per_method) {
  EfficiencyReport report;
  std::size_t budget = 0;
  bool budget_set = false;
  for (const MethodTraces& mt : per_method) {
    MethodEfficiency row;
    row.method = mt.method;
    std::uint64_t backbone = 0, projector = 0;
    double seconds = 0.0;
    for (const DecodeTrace* t : mt.traces) {
      if (!budget_set) {
        budget = t->tokens();
        budget_set = true;
      } else if (t->tokens() != budget) {
        throw ValueError("efficiency_report: trace with " + std::to_string(t->tokens()) +
                         " tokens does not match budget " + std::to_string(budget));
      }
      backbone += t->ops_backbone;
      projector += t->ops_projector;
      seconds += t->generation_seconds;
      row.persistent_state_bytes = t->persistent_state_bytes;
      row.tokens += t->tokens();
    }
    if (row.tokens > 0) {
      row.backbone_forwards_per_token = static_cast<double>(backbone) / row.tokens;
      row.projector_forwards_per_token = static_cast<double>(projector) / row.tokens;
      row.mean_ms_per_token = 1e3 * seconds / static_cast<double>(row.tokens);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

using json = nlohmann::ordered_json;

void dump_to(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open report for writing: " + path);
  f << body;
}

json entropy_entry_json(const EntropyEntry& e) {
  json j;
  j["offset"] = e.offset;
  j["count"] = e.count;
  j["mean"] = e.mean;
  j["histogram"]["lo"] = e.histogram.lo;
  j["histogram"]["hi"] = e.histogram.hi;
  j["histogram"]["counts"] = e.histogram.counts;
  return j;
}

}  // namespace

void write_entropy_report_json(const std::string& path, const EntropyReport& report) {
  json j = json::array();
  for (const auto& e : report.entries) j.push_back(entropy_entry_json(e));
  dump_to(path, j.dump(2) + "\n");
}

void write_entropy_report_csv(const std::string& path, const EntropyReport& report) {
  std::string s = "offset,count,mean\n";
  for (const auto& e : report.entries) {
    s += std::to_string(e.offset) + "," + std::to_string(e.count) + "," + std::to_string(e.mean) +
         "\n";
  }
  dump_to(path, s);
}

void write_entropy_histogram_csv(const std::string& path, const EntropyReport& report) {
  // bin_midpoint,count rows per offset block; offset column keeps it flat
  std::string s = "offset,bin_mid,count\n";
  for (const auto& e : report.entries) {
    const double width = (e.histogram.hi - e.histogram.lo) / kHistogramBins;
    for (std::size_t b = 0; b < e.histogram.counts.size(); ++b) {
      const double mid = e.histogram.lo + (static_cast<double>(b) + 0.5) * width;
      s += std::to_string(e.offset) + "," + std::to_string(mid) + "," +
           std::to_string(e.histogram.counts[b]) + "\n";
    }
  }
  dump_to(path, s);
}

void write_diversity_report_json(const std::string& path,
                                 const std::vector<std::pair<std::string, DiversityReport>>& rows) {
  json j = json::array();
  for (const auto& [name, r] : rows) {
    json e;
    e["method"] = name;
    e["distinct_1"] = r.distinct_1;
    e["distinct_2"] = r.distinct_2;
    e["rep_4"] = r.rep_4;
    e["token_count"] = r.token_count;
    j.push_back(e);
  }
  dump_to(path, j.dump(2) + "\n");
}

void write_diversity_report_csv(const std::string& path,
                                const std::vector<std::pair<std::string, DiversityReport>>& rows) {
  std::string s = "method,distinct_1,distinct_2,rep_4,token_count\n";
  for (const auto& [name, r] : rows) {
    s += name + "," + std::to_string(r.distinct_1) + "," + std::to_string(r.distinct_2) + "," +
         std::to_string(r.rep_4) + "," + std::to_string(r.token_count) + "\n";
  }
  dump_to(path, s);
}

void write_efficiency_report_json(const std::string& path, const EfficiencyReport& report) {
  json j = json::array();
  for (const auto& r : report.rows) {
    json e;
    e["method"] = r.method;
    e["backbone_forwards_per_token"] = r.backbone_forwards_per_token;
    e["projector_forwards_per_token"] = r.projector_forwards_per_token;
    e["persistent_state_bytes"] = r.persistent_state_bytes;
    e["mean_ms_per_token"] = r.mean_ms_per_token;
    e["tokens"] = r.tokens;
    j.push_back(e);
  }
  dump_to(path, j.dump(2) + "\n");
}

void write_efficiency_report_csv(const std::string& path, const EfficiencyReport& report) {
  std::string s =
      "method,backbone_forwards_per_token,projector_forwards_per_token,persistent_state_bytes,"
      "mean_ms_per_token,tokens\n";
  for (const auto& r : report.rows) {
    s += r.method + "," + std::to_string(r.backbone_forwards_per_token) + "," +
         std::to_string(r.projector_forwards_per_token) + "," +
         std::to_string(r.persistent_state_bytes) + "," + std::to_string(r.mean_ms_per_token) +
         "," + std::to_string(r.tokens) + "\n";
  }
  dump_to(path, s);
}

}  // namespace tegu

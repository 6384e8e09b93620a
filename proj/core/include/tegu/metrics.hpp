#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tegu/decoding.hpp"
#include "tegu/model.hpp"
#include "tegu/projector.hpp"

namespace tegu {

struct EntropyHistogram {
  double lo = 0.0;
  double hi = 0.0;                  // log V
  std::vector<std::size_t> counts;  // 50 uniform bins
};

struct EntropyEntry {
  std::size_t offset = 0;  // 0 = NTP, otherwise the projector offset k
  std::size_t count = 0;
  double mean = 0.0;
  EntropyHistogram histogram;
  std::vector<double> samples;  // per-position entropies, in nats
};

struct EntropyReport {
  std::vector<EntropyEntry> entries;  // NTP first, then each offset in order
};

// Teacher-forced entropy statistics over a token slice: the NTP distribution
// and each offset's amateur distribution are measured at every position where
// all required stale states exist. Fixed 50 uniform bins over [0, log V].
EntropyReport entropy_sweep(const std::vector<std::int32_t>& eval_tokens,
                            const BackboneParams& backbone, const ModelConfig& mcfg,
                            const ProjectorParams& projector, const ProjectorConfig& pcfg,
                            const std::vector<std::size_t>& offsets);

// unique n-grams / total n-grams over the token sequence.
double distinct_n(const std::vector<std::int32_t>& tokens, std::size_t n);
// 1 - distinct_n.
double rep_n(const std::vector<std::int32_t>& tokens, std::size_t n);

struct DiversityReport {
  double distinct_1 = 0.0;
  double distinct_2 = 0.0;
  double rep_4 = 0.0;
  std::size_t token_count = 0;
};

// Corpus-level metrics over the concatenated continuations.
DiversityReport diversity_report(const std::vector<std::int32_t>& tokens);

struct MethodEfficiency {
  std::string method;
  double backbone_forwards_per_token = 0.0;
  double projector_forwards_per_token = 0.0;
  std::size_t persistent_state_bytes = 0;
  double mean_ms_per_token = 0.0;
  std::size_t tokens = 0;
};

struct EfficiencyReport {
  std::vector<MethodEfficiency> rows;
};

struct MethodTraces {
  std::string method;
  std::vector<const DecodeTrace*> traces;
};

// Aggregates decode traces per method; all traces must cover the same token
// budget.
EfficiencyReport efficiency_report(const std::vector<MethodTraces>& per_method);

// Report serialization: full JSON, flat CSV summary, and a two-column
// histogram CSV for plotting.
void write_entropy_report_json(const std::string& path, const EntropyReport& report);
void write_entropy_report_csv(const std::string& path, const EntropyReport& report);
void write_entropy_histogram_csv(const std::string& path, const EntropyReport& report);
void write_diversity_report_json(const std::string& path,
                                 const std::vector<std::pair<std::string, DiversityReport>>& rows);
void write_diversity_report_csv(const std::string& path,
                                const std::vector<std::pair<std::string, DiversityReport>>& rows);
void write_efficiency_report_json(const std::string& path, const EfficiencyReport& report);
void write_efficiency_report_csv(const std::string& path, const EfficiencyReport& report);

}  // namespace tegu

#include "tegu/config.hpp"

#include <cmath>
#include <sstream>

namespace tegu {

namespace {

using json = nlohmann::json;

struct ErrorList {
  std::vector<std::string> errors;

  void add(const std::string& path, const std::string& what) {
    errors.push_back(path + ": " + what);
  }
  void check_throw() const {
    if (errors.empty()) return;
    std::string joined;
    for (std::size_t i = 0; i < errors.size(); ++i) {
      if (i) joined += "\n";
      joined += errors[i];
    }
    throw ConfigError(joined);
  }
};

class SectionReader {
public:
  SectionReader(const json* section, std::string prefix, ErrorList& errors)
      : section_(section), prefix_(std::move(prefix)), errors_(errors) {}

  template <typename T>
  void read(const char* key, T& out) {
    known_.push_back(key);
    if (section_ == nullptr || !section_->contains(key)) return;
    try {
      out = section_->at(key).get<T>();
    } catch (const json::exception&) {
      errors_.add(prefix_ + key, "has the wrong type");
    }
  }

  void finish() {
    if (section_ == nullptr) return;
    for (auto it = section_->begin(); it != section_->end(); ++it) {
      bool ok = false;
      for (const char* k : known_) {
        if (it.key() == k) {
          ok = true;
          break;
        }
      }
      if (!ok) errors_.add(prefix_ + it.key(), "unknown key");
    }
  }

private:
  const json* section_;
  std::string prefix_;
  ErrorList& errors_;
  std::vector<const char*> known_;
};

const json* get_section(const json& doc, const char* name, ErrorList& errors) {
  if (!doc.contains(name)) return nullptr;
  const json& s = doc.at(name);
  if (!s.is_object()) {
    errors.add(name, "must be an object");
    return nullptr;
  }
  return &s;
}

}  // namespace

ResolvedConfig validate_config(const nlohmann::json& document) {
  if (!document.is_object() && !document.is_null()) {
    throw ConfigError("config: document must be a JSON object");
  }
  ErrorList errors;
  ResolvedConfig cfg;
  // spec'd defaults
  cfg.guidance.alpha = 0.2;
  cfg.guidance.tau = 0.1;
  cfg.guidance.offsets = {1};
  cfg.guidance.weights = {1.0};
  cfg.training.lambda_kd = 0.7;
  cfg.training.temperature = 2.0;

  static const char* kSections[] = {"model", "projector", "training", "guidance"};
  if (document.is_object()) {
    for (auto it = document.begin(); it != document.end(); ++it) {
      bool ok = false;
      for (const char* s : kSections) {
        if (it.key() == s) {
          ok = true;
          break;
        }
      }
      if (!ok) errors.add(it.key(), "unknown section");
    }
  }

  const json empty = json::object();
  const json& doc = document.is_null() ? empty : document;

  {
    SectionReader r(get_section(doc, "model", errors), "model.", errors);
    r.read("vocab_size", cfg.model.vocab_size);
    r.read("d_model", cfg.model.d_model);
    r.read("n_layers", cfg.model.n_layers);
    r.read("n_heads", cfg.model.n_heads);
    r.read("max_seq_len", cfg.model.max_seq_len);
    r.read("ffn_ratio", cfg.model.ffn_ratio);
    r.read("norm_eps", cfg.model.norm_eps);
    r.read("seed", cfg.model.seed);
    r.finish();
  }
  {
    cfg.projector.d_model = cfg.model.d_model;
    cfg.projector.d_step = cfg.model.d_model;
    SectionReader r(get_section(doc, "projector", errors), "projector.", errors);
    r.read("d_step", cfg.projector.d_step);
    r.read("k_max", cfg.projector.k_max);
    r.read("ffn_ratio", cfg.projector.ffn_ratio);
    r.read("norm_eps", cfg.projector.norm_eps);
    r.read("seed", cfg.projector.seed);
    r.finish();
    cfg.projector.d_model = cfg.model.d_model;
  }
  {
    SectionReader r(get_section(doc, "training", errors), "training.", errors);
    r.read("seq_len", cfg.training.seq_len);
    r.read("batch_size", cfg.training.batch_size);
    r.read("total_steps", cfg.training.total_steps);
    r.read("peak_lr", cfg.training.peak_lr);
    r.read("warmup_ratio", cfg.training.warmup_ratio);
    r.read("lambda_kd", cfg.training.lambda_kd);
    r.read("temperature", cfg.training.temperature);
    r.read("offsets", cfg.training.offsets);
    r.read("offset_weights", cfg.training.offset_weights);
    r.read("beta1", cfg.training.beta1);
    r.read("beta2", cfg.training.beta2);
    r.read("weight_decay", cfg.training.weight_decay);
    r.read("adam_eps", cfg.training.adam_eps);
    r.read("seed", cfg.training.seed);
    r.finish();
  }
  {
    SectionReader r(get_section(doc, "guidance", errors), "guidance.", errors);
    std::string sampling = "argmax";
    r.read("offsets", cfg.guidance.offsets);
    r.read("weights", cfg.guidance.weights);
    r.read("alpha", cfg.guidance.alpha);
    r.read("tau", cfg.guidance.tau);
    r.read("max_new_tokens", cfg.guidance.max_new_tokens);
    r.read("sampling", sampling);
    r.read("sample_seed", cfg.guidance.sample_seed);
    r.finish();
    if (sampling == "argmax") {
      cfg.guidance.sampling = Sampling::kArgmax;
    } else if (sampling == "categorical") {
      cfg.guidance.sampling = Sampling::kCategorical;
    } else {
      errors.add("guidance.sampling", "must be 'argmax' or 'categorical'");
    }
  }

  // invariant checks, every violation reported with its key path
  try {
    cfg.model.validate();
  } catch (const Error& e) {
    errors.add("model", e.what());
  }
  try {
    cfg.projector.validate();
  } catch (const Error& e) {
    errors.add("projector", e.what());
  }
  try {
    cfg.training.validate();
  } catch (const Error& e) {
    errors.add("training", e.what());
  }
  try {
    cfg.guidance.validate(cfg.projector.k_max);
  } catch (const Error& e) {
    errors.add("guidance", e.what());
  }
  for (std::size_t k : cfg.training.offsets) {
    if (k > cfg.projector.k_max) {
      errors.add("training.offsets",
                 "offset " + std::to_string(k) + " exceeds projector.k_max " +
                     std::to_string(cfg.projector.k_max));
    }
  }

  errors.check_throw();
  return cfg;
}

void apply_override(nlohmann::json& document, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // plain string

  std::vector<std::string> keys;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) keys.push_back(part);
  if (keys.empty()) throw ConfigError("override '" + assignment + "' has an empty key");

  json* node = &document;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path '" + path + "' is not an object");
    node = &(*node)[keys[i]];
  }
  if (!node->is_object() && !node->is_null()) {
    throw ConfigError("override path '" + path + "' is not an object");
  }
  (*node)[keys.back()] = value;
}

nlohmann::ordered_json to_json(const ResolvedConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"]["vocab_size"] = cfg.model.vocab_size;
  j["model"]["d_model"] = cfg.model.d_model;
  j["model"]["n_layers"] = cfg.model.n_layers;
  j["model"]["n_heads"] = cfg.model.n_heads;
  j["model"]["max_seq_len"] = cfg.model.max_seq_len;
  j["model"]["ffn_ratio"] = cfg.model.ffn_ratio;
  j["model"]["norm_eps"] = cfg.model.norm_eps;
  j["model"]["seed"] = cfg.model.seed;

  j["projector"]["d_step"] = cfg.projector.d_step;
  j["projector"]["k_max"] = cfg.projector.k_max;
  j["projector"]["ffn_ratio"] = cfg.projector.ffn_ratio;
  j["projector"]["norm_eps"] = cfg.projector.norm_eps;
  j["projector"]["seed"] = cfg.projector.seed;

  j["training"]["seq_len"] = cfg.training.seq_len;
  j["training"]["batch_size"] = cfg.training.batch_size;
  j["training"]["total_steps"] = cfg.training.total_steps;
  j["training"]["peak_lr"] = cfg.training.peak_lr;
  j["training"]["warmup_ratio"] = cfg.training.warmup_ratio;
  j["training"]["lambda_kd"] = cfg.training.lambda_kd;
  j["training"]["temperature"] = cfg.training.temperature;
  j["training"]["offsets"] = cfg.training.offsets;
  j["training"]["offset_weights"] = cfg.training.resolved_offset_weights();
  j["training"]["beta1"] = cfg.training.beta1;
  j["training"]["beta2"] = cfg.training.beta2;
  j["training"]["weight_decay"] = cfg.training.weight_decay;
  j["training"]["adam_eps"] = cfg.training.adam_eps;
  j["training"]["seed"] = cfg.training.seed;

  j["guidance"]["offsets"] = cfg.guidance.offsets;
  j["guidance"]["weights"] = cfg.guidance.weights;
  j["guidance"]["alpha"] = cfg.guidance.alpha;
  j["guidance"]["tau"] = cfg.guidance.tau;
  j["guidance"]["max_new_tokens"] = cfg.guidance.max_new_tokens;
  j["guidance"]["sampling"] =
      cfg.guidance.sampling == Sampling::kArgmax ? "argmax" : "categorical";
  j["guidance"]["sample_seed"] = cfg.guidance.sample_seed;
  return j;
}

}  // namespace tegu

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tegu/decoding.hpp"
#include "tegu/model.hpp"
#include "tegu/projector.hpp"
#include "tegu/training.hpp"

namespace tegu {

// One document drives the whole pipeline; sections are optional and filled
// with the defaults below (alpha 0.2, tau 0.1, K = {1} with weight 1,
// lambda_kd 0.7, T 2.0, desk-scale model sizes).
struct ResolvedConfig {
  ModelConfig model;
  ProjectorConfig projector;
  TrainingConfig training;
  GuidanceConfig guidance;
};

// Validates a JSON document against the schema. Unknown keys are rejected and
// every violated invariant is reported at once, each with its key path.
// Throws ConfigError with the newline-joined error list.
ResolvedConfig validate_config(const nlohmann::json& document);

// Applies "dotted.key=value" overrides onto a JSON document; keys must exist
// in the schema. Values parse as JSON scalars/arrays, falling back to string.
void apply_override(nlohmann::json& document, const std::string& assignment);

// Canonical snapshot of a resolved configuration.
nlohmann::ordered_json to_json(const ResolvedConfig& cfg);

}  // namespace tegu

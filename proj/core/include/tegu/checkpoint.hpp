#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tegu/model.hpp"
#include "tegu/projector.hpp"

namespace tegu {

// Container layout (little-endian throughout):
//   magic "TEGU" | u32 version=1 | u64 json_len | config JSON (UTF-8)
//   then per parameter, in canonical order:
//   u32 name_len | name | u32 rank | u64 extents[rank] | f32 data
// The JSON block carries {"component": "backbone"|"projector", "config": {...}}.

void save_backbone(const std::string& path, const BackboneParams& params,
                   const ModelConfig& cfg);
std::pair<BackboneParams, ModelConfig> load_backbone(const std::string& path);

void save_projector(const std::string& path, const ProjectorParams& params,
                    const ProjectorConfig& cfg);
std::pair<ProjectorParams, ProjectorConfig> load_projector(const std::string& path);

// FNV-1a over the canonical serialized parameter section (names, shapes and
// f32-quantized payloads), so a digest of saved params equals the digest of
// the params loaded back.
std::uint64_t fingerprint(const std::vector<ConstNamedParamView>& params);
std::uint64_t fingerprint(const BackboneParams& params);
std::uint64_t fingerprint(const ProjectorParams& params);
std::string fingerprint_hex(std::uint64_t fp);

// Bytes of the in-memory f64 parameter arrays.
std::size_t param_bytes(const BackboneParams& params);
std::size_t param_bytes(const ProjectorParams& params);

}  // namespace tegu

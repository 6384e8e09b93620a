#include "tegu/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>

namespace tegu {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'T', 'E', 'G', 'U'};
constexpr std::uint32_t kVersion = 1;

json model_config_to_json(const ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["max_seq_len"] = c.max_seq_len;
  j["ffn_ratio"] = c.ffn_ratio;
  j["norm_eps"] = c.norm_eps;
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.ffn_ratio = j.at("ffn_ratio").get<double>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json projector_config_to_json(const ProjectorConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["d_step"] = c.d_step;
  j["k_max"] = c.k_max;
  j["ffn_ratio"] = c.ffn_ratio;
  j["norm_eps"] = c.norm_eps;
  j["seed"] = c.seed;
  return j;
}

ProjectorConfig projector_config_from_json(const json& j) {
  ProjectorConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_step = j.at("d_step").get<std::size_t>();
  c.k_max = j.at("k_max").get<std::size_t>();
  c.ffn_ratio = j.at("ffn_ratio").get<double>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void append_bytes(std::string& out, const void* src, std::size_t n) {
  out.append(static_cast<const char*>(src), n);
}

void append_u32(std::string& out, std::uint32_t v) { append_bytes(out, &v, 4); }
void append_u64(std::string& out, std::uint64_t v) { append_bytes(out, &v, 8); }

// Canonical parameter section shared by the file writer and the fingerprint.
std::string serialize_params(const std::vector<ConstNamedParamView>& params) {
  std::string out;
  for (const auto& p : params) {
    append_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.append(p.name);
    append_u32(out, static_cast<std::uint32_t>(p.array->rank()));
    for (std::size_t e : p.array->shape()) append_u64(out, static_cast<std::uint64_t>(e));
    const std::size_t n = p.array->numel();
    std::vector<float> f32(n);
    for (std::size_t i = 0; i < n; ++i) f32[i] = static_cast<float>((*p.array)[i]);
    append_bytes(out, f32.data(), n * sizeof(float));
  }
  return out;
}

void write_container(const std::string& path, const std::string& component, const json& config,
                     const std::vector<ConstNamedParamView>& params) {
  json block;
  block["component"] = component;
  block["config"] = config;
  const std::string config_bytes = block.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  std::string out;
  append_bytes(out, kMagic, 4);
  append_u32(out, kVersion);
  append_u64(out, static_cast<std::uint64_t>(config_bytes.size()));
  out.append(config_bytes);
  out += serialize_params(params);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write while saving checkpoint: " + path);
}

class Reader {
public:
  explicit Reader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw IoError("cannot open checkpoint: " + path);
  }

  void read(void* dst, std::size_t n, const char* what) {
    f_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (f_.gcount() != static_cast<std::streamsize>(n)) {
      throw IoError("truncated checkpoint: " + path_ + " (while reading " + what + ")");
    }
  }

  std::uint32_t read_u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }
  std::uint64_t read_u64(const char* what) {
    std::uint64_t v;
    read(&v, 8, what);
    return v;
  }
  std::string read_string(std::size_t n, const char* what) {
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }
  bool at_eof() {
    f_.peek();
    return f_.eof();
  }

private:
  std::string path_;
  std::ifstream f_;
};

struct LoadedContainer {
  std::string component;
  json config;
  std::vector<std::pair<std::string, DenseArray>> params;
};

LoadedContainer read_container(const std::string& path, const std::string& expect_component) {
  Reader r(path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad checkpoint magic in " + path + " (expected TEGU)");
  }
  const std::uint32_t version = r.read_u32("version");
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path +
                  " (expected " + std::to_string(kVersion) + ")");
  }
  const std::uint64_t json_len = r.read_u64("config length");
  const std::string config_bytes = r.read_string(json_len, "config block");
  json block = json::parse(config_bytes, nullptr, false);
  if (block.is_discarded() || !block.contains("component") || !block.contains("config")) {
    throw IoError("malformed checkpoint config block in " + path);
  }

  LoadedContainer out;
  out.component = block.at("component").get<std::string>();
  if (out.component != expect_component) {
    throw IoError("checkpoint " + path + " holds component '" + out.component + "', expected '" +
                  expect_component + "'");
  }
  out.config = block.at("config");

  while (!r.at_eof()) {
    const std::uint32_t name_len = r.read_u32("parameter name length");
    std::string name = r.read_string(name_len, "parameter name");
    const std::uint32_t rank = r.read_u32("parameter rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<std::size_t>(r.read_u64("parameter extent"));
      numel *= shape[i];
    }
    std::vector<float> f32(numel);
    r.read(f32.data(), numel * sizeof(float), name.c_str());
    DenseArray a(shape);
    for (std::size_t i = 0; i < numel; ++i) a[i] = static_cast<double>(f32[i]);
    out.params.emplace_back(std::move(name), std::move(a));
  }
  return out;
}

// Copies loaded arrays into the freshly shaped destination views by name.
void fill_params(const LoadedContainer& c, std::vector<NamedParamView> views,
                 const std::string& path) {
  if (c.params.size() != views.size()) {
    throw IoError("checkpoint " + path + " holds " + std::to_string(c.params.size()) +
                  " parameters, expected " + std::to_string(views.size()));
  }
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& [name, arr] = c.params[i];
    if (name != views[i].name) {
      throw IoError("checkpoint " + path + ": parameter '" + name + "' where '" + views[i].name +
                    "' was expected");
    }
    if (arr.shape() != views[i].array->shape()) {
      throw IoError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                    shape_to_string(arr.shape()) + ", expected " +
                    shape_to_string(views[i].array->shape()));
    }
    *views[i].array = arr;
  }
}

}  // namespace

void save_backbone(const std::string& path, const BackboneParams& params,
                   const ModelConfig& cfg) {
  write_container(path, "backbone", model_config_to_json(cfg), named_params(params));
}

std::pair<BackboneParams, ModelConfig> load_backbone(const std::string& path) {
  LoadedContainer c = read_container(path, "backbone");
  ModelConfig cfg = model_config_from_json(c.config);
  cfg.validate();
  BackboneParams p = init_backbone(cfg);
  fill_params(c, named_params(p), path);
  return {std::move(p), cfg};
}

void save_projector(const std::string& path, const ProjectorParams& params,
                    const ProjectorConfig& cfg) {
  write_container(path, "projector", projector_config_to_json(cfg), named_params(params));
}

std::pair<ProjectorParams, ProjectorConfig> load_projector(const std::string& path) {
  LoadedContainer c = read_container(path, "projector");
  ProjectorConfig cfg = projector_config_from_json(c.config);
  cfg.validate();
  ProjectorParams p = init_projector(cfg);
  fill_params(c, named_params(p), path);
  return {std::move(p), cfg};
}

std::uint64_t fingerprint(const std::vector<ConstNamedParamView>& params) {
  const std::string bytes = serialize_params(params);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const BackboneParams& params) {
  return fingerprint(named_params(params));
}

std::uint64_t fingerprint(const ProjectorParams& params) {
  return fingerprint(named_params(params));
}

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << fp;
  return os.str();
}

std::size_t param_bytes(const BackboneParams& params) {
  return param_count(params) * sizeof(double);
}

std::size_t param_bytes(const ProjectorParams& params) {
  return param_count(params) * sizeof(double);
}

}  // namespace tegu

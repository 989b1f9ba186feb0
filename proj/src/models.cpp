#include "jscc/models.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "jscc/error.hpp"

namespace jscc {

namespace {

constexpr char kMagic[8] = {'J', 'S', 'C', 'C', 'C', 'K', 'P', 'T'};

std::vector<std::pair<std::string, torch::Tensor>> entry_tensors(torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters()) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers()) out.emplace_back("buffer:" + b.key(), b.value());
  return out;
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.gcount() == 4, ErrorKind::kFormat, "checkpoint truncated");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

struct Parsed {
  checkpoint::Metadata meta;
  nlohmann::json header;
  std::streamoff data_start = 0;
};

Parsed parse_header(std::ifstream& in, const std::filesystem::path& file) {
  require(in.good(), ErrorKind::kIo, "cannot open checkpoint " + file.string());
  char magic[8];
  in.read(magic, 8);
  require(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::kFormat,
          file.string() + " is not a checkpoint");
  const auto len = read_u32(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  require(static_cast<uint32_t>(in.gcount()) == len, ErrorKind::kFormat, "checkpoint truncated");

  Parsed p;
  try {
    p.header = nlohmann::json::parse(text);
    p.meta.schema_version = p.header.at("schema_version").get<uint32_t>();
    require(p.meta.schema_version == checkpoint::kSchemaVersion, ErrorKind::kFormat,
            "unsupported checkpoint schema version " + std::to_string(p.meta.schema_version));
    p.meta.stage = p.header.at("stage").get<std::string>();
    p.meta.train_config = p.header.at("train_config");
    p.meta.arch = arch_from_json(p.header.at("arch"));
    p.meta.tie_proj_p = p.header.value("tie_proj_p", false);
    for (const auto& e : p.header.at("entries")) p.meta.entries.push_back(e.at("name"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad checkpoint header: ") + e.what());
  }
  p.data_start = in.tellg();
  return p;
}

}  // namespace

ModelsImpl::ModelsImpl(const ArchTable& a, bool tie) : arch(a), tie_proj_p(tie) {
  iframe = register_module("iframe", iframe::IFrameCodec(arch));
  pframe = register_module("pframe", pframe::PFrameCodec(arch));
  if (!tie_proj_p) proj_p = register_module("proj_p", pframe::Synthesis(arch));
  flow = register_module("flow", motion::FlowEstimator(arch));
  mv_codec = register_module("mv_codec", motion::MvCodec(arch));
  cond = register_module("cond", context::ContextGenerator(arch));
  mem_iframe = register_module("mem_iframe", mem::Mem(arch.latent_channels, arch, false));
  mem_pframe = register_module("mem_pframe", mem::Mem(arch.latent_channels, arch, true));
  mem_mv = register_module("mem_mv", mem::Mem(arch.mv_latent_channels, arch, false));
}

std::map<std::string, std::shared_ptr<torch::nn::Module>> ModelsImpl::entries() {
  std::map<std::string, std::shared_ptr<torch::nn::Module>> out{
      {"iframe", iframe.ptr()},         {"pframe", pframe.ptr()},
      {"motion.flow", flow.ptr()},      {"motion.mv_codec", mv_codec.ptr()},
      {"context_gen", cond.ptr()},      {"mem.iframe", mem_iframe.ptr()},
      {"mem.pframe", mem_pframe.ptr()}, {"mem.mv", mem_mv.ptr()},
  };
  if (!tie_proj_p) out.emplace("proj_p", proj_p.ptr());
  return out;
}

std::vector<torch::Tensor> ModelsImpl::parameters_of(const std::vector<std::string>& names) {
  auto all = entries();
  std::vector<torch::Tensor> out;
  std::set<const void*> seen;
  for (const auto& name : names) {
    auto it = all.find(name);
    require(it != all.end(), ErrorKind::kInvalidArgument, "unknown model entry '" + name + "'");
    for (auto& p : it->second->parameters()) {
      if (seen.insert(p.unsafeGetTensorImpl()).second) out.push_back(p);
    }
  }
  return out;
}

Models make_models(const ArchTable& arch, uint64_t seed, bool tie_proj_p) {
  torch::manual_seed(seed);
  return Models(arch, tie_proj_p);
}

nlohmann::json arch_to_json(const ArchTable& a) {
  return {{"latent_channels", a.latent_channels},
          {"mv_latent_channels", a.mv_latent_channels},
          {"feature_channels", a.feature_channels},
          {"frame_widths", a.frame_widths},
          {"mv_widths", a.mv_widths},
          {"hyper_channels", a.hyper_channels},
          {"entropy_width", a.entropy_width},
          {"temporal_prior_channels", a.temporal_prior_channels},
          {"offset_groups", a.offset_groups},
          {"offset_hidden", a.offset_hidden},
          {"flow_hidden", a.flow_hidden},
          {"flow_levels", a.flow_levels},
          {"policy_hidden", a.policy_hidden}};
}

ArchTable arch_from_json(const nlohmann::json& j) {
  ArchTable a;
  a.latent_channels = j.at("latent_channels");
  a.mv_latent_channels = j.at("mv_latent_channels");
  a.feature_channels = j.at("feature_channels");
  a.frame_widths = j.at("frame_widths");
  a.mv_widths = j.at("mv_widths");
  a.hyper_channels = j.at("hyper_channels");
  a.entropy_width = j.at("entropy_width");
  a.temporal_prior_channels = j.at("temporal_prior_channels");
  a.offset_groups = j.at("offset_groups");
  a.offset_hidden = j.at("offset_hidden");
  a.flow_hidden = j.at("flow_hidden");
  a.flow_levels = j.at("flow_levels");
  a.policy_hidden = j.at("policy_hidden");
  return a;
}

namespace checkpoint {

void save(const std::filesystem::path& file, Models& models, const std::string& stage,
          const nlohmann::json& train_config, const std::vector<std::string>& entries) {
  auto all = models->entries();
  std::vector<std::string> names = entries;
  if (names.empty()) {
    for (const auto& [name, _] : all) names.push_back(name);
  }

  nlohmann::json list = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  int64_t offset = 0;
  for (const auto& name : names) {
    auto it = all.find(name);
    require(it != all.end(), ErrorKind::kInvalidArgument, "unknown model entry '" + name + "'");
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [key, t] : entry_tensors(*it->second)) {
      auto data = t.detach().to(torch::kFloat32).contiguous();
      tensors.push_back({{"name", key}, {"shape", data.sizes().vec()}, {"offset", offset}});
      offset += data.numel();
      blobs.push_back(data);
    }
    list.push_back({{"name", name}, {"tensors", tensors}});
  }

  nlohmann::json header{{"schema_version", kSchemaVersion},
                        {"stage", stage},
                        {"train_config", train_config},
                        {"arch", arch_to_json(models->arch)},
                        {"tie_proj_p", models->tie_proj_p},
                        {"entries", list}};
  const auto text = header.dump();

  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write checkpoint " + file.string());
  out.write(kMagic, 8);
  write_u32(out, static_cast<uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : blobs) {
    // float32 is stored little-endian; every supported host is little-endian.
    out.write(reinterpret_cast<const char*>(b.data_ptr<float>()),
              static_cast<std::streamsize>(b.numel() * sizeof(float)));
  }
  require(out.good(), ErrorKind::kIo, "failed writing checkpoint " + file.string());
}

Metadata read_metadata(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  return parse_header(in, file).meta;
}

Metadata load(const std::filesystem::path& file, Models& models,
              const std::vector<std::string>& entries) {
  std::ifstream in(file, std::ios::binary);
  auto parsed = parse_header(in, file);
  require(parsed.meta.arch == models->arch && parsed.meta.tie_proj_p == models->tie_proj_p,
          ErrorKind::kFormat, "checkpoint architecture does not match the configured one");

  std::set<std::string> wanted(entries.begin(), entries.end());
  for (const auto& name : entries) {
    require(std::find(parsed.meta.entries.begin(), parsed.meta.entries.end(), name) !=
                parsed.meta.entries.end(),
            ErrorKind::kPrecondition, "checkpoint " + file.string() + " has no entry '" + name + "'");
  }

  auto all = models->entries();
  torch::NoGradGuard guard;
  for (const auto& e : parsed.header.at("entries")) {
    const std::string name = e.at("name");
    if (!wanted.empty() && !wanted.count(name)) continue;
    auto it = all.find(name);
    require(it != all.end(), ErrorKind::kFormat, "checkpoint entry '" + name + "' is unknown");
    std::map<std::string, torch::Tensor> targets;
    for (auto& [key, t] : entry_tensors(*it->second)) targets.emplace(key, t);
    require(targets.size() == e.at("tensors").size(), ErrorKind::kFormat,
            "checkpoint entry '" + name + "' has a different tensor count");
    for (const auto& t : e.at("tensors")) {
      const std::string key = t.at("name");
      auto target = targets.find(key);
      require(target != targets.end(), ErrorKind::kFormat,
              "checkpoint tensor '" + name + "/" + key + "' is unknown");
      const auto shape = t.at("shape").get<std::vector<int64_t>>();
      require(target->second.sizes().vec() == shape, ErrorKind::kFormat,
              "checkpoint tensor '" + name + "/" + key + "' has the wrong shape");
      auto buf = torch::empty(shape, torch::kFloat32);
      in.seekg(parsed.data_start +
               static_cast<std::streamoff>(t.at("offset").get<int64_t>() * sizeof(float)));
      in.read(reinterpret_cast<char*>(buf.data_ptr<float>()),
              static_cast<std::streamsize>(buf.numel() * sizeof(float)));
      require(in.gcount() == static_cast<std::streamsize>(buf.numel() * sizeof(float)),
              ErrorKind::kFormat, "checkpoint truncated");
      target->second.copy_(buf);
    }
  }
  return parsed.meta;
}

Models load_models(const std::filesystem::path& file) {
  const auto meta = read_metadata(file);
  auto models = make_models(meta.arch, 0, meta.tie_proj_p);
  load(file, models);
  models->eval();
  return models;
}

}  // namespace checkpoint

}  // namespace jscc

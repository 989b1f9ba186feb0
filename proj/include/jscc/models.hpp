#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "jscc/architecture.hpp"
#include "jscc/context_gen.hpp"
#include "jscc/iframe_codec.hpp"
#include "jscc/mem.hpp"
#include "jscc/motion_codec.hpp"
#include "jscc/pframe_codec.hpp"

namespace jscc {

/// Every network of the system, grouped by checkpoint entry.
class ModelsImpl : public torch::nn::Module {
 public:
  explicit ModelsImpl(const ArchTable& arch, bool tie_proj_p = false);

  /// Proj_P, or F_Pd itself when weight tying is enabled.
  pframe::Synthesis& projector() { return tie_proj_p ? pframe->decoder : proj_p; }

  /// Checkpoint entry name → module.
  std::map<std::string, std::shared_ptr<torch::nn::Module>> entries();

  /// Parameters of the named entries (deduplicated, in entry order).
  std::vector<torch::Tensor> parameters_of(const std::vector<std::string>& names);

  ArchTable arch;
  bool tie_proj_p;
  iframe::IFrameCodec iframe{nullptr};
  pframe::PFrameCodec pframe{nullptr};
  pframe::Synthesis proj_p{nullptr};
  motion::FlowEstimator flow{nullptr};
  motion::MvCodec mv_codec{nullptr};
  context::ContextGenerator cond{nullptr};
  mem::Mem mem_iframe{nullptr}, mem_pframe{nullptr}, mem_mv{nullptr};
};
TORCH_MODULE(Models);

/// Builds models with a deterministic initialisation for `seed`.
Models make_models(const ArchTable& arch, uint64_t seed, bool tie_proj_p = false);

nlohmann::json arch_to_json(const ArchTable& arch);
ArchTable arch_from_json(const nlohmann::json& j);

namespace checkpoint {

inline constexpr uint32_t kSchemaVersion = 1;

struct Metadata {
  uint32_t schema_version = kSchemaVersion;
  std::string stage;
  nlohmann::json train_config;
  ArchTable arch;
  bool tie_proj_p = false;
  std::vector<std::string> entries;
};

/// Single-file container: "JSCCCKPT" | u32 LE header length | JSON header |
/// float32 LE tensor data. The header lists every entry and tensor.
void save(const std::filesystem::path& file, Models& models, const std::string& stage,
          const nlohmann::json& train_config,
          const std::vector<std::string>& entries = {});

Metadata read_metadata(const std::filesystem::path& file);

/// Loads the named entries (all entries in the file when empty).
Metadata load(const std::filesystem::path& file, Models& models,
              const std::vector<std::string>& entries = {});

/// Builds models with the architecture stored in `file` and loads them.
Models load_models(const std::filesystem::path& file);

}  // namespace checkpoint

}  // namespace jscc

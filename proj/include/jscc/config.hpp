#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jscc/architecture.hpp"
#include "jscc/channel.hpp"
#include "jscc/evalsuite.hpp"
#include "jscc/training.hpp"
#include "jscc/videodata.hpp"

namespace jscc::config {

struct SyntheticData {
  int clips = 0;  // 0 disables the synthetic set
  int frames = 7;
  int64_t size = 64;
};

struct DataConfig {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> eval;
  videodata::Layout layout = videodata::Layout::kPngFrames;
  /// Used for whichever of train/eval lists is empty.
  SyntheticData synthetic;
};

struct Steps {
  int iframe = 1000;
  int pframe = 1000;
  int gop_finetune = 500;
};

struct SweepConfig {
  std::string name = "sweep";
  eval::Axis axis = eval::Axis::kLambda;
  std::vector<double> values;
  std::vector<std::filesystem::path> checkpoints;
};

struct AblationConfig {
  std::filesystem::path reference;
  std::map<std::string, std::vector<std::filesystem::path>> variants;
  double rate_tolerance = 0.05;
};

struct RunConfig {
  uint64_t seed = 0;
  std::filesystem::path out = "runs/default";
  ArchTable arch;
  bool tie_proj_p = false;
  /// csnr_db, channel and noiseless are mirrored from `channel`.
  training::TrainConfig train;
  Steps steps;
  channel::ChannelConfig channel;
  DataConfig data;
  std::size_t gop = 4;
  int repeats = 1;
  /// Empty means `<out>/<stage>.ckpt`.
  std::filesystem::path checkpoint;
  SweepConfig sweep;
  AblationConfig ablation;
  int64_t flops_height = 256;
  int64_t flops_width = 256;

  /// Checkpoint written by (or read for) a stage.
  std::filesystem::path stage_checkpoint(training::Stage stage) const;
  /// Checkpoint used by transmit/eval: `checkpoint` if set, else the GOP stage output.
  std::filesystem::path eval_checkpoint() const;
};

/// Parses YAML text. Unknown keys and ill-typed values raise kConfig.
RunConfig parse(const std::string& yaml_text);
RunConfig load(const std::filesystem::path& file);

void validate(const RunConfig& config);

/// The effective configuration with every default resolved.
std::string to_yaml(const RunConfig& config);
void write_effective(const RunConfig& config, const std::filesystem::path& file);

std::vector<videodata::FrameSequence> load_eval_set(const RunConfig& config);
training::TrainData load_train_set(const RunConfig& config);

}  // namespace jscc::config

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "jscc/channel.hpp"
#include "jscc/gop_pipeline.hpp"
#include "jscc/models.hpp"
#include "jscc/videodata.hpp"

namespace jscc::training {

enum class Stage { kIFrame, kPFrame, kGopFinetune };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

/// What the decoder feature f̂_t is pulled toward by the feature loss.
enum class FeatureTarget {
  kEncoderFeature,  // MSE(f̂_t, stopgrad(f_t))
  kPixelRender,     // MSE(refine(warp(f̂_{t−1}, v̂_t)), x_t)
};

struct TrainConfig {
  double lambda = 2e-3;
  std::vector<double> wt{0.5, 1.2, 0.9, 1.2};
  double lr = 1e-4;
  /// Linear learning-rate ramp at the start of every stage.
  int warmup_steps = 50;
  int batch_iframe = 4;
  int batch_pframe = 2;
  double csnr_db = 10.0;
  channel::Kind channel = channel::Kind::kAwgn;
  bool noiseless = false;
  Stage stage = Stage::kIFrame;
  int steps = 1000;
  /// Leading share of the steps that transmit all channels and train only
  /// distortion plus the entropy likelihood (stages 1 and 2).
  double entropy_pretrain_fraction = 0.3;
  double tau_start = 5.0;
  double tau_end = 0.5;
  int64_t crop = 64;
  int pframes = 4;
  bool train_flow = true;
  /// Supervised flow steps on ground-truth motion before stage 2 proper.
  int flow_pretrain_steps = 0;
  FeatureTarget feature_target = FeatureTarget::kEncoderFeature;
  pipeline::AblationFlags ablation;
  uint64_t seed = 0;
  int log_every = 10;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Loss terms of one step. `rate` is already multiplied by λ.
struct LossBreakdown {
  torch::Tensor rate;
  torch::Tensor frame_distortion;
  torch::Tensor feature_distortion;
  torch::Tensor total;
};

/// total = λ·R + D
LossBreakdown loss_iframe(const torch::Tensor& rate, const torch::Tensor& distortion, double lambda);

/// total = λ·R + w·(D + D_f)
LossBreakdown loss_pframe(const torch::Tensor& rate, const torch::Tensor& distortion,
                          const torch::Tensor& feature_distortion, double lambda, double weight);

/// Σ_t λ·R_t + w_t·D_t. The I-frame (first element) has weight 1 and
/// P-frame k uses wt[k−1].
torch::Tensor loss_gop(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& per_frame,
                       double lambda, const std::vector<double>& wt);

/// Clips used for training; `flows` is either empty or parallel to `clips`.
struct TrainData {
  std::vector<videodata::FrameSequence> clips;
  std::vector<std::vector<MotionField>> flows;
};

/// Moving-square clips with random square counts and velocities.
TrainData synthetic_toy_set(int clips, int frames, int64_t size, uint64_t seed);

struct CurveRow {
  int step = 0;
  double rate = 0.0;
  double frame_distortion = 0.0;
  double feature_distortion = 0.0;
  double entropy_nll = 0.0;
  double total = 0.0;
  double tau = 0.0;
  double mean_keep = 0.0;  // mean hard mask popcount fraction
};

void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& curve);

struct StageIO {
  /// Checkpoint to start from. Required for the P-frame and GOP stages.
  std::optional<std::filesystem::path> init_checkpoint;
  std::optional<std::filesystem::path> out_checkpoint;
  std::optional<std::filesystem::path> curve_csv;
};

struct StageResult {
  std::vector<CurveRow> curve;
};

/// Runs one training stage in place on `models`.
StageResult run_stage(const TrainConfig& config, const TrainData& data, Models& models,
                      const StageIO& io = {});

/// Exponential temperature decay from tau_start to tau_end over the policy
/// phase of a stage.
double tau_at(const TrainConfig& config, int step);

/// Entries a stage optimizes.
std::vector<std::string> trained_entries(Stage stage, bool train_flow, bool tie_proj_p);

}  // namespace jscc::training

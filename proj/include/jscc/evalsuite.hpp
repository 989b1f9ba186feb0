#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "jscc/channel.hpp"
#include "jscc/gop_pipeline.hpp"
#include "jscc/metrics.hpp"
#include "jscc/models.hpp"
#include "jscc/primitives.hpp"
#include "jscc/videodata.hpp"

namespace jscc::eval {

/// Ablation switches recorded in a checkpoint's training config.
pipeline::AblationFlags ablation_flags_of(const std::filesystem::path& checkpoint);

struct Summary {
  double cbr = 0.0;  // mean over all frames
  double iframe_cbr = 0.0;
  double pframe_cbr = 0.0;  // 0 when there are no P-frames
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  int64_t frames = 0;
};

Summary summarize(const std::vector<metrics::FrameStats>& stats);

/// Codes every sequence with GOP length `gop` and summarizes all frames.
Summary evaluate(Models& models, const std::vector<videodata::FrameSequence>& dataset,
                 const channel::ChannelConfig& ch, std::size_t gop, uint64_t seed,
                 const pipeline::PipelineOptions& opts = {});

enum class Axis { kLambda, kCsnr, kGop };

std::string to_string(Axis axis);
Axis axis_from_string(const std::string& name);

struct SweepSpec {
  std::string name = "sweep";
  Axis axis = Axis::kCsnr;
  std::vector<double> values;
  int repeats = 1;
  std::vector<videodata::FrameSequence> dataset;
  /// One checkpoint per value, or a single checkpoint shared by all values.
  std::vector<std::filesystem::path> checkpoints;
  std::size_t gop = 4;
  channel::ChannelConfig channel;
  uint64_t seed = 0;
};

struct SweepRow {
  double value = 0.0;
  bool skipped = false;
  std::string note;
  int samples = 0;
  double cbr_mean = 0.0, cbr_std = 0.0;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ms_ssim_mean = 0.0, ms_ssim_std = 0.0;
};

/// Mean ± sample standard deviation of (CBR, PSNR, MS-SSIM) over sequences
/// and seeds per point. A missing checkpoint skips its point.
std::vector<SweepRow> run_sweep(const SweepSpec& spec);

void write_sweep_csv(std::ostream& os, Axis axis, const std::vector<SweepRow>& rows);

/// Writes `<name>_<axis>.csv` and `<name>_<axis>_<metric>.svg` for psnr,
/// ms_ssim and cbr into `dir`.
void emit_sweep(const SweepSpec& spec, const std::vector<SweepRow>& rows,
                const std::filesystem::path& dir);

struct Trace {
  std::vector<metrics::FrameStats> stats;
  /// PSNR of the first P-frame minus PSNR of the last P-frame of the clip.
  double psnr_drop_db = 0.0;
};

Trace frame_trace(const videodata::FrameSequence& seq, Models& models,
                  const channel::ChannelConfig& ch, std::size_t gop, uint64_t seed);

/// Writes `<name>.csv` and `<name>_{cbr,psnr}.svg` with I-frames marked.
void emit_trace(const Trace& trace, const std::string& name, const std::filesystem::path& dir);

struct FlopsRow {
  std::string module;
  int64_t macs = 0;
  int64_t params = 0;

  int64_t flops() const { return 2 * macs; }
};

/// MACs and parameters of one block at the given input resolution.
FlopsRow layer_cost(const nn::BlockSpec& spec, int64_t height, int64_t width);

/// Per-component MACs for one frame of size height×width (padded to 64) and
/// exact parameter counts, followed by per-frame totals.
std::vector<FlopsRow> flops_report(Models& models, int64_t height, int64_t width);

void write_flops_csv(std::ostream& os, const std::vector<FlopsRow>& rows);

struct AblationSpec {
  /// Full configuration; the first checkpoint is the reference point.
  std::filesystem::path reference;
  /// Variant name → checkpoints trained at different λ. The flags of each
  /// variant are read from its checkpoints.
  std::map<std::string, std::vector<std::filesystem::path>> variants;
  std::vector<videodata::FrameSequence> dataset;
  std::size_t gop = 4;
  channel::ChannelConfig channel;
  uint64_t seed = 0;
  double rate_tolerance = 0.05;
};

struct AblationRow {
  std::string name;
  std::filesystem::path checkpoint;
  double cbr = 0.0;
  double psnr_db = 0.0;
  bool rate_matched = false;
  double psnr_delta_pct = 0.0;  // only meaningful when rate_matched
};

/// Picks, per variant, the checkpoint whose CBR is closest to the reference
/// and reports its PSNR change when the CBRs agree within the tolerance.
std::vector<AblationRow> run_ablation(const AblationSpec& spec);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace jscc::eval

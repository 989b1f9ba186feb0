#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "jscc/channel.hpp"
#include "jscc/mem.hpp"
#include "jscc/metrics.hpp"
#include "jscc/models.hpp"
#include "jscc/pframe_codec.hpp"
#include "jscc/videodata.hpp"

namespace jscc::pipeline {

/// Width of the fixed keep-set used when MEM is disabled.
inline constexpr std::size_t kFixedChannels = 32;

struct AblationFlags {
  bool mem_enabled = true;
  bool feature_propagation = true;
  bool feature_loss = true;
};

struct PipelineOptions {
  bool training = false;
  double tau = 1.0;
  /// Transmit every channel (entropy-model pretraining window).
  bool force_full_masks = false;
  AblationFlags ablation;
  uint64_t policy_seed = 0;
  /// Run the flow estimator without gradients.
  bool freeze_flow = false;
};

/// Holds the ground-truth previous frame and the encoder feature f_{t−1}.
struct EncoderPipelineState {
  pframe::CodecState state;
};

/// Holds the reconstruction x̂_{t−1} and the decoder feature f̂_{t−1}.
struct DecoderPipelineState {
  pframe::CodecState state;
};

/// One latent sent through MEM_e → channel → MEM_d.
struct LatentTransmission {
  mem::PolicyDecision decision;
  std::vector<mem::TransmitPayload> sent;
  std::vector<mem::TransmitPayload> received;
  torch::Tensor y_hat;
  torch::Tensor nll;        // entropy-model training loss (scalar); undefined outside training
  torch::Tensor rate_soft;  // B, expected symbols per source value
  std::vector<int64_t> symbols;  // per batch element, hard count
};

/// Everything produced for one frame of a batch of GOPs.
struct FrameOutcome {
  int64_t frame_index = 0;
  bool is_iframe = false;
  // encoder side
  torch::Tensor y, f_enc, v, y_mv;
  // decoder side
  torch::Tensor f_hat, x_hat, v_hat;
  LatentTransmission frame, mv;  // mv is empty for I-frames
  torch::Tensor rate_soft;       // B, frame plus motion latent
  torch::Tensor entropy_nll;     // scalar sum over the MEMs used; undefined outside training
};

/// Codes one batch of frames (B×3×H×W, sizes multiples of 64) through the
/// I-path and updates both states.
FrameOutcome code_iframe(Models& models, const torch::Tensor& x, const channel::ChannelConfig& ch,
                         int64_t frame_index, const PipelineOptions& opts,
                         EncoderPipelineState& enc, DecoderPipelineState& dec);

FrameOutcome code_pframe(Models& models, const torch::Tensor& x, const channel::ChannelConfig& ch,
                         int64_t frame_index, const PipelineOptions& opts,
                         EncoderPipelineState& enc, DecoderPipelineState& dec);

/// Frame 0 through the I-path, the rest as P-frames.
std::vector<FrameOutcome> unroll(Models& models, const std::vector<torch::Tensor>& frames,
                                 const channel::ChannelConfig& ch, const PipelineOptions& opts,
                                 int64_t first_frame_index = 0);

struct ArchivedPayload {
  int64_t frame_index = 0;
  uint8_t stream = 0;  // 0 frame latent, 1 motion latent
  std::vector<uint8_t> mask_bytes;
  std::vector<float> symbols;  // as transmitted, before the channel
};

struct GopResult {
  std::vector<Frame> reconstructions;
  std::vector<metrics::FrameStats> stats;
  std::vector<ArchivedPayload> payloads;
};

/// Codes one GOP end to end with channel seed `seed`. Frames are padded to a
/// multiple of 64 and reconstructions cropped back; CBR is counted against
/// the unpadded size.
GopResult transmit_gop(const videodata::Gop& gop, Models& models, const channel::ChannelConfig& ch,
                       uint64_t seed, const PipelineOptions& opts = {},
                       int64_t first_frame_index = 0);

/// Slices the sequence into GOPs of `gop_size` and concatenates their results.
GopResult transmit_sequence(const videodata::FrameSequence& seq, Models& models,
                            const channel::ChannelConfig& ch, std::size_t gop_size, uint64_t seed,
                            const PipelineOptions& opts = {});

/// True iff every encoder-side artifact (y_t, f_t, v_t, masks) is bitwise
/// identical when the GOP is sent with each of the two channel seeds.
bool encoder_outputs_noise_invariant(const videodata::Gop& gop, Models& models,
                                     const channel::ChannelConfig& ch,
                                     std::pair<uint64_t, uint64_t> seeds);

/// Archive: "JSCCPAY1" | u32 record count | per record: u32 frame index,
/// u8 stream, u32 mask length, mask wire bytes, u32 symbol count,
/// float32 symbols. All integers and floats little-endian.
void write_payload_archive(const std::filesystem::path& file,
                           const std::vector<ArchivedPayload>& payloads);
std::vector<ArchivedPayload> read_payload_archive(const std::filesystem::path& file);

}  // namespace jscc::pipeline

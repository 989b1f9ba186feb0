#include "jscc/gop_pipeline.hpp"

#include <cstring>
#include <fstream>

#include "jscc/error.hpp"

namespace jscc::pipeline {

namespace {

constexpr uint64_t kFrameStream = 0;
constexpr uint64_t kMotionStream = 1;
constexpr char kArchiveMagic[8] = {'J', 'S', 'C', 'C', 'P', 'A', 'Y', '1'};

mem::PolicyDecision decide(mem::Mem& m, const mem::EntropyParams& params, int64_t batch,
                           int64_t frame_index, uint64_t stream, const PipelineOptions& opts) {
  const auto c = static_cast<std::size_t>(m->latent_channels);
  const auto fi = static_cast<uint32_t>(frame_index);
  if (!opts.ablation.mem_enabled) {
    return mem::forced_decision(
        std::vector<mem::Mask>(static_cast<std::size_t>(batch), mem::Mask::first_n(c, kFixedChannels, fi)));
  }
  if (opts.force_full_masks) {
    return mem::forced_decision(
        std::vector<mem::Mask>(static_cast<std::size_t>(batch), mem::Mask::all(c, true, fi)));
  }
  auto summary = mem::channel_entropy_summary(params).detach();
  const auto seed = channel::mix_seed(opts.policy_seed, static_cast<uint64_t>(frame_index) * 4 + stream);
  return mem::policy_mask(m, summary, opts.tau,
                          opts.training ? mem::PolicyMode::kTrain : mem::PolicyMode::kEval, seed,
                          fi);
}

LatentTransmission transmit_latent(mem::Mem& m, const torch::Tensor& y, const torch::Tensor& temporal,
                                   const channel::ChannelConfig& ch, int64_t frame_index,
                                   uint64_t stream, const PipelineOptions& opts, int64_t height,
                                   int64_t width) {
  LatentTransmission t;
  const auto batch = y.size(0);
  const auto h = y.size(2);
  const auto w = y.size(3);

  // The entropy model only sees a detached latent: it is trained by its own
  // likelihood and never shapes the codec through the policy.
  auto y_d = y.detach();
  auto params = m->entropy->forward(y_d, temporal, mem::EstimationMode::kAutoregressive);
  if (opts.training) {
    auto parallel = m->entropy->forward(y_d, temporal, mem::EstimationMode::kParallel);
    t.nll = mem::gaussian_nll(y_d, params) + mem::gaussian_nll(y_d, parallel);
  }

  t.decision = decide(m, params, batch, frame_index, stream, opts);
  t.sent = mem::mem_encode(m, Latent{y}, t.decision, ch.power, opts.training);
  t.received = t.sent;
  for (int64_t b = 0; b < batch; ++b) {
    auto& p = t.received[static_cast<std::size_t>(b)];
    p.symbols = channel::transmit(channel::ChannelSymbols{p.symbols, frame_index}, ch,
                                  static_cast<uint64_t>(b) * 2 + stream)
                    .values;
    t.symbols.push_back(p.mask.popcount() * h * w);
  }
  t.y_hat = mem::mem_decode(m, t.received, m->latent_channels).values;
  t.rate_soft = t.decision.keep_prob.to(y.device()).sum(1) *
                (static_cast<double>(h * w) / (3.0 * static_cast<double>(height * width)));
  return t;
}

torch::Tensor add_defined(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  return a + b;
}

void check_frame(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == 3, ErrorKind::kShapeMismatch, "frames must be B×3×H×W");
  require(x.size(2) % 64 == 0 && x.size(3) % 64 == 0, ErrorKind::kShapeMismatch,
          "frames must be padded to a multiple of 64");
}

template <typename Fn>
auto with_frame_index(int64_t frame_index, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), "frame " + std::to_string(frame_index) + ": " + e.what());
  }
}

}  // namespace

FrameOutcome code_iframe(Models& models, const torch::Tensor& x, const channel::ChannelConfig& ch,
                         int64_t frame_index, const PipelineOptions& opts,
                         EncoderPipelineState& enc, DecoderPipelineState& dec) {
  return with_frame_index(frame_index, [&] {
    check_frame(x);
    FrameOutcome out;
    out.frame_index = frame_index;
    out.is_iframe = true;

    out.y = models->iframe->encoder->forward(x);
    out.frame = transmit_latent(models->mem_iframe, out.y, {}, ch, frame_index, kFrameStream, opts,
                                x.size(2), x.size(3));
    out.f_hat = models->iframe->decoder->forward(out.frame.y_hat);
    out.x_hat = models->iframe->refine->forward(out.f_hat);
    out.f_enc = models->iframe->proj_i->forward(x);
    out.rate_soft = out.frame.rate_soft;
    out.entropy_nll = out.frame.nll;

    enc.state = {x, out.f_enc};
    dec.state = {out.x_hat, opts.ablation.feature_propagation
                                ? out.f_hat
                                : models->iframe->proj_i->forward(out.x_hat)};
    return out;
  });
}

FrameOutcome code_pframe(Models& models, const torch::Tensor& x, const channel::ChannelConfig& ch,
                         int64_t frame_index, const PipelineOptions& opts,
                         EncoderPipelineState& enc, DecoderPipelineState& dec) {
  return with_frame_index(frame_index, [&] {
    check_frame(x);
    require(enc.state.prev_frame.defined() && dec.state.prev_frame.defined(),
            ErrorKind::kPrecondition, "P-frame coded without a preceding frame");
    FrameOutcome out;
    out.frame_index = frame_index;
    const auto height = x.size(2);
    const auto width = x.size(3);

    if (opts.freeze_flow) {
      torch::NoGradGuard guard;
      out.v = models->flow->forward(enc.state.prev_frame, x);
    } else {
      out.v = models->flow->forward(enc.state.prev_frame, x);
    }
    out.y_mv = models->mv_codec->encoder->forward(out.v);
    out.mv = transmit_latent(models->mem_mv, out.y_mv, {}, ch, frame_index, kMotionStream, opts,
                             height, width);
    out.v_hat = models->mv_codec->decoder->forward(out.mv.y_hat);

    auto enc_ctx = models->cond->forward(enc.state.prev_feature, enc.state.prev_frame, out.v);
    auto dec_ctx = models->cond->forward(dec.state.prev_feature, dec.state.prev_frame, out.v_hat);

    out.y = models->pframe->encoder->forward(x, enc_ctx);
    auto temporal = models->cond->temporal_prior({enc_ctx.c1, enc_ctx.c2, enc_ctx.c3.detach()});
    out.frame = transmit_latent(models->mem_pframe, out.y, temporal, ch, frame_index, kFrameStream,
                                opts, height, width);
    out.f_hat = models->pframe->decoder->forward(out.frame.y_hat, dec_ctx);
    out.x_hat = models->iframe->refine->forward(out.f_hat);
    out.f_enc = models->projector()->forward(out.y, enc_ctx);
    out.rate_soft = out.frame.rate_soft + out.mv.rate_soft;
    out.entropy_nll = add_defined(out.frame.nll, out.mv.nll);

    if (opts.ablation.feature_propagation) {
      enc.state = {x, out.f_enc};
      dec.state = {out.x_hat, out.f_hat};
    } else {
      enc.state = {x, models->iframe->proj_i->forward(x)};
      dec.state = {out.x_hat, models->iframe->proj_i->forward(out.x_hat)};
    }
    return out;
  });
}

std::vector<FrameOutcome> unroll(Models& models, const std::vector<torch::Tensor>& frames,
                                 const channel::ChannelConfig& ch, const PipelineOptions& opts,
                                 int64_t first_frame_index) {
  require(!frames.empty(), ErrorKind::kInvalidArgument, "cannot code an empty GOP");
  EncoderPipelineState enc;
  DecoderPipelineState dec;
  std::vector<FrameOutcome> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto index = first_frame_index + static_cast<int64_t>(t);
    out.push_back(t == 0 ? code_iframe(models, frames[t], ch, index, opts, enc, dec)
                         : code_pframe(models, frames[t], ch, index, opts, enc, dec));
  }
  return out;
}

namespace {

ArchivedPayload archive(const mem::TransmitPayload& p, int64_t frame_index, uint8_t stream) {
  ArchivedPayload a;
  a.frame_index = frame_index;
  a.stream = stream;
  a.mask_bytes = channel::side_channel(mem::serialize_mask(p.mask));
  auto s = p.symbols.detach().to(torch::kFloat32).contiguous();
  a.symbols.assign(s.data_ptr<float>(), s.data_ptr<float>() + s.numel());
  return a;
}

std::vector<torch::Tensor> padded_frames(const videodata::Gop& gop) {
  std::vector<torch::Tensor> out;
  for (const auto& f : gop.frames) out.push_back(videodata::pad_to_multiple(f.pixels, 64).unsqueeze(0));
  return out;
}

}  // namespace

GopResult transmit_gop(const videodata::Gop& gop, Models& models, const channel::ChannelConfig& ch,
                       uint64_t seed, const PipelineOptions& opts, int64_t first_frame_index) {
  require(gop.size() >= 1, ErrorKind::kInvalidArgument, "cannot code an empty GOP");
  const auto height = gop.frames.front().height();
  const auto width = gop.frames.front().width();
  for (const auto& f : gop.frames) {
    require(f.height() == height && f.width() == width, ErrorKind::kShapeMismatch,
            "frames of a GOP must share a resolution");
  }

  torch::NoGradGuard guard;
  auto config = ch;
  config.seed = seed;
  auto run_opts = opts;
  run_opts.training = false;
  const auto outcomes = unroll(models, padded_frames(gop), config, run_opts, first_frame_index);

  GopResult result;
  for (std::size_t t = 0; t < outcomes.size(); ++t) {
    const auto& o = outcomes[t];
    Frame rec{videodata::crop_to(o.x_hat[0], height, width).clamp(0.0, 1.0).contiguous()};
    metrics::FrameStats s;
    s.frame_index = o.frame_index;
    s.is_iframe = o.is_iframe;
    s.frame_cbr = metrics::cbr_from_symbols(o.frame.symbols.at(0), height, width);
    s.side_channel_bytes = static_cast<int64_t>(mem::serialized_mask_size(o.frame.sent[0].mask.channels()));
    result.payloads.push_back(archive(o.frame.sent[0], o.frame_index, 0));
    if (!o.is_iframe) {
      s.mv_cbr = metrics::cbr_from_symbols(o.mv.symbols.at(0), height, width);
      s.side_channel_bytes +=
          static_cast<int64_t>(mem::serialized_mask_size(o.mv.sent[0].mask.channels()));
      result.payloads.push_back(archive(o.mv.sent[0], o.frame_index, 1));
    }
    s.cbr = s.frame_cbr + s.mv_cbr;
    s.psnr_db = metrics::psnr(gop.frames[t], rec);
    s.ms_ssim = metrics::ms_ssim(gop.frames[t], rec);
    result.stats.push_back(s);
    result.reconstructions.push_back(std::move(rec));
  }
  return result;
}

GopResult transmit_sequence(const videodata::FrameSequence& seq, Models& models,
                            const channel::ChannelConfig& ch, std::size_t gop_size, uint64_t seed,
                            const PipelineOptions& opts) {
  GopResult all;
  int64_t index = 0;
  for (const auto& gop : videodata::slice_gops(seq, gop_size)) {
    auto r = transmit_gop(gop, models, ch, seed, opts, index);
    index += static_cast<int64_t>(gop.size());
    for (auto& f : r.reconstructions) all.reconstructions.push_back(std::move(f));
    all.stats.insert(all.stats.end(), r.stats.begin(), r.stats.end());
    all.payloads.insert(all.payloads.end(), r.payloads.begin(), r.payloads.end());
  }
  return all;
}

bool encoder_outputs_noise_invariant(const videodata::Gop& gop, Models& models,
                                     const channel::ChannelConfig& ch,
                                     std::pair<uint64_t, uint64_t> seeds) {
  require(seeds.first != seeds.second, ErrorKind::kInvalidArgument, "seeds must differ");
  torch::NoGradGuard guard;
  auto frames = padded_frames(gop);
  auto run = [&](uint64_t seed) {
    auto config = ch;
    config.seed = seed;
    return unroll(models, frames, config, PipelineOptions{});
  };
  const auto a = run(seeds.first);
  const auto b = run(seeds.second);
  auto same = [](const torch::Tensor& p, const torch::Tensor& q) {
    if (p.defined() != q.defined()) return false;
    return !p.defined() || torch::equal(p, q);
  };
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (!same(a[t].y, b[t].y) || !same(a[t].f_enc, b[t].f_enc) || !same(a[t].v, b[t].v) ||
        !same(a[t].y_mv, b[t].y_mv))
      return false;
    if (a[t].frame.decision.masks != b[t].frame.decision.masks) return false;
    if (a[t].mv.decision.masks != b[t].mv.decision.masks) return false;
    for (std::size_t i = 0; i < a[t].frame.sent.size(); ++i) {
      if (!same(a[t].frame.sent[i].symbols, b[t].frame.sent[i].symbols)) return false;
    }
  }
  return true;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.gcount() == 4, ErrorKind::kFormat, "payload archive truncated");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

void write_payload_archive(const std::filesystem::path& file,
                           const std::vector<ArchivedPayload>& payloads) {
  std::ofstream out(file, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + file.string());
  out.write(kArchiveMagic, 8);
  put_u32(out, static_cast<uint32_t>(payloads.size()));
  for (const auto& p : payloads) {
    put_u32(out, static_cast<uint32_t>(p.frame_index));
    out.put(static_cast<char>(p.stream));
    put_u32(out, static_cast<uint32_t>(p.mask_bytes.size()));
    out.write(reinterpret_cast<const char*>(p.mask_bytes.data()),
              static_cast<std::streamsize>(p.mask_bytes.size()));
    put_u32(out, static_cast<uint32_t>(p.symbols.size()));
    out.write(reinterpret_cast<const char*>(p.symbols.data()),
              static_cast<std::streamsize>(p.symbols.size() * sizeof(float)));
  }
  require(out.good(), ErrorKind::kIo, "failed writing " + file.string());
}

std::vector<ArchivedPayload> read_payload_archive(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + file.string());
  char magic[8];
  in.read(magic, 8);
  require(in.gcount() == 8 && std::memcmp(magic, kArchiveMagic, 8) == 0, ErrorKind::kFormat,
          file.string() + " is not a payload archive");
  const auto count = get_u32(in);
  std::vector<ArchivedPayload> out;
  for (uint32_t i = 0; i < count; ++i) {
    ArchivedPayload p;
    p.frame_index = get_u32(in);
    const int stream = in.get();
    require(stream == 0 || stream == 1, ErrorKind::kFormat, "payload archive: bad stream id");
    p.stream = static_cast<uint8_t>(stream);
    p.mask_bytes.resize(get_u32(in));
    in.read(reinterpret_cast<char*>(p.mask_bytes.data()),
            static_cast<std::streamsize>(p.mask_bytes.size()));
    p.symbols.resize(get_u32(in));
    in.read(reinterpret_cast<char*>(p.symbols.data()),
            static_cast<std::streamsize>(p.symbols.size() * sizeof(float)));
    require(in.good(), ErrorKind::kFormat, "payload archive truncated");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace jscc::pipeline

#include "jscc/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>

#include "jscc/error.hpp"
#include "jscc/motion_codec.hpp"

namespace jscc::training {

namespace F = torch::nn::functional;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kIFrame: return "iframe";
    case Stage::kPFrame: return "pframe";
    case Stage::kGopFinetune: return "gop_finetune";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  if (name == "iframe") return Stage::kIFrame;
  if (name == "pframe") return Stage::kPFrame;
  if (name == "gop_finetune") return Stage::kGopFinetune;
  fail(ErrorKind::kConfig, "unknown stage '" + name + "' (expected iframe, pframe or gop_finetune)");
}

void validate(const TrainConfig& c) {
  require(c.lambda > 0.0 && std::isfinite(c.lambda), ErrorKind::kConfig, "lambda must be positive");
  require(c.lr > 0.0, ErrorKind::kConfig, "lr must be positive");
  require(c.batch_iframe >= 1 && c.batch_pframe >= 1, ErrorKind::kConfig,
          "batch sizes must be at least 1");
  require(c.steps >= 1, ErrorKind::kConfig, "steps must be at least 1");
  require(c.warmup_steps >= 0, ErrorKind::kConfig, "warmup_steps must be >= 0");
  require(c.pframes >= 1, ErrorKind::kConfig, "pframes must be at least 1");
  require(static_cast<int>(c.wt.size()) >= c.pframes, ErrorKind::kConfig,
          "wt needs one weight per trained P-frame (" + std::to_string(c.pframes) + ")");
  for (double w : c.wt) require(w >= 0.0, ErrorKind::kConfig, "wt entries must be non-negative");
  require(c.entropy_pretrain_fraction >= 0.0 && c.entropy_pretrain_fraction < 1.0,
          ErrorKind::kConfig, "entropy_pretrain_fraction must be in [0, 1)");
  require(c.tau_start > 0.0 && c.tau_end > 0.0, ErrorKind::kConfig, "tau must be positive");
  require(c.crop >= 64 && c.crop % 64 == 0, ErrorKind::kConfig, "crop must be a multiple of 64");
  require(c.flow_pretrain_steps >= 0, ErrorKind::kConfig, "flow_pretrain_steps must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"wt", c.wt},
          {"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"batch_iframe", c.batch_iframe},
          {"batch_pframe", c.batch_pframe},
          {"csnr_db", c.csnr_db},
          {"channel", channel::to_string(c.channel)},
          {"noiseless", c.noiseless},
          {"stage", to_string(c.stage)},
          {"steps", c.steps},
          {"entropy_pretrain_fraction", c.entropy_pretrain_fraction},
          {"tau_start", c.tau_start},
          {"tau_end", c.tau_end},
          {"crop", c.crop},
          {"pframes", c.pframes},
          {"train_flow", c.train_flow},
          {"flow_pretrain_steps", c.flow_pretrain_steps},
          {"feature_target",
           c.feature_target == FeatureTarget::kEncoderFeature ? "encoder_feature" : "pixel_render"},
          {"mem_enabled", c.ablation.mem_enabled},
          {"feature_propagation", c.ablation.feature_propagation},
          {"feature_loss", c.ablation.feature_loss},
          {"seed", c.seed},
          {"log_every", c.log_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.wt = j.value("wt", c.wt);
  c.lr = j.value("lr", c.lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.batch_iframe = j.value("batch_iframe", c.batch_iframe);
  c.batch_pframe = j.value("batch_pframe", c.batch_pframe);
  c.csnr_db = j.value("csnr_db", c.csnr_db);
  c.channel = channel::kind_from_string(j.value("channel", std::string("awgn")));
  c.noiseless = j.value("noiseless", c.noiseless);
  c.stage = stage_from_string(j.value("stage", std::string("iframe")));
  c.steps = j.value("steps", c.steps);
  c.entropy_pretrain_fraction = j.value("entropy_pretrain_fraction", c.entropy_pretrain_fraction);
  c.tau_start = j.value("tau_start", c.tau_start);
  c.tau_end = j.value("tau_end", c.tau_end);
  c.crop = j.value("crop", c.crop);
  c.pframes = j.value("pframes", c.pframes);
  c.train_flow = j.value("train_flow", c.train_flow);
  c.flow_pretrain_steps = j.value("flow_pretrain_steps", c.flow_pretrain_steps);
  c.feature_target = j.value("feature_target", std::string("encoder_feature")) == "pixel_render"
                         ? FeatureTarget::kPixelRender
                         : FeatureTarget::kEncoderFeature;
  c.ablation.mem_enabled = j.value("mem_enabled", true);
  c.ablation.feature_propagation = j.value("feature_propagation", true);
  c.ablation.feature_loss = j.value("feature_loss", true);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

LossBreakdown loss_iframe(const torch::Tensor& rate, const torch::Tensor& distortion,
                          double lambda) {
  LossBreakdown l;
  l.rate = lambda * rate;
  l.frame_distortion = distortion;
  l.feature_distortion = torch::zeros_like(distortion);
  l.total = l.rate + distortion;
  return l;
}

LossBreakdown loss_pframe(const torch::Tensor& rate, const torch::Tensor& distortion,
                          const torch::Tensor& feature_distortion, double lambda, double weight) {
  LossBreakdown l;
  l.rate = lambda * rate;
  l.frame_distortion = distortion;
  l.feature_distortion = feature_distortion;
  l.total = l.rate + weight * (distortion + feature_distortion);
  return l;
}

torch::Tensor loss_gop(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& per_frame,
                       double lambda, const std::vector<double>& wt) {
  require(!per_frame.empty(), ErrorKind::kInvalidArgument, "loss_gop of an empty GOP");
  require(wt.size() + 1 >= per_frame.size(), ErrorKind::kInvalidArgument,
          "loss_gop needs a weight for every P-frame");
  torch::Tensor total;
  for (std::size_t t = 0; t < per_frame.size(); ++t) {
    const double w = t == 0 ? 1.0 : wt[t - 1];
    auto term = lambda * per_frame[t].first + w * per_frame[t].second;
    total = total.defined() ? total + term : term;
  }
  return total;
}

TrainData synthetic_toy_set(int clips, int frames, int64_t size, uint64_t seed) {
  TrainData data;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_int_distribution<int> speed(-2, 2);
  for (int i = 0; i < clips; ++i) {
    auto clip = videodata::synth_moving_squares(count(rng), frames, {size, size},
                                                {speed(rng), speed(rng)}, rng());
    data.clips.push_back(std::move(clip.sequence));
    data.flows.push_back(std::move(clip.flows));
  }
  return data;
}

void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& curve) {
  os << "step,rate,frame_distortion,feature_distortion,entropy_nll,total,tau,mean_keep\n";
  os << std::setprecision(8);
  for (const auto& r : curve) {
    os << r.step << ',' << r.rate << ',' << r.frame_distortion << ',' << r.feature_distortion << ','
       << r.entropy_nll << ',' << r.total << ',' << r.tau << ',' << r.mean_keep << '\n';
  }
}

namespace {

int pretrain_steps(const TrainConfig& c) {
  if (c.stage == Stage::kGopFinetune) return 0;
  return static_cast<int>(std::floor(c.entropy_pretrain_fraction * c.steps));
}

}  // namespace

double tau_at(const TrainConfig& c, int step) {
  const int start = pretrain_steps(c);
  if (c.stage == Stage::kGopFinetune) return c.tau_end;
  if (step <= start) return c.tau_start;
  const int span = std::max(1, c.steps - 1 - start);
  const double k = std::min(1.0, static_cast<double>(step - start) / span);
  return c.tau_start * std::pow(c.tau_end / c.tau_start, k);
}

std::vector<std::string> trained_entries(Stage stage, bool train_flow, bool tie_proj_p) {
  std::vector<std::string> out;
  if (stage == Stage::kIFrame) return {"iframe", "mem.iframe"};
  if (stage == Stage::kGopFinetune) out = {"iframe", "mem.iframe"};
  for (const char* e : {"pframe", "motion.mv_codec", "context_gen", "mem.pframe", "mem.mv"}) {
    out.emplace_back(e);
  }
  if (!tie_proj_p) out.emplace_back("proj_p");
  if (train_flow) out.emplace_back("motion.flow");
  return out;
}

namespace {

class Sampler {
 public:
  Sampler(const TrainData& data, uint64_t seed) : data_(data), rng_(seed) {}

  /// B×3×crop×crop from random frames.
  torch::Tensor frames(int batch, int64_t crop) {
    std::vector<torch::Tensor> out;
    for (int b = 0; b < batch; ++b) {
      const auto& clip = pick_clip(1);
      const auto t = uniform(clip.size());
      out.push_back(videodata::random_crop_pair({clip.frames[t]}, crop, rng_())[0].pixels);
    }
    return torch::stack(out);
  }

  /// `length` tensors of B×3×crop×crop, consecutive frames of random clips.
  std::vector<torch::Tensor> windows(int batch, int length, int64_t crop) {
    std::vector<std::vector<torch::Tensor>> per_t(static_cast<std::size_t>(length));
    for (int b = 0; b < batch; ++b) {
      const auto& clip = pick_clip(static_cast<std::size_t>(length));
      const auto start = uniform(clip.size() - static_cast<std::size_t>(length) + 1);
      std::vector<Frame> window(clip.frames.begin() + static_cast<std::ptrdiff_t>(start),
                                clip.frames.begin() + static_cast<std::ptrdiff_t>(start) + length);
      auto cropped = videodata::random_crop_pair(window, crop, rng_());
      for (int t = 0; t < length; ++t) per_t[static_cast<std::size_t>(t)].push_back(cropped[static_cast<std::size_t>(t)].pixels);
    }
    std::vector<torch::Tensor> out;
    for (auto& v : per_t) out.push_back(torch::stack(v));
    return out;
  }

  /// (prev, cur, ground-truth flow) batches for supervised flow training.
  std::array<torch::Tensor, 3> flow_pairs(int batch, int64_t crop) {
    std::vector<torch::Tensor> prev, cur, flow;
    for (int b = 0; b < batch; ++b) {
      std::size_t i = 0;
      do {
        i = uniform(data_.clips.size());
      } while (data_.clips[i].size() < 2);
      const auto t = 1 + uniform(data_.clips[i].size() - 1);
      auto cropped = videodata::random_crop_pair(
          {data_.clips[i].frames[t - 1], data_.clips[i].frames[t], Frame{data_.flows[i][t].flow}},
          crop, rng_());
      prev.push_back(cropped[0].pixels);
      cur.push_back(cropped[1].pixels);
      flow.push_back(cropped[2].pixels);
    }
    return {torch::stack(prev), torch::stack(cur), torch::stack(flow)};
  }

  uint64_t next_seed() { return rng_(); }

 private:
  std::size_t uniform(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }

  const videodata::FrameSequence& pick_clip(std::size_t min_len) {
    for (int tries = 0; tries < 1000; ++tries) {
      const auto& c = data_.clips[uniform(data_.clips.size())];
      if (c.size() >= min_len) return c;
    }
    fail(ErrorKind::kInvalidArgument, "no training clip has " + std::to_string(min_len) + " frames");
  }

  const TrainData& data_;
  std::mt19937_64 rng_;
};

void check_data(const TrainConfig& c, const TrainData& data) {
  require(!data.clips.empty(), ErrorKind::kInvalidArgument, "training data is empty");
  bool long_enough = false;
  for (const auto& clip : data.clips) {
    require(!clip.frames.empty(), ErrorKind::kInvalidArgument, "training clip without frames");
    require(clip.frames.front().height() >= c.crop && clip.frames.front().width() >= c.crop,
            ErrorKind::kInvalidArgument, "training frames are smaller than the crop");
    long_enough |= static_cast<int>(clip.size()) >= c.pframes + 1;
  }
  if (c.stage != Stage::kIFrame) {
    require(long_enough, ErrorKind::kInvalidArgument,
            "no training clip has " + std::to_string(c.pframes + 1) + " frames");
  }
  if (c.flow_pretrain_steps > 0) {
    require(data.flows.size() == data.clips.size(), ErrorKind::kInvalidArgument,
            "flow pretraining needs ground-truth motion for every clip");
  }
}

void check_prerequisite(const TrainConfig& c, const StageIO& io) {
  if (c.stage == Stage::kIFrame) return;
  require(io.init_checkpoint.has_value(), ErrorKind::kPrecondition,
          "stage " + to_string(c.stage) + " needs a checkpoint from the previous stage");
  require(std::filesystem::exists(*io.init_checkpoint), ErrorKind::kPrecondition,
          "checkpoint " + io.init_checkpoint->string() + " does not exist");
  const auto meta = checkpoint::read_metadata(*io.init_checkpoint);
  const bool ok = c.stage == Stage::kPFrame ? true : meta.stage != to_string(Stage::kIFrame);
  require(ok, ErrorKind::kPrecondition,
          "stage " + to_string(c.stage) + " cannot start from a '" + meta.stage + "' checkpoint");
}

double mean_keep(const std::vector<pipeline::FrameOutcome>& outcomes, bool p_only) {
  double sum = 0.0;
  int64_t n = 0;
  for (const auto& o : outcomes) {
    if (p_only && o.is_iframe) continue;
    for (const auto& m : o.frame.decision.masks) {
      sum += static_cast<double>(m.popcount()) / static_cast<double>(m.channels());
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double scalar(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

struct StepLoss {
  torch::Tensor objective;  // what is backpropagated
  CurveRow row;
};

StepLoss iframe_step(Models& models, const TrainConfig& c, Sampler& sampler,
                     const channel::ChannelConfig& ch, const pipeline::PipelineOptions& opts) {
  auto x = sampler.frames(c.batch_iframe, c.crop);
  pipeline::EncoderPipelineState enc;
  pipeline::DecoderPipelineState dec;
  auto o = pipeline::code_iframe(models, x, ch, 0, opts, enc, dec);
  auto lb = loss_iframe(o.rate_soft.mean(), F::mse_loss(o.x_hat, x), c.lambda);
  StepLoss s;
  s.objective = lb.total + o.entropy_nll;
  s.row.rate = scalar(lb.rate);
  s.row.frame_distortion = scalar(lb.frame_distortion);
  s.row.entropy_nll = scalar(o.entropy_nll);
  s.row.total = scalar(lb.total);
  s.row.mean_keep = mean_keep({o}, false);
  return s;
}

torch::Tensor feature_distortion(Models& models, const TrainConfig& c,
                                 const std::vector<pipeline::FrameOutcome>& outs, std::size_t t,
                                 const torch::Tensor& x) {
  const auto& o = outs[t];
  if (!c.ablation.feature_loss) return torch::zeros({});
  if (c.feature_target == FeatureTarget::kEncoderFeature) {
    return F::mse_loss(o.f_hat, o.f_enc.detach());
  }
  auto rendered = models->iframe->refine->forward(nn::warp(outs[t - 1].f_hat, o.v_hat));
  return F::mse_loss(rendered, x);
}

StepLoss unroll_step(Models& models, const TrainConfig& c, Sampler& sampler,
                     const channel::ChannelConfig& ch, const pipeline::PipelineOptions& opts) {
  auto frames = sampler.windows(c.batch_pframe, c.pframes + 1, c.crop);
  auto outs = pipeline::unroll(models, frames, ch, opts);

  StepLoss s;
  torch::Tensor total, nll;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> per_frame;
  double rate = 0.0, dist = 0.0, fdist = 0.0;
  for (std::size_t t = 0; t < outs.size(); ++t) {
    auto d = F::mse_loss(outs[t].x_hat, frames[t]);
    auto r = outs[t].rate_soft.mean();
    if (c.stage == Stage::kGopFinetune) {
      per_frame.emplace_back(r, d);
      rate += c.lambda * scalar(r);
      dist += scalar(d);
      nll = nll.defined() ? nll + outs[t].entropy_nll : outs[t].entropy_nll;
      continue;
    }
    if (outs[t].is_iframe) continue;
    auto lb = loss_pframe(r, d, feature_distortion(models, c, outs, t, frames[t]), c.lambda,
                          c.wt[t - 1]);
    total = total.defined() ? total + lb.total : lb.total;
    nll = nll.defined() ? nll + outs[t].entropy_nll : outs[t].entropy_nll;
    rate += scalar(lb.rate);
    dist += scalar(lb.frame_distortion);
    fdist += scalar(lb.feature_distortion);
  }
  if (c.stage == Stage::kGopFinetune) total = loss_gop(per_frame, c.lambda, c.wt);

  s.objective = total + nll;
  s.row.rate = rate;
  s.row.frame_distortion = dist;
  s.row.feature_distortion = fdist;
  s.row.entropy_nll = scalar(nll);
  s.row.total = scalar(total);
  s.row.mean_keep = mean_keep(outs, c.stage == Stage::kPFrame);
  return s;
}

void pretrain_flow(Models& models, const TrainConfig& c, Sampler& sampler) {
  torch::optim::Adam opt(models->flow->parameters(), torch::optim::AdamOptions(c.lr));
  for (int step = 0; step < c.flow_pretrain_steps; ++step) {
    auto [prev, cur, gt] = sampler.flow_pairs(c.batch_pframe, c.crop);
    auto loss = motion::endpoint_error(models->flow->forward(prev, cur), gt);
    require(std::isfinite(loss.item<double>()), ErrorKind::kDivergence,
            "flow pretraining diverged at step " + std::to_string(step));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
}

/// Disables gradients for every parameter outside `trained` for its lifetime.
class FreezeGuard {
 public:
  FreezeGuard(Models& models, const std::vector<std::string>& trained) {
    std::set<const void*> keep;
    for (auto& p : models->parameters_of(trained)) keep.insert(p.unsafeGetTensorImpl());
    for (auto& p : models->parameters()) {
      if (!keep.count(p.unsafeGetTensorImpl()) && p.requires_grad()) {
        p.requires_grad_(false);
        frozen_.push_back(p);
      }
    }
  }
  ~FreezeGuard() {
    for (auto& p : frozen_) p.requires_grad_(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<torch::Tensor> frozen_;
};

}  // namespace

StageResult run_stage(const TrainConfig& config, const TrainData& data, Models& models,
                      const StageIO& io) {
  validate(config);
  check_data(config, data);
  check_prerequisite(config, io);
  if (io.init_checkpoint) checkpoint::load(*io.init_checkpoint, models);

  torch::manual_seed(config.seed);
  Sampler sampler(data, config.seed);
  models->train();

  const auto entries = trained_entries(config.stage, config.train_flow, models->tie_proj_p);
  FreezeGuard freeze(models, entries);
  if (config.stage == Stage::kPFrame && config.flow_pretrain_steps > 0) {
    pretrain_flow(models, config, sampler);
  }
  torch::optim::Adam opt(models->parameters_of(entries), torch::optim::AdamOptions(config.lr));

  channel::ChannelConfig ch;
  ch.kind = config.channel;
  ch.csnr_db = config.csnr_db;
  ch.noiseless = config.noiseless;

  const int warmup = pretrain_steps(config);
  StageResult result;
  auto save_curve = [&] {
    if (!io.curve_csv) return;
    if (io.curve_csv->has_parent_path()) std::filesystem::create_directories(io.curve_csv->parent_path());
    std::ofstream os(*io.curve_csv);
    require(os.good(), ErrorKind::kIo, "cannot write " + io.curve_csv->string());
    write_curve_csv(os, result.curve);
  };
  for (int step = 0; step < config.steps; ++step) {
    ch.seed = sampler.next_seed();
    pipeline::PipelineOptions opts;
    opts.training = true;
    opts.tau = tau_at(config, step);
    opts.force_full_masks = step < warmup;
    opts.ablation = config.ablation;
    opts.policy_seed = sampler.next_seed();
    opts.freeze_flow = !config.train_flow;

    auto s = config.stage == Stage::kIFrame ? iframe_step(models, config, sampler, ch, opts)
                                            : unroll_step(models, config, sampler, ch, opts);
    s.row.step = step;
    s.row.tau = opts.tau;
    if (!std::isfinite(s.row.total) || !std::isfinite(s.row.entropy_nll)) {
      // Keep the curve up to the failure for diagnosis.
      save_curve();
      fail(ErrorKind::kDivergence,
           "training diverged at step " + std::to_string(step) +
               " (rate=" + std::to_string(s.row.rate) +
               ", distortion=" + std::to_string(s.row.frame_distortion) +
               ", nll=" + std::to_string(s.row.entropy_nll) + ")");
    }
    const double ramp = config.warmup_steps > 0
                            ? std::min(1.0, static_cast<double>(step + 1) / config.warmup_steps)
                            : 1.0;
    for (auto& group : opt.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(config.lr * ramp);
    }
    opt.zero_grad();
    s.objective.backward();
    opt.step();
    result.curve.push_back(s.row);
  }
  models->eval();

  save_curve();
  if (io.out_checkpoint) {
    checkpoint::save(*io.out_checkpoint, models, to_string(config.stage), to_json(config));
  }
  return result;
}

}  // namespace jscc::training

#include "jscc/evalsuite.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include "jscc/error.hpp"
#include "jscc/flops.hpp"
#include "jscc/plot.hpp"
#include "jscc/training.hpp"

namespace jscc::eval {

pipeline::AblationFlags ablation_flags_of(const std::filesystem::path& checkpoint) {
  return training::train_config_from_json(checkpoint::read_metadata(checkpoint).train_config)
      .ablation;
}

Summary summarize(const std::vector<metrics::FrameStats>& stats) {
  require(!stats.empty(), ErrorKind::kInvalidArgument, "nothing to summarize");
  Summary s;
  int64_t n_i = 0, n_p = 0;
  for (const auto& f : stats) {
    s.cbr += f.cbr;
    s.psnr_db += f.psnr_db;
    s.ms_ssim += f.ms_ssim;
    if (f.is_iframe) {
      s.iframe_cbr += f.cbr;
      ++n_i;
    } else {
      s.pframe_cbr += f.cbr;
      ++n_p;
    }
  }
  s.frames = static_cast<int64_t>(stats.size());
  const auto n = static_cast<double>(s.frames);
  s.cbr /= n;
  s.psnr_db /= n;
  s.ms_ssim /= n;
  if (n_i > 0) s.iframe_cbr /= static_cast<double>(n_i);
  if (n_p > 0) s.pframe_cbr /= static_cast<double>(n_p);
  return s;
}

Summary evaluate(Models& models, const std::vector<videodata::FrameSequence>& dataset,
                 const channel::ChannelConfig& ch, std::size_t gop, uint64_t seed,
                 const pipeline::PipelineOptions& opts) {
  require(!dataset.empty(), ErrorKind::kInvalidArgument, "evaluation dataset is empty");
  std::vector<metrics::FrameStats> all;
  for (const auto& seq : dataset) {
    auto r = pipeline::transmit_sequence(seq, models, ch, gop, seed, opts);
    all.insert(all.end(), r.stats.begin(), r.stats.end());
  }
  return summarize(all);
}

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::kLambda: return "lambda";
    case Axis::kCsnr: return "csnr";
    case Axis::kGop: return "gop";
  }
  return "?";
}

Axis axis_from_string(const std::string& name) {
  if (name == "lambda") return Axis::kLambda;
  if (name == "csnr") return Axis::kCsnr;
  if (name == "gop") return Axis::kGop;
  fail(ErrorKind::kConfig, "unknown sweep axis '" + name + "' (expected lambda, csnr or gop)");
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

pipeline::PipelineOptions options_for(const std::filesystem::path& checkpoint) {
  pipeline::PipelineOptions opts;
  opts.ablation = ablation_flags_of(checkpoint);
  return opts;
}

}  // namespace

std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
  require(!spec.values.empty(), ErrorKind::kConfig, "sweep needs at least one value");
  require(spec.repeats >= 1, ErrorKind::kConfig, "sweep repeats must be at least 1");
  require(!spec.dataset.empty(), ErrorKind::kConfig, "sweep dataset is empty");
  require(spec.checkpoints.size() == 1 || spec.checkpoints.size() == spec.values.size(),
          ErrorKind::kConfig, "sweep needs one checkpoint, or one per value");

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    SweepRow row;
    row.value = spec.values[i];
    const auto& ckpt = spec.checkpoints.size() == 1 ? spec.checkpoints[0] : spec.checkpoints[i];
    if (!std::filesystem::exists(ckpt)) {
      row.skipped = true;
      row.note = "missing checkpoint " + ckpt.string();
      rows.push_back(row);
      continue;
    }
    auto models = checkpoint::load_models(ckpt);
    const auto opts = options_for(ckpt);
    auto ch = spec.channel;
    auto gop = spec.gop;
    if (spec.axis == Axis::kCsnr) ch.csnr_db = row.value;
    if (spec.axis == Axis::kGop) {
      require(row.value >= 1.0 && row.value == std::floor(row.value), ErrorKind::kConfig,
              "GOP sweep values must be positive integers");
      gop = static_cast<std::size_t>(row.value);
    }

    std::vector<double> cbr, psnr, ssim;
    for (const auto& seq : spec.dataset) {
      for (int r = 0; r < spec.repeats; ++r) {
        const auto seed = channel::mix_seed(spec.seed, static_cast<uint64_t>(r));
        auto s = summarize(pipeline::transmit_sequence(seq, models, ch, gop, seed, opts).stats);
        cbr.push_back(s.cbr);
        psnr.push_back(s.psnr_db);
        ssim.push_back(s.ms_ssim);
      }
    }
    row.samples = static_cast<int>(cbr.size());
    std::tie(row.cbr_mean, row.cbr_std) = mean_std(cbr);
    std::tie(row.psnr_mean, row.psnr_std) = mean_std(psnr);
    std::tie(row.ms_ssim_mean, row.ms_ssim_std) = mean_std(ssim);
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, Axis axis, const std::vector<SweepRow>& rows) {
  os << to_string(axis)
     << ",samples,cbr_mean,cbr_std,psnr_mean,psnr_std,ms_ssim_mean,ms_ssim_std,status\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.value << ',' << r.samples << ',';
    if (r.skipped) {
      os << ",,,,,,skipped: " << r.note << '\n';
      continue;
    }
    os << r.cbr_mean << ',' << r.cbr_std << ',' << r.psnr_mean << ',' << r.psnr_std << ','
       << r.ms_ssim_mean << ',' << r.ms_ssim_std << ",ok\n";
  }
}

void emit_sweep(const SweepSpec& spec, const std::vector<SweepRow>& rows,
                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stem = spec.name + "_" + to_string(spec.axis);
  {
    std::ofstream os(dir / (stem + ".csv"));
    require(os.good(), ErrorKind::kIo, "cannot write sweep CSV in " + dir.string());
    write_sweep_csv(os, spec.axis, rows);
  }
  struct Metric {
    const char* name;
    const char* label;
    double SweepRow::*field;
  };
  for (const auto& m : {Metric{"psnr", "PSNR (dB)", &SweepRow::psnr_mean},
                        Metric{"ms_ssim", "MS-SSIM", &SweepRow::ms_ssim_mean},
                        Metric{"cbr", "CBR", &SweepRow::cbr_mean}}) {
    plot::Figure fig;
    fig.title = spec.name + ": " + m.label + " vs " + to_string(spec.axis);
    fig.x_label = to_string(spec.axis);
    fig.y_label = m.label;
    plot::Series s{spec.name, {}, {}};
    for (const auto& r : rows) {
      if (r.skipped) continue;
      s.x.push_back(r.value);
      s.y.push_back(r.*(m.field));
    }
    fig.series.push_back(s);
    plot::write_svg(fig, dir / (stem + "_" + m.name + ".svg"));
  }
}

Trace frame_trace(const videodata::FrameSequence& seq, Models& models,
                  const channel::ChannelConfig& ch, std::size_t gop, uint64_t seed) {
  Trace t;
  t.stats = pipeline::transmit_sequence(seq, models, ch, gop, seed).stats;
  const metrics::FrameStats* first = nullptr;
  const metrics::FrameStats* last = nullptr;
  for (const auto& s : t.stats) {
    if (s.is_iframe) continue;
    if (!first) first = &s;
    last = &s;
  }
  if (first) t.psnr_drop_db = first->psnr_db - last->psnr_db;
  return t;
}

void emit_trace(const Trace& trace, const std::string& name, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / (name + ".csv"));
    require(os.good(), ErrorKind::kIo, "cannot write trace CSV in " + dir.string());
    metrics::write_stats_csv(os, trace.stats);
  }
  std::vector<double> iframes;
  plot::Series cbr{"CBR", {}, {}}, psnr{"PSNR", {}, {}};
  for (const auto& s : trace.stats) {
    const auto x = static_cast<double>(s.frame_index);
    if (s.is_iframe) iframes.push_back(x);
    cbr.x.push_back(x);
    cbr.y.push_back(s.cbr);
    psnr.x.push_back(x);
    psnr.y.push_back(s.psnr_db);
  }
  plot::write_svg({name + ": per-frame CBR", "frame", "CBR", {cbr}, iframes},
                  dir / (name + "_cbr.svg"));
  plot::write_svg({name + ": per-frame PSNR", "frame", "PSNR (dB)", {psnr}, iframes},
                  dir / (name + "_psnr.svg"));
}

FlopsRow layer_cost(const nn::BlockSpec& spec, int64_t height, int64_t width) {
  torch::NoGradGuard guard;
  auto block = nn::build_block(spec);
  MacScope scope;
  block.forward(torch::zeros({1, spec.channels_in, height, width}));
  return FlopsRow{"layer", scope.macs(), nn::parameter_count(*block.ptr())};
}

namespace {

template <typename Fn>
FlopsRow measure(const std::string& name, const torch::nn::Module& module, Fn&& fn) {
  MacScope scope;
  fn();
  return FlopsRow{name, scope.macs(), nn::parameter_count(module)};
}

int64_t policy_macs(const mem::PolicyNetImpl& p, int64_t channels) {
  const auto h = p.fc1->options.out_features();
  return channels * (6 * h + h * h + h * 2);
}

void add_mem_rows(std::vector<FlopsRow>& rows, const std::string& prefix, mem::Mem& m,
                  const torch::Tensor& y, const torch::Tensor& temporal) {
  rows.push_back(measure(prefix + ".entropy", *m->entropy, [&] {
    m->entropy->forward(y, temporal, mem::EstimationMode::kAutoregressive);
  }));
  rows.push_back(FlopsRow{prefix + ".policy", policy_macs(*m->policy, m->latent_channels),
                          nn::parameter_count(*m->policy)});
  rows.push_back(
      measure(prefix + ".encoder_stack", *m->encoder_stack, [&] { m->encoder_stack->forward(y); }));
  rows.push_back(
      measure(prefix + ".decoder_stack", *m->decoder_stack, [&] { m->decoder_stack->forward(y); }));
}

FlopsRow total(const std::string& name, const std::vector<FlopsRow>& rows,
               const std::vector<std::string>& parts) {
  FlopsRow t{name, 0, 0};
  for (const auto& part : parts) {
    bool found = false;
    for (const auto& r : rows) {
      if (r.module != part) continue;
      t.macs += r.macs;
      t.params += r.params;
      found = true;
    }
    require(found, ErrorKind::kInvalidArgument, "flops total refers to unknown row " + part);
  }
  return t;
}

}  // namespace

std::vector<FlopsRow> flops_report(Models& models, int64_t height, int64_t width) {
  require(height > 0 && width > 0, ErrorKind::kInvalidArgument, "input size must be positive");
  torch::NoGradGuard guard;
  const auto h = (height + 63) / 64 * 64;
  const auto w = (width + 63) / 64 * 64;
  const auto& a = models->arch;
  auto x = torch::zeros({1, 3, h, w});
  auto f = torch::zeros({1, a.feature_channels, h, w});
  auto v = torch::zeros({1, 2, h, w});
  auto y = torch::zeros({1, a.latent_channels, h / 16, w / 16});
  auto y_mv = torch::zeros({1, a.mv_latent_channels, h / 16, w / 16});

  std::vector<FlopsRow> rows;
  auto& ic = models->iframe;
  rows.push_back(measure("iframe.encoder", *ic->encoder, [&] { ic->encoder->forward(x); }));
  rows.push_back(measure("iframe.decoder", *ic->decoder, [&] { ic->decoder->forward(y); }));
  rows.push_back(measure("iframe.refine", *ic->refine, [&] { ic->refine->forward(f); }));
  rows.push_back(measure("iframe.proj_i", *ic->proj_i, [&] { ic->proj_i->forward(x); }));
  add_mem_rows(rows, "mem.iframe", models->mem_iframe, y, {});

  rows.push_back(measure("motion.flow", *models->flow, [&] { models->flow->forward(x, x); }));
  rows.push_back(measure("motion.mv_encoder", *models->mv_codec->encoder,
                         [&] { models->mv_codec->encoder->forward(v); }));
  rows.push_back(measure("motion.mv_decoder", *models->mv_codec->decoder,
                         [&] { models->mv_codec->decoder->forward(y_mv); }));
  add_mem_rows(rows, "mem.mv", models->mem_mv, y_mv, {});

  ContextSet ctx;
  rows.push_back(measure("context_gen", *models->cond, [&] { ctx = models->cond->forward(f, x, v); }));
  torch::Tensor temporal;
  {
    MacScope scope;
    temporal = models->cond->temporal_prior(ctx);
    rows.push_back(FlopsRow{"context_gen.temporal_prior", scope.macs(),
                            nn::parameter_count(*models->cond->prior1) +
                                nn::parameter_count(*models->cond->prior2)});
  }
  // The temporal-prior parameters are already part of context_gen.
  rows.back().params = 0;
  rows.push_back(measure("pframe.encoder", *models->pframe->encoder,
                         [&] { models->pframe->encoder->forward(x, ctx); }));
  rows.push_back(measure("pframe.decoder", *models->pframe->decoder,
                         [&] { models->pframe->decoder->forward(y, ctx); }));
  if (!models->tie_proj_p) {
    rows.push_back(
        measure("proj_p", *models->proj_p, [&] { models->proj_p->forward(y, ctx); }));
  }
  add_mem_rows(rows, "mem.pframe", models->mem_pframe, y, temporal);

  std::vector<FlopsRow> totals;
  totals.push_back(total("total.iframe.encoder_side", rows,
                         {"iframe.encoder", "iframe.proj_i", "mem.iframe.entropy",
                          "mem.iframe.policy", "mem.iframe.encoder_stack"}));
  totals.push_back(total("total.iframe.decoder_side", rows,
                         {"mem.iframe.decoder_stack", "iframe.decoder", "iframe.refine"}));
  std::vector<std::string> p_enc{"motion.flow",        "motion.mv_encoder",
                                 "mem.mv.entropy",     "mem.mv.policy",
                                 "mem.mv.encoder_stack", "context_gen",
                                 "context_gen.temporal_prior", "pframe.encoder",
                                 "mem.pframe.entropy", "mem.pframe.policy",
                                 "mem.pframe.encoder_stack"};
  if (!models->tie_proj_p) p_enc.push_back("proj_p");
  totals.push_back(total("total.pframe.encoder_side", rows, p_enc));
  totals.push_back(total("total.pframe.decoder_side", rows,
                         {"mem.mv.decoder_stack", "motion.mv_decoder", "context_gen",
                          "mem.pframe.decoder_stack", "pframe.decoder", "iframe.refine"}));
  FlopsRow all{"total.parameters", 0, nn::parameter_count(*models)};
  rows.insert(rows.end(), totals.begin(), totals.end());
  rows.push_back(all);
  return rows;
}

void write_flops_csv(std::ostream& os, const std::vector<FlopsRow>& rows) {
  os << "module,macs,flops,params\n";
  for (const auto& r : rows) {
    os << r.module << ',' << r.macs << ',' << r.flops() << ',' << r.params << '\n';
  }
}

std::vector<AblationRow> run_ablation(const AblationSpec& spec) {
  require(std::filesystem::exists(spec.reference), ErrorKind::kPrecondition,
          "reference checkpoint " + spec.reference.string() + " does not exist");
  require(spec.rate_tolerance > 0.0, ErrorKind::kConfig, "rate tolerance must be positive");

  auto score = [&](const std::filesystem::path& ckpt) {
    auto models = checkpoint::load_models(ckpt);
    return evaluate(models, spec.dataset, spec.channel, spec.gop, spec.seed, options_for(ckpt));
  };

  std::vector<AblationRow> rows;
  const auto ref = score(spec.reference);
  rows.push_back(AblationRow{"full", spec.reference, ref.cbr, ref.psnr_db, true, 0.0});

  for (const auto& [name, checkpoints] : spec.variants) {
    AblationRow best{name, {}, 0.0, 0.0, false, std::numeric_limits<double>::quiet_NaN()};
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& ckpt : checkpoints) {
      if (!std::filesystem::exists(ckpt)) continue;
      const auto s = score(ckpt);
      const double gap = std::abs(s.cbr - ref.cbr);
      if (gap < best_gap) {
        best_gap = gap;
        best.checkpoint = ckpt;
        best.cbr = s.cbr;
        best.psnr_db = s.psnr_db;
      }
    }
    if (std::isfinite(best_gap) && ref.cbr > 0.0) {
      best.rate_matched = best_gap / ref.cbr <= spec.rate_tolerance;
      if (best.rate_matched) best.psnr_delta_pct = (best.psnr_db - ref.psnr_db) / ref.psnr_db * 100.0;
    }
    rows.push_back(best);
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,checkpoint,cbr,psnr_db,rate_matched,psnr_delta_pct\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.name << ',' << r.checkpoint.string() << ',' << r.cbr << ',' << r.psnr_db << ','
       << (r.rate_matched ? 1 : 0) << ',';
    if (r.rate_matched) os << r.psnr_delta_pct;
    os << '\n';
  }
}

}  // namespace jscc::eval

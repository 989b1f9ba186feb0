#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "jscc/config.hpp"
#include "jscc/error.hpp"
#include "jscc/evalsuite.hpp"
#include "jscc/gop_pipeline.hpp"
#include "jscc/models.hpp"
#include "jscc/training.hpp"

using namespace jscc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::string checkpoint;
};

config::RunConfig resolve(const Common& c) {
  auto rc = c.config.empty() ? config::parse("") : config::load(c.config);
  if (c.seed) {
    rc.seed = *c.seed;
    rc.train.seed = *c.seed;
    rc.channel.seed = *c.seed;
  }
  if (!c.out.empty()) rc.out = c.out;
  if (!c.checkpoint.empty()) rc.checkpoint = c.checkpoint;
  config::validate(rc);
  std::filesystem::create_directories(rc.out);
  config::write_effective(rc, rc.out / "effective_config.yaml");
  return rc;
}

void add_common(CLI::App* cmd, Common& c, bool with_checkpoint) {
  cmd->add_option("--config", c.config, "YAML run configuration");
  cmd->add_option("--seed", c.seed, "Global seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
  if (with_checkpoint) cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint to evaluate");
}

training::Stage previous(training::Stage s) {
  return s == training::Stage::kGopFinetune ? training::Stage::kPFrame : training::Stage::kIFrame;
}

int cmd_train(const Common& common, training::Stage stage, const std::string& init) {
  const auto rc = resolve(common);
  auto cfg = rc.train;
  cfg.stage = stage;
  cfg.steps = stage == training::Stage::kIFrame   ? rc.steps.iframe
              : stage == training::Stage::kPFrame ? rc.steps.pframe
                                                  : rc.steps.gop_finetune;
  training::StageIO io;
  if (stage != training::Stage::kIFrame) {
    io.init_checkpoint = init.empty() ? rc.stage_checkpoint(previous(stage)) : std::filesystem::path(init);
    require(std::filesystem::exists(*io.init_checkpoint), ErrorKind::kPrecondition,
            training::to_string(stage) + " needs " + io.init_checkpoint->string() +
                "; run " + (stage == training::Stage::kPFrame ? "train-iframe" : "train-pframe") +
                " first or pass --init");
  }
  io.out_checkpoint = rc.stage_checkpoint(stage);
  io.curve_csv = rc.out / (training::to_string(stage) + "_curve.csv");

  const auto data = config::load_train_set(rc);
  auto models = make_models(rc.arch, rc.seed, rc.tie_proj_p);
  const auto result = training::run_stage(cfg, data, models, io);
  const auto& last = result.curve.back();
  std::cout << training::to_string(stage) << ": " << result.curve.size() << " steps, final total "
            << last.total << ", distortion " << last.frame_distortion << ", mean keep "
            << last.mean_keep << "\n"
            << "checkpoint: " << io.out_checkpoint->string() << "\n";
  return kExitOk;
}

pipeline::PipelineOptions options_for(const std::filesystem::path& ckpt) {
  pipeline::PipelineOptions o;
  o.ablation = eval::ablation_flags_of(ckpt);
  return o;
}

int cmd_transmit(const Common& common, const std::string& input, bool archive) {
  const auto rc = resolve(common);
  const auto ckpt = rc.eval_checkpoint();
  require(std::filesystem::exists(ckpt), ErrorKind::kPrecondition,
          "checkpoint " + ckpt.string() + " does not exist");
  auto models = checkpoint::load_models(ckpt);
  const auto seq = videodata::load_sequence(input, rc.data.layout);
  auto result = pipeline::transmit_sequence(seq, models, rc.channel, rc.gop, rc.seed, options_for(ckpt));

  videodata::FrameSequence recon{result.reconstructions, seq.frame_rate};
  videodata::write_sequence(recon, rc.out / "recon");
  {
    std::ofstream os(rc.out / "stats.csv");
    require(os.good(), ErrorKind::kIo, "cannot write stats.csv");
    metrics::write_stats_csv(os, result.stats);
  }
  if (archive) pipeline::write_payload_archive(rc.out / "payloads.bin", result.payloads);
  const auto s = eval::summarize(result.stats);
  std::cout << "frames " << s.frames << "  cbr " << s.cbr << "  psnr " << s.psnr_db
            << " dB  ms-ssim " << s.ms_ssim << "\n";
  return kExitOk;
}

void print_summary(std::ostream& os, const eval::Summary& s) {
  os << "frames,cbr,iframe_cbr,pframe_cbr,psnr_db,ms_ssim\n"
     << s.frames << ',' << s.cbr << ',' << s.iframe_cbr << ',' << s.pframe_cbr << ',' << s.psnr_db
     << ',' << s.ms_ssim << '\n';
}

int cmd_eval(const Common& common) {
  const auto rc = resolve(common);
  const auto ckpt = rc.eval_checkpoint();
  require(std::filesystem::exists(ckpt), ErrorKind::kPrecondition,
          "checkpoint " + ckpt.string() + " does not exist");
  auto models = checkpoint::load_models(ckpt);
  const auto dataset = config::load_eval_set(rc);
  const auto opts = options_for(ckpt);

  std::vector<metrics::FrameStats> all;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto r = pipeline::transmit_sequence(dataset[i], models, rc.channel, rc.gop, rc.seed, opts);
    eval::Trace trace{r.stats, 0.0};
    eval::emit_trace(trace, "trace_" + std::to_string(i), rc.out);
    all.insert(all.end(), r.stats.begin(), r.stats.end());
  }
  const auto s = eval::summarize(all);
  {
    std::ofstream os(rc.out / "eval_summary.csv");
    require(os.good(), ErrorKind::kIo, "cannot write eval_summary.csv");
    print_summary(os, s);
  }
  print_summary(std::cout, s);
  return kExitOk;
}

int cmd_sweep(const Common& common) {
  const auto rc = resolve(common);
  eval::SweepSpec spec;
  spec.name = rc.sweep.name;
  spec.axis = rc.sweep.axis;
  spec.values = rc.sweep.values;
  spec.repeats = rc.repeats;
  spec.dataset = config::load_eval_set(rc);
  spec.checkpoints = rc.sweep.checkpoints;
  if (spec.checkpoints.empty()) spec.checkpoints.push_back(rc.eval_checkpoint());
  spec.gop = rc.gop;
  spec.channel = rc.channel;
  spec.seed = rc.seed;
  const auto rows = eval::run_sweep(spec);
  eval::emit_sweep(spec, rows, rc.out);
  eval::write_sweep_csv(std::cout, spec.axis, rows);
  return kExitOk;
}

int cmd_flops(const Common& common) {
  const auto rc = resolve(common);
  auto models = rc.checkpoint.empty() ? make_models(rc.arch, rc.seed, rc.tie_proj_p)
                                      : checkpoint::load_models(rc.checkpoint);
  models->eval();
  const auto rows = eval::flops_report(models, rc.flops_height, rc.flops_width);
  {
    std::ofstream os(rc.out / "flops.csv");
    require(os.good(), ErrorKind::kIo, "cannot write flops.csv");
    eval::write_flops_csv(os, rows);
  }
  std::cout << std::left << std::setw(34) << "module" << std::right << std::setw(16) << "MACs"
            << std::setw(14) << "params" << "\n";
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(34) << r.module << std::right << std::setw(16) << r.macs
              << std::setw(14) << r.params << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const Common& common) {
  const auto rc = resolve(common);
  eval::AblationSpec spec;
  spec.reference = rc.ablation.reference.empty() ? rc.eval_checkpoint() : rc.ablation.reference;
  spec.variants = rc.ablation.variants;
  spec.dataset = config::load_eval_set(rc);
  spec.gop = rc.gop;
  spec.channel = rc.channel;
  spec.seed = rc.seed;
  spec.rate_tolerance = rc.ablation.rate_tolerance;
  const auto rows = eval::run_ablation(spec);
  {
    std::ofstream os(rc.out / "ablation.csv");
    require(os.good(), ErrorKind::kIo, "cannot write ablation.csv");
    eval::write_ablation_csv(os, rows);
  }
  eval::write_ablation_csv(std::cout, rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep joint source-channel video transmission"};
  app.require_subcommand(1);

  Common common;
  std::string init, input;
  bool archive = false;

  auto* ti = app.add_subcommand("train-iframe", "Stage 1: I-frame codec and its MEM");
  add_common(ti, common, false);
  auto* tp = app.add_subcommand("train-pframe", "Stage 2: P-frame codec, motion and contexts");
  add_common(tp, common, false);
  tp->add_option("--init", init, "Stage-1 checkpoint (default <out>/iframe.ckpt)");
  auto* tg = app.add_subcommand("finetune-gop", "Stage 3: end-to-end GOP fine-tuning");
  add_common(tg, common, false);
  tg->add_option("--init", init, "Stage-2 checkpoint (default <out>/pframe.ckpt)");
  auto* tx = app.add_subcommand("transmit", "Send one sequence through the channel");
  add_common(tx, common, true);
  tx->add_option("--input", input, "Sequence directory or .yuv file")->required();
  tx->add_flag("--archive", archive, "Also write the transmitted payloads");
  auto* ev = app.add_subcommand("eval", "Summarize the evaluation set");
  add_common(ev, common, true);
  auto* sw = app.add_subcommand("sweep", "Sweep lambda, CSNR or GOP length");
  add_common(sw, common, true);
  auto* fl = app.add_subcommand("flops", "Per-module MACs and parameter counts");
  add_common(fl, common, true);
  auto* ab = app.add_subcommand("ablate", "Rate-matched ablation table");
  add_common(ab, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  torch::set_num_threads(1);
  try {
    if (ti->parsed()) return cmd_train(common, training::Stage::kIFrame, init);
    if (tp->parsed()) return cmd_train(common, training::Stage::kPFrame, init);
    if (tg->parsed()) return cmd_train(common, training::Stage::kGopFinetune, init);
    if (tx->parsed()) return cmd_transmit(common, input, archive);
    if (ev->parsed()) return cmd_eval(common);
    if (sw->parsed()) return cmd_sweep(common);
    if (fl->parsed()) return cmd_flops(common);
    if (ab->parsed()) return cmd_ablate(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kDivergence ? kExitDivergence : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

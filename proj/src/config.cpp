#include "jscc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "jscc/error.hpp"

namespace jscc::config {

namespace {

/// Reads a YAML mapping key by key and rejects whatever was not consumed.
class MapReader {
 public:
  MapReader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    require(!node_ || node_.IsNull() || node_.IsMap(), ErrorKind::kConfig,
            where() + " must be a mapping");
  }

  YAML::Node child(const std::string& key) {
    used_.insert(key);
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& lookup = node_;
    return lookup[key];
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    auto n = child(key);
    if (!n.IsDefined() || n.IsNull()) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(ErrorKind::kConfig, "bad value for " + join(key));
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      require(used_.count(key) > 0, ErrorKind::kConfig, "unknown config key '" + join(key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config root" : "'" + path_ + "'"; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<std::filesystem::path> paths(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

std::vector<std::string> strings(const std::vector<std::filesystem::path>& v) {
  std::vector<std::string> out;
  for (const auto& p : v) out.push_back(p.string());
  return out;
}

template <typename F>
auto with_context(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, key + ": " + e.what());
  }
}

void read_arch(MapReader& r, ArchTable& a) {
  r.get("latent_channels", a.latent_channels);
  r.get("mv_latent_channels", a.mv_latent_channels);
  r.get("feature_channels", a.feature_channels);
  std::vector<int64_t> w;
  auto take3 = [&](const std::string& key, std::array<int64_t, 3>& dst) {
    w.clear();
    r.get(key, w);
    if (w.empty()) return;
    require(w.size() == 3, ErrorKind::kConfig, r.join(key) + " needs three widths");
    std::copy(w.begin(), w.end(), dst.begin());
  };
  take3("frame_widths", a.frame_widths);
  take3("mv_widths", a.mv_widths);
  r.get("hyper_channels", a.hyper_channels);
  r.get("entropy_width", a.entropy_width);
  r.get("temporal_prior_channels", a.temporal_prior_channels);
  r.get("offset_groups", a.offset_groups);
  r.get("offset_hidden", a.offset_hidden);
  r.get("flow_hidden", a.flow_hidden);
  r.get("flow_levels", a.flow_levels);
  r.get("policy_hidden", a.policy_hidden);
  r.finish();
}

void read_train(MapReader& r, RunConfig& c) {
  auto& t = c.train;
  r.get("lambda", t.lambda);
  r.get("wt", t.wt);
  r.get("lr", t.lr);
  r.get("warmup_steps", t.warmup_steps);
  r.get("batch_iframe", t.batch_iframe);
  r.get("batch_pframe", t.batch_pframe);
  r.get("entropy_pretrain_fraction", t.entropy_pretrain_fraction);
  r.get("tau_start", t.tau_start);
  r.get("tau_end", t.tau_end);
  r.get("crop", t.crop);
  r.get("pframes", t.pframes);
  r.get("train_flow", t.train_flow);
  r.get("flow_pretrain_steps", t.flow_pretrain_steps);
  r.get("log_every", t.log_every);
  std::string target;
  r.get("feature_target", target);
  if (!target.empty()) {
    if (target == "encoder_feature") {
      t.feature_target = training::FeatureTarget::kEncoderFeature;
    } else if (target == "pixel_render") {
      t.feature_target = training::FeatureTarget::kPixelRender;
    } else {
      fail(ErrorKind::kConfig, "train.feature_target must be encoder_feature or pixel_render");
    }
  }
  MapReader steps(r.child("steps"), r.join("steps"));
  steps.get("iframe", c.steps.iframe);
  steps.get("pframe", c.steps.pframe);
  steps.get("gop_finetune", c.steps.gop_finetune);
  steps.finish();
  MapReader abl(r.child("ablation"), r.join("ablation"));
  abl.get("mem_enabled", t.ablation.mem_enabled);
  abl.get("feature_propagation", t.ablation.feature_propagation);
  abl.get("feature_loss", t.ablation.feature_loss);
  abl.finish();
  r.finish();
}

void read_channel(MapReader& r, channel::ChannelConfig& ch) {
  std::string kind;
  r.get("kind", kind);
  if (!kind.empty()) ch.kind = with_context("channel.kind", [&] { return channel::kind_from_string(kind); });
  r.get("csnr_db", ch.csnr_db);
  r.get("noiseless", ch.noiseless);
  r.finish();
}

void read_data(MapReader& r, DataConfig& d) {
  std::vector<std::string> list;
  r.get("train", list);
  d.train = paths(list);
  list.clear();
  r.get("eval", list);
  d.eval = paths(list);
  std::string layout;
  r.get("layout", layout);
  if (!layout.empty()) {
    if (layout == "png") {
      d.layout = videodata::Layout::kPngFrames;
    } else if (layout == "yuv420") {
      d.layout = videodata::Layout::kPlanarYuv420;
    } else {
      fail(ErrorKind::kConfig, "data.layout must be png or yuv420");
    }
  }
  MapReader syn(r.child("synthetic"), r.join("synthetic"));
  syn.get("clips", d.synthetic.clips);
  syn.get("frames", d.synthetic.frames);
  syn.get("size", d.synthetic.size);
  syn.finish();
  r.finish();
}

void read_sweep(MapReader& r, SweepConfig& s) {
  r.get("name", s.name);
  std::string axis;
  r.get("axis", axis);
  if (!axis.empty()) s.axis = eval::axis_from_string(axis);
  r.get("values", s.values);
  std::vector<std::string> list;
  r.get("checkpoints", list);
  s.checkpoints = paths(list);
  r.finish();
}

void read_ablation(MapReader& r, AblationConfig& a) {
  std::string ref;
  r.get("reference", ref);
  a.reference = ref;
  r.get("rate_tolerance", a.rate_tolerance);
  std::map<std::string, std::vector<std::string>> variants;
  r.get("variants", variants);
  for (const auto& [name, list] : variants) a.variants[name] = paths(list);
  r.finish();
}

const char* layout_name(videodata::Layout l) {
  return l == videodata::Layout::kPngFrames ? "png" : "yuv420";
}

}  // namespace

std::filesystem::path RunConfig::stage_checkpoint(training::Stage stage) const {
  return out / (training::to_string(stage) + ".ckpt");
}

std::filesystem::path RunConfig::eval_checkpoint() const {
  return checkpoint.empty() ? stage_checkpoint(training::Stage::kGopFinetune) : checkpoint;
}

RunConfig parse(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::kConfig, std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig c;
  MapReader r(root, "");
  r.get("seed", c.seed);
  std::string out;
  r.get("out", out);
  if (!out.empty()) c.out = out;
  r.get("tie_proj_p", c.tie_proj_p);
  r.get("gop", c.gop);
  r.get("repeats", c.repeats);
  std::string ckpt;
  r.get("checkpoint", ckpt);
  c.checkpoint = ckpt;
  {
    MapReader a(r.child("arch"), "arch");
    read_arch(a, c.arch);
  }
  {
    MapReader t(r.child("train"), "train");
    read_train(t, c);
  }
  {
    MapReader ch(r.child("channel"), "channel");
    read_channel(ch, c.channel);
  }
  {
    MapReader d(r.child("data"), "data");
    read_data(d, c.data);
  }
  {
    MapReader s(r.child("sweep"), "sweep");
    read_sweep(s, c.sweep);
  }
  {
    MapReader a(r.child("ablation"), "ablation");
    read_ablation(a, c.ablation);
  }
  {
    MapReader f(r.child("flops"), "flops");
    f.get("height", c.flops_height);
    f.get("width", c.flops_width);
    f.finish();
  }
  r.finish();

  c.train.csnr_db = c.channel.csnr_db;
  c.train.channel = c.channel.kind;
  c.train.noiseless = c.channel.noiseless;
  c.train.seed = c.seed;
  c.channel.seed = c.seed;
  return c;
}

RunConfig load(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(in.good(), ErrorKind::kConfig, "cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void validate(const RunConfig& c) {
  auto t = c.train;
  t.steps = 1;
  training::validate(t);
  require(c.steps.iframe >= 1 && c.steps.pframe >= 1 && c.steps.gop_finetune >= 1,
          ErrorKind::kConfig, "train.steps entries must be at least 1");
  require(c.gop >= 1, ErrorKind::kConfig, "gop must be at least 1");
  require(c.repeats >= 1, ErrorKind::kConfig, "repeats must be at least 1");
  require(c.data.synthetic.clips >= 0 && c.data.synthetic.frames >= 2 &&
              c.data.synthetic.size >= 64 && c.data.synthetic.size % 64 == 0,
          ErrorKind::kConfig, "data.synthetic needs clips >= 0, frames >= 2, size a multiple of 64");
  const auto& a = c.arch;
  for (auto v : {a.latent_channels, a.mv_latent_channels, a.feature_channels, a.hyper_channels,
                 a.entropy_width, a.temporal_prior_channels, a.offset_groups, a.offset_hidden,
                 a.flow_hidden, a.flow_levels, a.policy_hidden}) {
    require(v >= 1, ErrorKind::kConfig, "arch entries must be positive");
  }
  require(c.flops_height >= 1 && c.flops_width >= 1, ErrorKind::kConfig,
          "flops size must be positive");
  require(c.ablation.rate_tolerance > 0.0, ErrorKind::kConfig,
          "ablation.rate_tolerance must be positive");
}

std::string to_yaml(const RunConfig& c) {
  const auto& t = c.train;
  const auto& a = c.arch;
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "out" << YAML::Value << c.out.string();
  e << YAML::Key << "tie_proj_p" << YAML::Value << c.tie_proj_p;
  e << YAML::Key << "gop" << YAML::Value << c.gop;
  e << YAML::Key << "repeats" << YAML::Value << c.repeats;
  e << YAML::Key << "checkpoint" << YAML::Value << c.checkpoint.string();

  e << YAML::Key << "arch" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "latent_channels" << YAML::Value << a.latent_channels;
  e << YAML::Key << "mv_latent_channels" << YAML::Value << a.mv_latent_channels;
  e << YAML::Key << "feature_channels" << YAML::Value << a.feature_channels;
  e << YAML::Key << "frame_widths" << YAML::Value << YAML::Flow
    << std::vector<int64_t>(a.frame_widths.begin(), a.frame_widths.end());
  e << YAML::Key << "mv_widths" << YAML::Value << YAML::Flow
    << std::vector<int64_t>(a.mv_widths.begin(), a.mv_widths.end());
  e << YAML::Key << "hyper_channels" << YAML::Value << a.hyper_channels;
  e << YAML::Key << "entropy_width" << YAML::Value << a.entropy_width;
  e << YAML::Key << "temporal_prior_channels" << YAML::Value << a.temporal_prior_channels;
  e << YAML::Key << "offset_groups" << YAML::Value << a.offset_groups;
  e << YAML::Key << "offset_hidden" << YAML::Value << a.offset_hidden;
  e << YAML::Key << "flow_hidden" << YAML::Value << a.flow_hidden;
  e << YAML::Key << "flow_levels" << YAML::Value << a.flow_levels;
  e << YAML::Key << "policy_hidden" << YAML::Value << a.policy_hidden;
  e << YAML::EndMap;

  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lambda" << YAML::Value << t.lambda;
  e << YAML::Key << "wt" << YAML::Value << YAML::Flow << t.wt;
  e << YAML::Key << "lr" << YAML::Value << t.lr;
  e << YAML::Key << "warmup_steps" << YAML::Value << t.warmup_steps;
  e << YAML::Key << "batch_iframe" << YAML::Value << t.batch_iframe;
  e << YAML::Key << "batch_pframe" << YAML::Value << t.batch_pframe;
  e << YAML::Key << "entropy_pretrain_fraction" << YAML::Value << t.entropy_pretrain_fraction;
  e << YAML::Key << "tau_start" << YAML::Value << t.tau_start;
  e << YAML::Key << "tau_end" << YAML::Value << t.tau_end;
  e << YAML::Key << "crop" << YAML::Value << t.crop;
  e << YAML::Key << "pframes" << YAML::Value << t.pframes;
  e << YAML::Key << "train_flow" << YAML::Value << t.train_flow;
  e << YAML::Key << "flow_pretrain_steps" << YAML::Value << t.flow_pretrain_steps;
  e << YAML::Key << "log_every" << YAML::Value << t.log_every;
  e << YAML::Key << "feature_target" << YAML::Value
    << (t.feature_target == training::FeatureTarget::kEncoderFeature ? "encoder_feature"
                                                                     : "pixel_render");
  e << YAML::Key << "steps" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "iframe" << YAML::Value << c.steps.iframe;
  e << YAML::Key << "pframe" << YAML::Value << c.steps.pframe;
  e << YAML::Key << "gop_finetune" << YAML::Value << c.steps.gop_finetune;
  e << YAML::EndMap;
  e << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "mem_enabled" << YAML::Value << t.ablation.mem_enabled;
  e << YAML::Key << "feature_propagation" << YAML::Value << t.ablation.feature_propagation;
  e << YAML::Key << "feature_loss" << YAML::Value << t.ablation.feature_loss;
  e << YAML::EndMap;
  e << YAML::EndMap;

  e << YAML::Key << "channel" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << channel::to_string(c.channel.kind);
  e << YAML::Key << "csnr_db" << YAML::Value << c.channel.csnr_db;
  e << YAML::Key << "noiseless" << YAML::Value << c.channel.noiseless;
  e << YAML::EndMap;

  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "train" << YAML::Value << YAML::Flow << strings(c.data.train);
  e << YAML::Key << "eval" << YAML::Value << YAML::Flow << strings(c.data.eval);
  e << YAML::Key << "layout" << YAML::Value << layout_name(c.data.layout);
  e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "clips" << YAML::Value << c.data.synthetic.clips;
  e << YAML::Key << "frames" << YAML::Value << c.data.synthetic.frames;
  e << YAML::Key << "size" << YAML::Value << c.data.synthetic.size;
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << c.sweep.name;
  e << YAML::Key << "axis" << YAML::Value << eval::to_string(c.sweep.axis);
  e << YAML::Key << "values" << YAML::Value << YAML::Flow << c.sweep.values;
  e << YAML::Key << "checkpoints" << YAML::Value << YAML::Flow << strings(c.sweep.checkpoints);
  e << YAML::EndMap;

  e << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "reference" << YAML::Value << c.ablation.reference.string();
  e << YAML::Key << "rate_tolerance" << YAML::Value << c.ablation.rate_tolerance;
  e << YAML::Key << "variants" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, list] : c.ablation.variants) {
    e << YAML::Key << name << YAML::Value << YAML::Flow << strings(list);
  }
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "flops" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "height" << YAML::Value << c.flops_height;
  e << YAML::Key << "width" << YAML::Value << c.flops_width;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

void write_effective(const RunConfig& config, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  require(os.good(), ErrorKind::kIo, "cannot write " + file.string());
  os << to_yaml(config);
}

std::vector<videodata::FrameSequence> load_eval_set(const RunConfig& c) {
  std::vector<videodata::FrameSequence> out;
  for (const auto& p : c.data.eval) out.push_back(videodata::load_sequence(p, c.data.layout));
  if (out.empty() && c.data.synthetic.clips > 0) {
    // A different seed from the training set.
    auto toy = training::synthetic_toy_set(c.data.synthetic.clips, c.data.synthetic.frames,
                                           c.data.synthetic.size, c.seed + 1000003);
    out = std::move(toy.clips);
  }
  require(!out.empty(), ErrorKind::kConfig, "no evaluation data: set data.eval or data.synthetic");
  return out;
}

training::TrainData load_train_set(const RunConfig& c) {
  training::TrainData d;
  for (const auto& p : c.data.train) d.clips.push_back(videodata::load_sequence(p, c.data.layout));
  if (d.clips.empty() && c.data.synthetic.clips > 0) {
    d = training::synthetic_toy_set(c.data.synthetic.clips, c.data.synthetic.frames,
                                    c.data.synthetic.size, c.seed);
  }
  require(!d.clips.empty(), ErrorKind::kConfig, "no training data: set data.train or data.synthetic");
  return d;
}

}  // namespace jscc::config

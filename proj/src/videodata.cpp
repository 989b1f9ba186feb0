#include "jscc/videodata.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <regex>

#include <nlohmann/json.hpp>

#include "jscc/error.hpp"

namespace jscc::videodata {

namespace fs = std::filesystem;

Frame read_png(const fs::path& file) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, file.string().c_str())) {
    fail(ErrorKind::kIo, "cannot read PNG " + file.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::kIo, "cannot decode PNG " + file.string() + ": " + image.message);
  }
  const auto h = static_cast<int64_t>(image.height);
  const auto w = static_cast<int64_t>(image.width);
  auto hwc = torch::from_blob(buffer.data(), {h, w, 3}, torch::kUInt8);
  return Frame{hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous()};
}

void write_png(const Frame& frame, const fs::path& file) {
  auto hwc = frame.pixels.detach()
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width());
  image.height = static_cast<png_uint_32>(frame.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, file.string().c_str(), 0, hwc.data_ptr<uint8_t>(), 0,
                               nullptr)) {
    fail(ErrorKind::kIo, "cannot write PNG " + file.string() + ": " + image.message);
  }
}

Frame yuv420_to_rgb(const std::vector<uint8_t>& y, const std::vector<uint8_t>& u,
                    const std::vector<uint8_t>& v, int width, int height) {
  require(width % 2 == 0 && height % 2 == 0, ErrorKind::kInvalidArgument,
          "yuv420 requires even dimensions");
  const auto plane = static_cast<std::size_t>(width) * height;
  require(y.size() == plane && u.size() == plane / 4 && v.size() == plane / 4,
          ErrorKind::kShapeMismatch, "yuv420 plane sizes do not match the resolution");

  auto luma = torch::from_blob(const_cast<uint8_t*>(y.data()), {height, width}, torch::kUInt8)
                  .to(torch::kFloat32);
  auto chroma = [&](const std::vector<uint8_t>& c) {
    auto t = torch::from_blob(const_cast<uint8_t*>(c.data()), {height / 2, width / 2},
                              torch::kUInt8)
                 .to(torch::kFloat32);
    return t.repeat_interleave(2, 0).repeat_interleave(2, 1) - 128.0;
  };
  auto cb = chroma(u);
  auto cr = chroma(v);

  // BT.601 full range.
  auto r = luma + 1.402 * cr;
  auto g = luma - 0.344136 * cb - 0.714136 * cr;
  auto b = luma + 1.772 * cb;
  return Frame{torch::stack({r, g, b}).div(255.0).clamp(0.0, 1.0).contiguous()};
}

namespace {

FrameSequence load_png_frames(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::kIo, "sequence directory not found: " + dir.string());
  static const std::regex pattern(R"(frame_(\d{5})\.png)");
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) files.emplace_back(std::stoi(m[1]), entry.path());
  }
  require(!files.empty(), ErrorKind::kIo, "no frame_%05d.png files in " + dir.string());
  std::sort(files.begin(), files.end());

  FrameSequence seq;
  for (const auto& [index, file] : files) {
    auto frame = read_png(file);
    if (!seq.frames.empty() && (frame.height() != seq.frames.front().height() ||
                                frame.width() != seq.frames.front().width())) {
      fail(ErrorKind::kShapeMismatch, "inconsistent resolution in " + file.string());
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

FrameSequence load_yuv(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".yuv" || stem.extension() == ".json") stem.replace_extension();
  const auto yuv_file = fs::path(stem.string() + ".yuv");
  const auto json_file = fs::path(stem.string() + ".json");
  require(fs::exists(json_file), ErrorKind::kIo,
          "missing resolution descriptor " + json_file.string());
  require(fs::exists(yuv_file), ErrorKind::kIo, "missing yuv file " + yuv_file.string());

  nlohmann::json desc;
  try {
    std::ifstream(json_file) >> desc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, json_file.string() + ": " + e.what());
  }
  const int width = desc.value("width", 0);
  const int height = desc.value("height", 0);
  require(width > 0 && height > 0, ErrorKind::kFormat,
          json_file.string() + ": width/height missing or not positive");

  const auto plane = static_cast<std::size_t>(width) * height;
  const auto frame_bytes = plane + 2 * (plane / 4);
  const auto file_bytes = fs::file_size(yuv_file);
  require(file_bytes % frame_bytes == 0, ErrorKind::kShapeMismatch,
          yuv_file.string() + ": size is not a whole number of frames at " +
              std::to_string(width) + "x" + std::to_string(height));
  const auto n_frames = static_cast<std::size_t>(file_bytes / frame_bytes);
  if (desc.contains("frames")) {
    require(desc["frames"].get<std::size_t>() == n_frames, ErrorKind::kShapeMismatch,
            json_file.string() + ": frame count disagrees with " + yuv_file.string());
  }

  FrameSequence seq;
  std::ifstream in(yuv_file, std::ios::binary);
  std::vector<uint8_t> y(plane), u(plane / 4), v(plane / 4);
  for (std::size_t i = 0; i < n_frames; ++i) {
    in.read(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(y.size()));
    in.read(reinterpret_cast<char*>(u.data()), static_cast<std::streamsize>(u.size()));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size()));
    require(static_cast<bool>(in), ErrorKind::kIo, "truncated yuv file " + yuv_file.string());
    seq.frames.push_back(yuv420_to_rgb(y, u, v, width, height));
  }
  if (desc.contains("fps")) seq.frame_rate = desc["fps"].get<double>();
  return seq;
}

}  // namespace

FrameSequence load_sequence(const fs::path& path, Layout layout) {
  return layout == Layout::kPngFrames ? load_png_frames(path) : load_yuv(path);
}

void write_sequence(const FrameSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
    write_png(seq.frames[i], dir / name);
  }
}

std::vector<Gop> slice_gops(const FrameSequence& seq, std::size_t n) {
  require(n >= 1, ErrorKind::kInvalidArgument, "GOP length must be positive");
  std::vector<Gop> gops;
  for (std::size_t start = 0; start < seq.frames.size(); start += n) {
    const auto end = std::min(start + n, seq.frames.size());
    gops.push_back(Gop{{seq.frames.begin() + static_cast<std::ptrdiff_t>(start),
                        seq.frames.begin() + static_cast<std::ptrdiff_t>(end)}});
  }
  return gops;
}

std::vector<Frame> random_crop_pair(const std::vector<Frame>& frames, int64_t size,
                                    uint64_t seed) {
  if (frames.empty()) return {};
  const auto h = frames.front().height();
  const auto w = frames.front().width();
  require(h >= size && w >= size, ErrorKind::kInvalidArgument,
          "frame " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than crop " +
              std::to_string(size));
  std::mt19937_64 rng(seed);
  const auto top = std::uniform_int_distribution<int64_t>(0, h - size)(rng);
  const auto left = std::uniform_int_distribution<int64_t>(0, w - size)(rng);

  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    require(f.height() == h && f.width() == w, ErrorKind::kShapeMismatch,
            "frames in a crop group must share a resolution");
    out.push_back(Frame{f.pixels.slice(1, top, top + size).slice(2, left, left + size).clone()});
  }
  return out;
}

SyntheticClip synth_moving_squares(int count, int n_frames, std::pair<int64_t, int64_t> size,
                                   std::pair<double, double> velocity, uint64_t seed) {
  const auto [h, w] = size;
  const auto [vy, vx] = velocity;
  require(n_frames >= 1 && h > 0 && w > 0, ErrorKind::kInvalidArgument,
          "synthetic clip needs positive frame count and size");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Smooth static background: two low-frequency sinusoids per color channel.
  auto ys = torch::arange(h, torch::kFloat64).view({h, 1}).expand({h, w});
  auto xs = torch::arange(w, torch::kFloat64).view({1, w}).expand({h, w});
  std::vector<torch::Tensor> planes;
  for (int c = 0; c < 3; ++c) {
    auto plane = torch::full({h, w}, 0.35 + 0.3 * unit(rng), torch::kFloat64);
    for (int k = 0; k < 2; ++k) {
      const double fy = 0.5 + 2.0 * unit(rng);
      const double fx = 0.5 + 2.0 * unit(rng);
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      plane = plane + 0.08 * torch::sin(2.0 * std::numbers::pi * (fy * ys / static_cast<double>(h) +
                                                                   fx * xs / static_cast<double>(w)) +
                                        phase);
    }
    planes.push_back(plane);
  }
  auto background = torch::stack(planes).to(torch::kFloat32);

  const int64_t side = std::max<int64_t>(4, std::min(h, w) / 5);
  const double travel_y = std::abs(vy) * (n_frames - 1);
  const double travel_x = std::abs(vx) * (n_frames - 1);
  require(travel_y + side <= h && travel_x + side <= w, ErrorKind::kInvalidArgument,
          "velocity too large for squares to stay in frame");

  struct Square {
    double y0, x0;
    float color[3];
  };
  std::vector<Square> squares;
  for (int i = 0; i < count; ++i) {
    Square s{};
    const double span_y = static_cast<double>(h - side) - travel_y;
    const double span_x = static_cast<double>(w - side) - travel_x;
    s.y0 = std::floor(unit(rng) * (span_y + 1.0)) + (vy < 0 ? travel_y : 0.0);
    s.x0 = std::floor(unit(rng) * (span_x + 1.0)) + (vx < 0 ? travel_x : 0.0);
    for (auto& c : s.color) c = static_cast<float>(0.1 + 0.8 * unit(rng));
    squares.push_back(s);
  }

  SyntheticClip clip;
  for (int t = 0; t < n_frames; ++t) {
    auto frame = background.clone();
    auto flow = torch::zeros({2, h, w});
    for (const auto& s : squares) {
      const auto top = static_cast<int64_t>(std::lround(s.y0 + vy * t));
      const auto left = static_cast<int64_t>(std::lround(s.x0 + vx * t));
      for (int c = 0; c < 3; ++c) {
        frame[c].slice(0, top, top + side).slice(1, left, left + side).fill_(s.color[c]);
      }
      if (t > 0) {
        flow[0].slice(0, top, top + side).slice(1, left, left + side).fill_(-vx);
        flow[1].slice(0, top, top + side).slice(1, left, left + side).fill_(-vy);
      }
    }
    clip.sequence.frames.push_back(Frame{frame.clamp(0.0, 1.0)});
    clip.flows.push_back(MotionField{flow});
  }
  return clip;
}

torch::Tensor pad_to_multiple(const torch::Tensor& pixels, int64_t multiple) {
  const auto h = pixels.size(-2);
  const auto w = pixels.size(-1);
  const auto ph = (multiple - h % multiple) % multiple;
  const auto pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return pixels;
  const bool batched = pixels.dim() == 4;
  auto x = batched ? pixels : pixels.unsqueeze(0);
  namespace F = torch::nn::functional;
  x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
  return batched ? x : x.squeeze(0);
}

torch::Tensor crop_to(const torch::Tensor& pixels, int64_t height, int64_t width) {
  return pixels.slice(-2, 0, height).slice(-1, 0, width);
}

torch::Tensor stack_frames(const std::vector<Frame>& frames) {
  std::vector<torch::Tensor> px;
  px.reserve(frames.size());
  for (const auto& f : frames) px.push_back(f.pixels);
  return torch::stack(px);
}

}  // namespace jscc::videodata

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace jscc::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Figure {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  /// x positions drawn as dashed vertical markers (I-frames in traces).
  std::vector<double> markers;
};

/// Renders a line chart with point markers as a standalone SVG document.
std::string render_svg(const Figure& figure);
void write_svg(const Figure& figure, const std::filesystem::path& file);

}  // namespace jscc::plot

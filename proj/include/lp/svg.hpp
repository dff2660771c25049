#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lp/distance.hpp"

namespace lp {

struct PlotSeries {
  std::string label;
  std::string color;  // CSS color
  bool dashed = false;
  std::vector<std::pair<double, double>> points;
};

struct RefLine {
  std::string label;
  std::string color;
  double y = 0.0;
};

// Dependency-free SVG line plot with axes, ticks, legend, and dashed
// horizontal reference lines. provenance is embedded as an XML comment so
// `verify` can walk plot files too.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<PlotSeries>& series,
                          const std::vector<RefLine>& refs, const std::string& provenance);

// Row-normalized distance heatmap; 0 maps to yellow (the per-row optimum),
// 1 to dark purple.
std::string heatmap_svg(const HeatmapGrid& grid, const std::string& title,
                        const std::string& provenance);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace lp

#include "lp/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lp {

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) { return format_double(v, "%.6g"); }

double nice_step(double span, int target_ticks) {
  if (span <= 0) return 1.0;
  const double raw = span / target_ticks;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10.0 * mag;
}

struct Color {
  double r, g, b;
};

// yellow -> teal -> dark purple, value in [0, 1]
std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const Color stops[3] = {{253, 231, 37}, {33, 145, 140}, {68, 1, 84}};
  Color c;
  if (v < 0.5) {
    const double t = v * 2.0;
    c = {stops[0].r + t * (stops[1].r - stops[0].r), stops[0].g + t * (stops[1].g - stops[0].g),
         stops[0].b + t * (stops[1].b - stops[0].b)};
  } else {
    const double t = (v - 0.5) * 2.0;
    c = {stops[1].r + t * (stops[2].r - stops[1].r), stops[1].g + t * (stops[2].g - stops[1].g),
         stops[1].b + t * (stops[2].b - stops[1].b)};
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(c.r),
                static_cast<int>(c.g), static_cast<int>(c.b));
  return buf;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<PlotSeries>& series,
                          const std::vector<RefLine>& refs, const std::string& provenance) {
  const double W = 640, H = 420;
  const double ml = 70, mr = 20, mt = 40, mb = 52;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  for (const auto& r : refs) {
    if (first) {
      ymin = ymax = r.y;
      first = false;
    }
    ymin = std::min(ymin, r.y);
    ymax = std::max(ymax, r.y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.06 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  if (!provenance.empty()) o << "<!-- provenance: " << esc(provenance) << " -->\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
       "font-family=\"sans-serif\">"
    << esc(title) << "</text>\n";

  // Axes and ticks.
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  const double xs = nice_step(xmax - xmin, 6);
  for (double x = std::ceil(xmin / xs) * xs; x <= xmax + 1e-12; x += xs) {
    o << "<line x1=\"" << px(x) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(x) << "\" y2=\""
      << mt + ph + 5 << "\" stroke=\"#333\"/>\n";
    o << "<text x=\"" << px(x) << "\" y=\"" << mt + ph + 18
      << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(x)
      << "</text>\n";
  }
  const double ys = nice_step(ymax - ymin, 6);
  for (double y = std::ceil(ymin / ys) * ys; y <= ymax + 1e-12; y += ys) {
    o << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(y) << "\" x2=\"" << ml << "\" y2=\""
      << py(y) << "\" stroke=\"#333\"/>\n";
    o << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(y)
      << "</text>\n";
  }
  o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << esc(x_label)
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << mt + ph / 2
    << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
       "transform=\"rotate(-90 16 "
    << mt + ph / 2 << ")\">" << esc(y_label) << "</text>\n";

  for (const auto& r : refs) {
    o << "<line x1=\"" << ml << "\" y1=\"" << py(r.y) << "\" x2=\"" << ml + pw << "\" y2=\""
      << py(r.y) << "\" stroke=\"" << r.color << "\" stroke-dasharray=\"6 4\"/>\n";
  }
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.8\"";
    if (s.dashed) o << " stroke-dasharray=\"5 4\"";
    o << " points=\"";
    for (const auto& [x, y] : s.points) o << fmt(px(x)) << "," << fmt(py(y)) << " ";
    o << "\"/>\n";
    for (const auto& [x, y] : s.points)
      o << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"2.4\" fill=\""
        << s.color << "\"/>\n";
  }

  // Legend.
  double ly = mt + 10;
  for (const auto& s : series) {
    o << "<line x1=\"" << ml + pw - 150 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 126
      << "\" y2=\"" << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
      << (s.dashed ? " stroke-dasharray=\"5 4\"" : "") << "/>\n";
    o << "<text x=\"" << ml + pw - 120 << "\" y=\"" << ly + 4
      << "\" font-size=\"11\" font-family=\"sans-serif\">" << esc(s.label) << "</text>\n";
    ly += 16;
  }
  for (const auto& r : refs) {
    o << "<line x1=\"" << ml + pw - 150 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 126
      << "\" y2=\"" << ly << "\" stroke=\"" << r.color
      << "\" stroke-dasharray=\"6 4\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << ml + pw - 120 << "\" y=\"" << ly + 4
      << "\" font-size=\"11\" font-family=\"sans-serif\">" << esc(r.label) << "</text>\n";
    ly += 16;
  }
  o << "</svg>\n";
  return o.str();
}

std::string heatmap_svg(const HeatmapGrid& grid, const std::string& title,
                        const std::string& provenance) {
  const int L = grid.num_layers;
  const int N = grid.n_max;
  const double cell = std::max(10.0, std::min(28.0, 560.0 / std::max(L, 1)));
  const double ml = 56, mt = 44, mb = 40, mr = 16;
  const double W = ml + mr + cell * L;
  const double H = mt + mb + cell * N;

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  if (!provenance.empty()) o << "<!-- provenance: " << esc(provenance) << " -->\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" "
       "font-family=\"sans-serif\">"
    << esc(title) << "</text>\n";
  for (int n = 1; n <= N; ++n) {
    const auto& row = grid.rows[n - 1];
    for (int l = 0; l < static_cast<int>(row.size()); ++l) {
      o << "<rect x=\"" << ml + l * cell << "\" y=\"" << mt + (n - 1) * cell << "\" width=\""
        << cell << "\" height=\"" << cell << "\" fill=\"" << heat_color(row[l]) << "\"/>\n";
    }
    if (n == 1 || n % 2 == 0 || n == N)
      o << "<text x=\"" << ml - 6 << "\" y=\"" << mt + (n - 0.5) * cell + 4
        << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\">" << n
        << "</text>\n";
  }
  for (int l = 0; l < L; ++l)
    if (l % 2 == 0 || l == L - 1)
      o << "<text x=\"" << ml + (l + 0.5) * cell << "\" y=\"" << mt + N * cell + 14
        << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" << l
        << "</text>\n";
  o << "<text x=\"" << ml + cell * L / 2 << "\" y=\"" << H - 8
    << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">start layer"
    << "</text>\n";
  o << "<text x=\"14\" y=\"" << mt + cell * N / 2
    << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
       "transform=\"rotate(-90 14 "
    << mt + cell * N / 2 << ")\">block size</text>\n";
  o << "</svg>\n";
  return o.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace lp

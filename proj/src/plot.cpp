#include "fedsim/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const LineChart& chart, int width, int height) {
  const double ml = 60, mr = 20, mt = 36, mb = 48;
  const double pw = width - ml - mr;
  const double ph = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!chart.x.empty()) {
    xmin = *std::min_element(chart.x.begin(), chart.x.end());
    xmax = *std::max_element(chart.x.begin(), chart.x.end());
  }
  bool have_y = false;
  for (const auto& s : chart.series) {
    for (const double v : s.y) {
      if (!std::isfinite(v)) continue;
      if (!have_y) {
        ymin = ymax = v;
        have_y = true;
      } else {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (!have_y || ymax == ymin) ymax = ymin + 1;

  auto px = [&](double v) { return ml + pw * (v - xmin) / (xmax - xmin); };
  auto py = [&](double v) { return mt + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(chart.title) << "</text>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    svg << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << mt + ph + 16
        << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(xv) << "</text>\n"
        << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(py(yv) + 3)
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(yv) << "</text>\n";
  }
  svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(chart.x_label) << "</text>\n"
      << "<text x=\"14\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " << mt + ph / 2
      << ")\">" << escape(chart.y_label) << "</text>\n";

  int color = 0;
  for (const auto& s : chart.series) {
    svg << "<polyline fill=\"none\" stroke=\"" << kColors[color % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.y.size() && i < chart.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      svg << fmt(px(chart.x[i])) << "," << fmt(py(s.y[i])) << " ";
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << ml + pw - 4 << "\" y=\"" << mt + 14 + 14 * color
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << kColors[color % 6] << "\">"
        << escape(s.name) << "</text>\n";
    ++color;
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_svg(const LineChart& chart, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << render_svg(chart);
  if (!f) throw IoError("short write to " + path);
}

}  // namespace fedsim

#ifndef FEDSIM_PLOT_HPP
#define FEDSIM_PLOT_HPP

#include <string>
#include <vector>

namespace fedsim {

// Minimal SVG line chart: one polyline per series over a shared x axis.
struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<double> x;
  struct Series {
    std::string name;
    std::vector<double> y;
  };
  std::vector<Series> series;
};

// Well-formed standalone SVG document.
std::string render_svg(const LineChart& chart, int width = 640, int height = 400);
void write_svg(const LineChart& chart, const std::string& path);

}  // namespace fedsim

#endif  // FEDSIM_PLOT_HPP

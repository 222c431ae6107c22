#pragma once

#include <string>
#include <vector>

namespace ltcse {

/// One polyline on a line chart. Points with non-finite y are skipped
/// (they break the line), so NaN validation gaps render naturally.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// One bar on a bar chart.
struct PlotBar {
  std::string label;
  double value = 0.0;
};

/// Hand-emitted, dependency-free SVG. All coordinates are produced with
/// fixed-precision formatting and a fixed palette, so identical inputs
/// yield byte-identical files.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<PlotSeries>& series);

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<PlotBar>& bars);

}  // namespace ltcse

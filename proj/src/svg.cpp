#include "ltcse/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace ltcse {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 72.0;
constexpr double kRight = 24.0;
constexpr double kTop = 48.0;
constexpr double kBottom = 56.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_text(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.5g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  void include(double v) {
    if (!std::isfinite(v)) return;
    if (!seen) {
      lo = hi = v;
      seen = true;
      return;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!seen) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  double at(double v, double px_lo, double px_hi) const {
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
  bool seen = false;
};

std::string header(const std::string& title) {
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
         "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) +
         " " + num(kHeight) + "\">\n";
  svg += "<rect width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"" + num(kWidth / 2) +
         "\" y=\"24.00\" font-family=\"sans-serif\" font-size=\"16\" "
         "text-anchor=\"middle\">" +
         escape(title) + "</text>\n";
  return svg;
}

void frame_and_axes(std::string& svg, const Range& xr, const Range& yr,
                    const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;
  svg += "<rect x=\"" + num(x0) + "\" y=\"" + num(y1) + "\" width=\"" +
         num(x1 - x0) + "\" height=\"" + num(y0 - y1) +
         "\" fill=\"none\" stroke=\"#444444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double px = xr.at(fx, x0, x1);
    svg += "<line x1=\"" + num(px) + "\" y1=\"" + num(y0) + "\" x2=\"" +
           num(px) + "\" y2=\"" + num(y0 + 5) + "\" stroke=\"#444444\"/>\n";
    svg += "<text x=\"" + num(px) + "\" y=\"" + num(y0 + 20) +
           "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"middle\">" +
           tick_text(fx) + "</text>\n";
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double py = yr.at(fy, y0, y1);
    svg += "<line x1=\"" + num(x0 - 5) + "\" y1=\"" + num(py) + "\" x2=\"" +
           num(x0) + "\" y2=\"" + num(py) + "\" stroke=\"#444444\"/>\n";
    svg += "<text x=\"" + num(x0 - 8) + "\" y=\"" + num(py + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"end\">" +
           tick_text(fy) + "</text>\n";
  }
  svg += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 12) +
         "\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
  svg += "<text x=\"16.00\" y=\"" + num((y0 + y1) / 2) +
         "\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 16.00 " +
         num((y0 + y1) / 2) + ")\">" +
         escape(y_label) + "</text>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<PlotSeries>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xr.include(s.x[i]);
      yr.include(s.y[i]);
    }
  }
  xr.finish();
  yr.finish();

  std::string svg = header(title);
  frame_and_axes(svg, xr, yr, x_label, y_label);
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % kPaletteSize];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    std::string points;
    auto flush = [&] {
      if (!points.empty()) {
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        points.clear();
      }
    };
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(s.x[i])) {
        flush();  // break the line at gaps
        continue;
      }
      points += num(xr.at(s.x[i], x0, x1)) + "," + num(yr.at(s.y[i], y0, y1)) +
                " ";
    }
    flush();
    // Legend entry, stacked top-right inside the frame.
    const double ly = y1 + 14.0 + 16.0 * static_cast<double>(si);
    svg += "<line x1=\"" + num(x1 - 150) + "\" y1=\"" + num(ly - 4) +
           "\" x2=\"" + num(x1 - 126) + "\" y2=\"" + num(ly - 4) +
           "\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + num(x1 - 120) + "\" y=\"" + num(ly) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" +
           escape(s.label) + "</text>\n";
  }
  if (series.empty()) {
    svg += "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight / 2) +
           "\" font-family=\"sans-serif\" font-size=\"13\" "
           "text-anchor=\"middle\">no data</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<PlotBar>& bars) {
  Range yr;
  yr.include(0.0);
  for (const auto& b : bars) yr.include(b.value);
  yr.finish();
  Range xr;
  xr.lo = 0.0;
  xr.hi = 1.0;
  xr.seen = true;

  std::string svg = header(title);
  frame_and_axes(svg, xr, yr, "", y_label);
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;

  const std::size_t n = bars.size();
  if (n == 0) {
    svg += "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight / 2) +
           "\" font-family=\"sans-serif\" font-size=\"13\" "
           "text-anchor=\"middle\">no data</text>\n";
    svg += "</svg>\n";
    return svg;
  }
  const double slot = (x1 - x0) / static_cast<double>(n);
  const double bar_w = slot * 0.6;
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
    const double top = yr.at(bars[i].value, y0, y1);
    const double base = yr.at(std::min(0.0, std::max(yr.lo, 0.0)), y0, y1);
    const char* color = kPalette[i % kPaletteSize];
    svg += "<rect x=\"" + num(cx - bar_w / 2) + "\" y=\"" +
           num(std::min(top, base)) + "\" width=\"" + num(bar_w) +
           "\" height=\"" + num(std::abs(base - top)) + "\" fill=\"" + color +
           "\"/>\n";
    svg += "<text x=\"" + num(cx) + "\" y=\"" + num(std::min(top, base) - 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"middle\">" +
           tick_text(bars[i].value) + "</text>\n";
    svg += "<text x=\"" + num(cx) + "\" y=\"" + num(y0 + 20) +
           "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"middle\">" +
           escape(bars[i].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace ltcse

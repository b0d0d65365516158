#include "dirmlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dirmlab/errors.hpp"

namespace dirmlab::svg {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 480;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 160;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 55;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!(lo < hi)) {
      lo -= 1.0;
      hi += 1.0;
    } else {
      const double d = 0.05 * (hi - lo);
      lo -= d;
      hi += d;
    }
  }
};

}  // namespace

std::string line_plot(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series) {
  Range xr;
  Range yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw Error("series x/y size mismatch: " + s.label);
    for (double v : s.x) xr.include(v);
    for (double v : s.y) yr.include(v);
  }
  if (!std::isfinite(xr.lo) || !std::isfinite(yr.lo)) {
    xr = {0.0, 1.0};
    yr = {0.0, 1.0};
  }
  xr.pad();
  yr.pad();

  const double plot_w = kWidth - kMarginLeft - kMarginRight;
  const double plot_h = kHeight - kMarginTop - kMarginBottom;
  const auto px = [&](double v) { return kMarginLeft + (v - xr.lo) / (xr.hi - xr.lo) * plot_w; };
  const auto py = [&](double v) { return kMarginTop + (yr.hi - v) / (yr.hi - yr.lo) * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">" << title
     << "</text>\n";

  // axes
  os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
     << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h
     << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
     << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

  const int n_ticks = 6;
  for (int i = 0; i < n_ticks; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / (n_ticks - 1);
    const double fy = yr.lo + (yr.hi - yr.lo) * i / (n_ticks - 1);
    os << "<line x1=\"" << px(fx) << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\"" << px(fx)
       << "\" y2=\"" << kMarginTop + plot_h + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(fx) << "\" y=\"" << kMarginTop + plot_h + 20
       << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
    os << "<line x1=\"" << kMarginLeft - 5 << "\" y1=\"" << py(fy) << "\" x2=\"" << kMarginLeft
       << "\" y2=\"" << py(fy) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << py(fy) + 4
       << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
  }
  os << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
     << "\" font-size=\"13\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text x=\"18\" y=\"" << kMarginTop + plot_h / 2
     << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << kMarginTop + plot_h / 2 << ")\">" << ylabel << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) os << ' ';
      os << fmt(px(series[s].x[i])) << ',' << fmt(py(series[s].y[i]));
    }
    os << "\"/>\n";
    const double ly = kMarginTop + 14.0 * static_cast<double>(s);
    os << "<line x1=\"" << kMarginLeft + plot_w + 10 << "\" y1=\"" << ly << "\" x2=\""
       << kMarginLeft + plot_w + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kMarginLeft + plot_w + 35 << "\" y=\"" << ly + 4
       << "\" font-size=\"11\">" << series[s].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write SVG file: " + path);
  out << line_plot(title, xlabel, ylabel, series);
}

}  // namespace dirmlab::svg

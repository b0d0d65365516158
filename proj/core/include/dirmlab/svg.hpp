#pragma once

// Self-contained SVG line plots (polyline + axis ticks + legend), no external
// charting dependency.

#include <string>
#include <vector>

namespace dirmlab::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_plot(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series);

void write_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series);

}  // namespace dirmlab::svg

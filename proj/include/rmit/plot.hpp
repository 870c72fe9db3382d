#pragma once

#include <string>
#include <vector>

namespace rmit {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static SVG documents with linear axes and tick labels.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);
std::string svg_scatter_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                             const std::vector<double>& x, const std::vector<double>& y, const std::string& annotation);

}  // namespace rmit

#pragma once

#include <string>
#include <vector>

#include "toolrl/imaging.hpp"

namespace toolrl::plot {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  imaging::Rgb color{31, 119, 180};
};

struct PlotOptions {
  int width = 640;
  int height = 400;
  // Fixed y range; when lo >= hi the range is taken from the data.
  double y_lo = 0.0;
  double y_hi = 0.0;
  std::vector<double> reference_lines;  // horizontal dashed lines at these y
};

// Line chart with axes and a light grid. No text; axis ranges go in the
// caption printed by the caller.
imaging::Image line_chart(const std::vector<Series>& series, const PlotOptions& opts = {});

// Reads a metrics JSONL file and returns (groups_seen, key) pairs.
Series metric_series(const std::string& metrics_path, const std::string& key);

}  // namespace toolrl::plot

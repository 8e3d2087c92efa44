#include "toolrl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "toolrl/common.hpp"

namespace toolrl::plot {

using imaging::Image;
using imaging::Rgb;

namespace {

void put(Image& img, int x, int y, Rgb c) {
  if (x >= 0 && y >= 0 && x < img.width() && y < img.height()) img.set(x, y, c);
}

// Bresenham, 2 px thick.
void line(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    put(img, x0, y0, c);
    put(img, x0, y0 + 1, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

Image line_chart(const std::vector<Series>& series, const PlotOptions& opts) {
  if (opts.width < 64 || opts.height < 64) throw std::invalid_argument("plot is too small");
  Image img(opts.width, opts.height, Rgb{255, 255, 255});
  const int left = 40, right = opts.width - 16, top = 16, bottom = opts.height - 32;

  double xlo = INFINITY, xhi = -INFINITY, ylo = opts.y_lo, yhi = opts.y_hi;
  const bool auto_y = !(opts.y_lo < opts.y_hi);
  if (auto_y) {
    ylo = INFINITY;
    yhi = -INFINITY;
  }
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      if (auto_y) {
        ylo = std::min(ylo, s.y[i]);
        yhi = std::max(yhi, s.y[i]);
      }
    }
  }
  if (!(xlo < xhi)) {
    xlo = std::isfinite(xlo) ? xlo - 1 : 0;
    xhi = xlo + 2;
  }
  if (!(ylo < yhi)) {
    ylo = std::isfinite(ylo) ? ylo - 1 : 0;
    yhi = ylo + 2;
  }
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xlo) / (xhi - xlo) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - ylo) / (yhi - ylo) * (bottom - top))); };

  const Rgb grid{225, 225, 225};
  for (int k = 0; k <= 4; ++k) {
    const int y = top + (bottom - top) * k / 4;
    for (int x = left; x <= right; ++x) put(img, x, y, grid);
  }
  for (double r : opts.reference_lines) {
    if (r < ylo || r > yhi) continue;
    const int y = py(r);
    for (int x = left; x <= right; ++x) {
      if ((x / 6) % 2 == 0) put(img, x, y, Rgb{200, 60, 60});
    }
  }
  for (int y = top; y <= bottom; ++y) put(img, left, y, Rgb{0, 0, 0});
  for (int x = left; x <= right; ++x) put(img, x, bottom, Rgb{0, 0, 0});

  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.x.size(); ++i) {
      line(img, px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color);
    }
    if (s.x.size() == 1) put(img, px(s.x[0]), py(s.y[0]), s.color);
  }
  return img;
}

Series metric_series(const std::string& metrics_path, const std::string& key) {
  std::ifstream in(metrics_path);
  if (!in) throw std::runtime_error("cannot open " + metrics_path);
  Series s;
  std::string line_text;
  int n = 0;
  while (std::getline(in, line_text)) {
    ++n;
    if (trim(line_text).empty()) continue;
    const auto j = nlohmann::json::parse(line_text);
    if (!j.contains(key)) throw std::invalid_argument(metrics_path + ":" + std::to_string(n) + ": no field '" + key + "'");
    s.x.push_back(j.contains("groups_seen") ? j["groups_seen"].get<double>() : static_cast<double>(s.x.size()));
    s.y.push_back(j[key].get<double>());
  }
  return s;
}

}  // namespace toolrl::plot

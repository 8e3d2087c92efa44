#include "toolrl/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "toolrl/kernels.hpp"

namespace toolrl::imaging {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("Image: dimensions must be positive");
  pixels_.resize(3 * static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill.r;
    pixels_[i + 1] = fill.g;
    pixels_[i + 2] = fill.b;
  }
}

Image::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("Image: dimensions must be positive");
  if (pixels_.size() != 3 * static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("Image: pixel buffer size does not match dimensions");
  }
}

DepthField::DepthField(int width, int height, double fill)
    : DepthField(width, height,
                 std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                         static_cast<std::size_t>(std::max(height, 0)),
                                     fill)) {}

DepthField::DepthField(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("DepthField: dimensions must be positive");
  }
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("DepthField: value count does not match dimensions");
  }
  for (double v : values_) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("DepthField: depths must be positive and finite");
    }
  }
}

std::string BBox::to_string() const {
  return "[" + std::to_string(x1) + ", " + std::to_string(y1) + ", " + std::to_string(x2) + ", " +
         std::to_string(y2) + "]";
}

namespace {

std::vector<std::uint8_t> luma_plane(const Image& img) {
  const std::size_t n = static_cast<std::size_t>(img.width()) * img.height();
  std::vector<std::uint8_t> gray(n);
  kernels::active().luma(img.pixels().data(), n, gray.data());
  return gray;
}

}  // namespace

Image to_grayscale(const Image& img) {
  if (img.empty()) return img;
  const auto gray = luma_plane(img);
  std::vector<std::uint8_t> px(3 * gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) px[3 * i] = px[3 * i + 1] = px[3 * i + 2] = gray[i];
  return Image(img.width(), img.height(), std::move(px));
}

Image scharr_edge_map(const Image& img) {
  const int w = img.width();
  const int h = img.height();
  if (w < 3 || h < 3) throw std::invalid_argument("scharr_edge_map: image must be at least 3x3");

  const auto gray = luma_plane(img);
  const int pw = w + 2;
  std::vector<std::int32_t> padded(static_cast<std::size_t>(pw) * (h + 2));
  for (int y = -1; y <= h; ++y) {
    const int sy = std::clamp(y, 0, h - 1);
    for (int x = -1; x <= w; ++x) {
      const int sx = std::clamp(x, 0, w - 1);
      padded[static_cast<std::size_t>(y + 1) * pw + (x + 1)] =
          gray[static_cast<std::size_t>(sy) * w + sx];
    }
  }

  const auto& k = kernels::active();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<std::int32_t> sq(n);
  k.scharr_sq(padded.data(), w, h, sq.data());

  const std::int32_t max_sq = *std::max_element(sq.begin(), sq.end());
  std::vector<std::uint8_t> mag(n, 0);
  if (max_sq > 0) k.normalize(sq.data(), n, std::sqrt(static_cast<double>(max_sq)), mag.data());

  std::vector<std::uint8_t> px(3 * n);
  for (std::size_t i = 0; i < n; ++i) px[3 * i] = px[3 * i + 1] = px[3 * i + 2] = mag[i];
  return Image(w, h, std::move(px));
}

Image crop_and_zoom(const Image& img, const BBox& region, double factor) {
  if (!region.valid_for(img.width(), img.height())) {
    throw std::invalid_argument("crop_and_zoom: region " + region.to_string() +
                                " is not inside the image");
  }
  if (!(factor >= 1.0 && factor <= 8.0)) {
    throw std::invalid_argument("crop_and_zoom: factor must be in [1, 8]");
  }
  const int cw = region.width();
  const int ch = region.height();
  const int ow = static_cast<int>(std::lround(cw * factor));
  const int oh = static_cast<int>(std::lround(ch * factor));
  Image out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    // Pixel-center mapping in exact integer arithmetic.
    const int sy = static_cast<int>((static_cast<std::int64_t>(2 * oy + 1) * ch) / (2 * oh));
    for (int ox = 0; ox < ow; ++ox) {
      const int sx = static_cast<int>((static_cast<std::int64_t>(2 * ox + 1) * cw) / (2 * ow));
      out.set(ox, oy, img.at(region.x1 + sx, region.y1 + sy));
    }
  }
  return out;
}

namespace {

constexpr std::array<Rgb, 5> kRamp{{{0, 0, 131}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0},
                                    {255, 0, 0}}};

std::uint8_t lerp_channel(std::uint8_t a, std::uint8_t b, double u) {
  return static_cast<std::uint8_t>(std::floor(a + (b - a) * u + 0.5));
}

}  // namespace

Rgb depth_ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int seg = std::min(3, static_cast<int>(std::floor(t * 4.0)));
  const double u = t * 4.0 - seg;
  const Rgb a = kRamp[seg];
  const Rgb b = kRamp[seg + 1];
  return {lerp_channel(a.r, b.r, u), lerp_channel(a.g, b.g, u), lerp_channel(a.b, b.b, u)};
}

double ramp_position(Rgb c) {
  double best_t = 0.0;
  double best_d = INFINITY;
  for (int seg = 0; seg < 4; ++seg) {
    const Rgb a = kRamp[seg];
    const Rgb b = kRamp[seg + 1];
    const double dr = b.r - a.r, dg = b.g - a.g, db = b.b - a.b;
    const double len2 = dr * dr + dg * dg + db * db;
    double u = ((c.r - a.r) * dr + (c.g - a.g) * dg + (c.b - a.b) * db) / len2;
    u = std::clamp(u, 0.0, 1.0);
    const double er = a.r + u * dr - c.r, eg = a.g + u * dg - c.g, eb = a.b + u * db - c.b;
    const double d = er * er + eg * eg + eb * eb;
    if (d < best_d) {
      best_d = d;
      best_t = (seg + u) / 4.0;
    }
  }
  return best_t;
}

Image colorize_depth(const DepthField& depth) {
  const auto& v = depth.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  Image out(depth.width(), depth.height());
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double t = hi > lo ? (hi - depth.at(x, y)) / (hi - lo) : 1.0;
      out.set(x, y, depth_ramp(t));
    }
  }
  return out;
}

Rgb box_color(std::size_t index) {
  static constexpr std::array<Rgb, 6> kCycle{
      {{255, 0, 0}, {0, 0, 255}, {0, 200, 0}, {255, 200, 0}, {255, 0, 255}, {0, 200, 255}}};
  return kCycle[index % kCycle.size()];
}

Image draw_boxes(const Image& img, const std::vector<LabeledBox>& boxes) {
  for (const auto& b : boxes) {
    if (!b.box.valid_for(img.width(), img.height())) {
      throw std::invalid_argument("draw_boxes: box " + b.box.to_string() + " is not inside the image");
    }
  }
  Image out = img;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BBox& r = boxes[i].box;
    const Rgb color = box_color(i);
    for (int y = r.y1; y < r.y2; ++y) {
      for (int x = r.x1; x < r.x2; ++x) {
        const bool edge = x < r.x1 + 2 || x >= r.x2 - 2 || y < r.y1 + 2 || y >= r.y2 - 2;
        if (edge) out.set(x, y, color);
      }
    }
  }
  return out;
}

}  // namespace toolrl::imaging

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace toolrl::imaging {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Row-major RGB8 raster.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {});
  Image(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const {
    const std::uint8_t* p = &pixels_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    std::uint8_t* p = &pixels_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  std::vector<std::uint8_t>& pixels() { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Per-pixel distance in meters, smaller is closer. All values > 0 and finite.
class DepthField {
 public:
  DepthField(int width, int height, double fill);
  DepthField(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int x, int y, double v) { values_[static_cast<std::size_t>(y) * width_ + x] = v; }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const DepthField&, const DepthField&) = default;

 private:
  int width_;
  int height_;
  std::vector<double> values_;
};

// Half-open pixel box [x1, x2) x [y1, y2), origin top-left.
struct BBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool valid_for(int w, int h) const {
    return 0 <= x1 && x1 < x2 && x2 <= w && 0 <= y1 && y1 < y2 && y2 <= h;
  }
  bool intersects(const BBox& o) const {
    return x1 < o.x2 && o.x1 < x2 && y1 < o.y2 && o.y1 < y2;
  }
  // "[x1, y1, x2, y2]"
  std::string to_string() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct LabeledBox {
  BBox box;
  std::string label;
  double score = 0.0;
};

// luma = round(0.299 R + 0.587 G + 0.114 B), stored as equal RGB.
Image to_grayscale(const Image& img);

// Scharr gradient magnitude on the grayscale image, replicate border,
// normalized so the strongest edge is 255. Requires width, height >= 3.
Image scharr_edge_map(const Image& img);

// Nearest-neighbor magnification of a region. factor in [1, 8].
Image crop_and_zoom(const Image& img, const BBox& region, double factor);

// Warm-to-cool ramp, closer is warmer.
Image colorize_depth(const DepthField& depth);
Rgb depth_ramp(double t);
// Inverse of depth_ramp for colors on the ramp; returns the closest t in [0, 1].
double ramp_position(Rgb c);

// 2-px outlines in a per-index color cycle; later boxes overwrite earlier ones.
Image draw_boxes(const Image& img, const std::vector<LabeledBox>& boxes);
Rgb box_color(std::size_t index);

// RGB8, no alpha, no interlace. Decoding accepts any libpng-readable PNG and
// converts it to RGB8.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void save_png(const Image& img, const std::string& path);
Image load_png(const std::string& path);

}  // namespace toolrl::imaging

#include <cmath>

#include "kernels_internal.hpp"

namespace toolrl::kernels::detail {

void luma_scalar(const std::uint8_t* rgb, std::size_t n, std::uint8_t* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t weighted = 299 * rgb[3 * i] + 587 * rgb[3 * i + 1] + 114 * rgb[3 * i + 2];
    out[i] = static_cast<std::uint8_t>((weighted + 500) / 1000);
  }
}

void scharr_sq_scalar(const std::int32_t* padded, int width, int height, std::int32_t* out) {
  const std::ptrdiff_t stride = width + 2;
  for (int y = 0; y < height; ++y) {
    const std::int32_t* above = padded + y * stride;
    const std::int32_t* row = above + stride;
    const std::int32_t* below = row + stride;
    for (int x = 0; x < width; ++x) {
      // Column x of the output is column x+1 of the padded plane.
      const std::int32_t gx = 3 * (above[x + 2] - above[x]) + 10 * (row[x + 2] - row[x]) +
                              3 * (below[x + 2] - below[x]);
      const std::int32_t gy = 3 * (below[x] - above[x]) + 10 * (below[x + 1] - above[x + 1]) +
                              3 * (below[x + 2] - above[x + 2]);
      out[static_cast<std::size_t>(y) * width + x] = gx * gx + gy * gy;
    }
  }
}

void normalize_scalar(const std::int32_t* sq, std::size_t n, double max_mag, std::uint8_t* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double scaled = 255.0 * std::sqrt(static_cast<double>(sq[i])) / max_mag;
    out[i] = static_cast<std::uint8_t>(std::floor(scaled + 0.5));
  }
}

}  // namespace toolrl::kernels::detail

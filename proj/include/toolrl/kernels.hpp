#pragma once

// Inner loops of the imaging module. Each kernel has a scalar reference and
// optional SIMD variants; all variants produce bit-identical output.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace toolrl::kernels {

enum class Level { Scalar, Avx2 };

std::string_view level_name(Level level);

struct KernelTable {
  Level level;
  // out[i] = round-half-up((299 R + 587 G + 114 B) / 1000) over n RGB pixels.
  void (*luma)(const std::uint8_t* rgb, std::size_t n, std::uint8_t* out);
  // Squared Scharr gradient magnitude over a (width+2) x (height+2) replicate
  // padded gray plane. out has width*height entries.
  void (*scharr_sq)(const std::int32_t* padded, int width, int height, std::int32_t* out);
  // out[i] = floor(255 * sqrt(sq[i]) / max_mag + 0.5); max_mag > 0.
  void (*normalize)(const std::int32_t* sq, std::size_t n, double max_mag, std::uint8_t* out);
};

const KernelTable& scalar_kernels();
// nullptr when the build or the CPU does not support the level.
const KernelTable* avx2_kernels();

bool cpu_supports(Level level);

// Best supported table, unless TOOLRL_KERNELS=scalar or an override is set.
const KernelTable& active();
void set_override(const KernelTable* table);

}  // namespace toolrl::kernels

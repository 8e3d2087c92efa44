#pragma once

#include <cstddef>
#include <cstdint>

namespace toolrl::kernels::detail {

void luma_scalar(const std::uint8_t* rgb, std::size_t n, std::uint8_t* out);
void scharr_sq_scalar(const std::int32_t* padded, int width, int height, std::int32_t* out);
void normalize_scalar(const std::int32_t* sq, std::size_t n, double max_mag, std::uint8_t* out);

#if defined(TOOLRL_HAVE_AVX2)
void luma_avx2(const std::uint8_t* rgb, std::size_t n, std::uint8_t* out);
void scharr_sq_avx2(const std::int32_t* padded, int width, int height, std::int32_t* out);
void normalize_avx2(const std::int32_t* sq, std::size_t n, double max_mag, std::uint8_t* out);
#endif

}  // namespace toolrl::kernels::detail

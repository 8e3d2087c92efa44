// Compiled with -mavx2 only; reached through the runtime dispatch table.

#include <immintrin.h>

#include "kernels_internal.hpp"

namespace toolrl::kernels::detail {

void luma_avx2(const std::uint8_t* rgb, std::size_t n, std::uint8_t* out) {
  const __m256i offsets = _mm256_setr_epi32(0, 3, 6, 9, 12, 15, 18, 21);
  const __m256i low_byte = _mm256_set1_epi32(0xff);
  const __m256i wr = _mm256_set1_epi32(299);
  const __m256i wg = _mm256_set1_epi32(587);
  const __m256i wb = _mm256_set1_epi32(114);
  const __m256i half = _mm256_set1_epi32(500);
  const __m256 thousand = _mm256_set1_ps(1000.0f);

  std::size_t i = 0;
  // Each gather reads 4 bytes, so stop one pixel early to stay in bounds.
  for (; i + 9 <= n; i += 8) {
    const int* base = reinterpret_cast<const int*>(rgb + 3 * i);
    __m256i r = _mm256_and_si256(_mm256_i32gather_epi32(base, offsets, 1), low_byte);
    __m256i g = _mm256_and_si256(
        _mm256_i32gather_epi32(reinterpret_cast<const int*>(rgb + 3 * i + 1), offsets, 1),
        low_byte);
    __m256i b = _mm256_and_si256(
        _mm256_i32gather_epi32(reinterpret_cast<const int*>(rgb + 3 * i + 2), offsets, 1),
        low_byte);
    __m256i acc = _mm256_add_epi32(_mm256_mullo_epi32(r, wr), _mm256_mullo_epi32(g, wg));
    acc = _mm256_add_epi32(acc, _mm256_mullo_epi32(b, wb));
    acc = _mm256_add_epi32(acc, half);
    // acc < 2^24, so the float quotient floors to the exact integer quotient.
    __m256 q = _mm256_floor_ps(_mm256_div_ps(_mm256_cvtepi32_ps(acc), thousand));
    alignas(32) std::int32_t lanes[8];
    _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), _mm256_cvttps_epi32(q));
    for (int k = 0; k < 8; ++k) out[i + k] = static_cast<std::uint8_t>(lanes[k]);
  }
  luma_scalar(rgb + 3 * i, n - i, out + i);
}

void scharr_sq_avx2(const std::int32_t* padded, int width, int height, std::int32_t* out) {
  const std::ptrdiff_t stride = width + 2;
  const __m256i three = _mm256_set1_epi32(3);
  const __m256i ten = _mm256_set1_epi32(10);
  for (int y = 0; y < height; ++y) {
    const std::int32_t* above = padded + y * stride;
    const std::int32_t* row = above + stride;
    const std::int32_t* below = row + stride;
    std::int32_t* dst = out + static_cast<std::size_t>(y) * width;
    int x = 0;
    for (; x + 8 <= width; x += 8) {
      auto load = [x](const std::int32_t* p, int dx) {
        return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p + x + dx));
      };
      const __m256i a0 = load(above, 0), a1 = load(above, 1), a2 = load(above, 2);
      const __m256i r0 = load(row, 0), r2 = load(row, 2);
      const __m256i b0 = load(below, 0), b1 = load(below, 1), b2 = load(below, 2);

      __m256i gx = _mm256_mullo_epi32(three, _mm256_sub_epi32(a2, a0));
      gx = _mm256_add_epi32(gx, _mm256_mullo_epi32(ten, _mm256_sub_epi32(r2, r0)));
      gx = _mm256_add_epi32(gx, _mm256_mullo_epi32(three, _mm256_sub_epi32(b2, b0)));

      __m256i gy = _mm256_mullo_epi32(three, _mm256_sub_epi32(b0, a0));
      gy = _mm256_add_epi32(gy, _mm256_mullo_epi32(ten, _mm256_sub_epi32(b1, a1)));
      gy = _mm256_add_epi32(gy, _mm256_mullo_epi32(three, _mm256_sub_epi32(b2, a2)));

      const __m256i sq = _mm256_add_epi32(_mm256_mullo_epi32(gx, gx), _mm256_mullo_epi32(gy, gy));
      _mm256_storeu_si256(reinterpret_cast<__m256i*>(dst + x), sq);
    }
    for (; x < width; ++x) {
      const std::int32_t gx = 3 * (above[x + 2] - above[x]) + 10 * (row[x + 2] - row[x]) +
                              3 * (below[x + 2] - below[x]);
      const std::int32_t gy = 3 * (below[x] - above[x]) + 10 * (below[x + 1] - above[x + 1]) +
                              3 * (below[x + 2] - above[x + 2]);
      dst[x] = gx * gx + gy * gy;
    }
  }
}

void normalize_avx2(const std::int32_t* sq, std::size_t n, double max_mag, std::uint8_t* out) {
  const __m256d scale = _mm256_set1_pd(255.0);
  const __m256d denom = _mm256_set1_pd(max_mag);
  const __m256d half = _mm256_set1_pd(0.5);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d m = _mm256_sqrt_pd(
        _mm256_cvtepi32_pd(_mm_loadu_si128(reinterpret_cast<const __m128i*>(sq + i))));
    // Same operation order as the scalar path: (255 * m) / max, then + 0.5.
    __m256d v = _mm256_div_pd(_mm256_mul_pd(scale, m), denom);
    v = _mm256_floor_pd(_mm256_add_pd(v, half));
    alignas(16) std::int32_t lanes[4];
    _mm_store_si128(reinterpret_cast<__m128i*>(lanes), _mm256_cvttpd_epi32(v));
    for (int k = 0; k < 4; ++k) out[i + k] = static_cast<std::uint8_t>(lanes[k]);
  }
  normalize_scalar(sq + i, n - i, max_mag, out + i);
}

}  // namespace toolrl::kernels::detail

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace adapool::kernels::detail {

inline float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f)); }

inline float gelu_grad(float x) {
  const float cdf = 0.5f * (1.0f + std::erf(x * 0.70710678118654752f));
  const float pdf = 0.39894228040143268f * std::exp(-0.5f * x * x);
  return cdf + x * pdf;
}

/// exp within 2 ulp of std::exp on [-87, 88]; inputs outside are clamped.
/// Written once over a generic lane type so the same arithmetic serves both
/// scalars and 16-lane vectors.
template <class T, class I>
inline T fast_exp_lanes(T x) {
  x = x < -87.0f ? T{} - 87.0f : x;
  x = x > 88.0f ? T{} + 88.0f : x;
  // Adding and removing 1.5 * 2^23 rounds to the nearest integer.
  const T n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  T r = x - n * 0.693359375f;
  r = r + n * 2.12194440e-4f;
  T p = T{} + 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const T y = p * r * r + r + 1.0f;
  I bits = (__builtin_convertvector(n, I) + 127) << 23;
  T scale;
  static_assert(sizeof scale == sizeof bits);
  __builtin_memcpy(&scale, &bits, sizeof scale);
  return y * scale;
}

using f32x16 = float __attribute__((vector_size(64)));
using i32x16 = std::int32_t __attribute__((vector_size(64)));
using f32x1 = float __attribute__((vector_size(4)));
using i32x1 = std::int32_t __attribute__((vector_size(4)));

/// Normal cdf and pdf at x, the pieces of gelu(x) = x * cdf and
/// gelu'(x) = cdf + x * pdf. erfc uses a rational approximation with
/// absolute error below 1.5e-7 that shares its exponential with the pdf.
template <class T, class I>
inline void normal_cdf_pdf(T x, T& cdf, T& pdf) {
  const T z = (x < 0.0f ? -x : x) * 0.70710678118654752f;
  const T t = 1.0f / (1.0f + 0.3275911f * z);
  T poly = T{} + 1.061405429f;
  poly = poly * t - 1.453152027f;
  poly = poly * t + 1.421413741f;
  poly = poly * t - 0.284496736f;
  poly = poly * t + 0.254829592f;
  poly = poly * t;
  const T e = fast_exp_lanes<T, I>(-(z * z));
  const T half_erfc = 0.5f * poly * e;
  cdf = x < 0.0f ? half_erfc : 1.0f - half_erfc;
  pdf = 0.39894228040143268f * e;
}

/// p[i] = exp(p[i] - shift) for i < n.
inline void exp_shifted(float* p, std::size_t n, float shift) {
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    f32x16 v;
    __builtin_memcpy(&v, p + i, sizeof v);
    v = fast_exp_lanes<f32x16, i32x16>(v - shift);
    __builtin_memcpy(p + i, &v, sizeof v);
  }
  for (; i < n; ++i) {
    f32x1 v = {p[i] - shift};
    p[i] = fast_exp_lanes<f32x1, i32x1>(v)[0];
  }
}

/// Applies `f` to 16-lane chunks of [begin, end) and then to the scalar tail.
template <class F>
inline void for_lanes(std::size_t begin, std::size_t end, F&& f) {
  std::size_t i = begin;
  for (; i + 16 <= end; i += 16) f.template operator()<f32x16, i32x16>(i);
  for (; i < end; ++i) f.template operator()<f32x1, i32x1>(i);
}

}  // namespace adapool::kernels::detail

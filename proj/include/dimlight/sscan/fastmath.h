#pragma once

#include <bit>
#include <cstdint>
#include <type_traits>

// Branch-free exp / expm1 that GCC and Clang auto-vectorize inside simple
// loops (libm calls block vectorization). Accuracy is a few ulp in float and
// about 1e-16 relative in double over the clamped range.

namespace dimlight::fastmath {

namespace detail {

template <typename T>
inline T round_nearest(T v) {
  // Adding and removing 1.5 * 2^mantissa_bits rounds to nearest-even without
  // a function call. Valid for |v| < 2^(mantissa_bits - 1).
  constexpr T magic = std::is_same_v<T, float> ? T(12582912.0f) : T(6755399441055744.0);
  return (v + magic) - magic;
}

template <typename T>
inline T pow2i(T n) {
  if constexpr (std::is_same_v<T, float>) {
    const std::int32_t e = static_cast<std::int32_t>(n) + 127;
    return std::bit_cast<float>(static_cast<std::uint32_t>(e) << 23);
  } else {
    const std::int64_t e = static_cast<std::int64_t>(n) + 1023;
    return std::bit_cast<double>(static_cast<std::uint64_t>(e) << 52);
  }
}

}  // namespace detail

namespace detail {

// expm1 on the reduced argument |r| <= ln2 / 2, Horner form r (1 + r (1/2 + ...)).
template <typename T>
inline T expm1_reduced(T r) {
  T p;
  if constexpr (std::is_same_v<T, float>) {
    p = T(1.0 / 40320);
    p = p * r + T(1.0 / 5040);
    p = p * r + T(1.0 / 720);
    p = p * r + T(1.0 / 120);
    p = p * r + T(1.0 / 24);
    p = p * r + T(1.0 / 6);
    p = p * r + T(0.5);
    p = p * r + T(1);
  } else {
    p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
  }
  return p * r;
}

}  // namespace detail

template <typename T>
struct ExpPair {
  T exp;    // e^x
  T expm1;  // e^x - 1, accurate near 0
};

/// e^x and e^x - 1 from one range reduction x = n ln2 + r:
/// e^x = 2^n (1 + p), e^x - 1 = 2^n p + (2^n - 1) with p = expm1(r).
/// For |x| < ln2 / 2 (n = 0) the second form is p itself, so there is no
/// cancellation.
template <typename T>
inline ExpPair<T> exp_expm1(T x) {
  static_assert(std::is_floating_point_v<T>);
  constexpr bool kFloat = std::is_same_v<T, float>;
  constexpr T lo = kFloat ? T(-87.0) : T(-708.0);
  constexpr T hi = kFloat ? T(88.0) : T(709.0);
  constexpr T log2e = T(1.44269504088896340736);
  // ln 2 split so that n * ln2_hi is exact for the exponent range in use.
  constexpr T ln2_hi = kFloat ? T(0.693145751953125) : T(0.693147180369123816490);
  constexpr T ln2_lo = kFloat ? T(1.428606765330187045e-06) : T(1.90821492927058770002e-10);
  x = x < lo ? lo : (x > hi ? hi : x);
  const T n = detail::round_nearest(x * log2e);
  const T r = (x - n * ln2_hi) - n * ln2_lo;
  const T p = detail::expm1_reduced(r);
  const T scale = detail::pow2i(n);
  return {scale * p + scale, scale * p + (scale - T(1))};
}

template <typename T>
inline T exp(T x) {
  return exp_expm1(x).exp;
}

template <typename T>
inline T expm1(T x) {
  return exp_expm1(x).expm1;
}

}  // namespace dimlight::fastmath

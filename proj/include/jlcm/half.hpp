#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace jlcm {

// IEEE 754 binary16 <-> binary32 conversion, round-to-nearest-even,
// with subnormal and inf/nan handling.
inline std::uint16_t float_to_half_bits(float f) {
    std::uint32_t x;
    std::memcpy(&x, &f, sizeof(x));
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    std::uint32_t mant = x & 0x007fffffu;
    const int exp = int((x >> 23) & 0xffu);

    if (exp == 255) { // inf or nan
        if (mant == 0) return std::uint16_t(sign | 0x7c00u);
        return std::uint16_t(sign | 0x7c00u | 0x0200u | (mant >> 13));
    }

    const int e = exp - 127 + 15;
    if (e >= 31) return std::uint16_t(sign | 0x7c00u); // overflow to inf
    if (e <= 0) {
        // subnormal half or zero
        if (e < -10) return std::uint16_t(sign);
        mant |= 0x00800000u;
        const unsigned shift = unsigned(14 - e); // 14..24
        std::uint16_t half_mant = std::uint16_t(mant >> shift);
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) half_mant++;
        return std::uint16_t(sign | half_mant);
    }

    std::uint16_t out = std::uint16_t(sign | (std::uint32_t(e) << 10) | (mant >> 13));
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (out & 1u))) out++; // carry may roll into exponent
    return out;
}

inline float half_bits_to_float(std::uint16_t h) {
    const bool neg = (h & 0x8000u) != 0;
    const unsigned exp = (h >> 10) & 0x1fu;
    const unsigned mant = h & 0x3ffu;
    float v;
    if (exp == 0) {
        v = std::ldexp(float(mant), -24);
    } else if (exp == 31) {
        if (mant == 0) {
            v = std::numeric_limits<float>::infinity();
        } else {
            std::uint32_t bits = 0x7f800000u | (std::uint32_t(mant) << 13);
            std::memcpy(&v, &bits, sizeof(v));
        }
    } else {
        v = std::ldexp(float(mant | 0x400u), int(exp) - 25);
    }
    return neg ? -v : v;
}

// Round-trip through binary16; idempotent.
inline float round_to_half(float f) { return half_bits_to_float(float_to_half_bits(f)); }
inline double round_to_half(double d) { return double(round_to_half(float(d))); }

} // namespace jlcm

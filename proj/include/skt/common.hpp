#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace skt {

// Malformed data: bad files, bad shapes, bad encodings. CLI maps these to exit 2.
struct format_error : std::runtime_error {
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// Dimension mismatches between tensors or against a declared layout.
struct shape_error : format_error {
    explicit shape_error(const std::string& what) : format_error(what) {}
};

// ---- half-precision storage ----
// F16 is storage-only: scales inside quantized blocks and optional weight
// storage. All arithmetic happens in F32.

inline uint16_t f32_to_f16(float v) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    uint16_t sign = static_cast<uint16_t>((bits >> 16) & 0x8000u);
    uint32_t abs = bits & 0x7fffffffu;
    if (abs >= 0x7f800000u) {  // inf / nan
        return static_cast<uint16_t>(sign | 0x7c00u | (abs > 0x7f800000u ? 0x200u : 0u));
    }
    int32_t hexp = static_cast<int32_t>(abs >> 23) - 127 + 15;
    uint32_t mant = abs & 0x7fffffu;
    if (hexp >= 31) return static_cast<uint16_t>(sign | 0x7c00u);  // overflow -> inf
    if (hexp <= 0) {
        if (hexp < -10) return sign;  // underflow -> signed zero
        // subnormal target: restore implicit bit, shift with round-to-nearest-even
        mant |= 0x800000u;
        uint32_t shift = static_cast<uint32_t>(14 - hexp);
        uint32_t rounded = mant >> shift;
        uint32_t rem = mant & ((1u << shift) - 1u);
        uint32_t half = 1u << (shift - 1u);
        if (rem > half || (rem == half && (rounded & 1u))) rounded++;
        // a carry out of the mantissa lands on the smallest normal, which is correct
        return static_cast<uint16_t>(sign | rounded);
    }
    uint32_t m = mant >> 13;
    uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (m & 1u))) {
        m++;
        if (m == 0x400u) {
            m = 0;
            if (++hexp >= 31) return static_cast<uint16_t>(sign | 0x7c00u);
        }
    }
    return static_cast<uint16_t>(sign | static_cast<uint32_t>(hexp << 10) | m);
}

inline float f16_to_f32(uint16_t h) {
    uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t mant = h & 0x3ffu;
    uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            int shift = 0;
            uint32_t m = mant;
            while (!(m & 0x400u)) {
                m <<= 1;
                shift++;
            }
            bits = sign | (static_cast<uint32_t>(113 - shift) << 23) | ((m & 0x3ffu) << 13);
        }
    } else if (exp == 31) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 112) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

constexpr float kF16Max = 65504.0f;

// Nearest representable half not exceeding v (round toward -inf). Used for
// affine block offsets so the stored offset never overshoots the block min.
inline uint16_t f32_to_f16_floor(float v) {
    uint16_t h = f32_to_f16(v);
    if (f16_to_f32(h) <= v) return h;
    // step one representable value toward -inf in sign-magnitude space
    if (h == 0x0000u) return 0x8001u;
    return (h & 0x8000u) ? static_cast<uint16_t>(h + 1) : static_cast<uint16_t>(h - 1);
}

// ---- deterministic helpers ----

// Banker's rounding, independent of the process fenv rounding mode.
inline double round_half_even(double v) {
    double f = std::floor(v);
    double diff = v - f;
    if (diff > 0.5) return f + 1.0;
    if (diff < 0.5) return f;
    return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

// splitmix64: the seed schedule for sampling draws and random weight init.
inline uint64_t splitmix64_next(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline double splitmix64_uniform(uint64_t& state) {
    return static_cast<double>(splitmix64_next(state) >> 11) * 0x1.0p-53;
}

}  // namespace skt

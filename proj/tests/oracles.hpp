// Independent reference implementations used to pin the engine's numerics.
// Everything here is computed in double precision with its own decoding
// logic, so library bugs cannot hide inside their own oracle.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "skt/quant.hpp"

namespace oracle {

struct TestRng {
    uint64_t s;
    explicit TestRng(uint64_t seed) : s(seed) {}
    double uniform() { return skt::splitmix64_uniform(s); }
    float range(float lo, float hi) {
        return lo + (hi - lo) * static_cast<float>(uniform());
    }
    int integer(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(uniform() * (hi - lo + 1));
    }
    std::vector<float> vec(size_t n, float lo = -1.0f, float hi = 1.0f) {
        std::vector<float> v(n);
        for (float& x : v) x = range(lo, hi);
        return v;
    }
};

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); i++)
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

// ---- dense math references ----

inline std::vector<double> ref_matmul(std::span<const float> a, std::span<const float> b,
                                      int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; i++)
        for (int64_t j = 0; j < n; j++) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; p++)
                acc += static_cast<double>(a[static_cast<size_t>(i * k + p)]) *
                       static_cast<double>(b[static_cast<size_t>(p * n + j)]);
            c[static_cast<size_t>(i * n + j)] = acc;
        }
    return c;
}

inline std::vector<double> ref_softmax(std::span<const float> row, double scale) {
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, scale * v);
    std::vector<double> out(row.size());
    double sum = 0.0;
    for (size_t i = 0; i < row.size(); i++) {
        out[i] = std::exp(scale * row[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline std::vector<double> ref_rmsnorm(std::span<const float> x, std::span<const float> gamma,
                                       double eps) {
    double ms = 0.0;
    for (float v : x) ms += static_cast<double>(v) * v;
    ms /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + eps);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); i++) out[i] = x[i] * inv * gamma[i];
    return out;
}

inline double ref_silu(double x) { return x / (1.0 + std::exp(-x)); }

// Dense attention: Q is [seq x n_heads x hd], K/V are [seq x n_kv x hd].
// Query t attends to s in [lo(t), t] where lo honors `window` (0 = unbounded)
// and, when given, a [seq x seq] mask. Head h reads KV head h/(n_heads/n_kv).
inline std::vector<double> ref_attention(std::span<const float> q, std::span<const float> k,
                                         std::span<const float> v, int64_t seq, int n_heads,
                                         int n_kv, int hd, const uint8_t* mask = nullptr,
                                         int64_t window = 0) {
    const int group = n_heads / n_kv;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const size_t qrow = static_cast<size_t>(n_heads) * static_cast<size_t>(hd);
    const size_t krow = static_cast<size_t>(n_kv) * static_cast<size_t>(hd);
    std::vector<double> out(static_cast<size_t>(seq) * qrow, 0.0);
    for (int64_t t = 0; t < seq; t++) {
        const int64_t lo = window > 0 ? std::max<int64_t>(0, t - window + 1) : 0;
        for (int h = 0; h < n_heads; h++) {
            const size_t g = static_cast<size_t>(h / group);
            const float* qh = q.data() + static_cast<size_t>(t) * qrow +
                              static_cast<size_t>(h) * static_cast<size_t>(hd);
            std::vector<double> logits;
            std::vector<int64_t> pos;
            for (int64_t s = lo; s <= t; s++) {
                if (mask && !mask[t * seq + s]) continue;
                const float* ks =
                    k.data() + static_cast<size_t>(s) * krow + g * static_cast<size_t>(hd);
                double acc = 0.0;
                for (int c = 0; c < hd; c++)
                    acc += static_cast<double>(qh[c]) * static_cast<double>(ks[c]);
                logits.push_back(acc * scale);
                pos.push_back(s);
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (double l : logits) mx = std::max(mx, l);
            double sum = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                sum += l;
            }
            double* oh = out.data() + static_cast<size_t>(t) * qrow +
                         static_cast<size_t>(h) * static_cast<size_t>(hd);
            for (size_t i = 0; i < pos.size(); i++) {
                const double w = logits[i] / sum;
                const float* vs =
                    v.data() + static_cast<size_t>(pos[i]) * krow + g * static_cast<size_t>(hd);
                for (int c = 0; c < hd; c++) oh[c] += w * static_cast<double>(vs[c]);
            }
        }
    }
    return out;
}

// ---- independent block decoding ----

inline double f16_value(uint16_t h) {
    const bool neg = (h & 0x8000u) != 0;
    const int exp = (h >> 10) & 0x1f;
    const int mant = h & 0x3ff;
    double v;
    if (exp == 0) v = std::ldexp(static_cast<double>(mant), -24);
    else if (exp == 31)
        v = mant ? std::numeric_limits<double>::quiet_NaN()
                 : std::numeric_limits<double>::infinity();
    else v = std::ldexp(static_cast<double>(1024 + mant), exp - 25);
    return neg ? -v : v;
}

struct DecodedBlock {
    double d = 0.0;
    double m = 0.0;
    std::array<int, 32> q{};        // signed, bias removed
    std::array<double, 32> values{};
};

// Parses the normative block layout from scratch: scale(s) first as F16,
// 4-bit two-per-byte low nibble first, 5-bit as 16 nibble bytes plus a u32
// little-endian bitfield of high bits, 8-bit as signed bytes; symmetric
// 4/5-bit values offset-binary.
inline DecodedBlock decode_block(std::span<const uint8_t> b, skt::FormatId id) {
    DecodedBlock out;
    int bits = 0;
    bool affine = false;
    switch (id) {
        case skt::FormatId::Q8_0: bits = 8; break;
        case skt::FormatId::Q5_0: bits = 5; break;
        case skt::FormatId::Q5_1: bits = 5, affine = true; break;
        case skt::FormatId::Q4_0: bits = 4; break;
        case skt::FormatId::Q4_1: bits = 4, affine = true; break;
    }
    size_t pos = 0;
    out.d = f16_value(static_cast<uint16_t>(b[0] | (b[1] << 8)));
    pos = 2;
    if (affine) {
        out.m = f16_value(static_cast<uint16_t>(b[2] | (b[3] << 8)));
        pos = 4;
    }
    const int bias = affine ? 0 : (1 << (bits - 1));
    if (bits == 8) {
        for (int i = 0; i < 32; i++) out.q[static_cast<size_t>(i)] = static_cast<int8_t>(b[pos + static_cast<size_t>(i)]);
    } else if (bits == 4) {
        for (int i = 0; i < 16; i++) {
            const uint8_t by = b[pos + static_cast<size_t>(i)];
            out.q[static_cast<size_t>(2 * i)] = (by & 0xf) - bias;
            out.q[static_cast<size_t>(2 * i + 1)] = (by >> 4) - bias;
        }
    } else {
        uint32_t high = 0;
        for (int i = 0; i < 4; i++)
            high |= static_cast<uint32_t>(b[pos + 16 + static_cast<size_t>(i)]) << (8 * i);
        for (int i = 0; i < 16; i++) {
            const uint8_t by = b[pos + static_cast<size_t>(i)];
            const int u0 = (by & 0xf) | (((high >> (2 * i)) & 1) << 4);
            const int u1 = (by >> 4) | (((high >> (2 * i + 1)) & 1) << 4);
            out.q[static_cast<size_t>(2 * i)] = u0 - bias;
            out.q[static_cast<size_t>(2 * i + 1)] = u1 - bias;
        }
    }
    for (int i = 0; i < 32; i++)
        out.values[static_cast<size_t>(i)] = out.d * out.q[static_cast<size_t>(i)] + out.m;
    return out;
}

}  // namespace oracle

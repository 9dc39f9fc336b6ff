#include "skt/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace skt {

const BlockFormat& format_info(FormatId id) {
    for (const auto& f : kBlockFormats)
        if (f.id == id) return f;
    throw format_error("unknown block format");
}

std::optional<FormatId> format_from_name(std::string_view name) {
    for (const auto& f : kBlockFormats)
        if (name == f.name) return f.id;
    return std::nullopt;
}

double compression_ratio(FormatId id) {
    // 32 / bits-per-weight, with bits-per-weight = block_bytes*8/32
    return 128.0 / format_info(id).block_bytes;
}

namespace {

void check_finite(std::span<const float> x) {
    for (float v : x)
        if (!std::isfinite(v)) throw format_error("quantize_block: non-finite input");
}

// Scales live in F16; saturate instead of producing inf.
uint16_t encode_scale(float d) {
    return f32_to_f16(std::clamp(d, -kF16Max, kF16Max));
}

struct BlockQuants {
    float d = 0.0f;
    float m = 0.0f;              // affine offset
    std::array<int, kBlockLen> q{};  // symmetric: signed; affine: unsigned
};

// Quantize against the F16-decoded scale/offset so the round-trip error is
// bounded by half the stored scale.
BlockQuants compute_quants(std::span<const float> x, const BlockFormat& fmt,
                           uint16_t& d_bits, uint16_t& m_bits) {
    BlockQuants out;
    if (fmt.affine) {
        float mn = x[0], mx = x[0];
        for (float v : x) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        m_bits = f32_to_f16_floor(std::clamp(mn, -kF16Max, kF16Max));
        out.m = f16_to_f32(m_bits);
        const int qmax = (1 << fmt.bits) - 1;
        d_bits = encode_scale((mx - out.m) / static_cast<float>(qmax));
        out.d = f16_to_f32(d_bits);
        if (out.d != 0.0f) {
            for (int i = 0; i < kBlockLen; i++) {
                double u = round_half_even((static_cast<double>(x[static_cast<size_t>(i)]) - out.m) / out.d);
                out.q[static_cast<size_t>(i)] = static_cast<int>(std::clamp(u, 0.0, static_cast<double>(qmax)));
            }
        }
    } else {
        float amax = 0.0f;
        for (float v : x) amax = std::max(amax, std::fabs(v));
        const int qmax = (1 << (fmt.bits - 1)) - 1;
        d_bits = encode_scale(amax / static_cast<float>(qmax));
        m_bits = 0;
        out.d = f16_to_f32(d_bits);
        if (out.d != 0.0f) {
            for (int i = 0; i < kBlockLen; i++) {
                double q = round_half_even(static_cast<double>(x[static_cast<size_t>(i)]) / out.d);
                out.q[static_cast<size_t>(i)] =
                    static_cast<int>(std::clamp(q, -static_cast<double>(qmax), static_cast<double>(qmax)));
            }
        }
    }
    return out;
}

void put_u16(std::span<uint8_t> out, size_t pos, uint16_t v) {
    out[pos] = static_cast<uint8_t>(v & 0xff);
    out[pos + 1] = static_cast<uint8_t>(v >> 8);
}

uint16_t get_u16(std::span<const uint8_t> in, size_t pos) {
    return static_cast<uint16_t>(in[pos] | (static_cast<uint16_t>(in[pos + 1]) << 8));
}

}  // namespace

void quantize_block(std::span<const float> x, FormatId id, std::span<uint8_t> out) {
    const BlockFormat& fmt = format_info(id);
    if (x.size() != kBlockLen) throw shape_error("quantize_block expects 32 values");
    if (out.size() != static_cast<size_t>(fmt.block_bytes))
        throw shape_error("quantize_block output must be " + std::to_string(fmt.block_bytes) + " bytes");
    check_finite(x);

    uint16_t d_bits = 0, m_bits = 0;
    BlockQuants bq = compute_quants(x, fmt, d_bits, m_bits);

    size_t pos = 0;
    put_u16(out, pos, d_bits);
    pos += 2;
    if (fmt.affine) {
        put_u16(out, pos, m_bits);
        pos += 2;
    }

    // symmetric 4/5-bit values are stored offset-binary
    const int bias = fmt.affine ? 0 : (1 << (fmt.bits - 1));
    switch (fmt.bits) {
        case 8:
            for (int i = 0; i < kBlockLen; i++)
                out[pos + static_cast<size_t>(i)] =
                    static_cast<uint8_t>(static_cast<int8_t>(bq.q[static_cast<size_t>(i)]));
            break;
        case 4:
            for (int i = 0; i < kBlockLen / 2; i++) {
                const int lo = bq.q[static_cast<size_t>(2 * i)] + bias;
                const int hi = bq.q[static_cast<size_t>(2 * i + 1)] + bias;
                out[pos + static_cast<size_t>(i)] = static_cast<uint8_t>((lo & 0xf) | (hi << 4));
            }
            break;
        case 5: {
            uint32_t high = 0;
            for (int i = 0; i < kBlockLen / 2; i++) {
                const int lo = bq.q[static_cast<size_t>(2 * i)] + bias;
                const int hi = bq.q[static_cast<size_t>(2 * i + 1)] + bias;
                out[pos + static_cast<size_t>(i)] = static_cast<uint8_t>((lo & 0xf) | ((hi & 0xf) << 4));
            }
            for (int i = 0; i < kBlockLen; i++)
                high |= static_cast<uint32_t>((bq.q[static_cast<size_t>(i)] + bias) >> 4 & 1) << i;
            const size_t hp = pos + 16;
            out[hp] = static_cast<uint8_t>(high & 0xff);
            out[hp + 1] = static_cast<uint8_t>((high >> 8) & 0xff);
            out[hp + 2] = static_cast<uint8_t>((high >> 16) & 0xff);
            out[hp + 3] = static_cast<uint8_t>((high >> 24) & 0xff);
            break;
        }
    }
}

void dequantize_block(std::span<const uint8_t> block, FormatId id, std::span<float> out) {
    const BlockFormat& fmt = format_info(id);
    if (block.size() != static_cast<size_t>(fmt.block_bytes))
        throw format_error("dequantize_block: expected " + std::to_string(fmt.block_bytes) +
                           " bytes, got " + std::to_string(block.size()));
    if (out.size() != kBlockLen) throw shape_error("dequantize_block expects 32 outputs");

    size_t pos = 0;
    const float d = f16_to_f32(get_u16(block, pos));
    pos += 2;
    float m = 0.0f;
    if (fmt.affine) {
        m = f16_to_f32(get_u16(block, pos));
        pos += 2;
    }
    const int bias = fmt.affine ? 0 : (1 << (fmt.bits - 1));

    switch (fmt.bits) {
        case 8:
            for (int i = 0; i < kBlockLen; i++)
                out[static_cast<size_t>(i)] = d * static_cast<float>(static_cast<int8_t>(block[pos + static_cast<size_t>(i)]));
            break;
        case 4:
            for (int i = 0; i < kBlockLen / 2; i++) {
                const uint8_t b = block[pos + static_cast<size_t>(i)];
                out[static_cast<size_t>(2 * i)] = d * static_cast<float>((b & 0xf) - bias) + m;
                out[static_cast<size_t>(2 * i + 1)] = d * static_cast<float>((b >> 4) - bias) + m;
            }
            break;
        case 5: {
            const size_t hp = pos + 16;
            const uint32_t high = static_cast<uint32_t>(block[hp]) |
                                  (static_cast<uint32_t>(block[hp + 1]) << 8) |
                                  (static_cast<uint32_t>(block[hp + 2]) << 16) |
                                  (static_cast<uint32_t>(block[hp + 3]) << 24);
            for (int i = 0; i < kBlockLen / 2; i++) {
                const uint8_t b = block[pos + static_cast<size_t>(i)];
                const int u0 = (b & 0xf) | static_cast<int>((high >> (2 * i)) & 1) << 4;
                const int u1 = (b >> 4) | static_cast<int>((high >> (2 * i + 1)) & 1) << 4;
                out[static_cast<size_t>(2 * i)] = d * static_cast<float>(u0 - bias) + m;
                out[static_cast<size_t>(2 * i + 1)] = d * static_cast<float>(u1 - bias) + m;
            }
            break;
        }
    }
}

uint64_t QuantizedTensor::payload_size(FormatId id, int64_t rows, int64_t cols) {
    return static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols / kBlockLen) *
           static_cast<uint64_t>(format_info(id).block_bytes);
}

QuantizedTensor QuantizedTensor::view(FormatId id, int64_t rows, int64_t cols,
                                      std::span<const uint8_t> payload,
                                      std::shared_ptr<const void> owner) {
    if (rows < 1 || cols < 1) throw shape_error("quantized tensor dims must be >= 1");
    if (cols % kBlockLen != 0)
        throw shape_error("quantized cols must be divisible by 32, got " + std::to_string(cols));
    if (payload.size() != payload_size(id, rows, cols))
        throw format_error("quantized payload length " + std::to_string(payload.size()) +
                           " does not match " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " " + format_info(id).name);
    QuantizedTensor q;
    q.format_ = id;
    q.rows_ = rows;
    q.cols_ = cols;
    q.payload_ = payload;
    q.owner_ = std::move(owner);
    return q;
}

QuantizedTensor quantize_tensor(const Tensor& w, FormatId id) {
    const Tensor ww = w.widened();
    if (ww.rank() != 2)
        throw shape_error("quantize_tensor expects rank 2, got " + shape_str(w.shape()));
    const int64_t rows = ww.dim(0), cols = ww.dim(1);
    if (cols % kBlockLen != 0)
        throw shape_error("quantize_tensor cols must be divisible by 32, got " +
                          std::to_string(cols));
    const BlockFormat& fmt = format_info(id);
    auto src = ww.f32();
    auto payload =
        std::make_shared<std::vector<uint8_t>>(QuantizedTensor::payload_size(id, rows, cols));
    std::span<uint8_t> dst(*payload);
    const int64_t bpr = cols / kBlockLen;
    for (int64_t r = 0; r < rows; r++) {
        for (int64_t b = 0; b < bpr; b++) {
            quantize_block(src.subspan(static_cast<size_t>(r * cols + b * kBlockLen), kBlockLen), id,
                           dst.subspan(static_cast<size_t>((r * bpr + b) * fmt.block_bytes),
                                       static_cast<size_t>(fmt.block_bytes)));
        }
    }
    std::span<const uint8_t> bytes(*payload);
    return QuantizedTensor::view(id, rows, cols, bytes, payload);
}

Tensor dequantize_tensor(const QuantizedTensor& q) {
    const BlockFormat& fmt = format_info(q.format());
    std::vector<float> out(static_cast<size_t>(q.rows() * q.cols()));
    const int64_t bpr = q.blocks_per_row();
    for (int64_t r = 0; r < q.rows(); r++) {
        auto row = q.row(r);
        for (int64_t b = 0; b < bpr; b++)
            dequantize_block(row.subspan(static_cast<size_t>(b * fmt.block_bytes),
                                         static_cast<size_t>(fmt.block_bytes)),
                             q.format(),
                             std::span<float>(out).subspan(
                                 static_cast<size_t>(r * q.cols() + b * kBlockLen), kBlockLen));
    }
    return Tensor::from_f32({q.rows(), q.cols()}, std::move(out));
}

namespace {

// Decodes one block's integer quants (plus scale/offset) for the dot kernels.
struct DecodedBlock {
    float d;
    float m;
    std::array<int, kBlockLen> q;
};

inline void decode_quants(std::span<const uint8_t> block, const BlockFormat& fmt,
                          DecodedBlock& out) {
    size_t pos = 0;
    out.d = f16_to_f32(get_u16(block, pos));
    pos += 2;
    out.m = 0.0f;
    if (fmt.affine) {
        out.m = f16_to_f32(get_u16(block, pos));
        pos += 2;
    }
    const int bias = fmt.affine ? 0 : (1 << (fmt.bits - 1));
    switch (fmt.bits) {
        case 8:
            for (int i = 0; i < kBlockLen; i++)
                out.q[static_cast<size_t>(i)] = static_cast<int8_t>(block[pos + static_cast<size_t>(i)]);
            break;
        case 4:
            for (int i = 0; i < kBlockLen / 2; i++) {
                const uint8_t b = block[pos + static_cast<size_t>(i)];
                out.q[static_cast<size_t>(2 * i)] = (b & 0xf) - bias;
                out.q[static_cast<size_t>(2 * i + 1)] = (b >> 4) - bias;
            }
            break;
        case 5: {
            const size_t hp = pos + 16;
            const uint32_t high = static_cast<uint32_t>(block[hp]) |
                                  (static_cast<uint32_t>(block[hp + 1]) << 8) |
                                  (static_cast<uint32_t>(block[hp + 2]) << 16) |
                                  (static_cast<uint32_t>(block[hp + 3]) << 24);
            for (int i = 0; i < kBlockLen / 2; i++) {
                const uint8_t b = block[pos + static_cast<size_t>(i)];
                out.q[static_cast<size_t>(2 * i)] =
                    ((b & 0xf) | static_cast<int>((high >> (2 * i)) & 1) << 4) - bias;
                out.q[static_cast<size_t>(2 * i + 1)] =
                    ((b >> 4) | static_cast<int>((high >> (2 * i + 1)) & 1) << 4) - bias;
            }
            break;
        }
    }
}

}  // namespace

float qdot_row(const QuantizedTensor& q, int64_t row, std::span<const float> x) {
    if (x.size() != static_cast<size_t>(q.cols()))
        throw shape_error("qdot_row length mismatch: row has " + std::to_string(q.cols()) +
                          " cols, input has " + std::to_string(x.size()));
    const BlockFormat& fmt = format_info(q.format());
    auto rb = q.row(row);
    DecodedBlock blk;
    float acc = 0.0f;
    const int64_t bpr = q.blocks_per_row();
    for (int64_t b = 0; b < bpr; b++) {
        decode_quants(rb.subspan(static_cast<size_t>(b * fmt.block_bytes),
                                 static_cast<size_t>(fmt.block_bytes)),
                      fmt, blk);
        const float* xb = x.data() + b * kBlockLen;
        float sum_qx = 0.0f;
        for (int i = 0; i < kBlockLen; i++) sum_qx += static_cast<float>(blk.q[static_cast<size_t>(i)]) * xb[i];
        if (fmt.affine) {
            float sum_x = 0.0f;
            for (int i = 0; i < kBlockLen; i++) sum_x += xb[i];
            acc += blk.d * sum_qx + blk.m * sum_x;
        } else {
            acc += blk.d * sum_qx;
        }
    }
    return acc;
}

void qmatvec(const QuantizedTensor& q, std::span<const float> x, std::span<float> y) {
    for (int64_t r = 0; r < q.rows(); r++) y[static_cast<size_t>(r)] = qdot_row(q, r, x);
}

void qmatvec_t(const QuantizedTensor& q, std::span<const float> x, std::span<float> y) {
    if (x.size() != static_cast<size_t>(q.rows()) || y.size() != static_cast<size_t>(q.cols()))
        throw shape_error("qmatvec_t size mismatch");
    const BlockFormat& fmt = format_info(q.format());
    std::fill(y.begin(), y.end(), 0.0f);
    DecodedBlock blk;
    const int64_t bpr = q.blocks_per_row();
    for (int64_t r = 0; r < q.rows(); r++) {
        const float xr = x[static_cast<size_t>(r)];
        auto rb = q.row(r);
        for (int64_t b = 0; b < bpr; b++) {
            decode_quants(rb.subspan(static_cast<size_t>(b * fmt.block_bytes),
                                     static_cast<size_t>(fmt.block_bytes)),
                          fmt, blk);
            float* yb = y.data() + b * kBlockLen;
            for (int i = 0; i < kBlockLen; i++)
                yb[i] += xr * (blk.d * static_cast<float>(blk.q[static_cast<size_t>(i)]) + blk.m);
        }
    }
}

}  // namespace skt

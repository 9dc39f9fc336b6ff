#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "skt/tensor.hpp"

namespace skt {

// Block-wise weight formats: 32 elements per block, per-block F16 scale,
// plus an F16 offset for the affine (*_1) variants.
enum class FormatId : uint8_t { Q8_0, Q5_0, Q5_1, Q4_0, Q4_1 };

struct BlockFormat {
    FormatId id;
    const char* name;
    int bits;
    bool affine;
    int block_bytes;  // scale bytes (2, or 4 if affine) + ceil(bits*32/8)
};

constexpr int kBlockLen = 32;

constexpr std::array<BlockFormat, 5> kBlockFormats = {{
    {FormatId::Q8_0, "q8_0", 8, false, 34},
    {FormatId::Q5_0, "q5_0", 5, false, 22},
    {FormatId::Q5_1, "q5_1", 5, true, 24},
    {FormatId::Q4_0, "q4_0", 4, false, 18},
    {FormatId::Q4_1, "q4_1", 4, true, 20},
}};

const BlockFormat& format_info(FormatId id);
std::optional<FormatId> format_from_name(std::string_view name);

// Ratio of F32 bytes to encoded bytes: 32 / bits-per-weight.
double compression_ratio(FormatId id);

// Block byte layout (normative, little-endian):
//   scale d as F16, then offset m as F16 for affine formats;
//   4-bit quants packed two per byte, low nibble first;
//   5-bit quants as 16 low-nibble bytes followed by a u32 bitfield of 5th bits
//   (bit i = high bit of element i);
//   8-bit quants as signed bytes.
// Symmetric 4/5-bit quants are stored offset-binary (q + 2^(bits-1)).
void quantize_block(std::span<const float> x, FormatId id, std::span<uint8_t> out);
void dequantize_block(std::span<const uint8_t> block, FormatId id, std::span<float> out);

// Block-encoded weight matrix. Blocks are row-major, contiguous within a row;
// cols must be divisible by 32. Payload may borrow from a mapped model file.
class QuantizedTensor {
public:
    QuantizedTensor() = default;

    static QuantizedTensor view(FormatId id, int64_t rows, int64_t cols,
                                std::span<const uint8_t> payload,
                                std::shared_ptr<const void> owner);

    FormatId format() const { return format_; }
    int64_t rows() const { return rows_; }
    int64_t cols() const { return cols_; }
    int64_t blocks_per_row() const { return cols_ / kBlockLen; }
    int64_t row_bytes() const { return blocks_per_row() * format_info(format_).block_bytes; }
    std::span<const uint8_t> payload() const { return payload_; }
    std::span<const uint8_t> row(int64_t r) const {
        return payload_.subspan(static_cast<size_t>(r * row_bytes()),
                                static_cast<size_t>(row_bytes()));
    }

    static uint64_t payload_size(FormatId id, int64_t rows, int64_t cols);

private:
    FormatId format_ = FormatId::Q8_0;
    int64_t rows_ = 0, cols_ = 0;
    std::span<const uint8_t> payload_;
    std::shared_ptr<const void> owner_;
};

QuantizedTensor quantize_tensor(const Tensor& w, FormatId id);
Tensor dequantize_tensor(const QuantizedTensor& q);

// Quantized dot kernel: accumulates per block in F32 without materializing
// the dequantized row. Equals dot(dequantize(row), x) within 1e-4 relative
// on unit-scale inputs up to 4096 columns.
float qdot_row(const QuantizedTensor& q, int64_t row, std::span<const float> x);

// y[r] = qdot_row(q, r, x)
void qmatvec(const QuantizedTensor& q, std::span<const float> x, std::span<float> y);

// y[c] = sum_r x[r] * dequant(q)[r,c]; row-order accumulation, no full
// dequantization (one block decoded at a time).
void qmatvec_t(const QuantizedTensor& q, std::span<const float> x, std::span<float> y);

}  // namespace skt

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "skt/common.hpp"

namespace skt {

enum class Dtype : uint8_t { F32, F16 };

const char* dtype_name(Dtype d);
size_t dtype_size(Dtype d);

using Shape = std::vector<int64_t>;

std::string shape_str(std::span<const int64_t> shape);
int64_t shape_numel(std::span<const int64_t> shape);

// Dense row-major tensor, rank 1..4. Storage may be owned or a borrowed view
// (e.g. into a memory-mapped model file); `owner` keeps the backing alive.
// Immutable after construction, safe to share across threads.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_f32(Shape shape, std::vector<float> data);
    static Tensor from_f16(Shape shape, std::vector<uint16_t> data);
    static Tensor zeros(Shape shape);
    static Tensor view(Dtype dtype, Shape shape, std::span<const uint8_t> bytes,
                       std::shared_ptr<const void> owner);

    Dtype dtype() const { return dtype_; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const;
    std::span<const uint8_t> bytes() const { return bytes_; }

    std::span<const float> f32() const;
    std::span<const uint16_t> f16() const;

    // F16 -> F32 widening copy; F32 tensors are returned as shared views.
    Tensor widened() const;

private:
    Dtype dtype_ = Dtype::F32;
    Shape shape_;
    std::span<const uint8_t> bytes_;
    std::shared_ptr<const void> owner_;
};

// ---- span kernels ----
// The engine's hot path works on raw float spans; the Tensor ops below wrap
// these. All reductions run sequentially in index order so results are
// bit-reproducible. Kernels may be called concurrently on disjoint outputs.

float dot(std::span<const float> a, std::span<const float> b);

// y[r] = dot(w.row(r), x); w is rows x cols row-major.
void matvec(std::span<const float> w, int64_t rows, int64_t cols,
            std::span<const float> x, std::span<float> y);

// y[c] = sum_r x[r] * w[r,c]; per-output accumulation runs in row order.
void matvec_t(std::span<const float> w, int64_t rows, int64_t cols,
              std::span<const float> x, std::span<float> y);

void softmax_inplace(std::span<float> row, float scale);
void silu_inplace(std::span<float> x);
void rmsnorm_into(std::span<const float> x, std::span<const float> gamma, float eps,
                  std::span<float> out);

// ---- tensor ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_row(const Tensor& x, float scale);
Tensor silu(const Tensor& x);
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, float eps);
Tensor add(const Tensor& a, const Tensor& b);

}  // namespace skt

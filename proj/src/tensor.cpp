#include "skt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <utility>

namespace skt {

const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::F32: return "f32";
        case Dtype::F16: return "f16";
    }
    return "?";
}

size_t dtype_size(Dtype d) {
    return d == Dtype::F32 ? 4 : 2;
}

std::string shape_str(std::span<const int64_t> shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); i++) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

int64_t shape_numel(std::span<const int64_t> shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4)
        throw shape_error("tensor rank must be in [1,4], got " + std::to_string(shape.size()));
    for (int64_t d : shape)
        if (d < 1) throw shape_error("tensor dims must be >= 1, got " + shape_str(shape));
}

template <typename T>
Tensor make_owned(Dtype dtype, Shape shape, std::vector<T> data) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw shape_error("element count " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto holder = std::make_shared<std::vector<T>>(std::move(data));
    std::span<const uint8_t> bytes(reinterpret_cast<const uint8_t*>(holder->data()),
                                   holder->size() * sizeof(T));
    return Tensor::view(dtype, std::move(shape), bytes, holder);
}

}  // namespace

Tensor Tensor::from_f32(Shape shape, std::vector<float> data) {
    return make_owned(Dtype::F32, std::move(shape), std::move(data));
}

Tensor Tensor::from_f16(Shape shape, std::vector<uint16_t> data) {
    return make_owned(Dtype::F16, std::move(shape), std::move(data));
}

Tensor Tensor::zeros(Shape shape) {
    check_shape(shape);
    return from_f32(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.0f));
}

Tensor Tensor::view(Dtype dtype, Shape shape, std::span<const uint8_t> bytes,
                    std::shared_ptr<const void> owner) {
    check_shape(shape);
    if (bytes.size() != static_cast<size_t>(shape_numel(shape)) * dtype_size(dtype))
        throw shape_error("byte count " + std::to_string(bytes.size()) +
                          " does not match shape " + shape_str(shape));
    Tensor t;
    t.dtype_ = dtype;
    t.shape_ = std::move(shape);
    t.bytes_ = bytes;
    t.owner_ = std::move(owner);
    return t;
}

int64_t Tensor::numel() const {
    return shape_numel(shape_);
}

std::span<const float> Tensor::f32() const {
    if (dtype_ != Dtype::F32) throw format_error("tensor is not f32");
    return {reinterpret_cast<const float*>(bytes_.data()), bytes_.size() / 4};
}

std::span<const uint16_t> Tensor::f16() const {
    if (dtype_ != Dtype::F16) throw format_error("tensor is not f16");
    return {reinterpret_cast<const uint16_t*>(bytes_.data()), bytes_.size() / 2};
}

Tensor Tensor::widened() const {
    if (dtype_ == Dtype::F32) return *this;
    auto src = f16();
    std::vector<float> out(src.size());
    for (size_t i = 0; i < src.size(); i++) out[i] = f16_to_f32(src[i]);
    return from_f32(shape_, std::move(out));
}

// ---- span kernels ----

float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (size_t i = 0; i < a.size(); i++) acc += a[i] * b[i];
    return acc;
}

void matvec(std::span<const float> w, int64_t rows, int64_t cols,
            std::span<const float> x, std::span<float> y) {
    for (int64_t r = 0; r < rows; r++)
        y[static_cast<size_t>(r)] =
            dot(w.subspan(static_cast<size_t>(r * cols), static_cast<size_t>(cols)), x);
}

void matvec_t(std::span<const float> w, int64_t rows, int64_t cols,
              std::span<const float> x, std::span<float> y) {
    std::fill(y.begin(), y.end(), 0.0f);
    for (int64_t r = 0; r < rows; r++) {
        const float xr = x[static_cast<size_t>(r)];
        const float* row = w.data() + r * cols;
        for (int64_t c = 0; c < cols; c++) y[static_cast<size_t>(c)] += xr * row[c];
    }
}

void softmax_inplace(std::span<float> row, float scale) {
    float mx = -INFINITY;
    for (float v : row) mx = std::max(mx, scale * v);
    float sum = 0.0f;
    for (float& v : row) {
        v = std::exp(scale * v - mx);
        sum += v;
    }
    for (float& v : row) v /= sum;
}

void silu_inplace(std::span<float> x) {
    for (float& v : x) v = v / (1.0f + std::exp(-v));
}

void rmsnorm_into(std::span<const float> x, std::span<const float> gamma, float eps,
                  std::span<float> out) {
    float ms = 0.0f;
    for (float v : x) ms += v * v;
    ms /= static_cast<float>(x.size());
    const float inv = 1.0f / std::sqrt(ms + eps);
    for (size_t i = 0; i < x.size(); i++) out[i] = x[i] * inv * gamma[i];
}

// ---- tensor ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Tensor aw = a.widened(), bw = b.widened();
    if (aw.rank() != 2 || bw.rank() != 2 || aw.dim(1) != bw.dim(0))
        throw shape_error("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    const int64_t m = aw.dim(0), k = aw.dim(1), n = bw.dim(1);
    auto av = aw.f32();
    auto bv = bw.f32();
    std::vector<float> c(static_cast<size_t>(m * n), 0.0f);
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            float acc = 0.0f;  // sequential over k, fixed order
            for (int64_t p = 0; p < k; p++)
                acc += av[static_cast<size_t>(i * k + p)] * bv[static_cast<size_t>(p * n + j)];
            c[static_cast<size_t>(i * n + j)] = acc;
        }
    }
    return Tensor::from_f32({m, n}, std::move(c));
}

Tensor softmax_row(const Tensor& x, float scale) {
    const Tensor xw = x.widened();
    auto v = xw.f32();
    std::vector<float> out(v.begin(), v.end());
    const int64_t n = xw.dim(xw.rank() - 1);
    for (int64_t off = 0; off < xw.numel(); off += n)
        softmax_inplace(std::span<float>(out).subspan(static_cast<size_t>(off),
                                                      static_cast<size_t>(n)),
                        scale);
    return Tensor::from_f32(xw.shape(), std::move(out));
}

Tensor silu(const Tensor& x) {
    const Tensor xw = x.widened();
    auto v = xw.f32();
    std::vector<float> out(v.begin(), v.end());
    silu_inplace(out);
    return Tensor::from_f32(xw.shape(), std::move(out));
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, float eps) {
    const Tensor xw = x.widened(), gw = gamma.widened();
    const int64_t d = xw.dim(xw.rank() - 1);
    if (gw.rank() != 1 || gw.dim(0) != d)
        throw shape_error("rmsnorm gamma shape " + shape_str(gamma.shape()) +
                          " does not match last dim of " + shape_str(x.shape()));
    if (eps <= 0.0f) throw format_error("rmsnorm eps must be > 0");
    auto v = xw.f32();
    std::vector<float> out(v.size());
    for (int64_t off = 0; off < xw.numel(); off += d)
        rmsnorm_into(v.subspan(static_cast<size_t>(off), static_cast<size_t>(d)), gw.f32(), eps,
                     std::span<float>(out).subspan(static_cast<size_t>(off),
                                                   static_cast<size_t>(d)));
    return Tensor::from_f32(xw.shape(), std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
    const Tensor aw = a.widened(), bw = b.widened();
    if (aw.shape() != bw.shape())
        throw shape_error("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    auto av = aw.f32();
    auto bv = bw.f32();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < av.size(); i++) out[i] = av[i] + bv[i];
    return Tensor::from_f32(aw.shape(), std::move(out));
}

}  // namespace skt

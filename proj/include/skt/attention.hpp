#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skt/common.hpp"

namespace skt {

// Precomputed rotation tables: theta_i = base^(-2i/head_dim),
// cos/sin laid out [max_pos x head_dim/2].
struct RopeTable {
    int head_dim = 0;
    float base = 10000.0f;
    int64_t max_pos = 0;
    std::vector<float> cos_tab;
    std::vector<float> sin_tab;
};

RopeTable build_rope_table(int head_dim, float base, int64_t max_pos);

// Rotates consecutive pairs (x[2i], x[2i+1]) of every head by pos*theta_i.
void apply_rope(std::span<float> x, int n_heads, int64_t pos, const RopeTable& t);

// One layer's sliding-window ring buffer of key/value head states.
// Keys are stored already RoPE-rotated at their absolute position, so
// eviction needs no re-rotation. Single writer, strictly sequential appends.
class KvCache {
public:
    KvCache(int64_t window, int n_kv_heads, int head_dim);

    void append(std::span<const float> k, std::span<const float> v, int64_t pos);

    int64_t window() const { return window_; }
    int n_kv_heads() const { return n_kv_; }
    int head_dim() const { return head_dim_; }
    int64_t next_pos() const { return next_pos_; }
    int64_t filled() const { return next_pos_ < window_ ? next_pos_ : window_; }
    int64_t oldest_pos() const { return next_pos_ - filled(); }

    // Entry for an absolute position still inside the window; [n_kv x head_dim].
    std::span<const float> k_at(int64_t abs_pos) const;
    std::span<const float> v_at(int64_t abs_pos) const;

private:
    int64_t window_;
    int n_kv_;
    int head_dim_;
    int64_t next_pos_ = 0;
    std::vector<float> k_, v_;
};

// Local band plus global blocks over token blocks of size `block`.
// Block pair (i,j) is active iff |i-j| <= local_blocks or j < global_blocks
// or i < global_blocks; token-level causality applies on top.
struct SparsePattern {
    int64_t block = 64;
    int64_t local_blocks = 4;
    int64_t global_blocks = 1;

    bool active(int64_t qb, int64_t kb) const {
        const int64_t diff = qb > kb ? qb - kb : kb - qb;
        return diff <= local_blocks || kb < global_blocks || qb < global_blocks;
    }
};

// mask[t*seq_len + s] = causal(t >= s) && pattern-active(t/B, s/B)
std::vector<uint8_t> build_sparse_mask(int64_t seq_len, const SparsePattern& pattern);

// Query head h attends over the cache's filled window using KV head
// h / (n_heads / n_kv); scores scaled by 1/sqrt(head_dim). Causality holds by
// construction (the cache contains only past and current positions).
// q and out are [n_heads x head_dim].
void gqa_attend(std::span<const float> q, int n_heads, const KvCache& cache,
                std::span<float> out);

// Prefill attention for block-sparse models: same as gqa_attend but keys are
// filtered through the pattern for query position `query_pos`; whole inactive
// key blocks are skipped.
void gqa_attend_pattern(std::span<const float> q, int n_heads, const KvCache& cache,
                        const SparsePattern& pattern, int64_t query_pos,
                        std::span<float> out);

// Masked scaled-dot-product attention over a full sequence. Q is
// [seq x n_heads x head_dim], K/V are [seq x n_kv_heads x head_dim], mask is
// the boolean [seq x seq] matrix from build_sparse_mask (or any causal mask
// whose rows each keep at least the diagonal active). Fully inactive
// block-size tiles of the mask are skipped; the numeric result is the
// masked-dense formula with inactive logits at -inf.
void sparse_attend(std::span<const float> q, std::span<const float> k,
                   std::span<const float> v, int64_t seq_len, int n_heads, int n_kv_heads,
                   int head_dim, std::span<const uint8_t> mask, std::span<float> out);

}  // namespace skt

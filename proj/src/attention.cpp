#include "skt/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "skt/tensor.hpp"

namespace skt {

RopeTable build_rope_table(int head_dim, float base, int64_t max_pos) {
    if (head_dim < 2 || head_dim % 2 != 0)
        throw format_error("rope head_dim must be even and >= 2, got " + std::to_string(head_dim));
    if (max_pos < 1) throw format_error("rope max_pos must be >= 1");
    RopeTable t;
    t.head_dim = head_dim;
    t.base = base;
    t.max_pos = max_pos;
    const int half = head_dim / 2;
    t.cos_tab.resize(static_cast<size_t>(max_pos * half));
    t.sin_tab.resize(static_cast<size_t>(max_pos * half));
    for (int i = 0; i < half; i++) {
        const double theta = std::pow(static_cast<double>(base), -2.0 * i / head_dim);
        for (int64_t p = 0; p < max_pos; p++) {
            const double angle = static_cast<double>(p) * theta;
            t.cos_tab[static_cast<size_t>(p * half + i)] = static_cast<float>(std::cos(angle));
            t.sin_tab[static_cast<size_t>(p * half + i)] = static_cast<float>(std::sin(angle));
        }
    }
    return t;
}

void apply_rope(std::span<float> x, int n_heads, int64_t pos, const RopeTable& t) {
    if (pos < 0 || pos >= t.max_pos)
        throw std::runtime_error("rope position " + std::to_string(pos) + " out of range [0, " +
                                 std::to_string(t.max_pos) + ")");
    const int half = t.head_dim / 2;
    const float* cs = t.cos_tab.data() + pos * half;
    const float* sn = t.sin_tab.data() + pos * half;
    for (int h = 0; h < n_heads; h++) {
        float* head = x.data() + static_cast<int64_t>(h) * t.head_dim;
        for (int i = 0; i < half; i++) {
            const float x0 = head[2 * i], x1 = head[2 * i + 1];
            head[2 * i] = x0 * cs[i] - x1 * sn[i];
            head[2 * i + 1] = x0 * sn[i] + x1 * cs[i];
        }
    }
}

KvCache::KvCache(int64_t window, int n_kv_heads, int head_dim)
    : window_(window), n_kv_(n_kv_heads), head_dim_(head_dim) {
    if (window < 1) throw format_error("cache window must be >= 1");
    const size_t slot = static_cast<size_t>(n_kv_heads) * static_cast<size_t>(head_dim);
    k_.resize(static_cast<size_t>(window) * slot, 0.0f);
    v_.resize(static_cast<size_t>(window) * slot, 0.0f);
}

void KvCache::append(std::span<const float> k, std::span<const float> v, int64_t pos) {
    if (pos != next_pos_)
        throw std::runtime_error("cache append out of sequence: expected pos " +
                                 std::to_string(next_pos_) + ", got " + std::to_string(pos));
    const size_t slot = static_cast<size_t>(n_kv_) * static_cast<size_t>(head_dim_);
    if (k.size() != slot || v.size() != slot)
        throw shape_error("cache entry must be n_kv_heads x head_dim");
    const size_t at = static_cast<size_t>(pos % window_) * slot;
    std::copy(k.begin(), k.end(), k_.begin() + static_cast<ptrdiff_t>(at));
    std::copy(v.begin(), v.end(), v_.begin() + static_cast<ptrdiff_t>(at));
    next_pos_++;
}

std::span<const float> KvCache::k_at(int64_t abs_pos) const {
    const size_t slot = static_cast<size_t>(n_kv_) * static_cast<size_t>(head_dim_);
    return {k_.data() + static_cast<size_t>(abs_pos % window_) * slot, slot};
}

std::span<const float> KvCache::v_at(int64_t abs_pos) const {
    const size_t slot = static_cast<size_t>(n_kv_) * static_cast<size_t>(head_dim_);
    return {v_.data() + static_cast<size_t>(abs_pos % window_) * slot, slot};
}

std::vector<uint8_t> build_sparse_mask(int64_t seq_len, const SparsePattern& pattern) {
    if (seq_len < 1) throw format_error("mask seq_len must be >= 1");
    std::vector<uint8_t> mask(static_cast<size_t>(seq_len * seq_len), 0);
    for (int64_t t = 0; t < seq_len; t++)
        for (int64_t s = 0; s <= t; s++)
            mask[static_cast<size_t>(t * seq_len + s)] =
                pattern.active(t / pattern.block, s / pattern.block) ? 1 : 0;
    return mask;
}

namespace {

// Shared weighted-sum core: given per-position logits over [first, last]
// filtered by `keep`, softmax and accumulate V rows into out.
// Iteration is in ascending absolute position, matching an unbounded cache.
template <typename Keep>
void attend_window(std::span<const float> q, int n_heads, const KvCache& cache,
                   int64_t first, int64_t last, Keep keep, std::span<float> out) {
    const int hd = cache.head_dim();
    const int n_kv = cache.n_kv_heads();
    if (n_heads % n_kv != 0)
        throw format_error("n_heads " + std::to_string(n_heads) +
                           " not divisible by n_kv_heads " + std::to_string(n_kv));
    if (cache.filled() < 1) throw std::runtime_error("attention over empty cache");
    const int group = n_heads / n_kv;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    std::vector<float> logits;
    std::vector<int64_t> pos;
    logits.reserve(static_cast<size_t>(last - first + 1));
    pos.reserve(static_cast<size_t>(last - first + 1));

    for (int h = 0; h < n_heads; h++) {
        const int g = h / group;
        std::span<const float> qh = q.subspan(static_cast<size_t>(h) * static_cast<size_t>(hd),
                                              static_cast<size_t>(hd));
        logits.clear();
        pos.clear();
        for (int64_t j = first; j <= last; j++) {
            if (!keep(j)) continue;
            auto kj = cache.k_at(j).subspan(static_cast<size_t>(g) * static_cast<size_t>(hd),
                                            static_cast<size_t>(hd));
            logits.push_back(dot(qh, kj) * scale);
            pos.push_back(j);
        }
        softmax_inplace(logits, 1.0f);
        float* oh = out.data() + static_cast<int64_t>(h) * hd;
        std::fill(oh, oh + hd, 0.0f);
        for (size_t i = 0; i < pos.size(); i++) {
            auto vj = cache.v_at(pos[i]).subspan(static_cast<size_t>(g) * static_cast<size_t>(hd),
                                                 static_cast<size_t>(hd));
            const float w = logits[i];
            for (int c = 0; c < hd; c++) oh[c] += w * vj[static_cast<size_t>(c)];
        }
    }
}

}  // namespace

void gqa_attend(std::span<const float> q, int n_heads, const KvCache& cache,
                std::span<float> out) {
    attend_window(q, n_heads, cache, cache.oldest_pos(), cache.next_pos() - 1,
                  [](int64_t) { return true; }, out);
}

void gqa_attend_pattern(std::span<const float> q, int n_heads, const KvCache& cache,
                        const SparsePattern& pattern, int64_t query_pos,
                        std::span<float> out) {
    const int64_t qb = query_pos / pattern.block;
    const int64_t first = cache.oldest_pos();
    const int64_t last = cache.next_pos() - 1;
    // walk active key blocks only
    std::vector<uint8_t> kb_active(static_cast<size_t>(last / pattern.block + 1));
    for (int64_t kb = 0; kb <= last / pattern.block; kb++)
        kb_active[static_cast<size_t>(kb)] = pattern.active(qb, kb) ? 1 : 0;
    attend_window(q, n_heads, cache, first, last,
                  [&](int64_t j) { return kb_active[static_cast<size_t>(j / pattern.block)] != 0; },
                  out);
}

void sparse_attend(std::span<const float> q, std::span<const float> k,
                   std::span<const float> v, int64_t seq_len, int n_heads, int n_kv_heads,
                   int head_dim, std::span<const uint8_t> mask, std::span<float> out) {
    if (n_heads % n_kv_heads != 0)
        throw format_error("n_heads not divisible by n_kv_heads");
    if (mask.size() != static_cast<size_t>(seq_len * seq_len))
        throw shape_error("mask must be seq_len x seq_len");
    const int group = n_heads / n_kv_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
    const size_t hstride = static_cast<size_t>(head_dim);
    const size_t qrow = static_cast<size_t>(n_heads) * hstride;
    const size_t krow = static_cast<size_t>(n_kv_heads) * hstride;

    // per-row tile activity, so fully inactive tiles are skipped
    const int64_t tile = 64;
    const int64_t ntiles = (seq_len + tile - 1) / tile;
    std::vector<uint8_t> tile_any(static_cast<size_t>(seq_len * ntiles), 0);
    for (int64_t t = 0; t < seq_len; t++) {
        const uint8_t* row = mask.data() + t * seq_len;
        bool any_row = false;
        for (int64_t bt = 0; bt < ntiles; bt++) {
            const int64_t s0 = bt * tile, s1 = std::min(seq_len, s0 + tile);
            uint8_t any = 0;
            for (int64_t s = s0; s < s1; s++) any |= row[s];
            tile_any[static_cast<size_t>(t * ntiles + bt)] = any;
            any_row = any_row || any;
        }
        if (!any_row)
            throw std::runtime_error("mask row " + std::to_string(t) + " has no active entries");
    }

    std::vector<float> logits;
    std::vector<int64_t> pos;
    for (int64_t t = 0; t < seq_len; t++) {
        const uint8_t* mrow = mask.data() + t * seq_len;
        for (int h = 0; h < n_heads; h++) {
            const int g = h / group;
            std::span<const float> qh =
                q.subspan(static_cast<size_t>(t) * qrow + static_cast<size_t>(h) * hstride, hstride);
            logits.clear();
            pos.clear();
            for (int64_t bt = 0; bt < ntiles; bt++) {
                if (!tile_any[static_cast<size_t>(t * ntiles + bt)]) continue;
                const int64_t s0 = bt * tile, s1 = std::min(seq_len, s0 + tile);
                for (int64_t s = s0; s < s1; s++) {
                    if (!mrow[s]) continue;
                    std::span<const float> ks = k.subspan(
                        static_cast<size_t>(s) * krow + static_cast<size_t>(g) * hstride, hstride);
                    logits.push_back(dot(qh, ks) * scale);
                    pos.push_back(s);
                }
            }
            softmax_inplace(logits, 1.0f);
            float* oh = out.data() + static_cast<size_t>(t) * qrow + static_cast<size_t>(h) * hstride;
            std::fill(oh, oh + head_dim, 0.0f);
            for (size_t i = 0; i < pos.size(); i++) {
                std::span<const float> vs = v.subspan(
                    static_cast<size_t>(pos[i]) * krow + static_cast<size_t>(g) * hstride, hstride);
                const float w = logits[i];
                for (int c = 0; c < head_dim; c++) oh[c] += w * vs[static_cast<size_t>(c)];
            }
        }
    }
}

}  // namespace skt

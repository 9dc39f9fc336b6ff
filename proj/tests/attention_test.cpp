#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "skt/attention.hpp"

using namespace skt;

namespace {

// runs the engine's incremental path: append each position, attend at the last
std::vector<float> attend_last(const std::vector<float>& q, const std::vector<float>& k,
                               const std::vector<float>& v, int64_t seq, int n_heads,
                               int n_kv, int hd, int64_t window) {
    KvCache cache(window, n_kv, hd);
    const size_t krow = static_cast<size_t>(n_kv) * static_cast<size_t>(hd);
    for (int64_t t = 0; t < seq; t++)
        cache.append(std::span<const float>(k).subspan(static_cast<size_t>(t) * krow, krow),
                     std::span<const float>(v).subspan(static_cast<size_t>(t) * krow, krow),
                     t);
    const size_t qrow = static_cast<size_t>(n_heads) * static_cast<size_t>(hd);
    std::vector<float> out(qrow);
    gqa_attend(std::span<const float>(q).subspan(static_cast<size_t>(seq - 1) * qrow, qrow),
               n_heads, cache, out);
    return out;
}

}  // namespace

TEST_CASE("rope table frequencies and first rotation") {
    RopeTable t = build_rope_table(2, 10000.0f, 4);
    // head_dim 2 has a single frequency theta_0 = 1
    CHECK(t.cos_tab[0] == 1.0f);  // pos 0
    CHECK(t.sin_tab[0] == 0.0f);
    CHECK(t.cos_tab[1] == doctest::Approx(0.5403023058681398).epsilon(1e-7));
    CHECK(t.sin_tab[1] == doctest::Approx(0.8414709848078965).epsilon(1e-7));

    RopeTable t64 = build_rope_table(64, 10000.0f, 2);
    for (int i = 0; i < 32; i++) {
        const double theta = std::pow(10000.0, -2.0 * i / 64.0);
        CHECK(t64.cos_tab[static_cast<size_t>(32 + i)] ==
              doctest::Approx(std::cos(theta)).epsilon(1e-7));
        CHECK(t64.sin_tab[static_cast<size_t>(32 + i)] ==
              doctest::Approx(std::sin(theta)).epsilon(1e-7));
    }

    CHECK_THROWS_AS(build_rope_table(3, 10000.0f, 4), format_error);
    CHECK_THROWS_AS(build_rope_table(2, 10000.0f, 0), format_error);
}

TEST_CASE("rope at position zero is the identity") {
    oracle::TestRng rng(21);
    RopeTable t = build_rope_table(8, 10000.0f, 16);
    auto x = rng.vec(3 * 8);
    auto y = x;
    apply_rope(y, 3, 0, t);
    for (size_t i = 0; i < x.size(); i++) CHECK(y[i] == x[i]);
}

TEST_CASE("rope preserves pair norms and composes additively") {
    oracle::TestRng rng(22);
    RopeTable t = build_rope_table(16, 10000.0f, 64);
    auto x = rng.vec(2 * 16);

    auto r5 = x;
    apply_rope(r5, 2, 5, t);
    for (size_t p = 0; p < x.size(); p += 2) {
        const double n0 = std::hypot(x[p], x[p + 1]);
        const double n1 = std::hypot(r5[p], r5[p + 1]);
        CHECK(n1 == doctest::Approx(n0).epsilon(1e-5));
    }

    // rotating by 5 then 3 equals rotating by 8: the shift property that makes
    // cached keys composable. Double-precision re-rotation keeps this tight.
    auto r8 = x;
    apply_rope(r8, 2, 8, t);
    std::vector<float> r53(x.size());
    for (int h = 0; h < 2; h++) {
        for (int i = 0; i < 8; i++) {
            const size_t p = static_cast<size_t>(h * 16 + 2 * i);
            const double theta = std::pow(10000.0, -2.0 * i / 16.0);
            const double c = std::cos(3 * theta), s = std::sin(3 * theta);
            r53[p] = static_cast<float>(c * r5[p] - s * r5[p + 1]);
            r53[p + 1] = static_cast<float>(s * r5[p] + c * r5[p + 1]);
        }
    }
    for (size_t i = 0; i < x.size(); i++)
        CHECK(r53[i] == doctest::Approx(r8[i]).epsilon(2e-5));

    CHECK_THROWS_AS(apply_rope(x, 2, 64, t), std::runtime_error);
    CHECK_THROWS_AS(apply_rope(x, 2, -1, t), std::runtime_error);
}

TEST_CASE("rope matches the direct per-pair formula") {
    oracle::TestRng rng(23);
    const int hd = 32, n_heads = 4;
    const int64_t pos = 17;
    RopeTable t = build_rope_table(hd, 10000.0f, 32);
    auto x = rng.vec(static_cast<size_t>(n_heads * hd));
    auto y = x;
    apply_rope(y, n_heads, pos, t);
    for (int h = 0; h < n_heads; h++) {
        for (int i = 0; i < hd / 2; i++) {
            const size_t p = static_cast<size_t>(h * hd + 2 * i);
            const double theta = std::pow(10000.0, -2.0 * i / hd);
            const double a = static_cast<double>(pos) * theta;
            const double e0 = std::cos(a) * x[p] - std::sin(a) * x[p + 1];
            const double e1 = std::sin(a) * x[p] + std::cos(a) * x[p + 1];
            CHECK(y[p] == doctest::Approx(e0).epsilon(1e-6));
            CHECK(y[p + 1] == doctest::Approx(e1).epsilon(1e-6));
        }
    }
}

TEST_CASE("kv cache ring buffer evicts the oldest positions") {
    KvCache cache(4, 1, 2);
    CHECK(cache.filled() == 0);
    for (int64_t p = 0; p < 6; p++) {
        std::vector<float> k = {static_cast<float>(p), 0.0f};
        std::vector<float> v = {0.0f, static_cast<float>(p)};
        cache.append(k, v, p);
    }
    CHECK(cache.next_pos() == 6);
    CHECK(cache.filled() == 4);
    CHECK(cache.oldest_pos() == 2);
    for (int64_t p = 2; p < 6; p++) {
        CHECK(cache.k_at(p)[0] == static_cast<float>(p));
        CHECK(cache.v_at(p)[1] == static_cast<float>(p));
    }
}

TEST_CASE("kv cache rejects out-of-order appends and bad entry sizes") {
    KvCache cache(4, 2, 4);
    std::vector<float> kv(8, 0.0f);
    cache.append(kv, kv, 0);
    CHECK_THROWS_AS(cache.append(kv, kv, 0), std::runtime_error);
    CHECK_THROWS_AS(cache.append(kv, kv, 2), std::runtime_error);
    std::vector<float> small(7, 0.0f);
    CHECK_THROWS_AS(cache.append(small, kv, 1), shape_error);
    CHECK_THROWS_AS(KvCache(0, 2, 4), format_error);
}

TEST_CASE("single-token attention returns v when one entry is cached") {
    KvCache cache(8, 1, 4);
    std::vector<float> k = {1, 2, 3, 4}, v = {5, 6, 7, 8};
    cache.append(k, v, 0);
    std::vector<float> q = {0.3f, -0.2f, 0.9f, 0.0f}, out(4);
    gqa_attend(q, 1, cache, out);
    for (int i = 0; i < 4; i++) CHECK(out[static_cast<size_t>(i)] == v[static_cast<size_t>(i)]);

    KvCache empty(8, 1, 4);
    CHECK_THROWS_AS(gqa_attend(q, 1, empty, out), std::runtime_error);
}

TEST_CASE("gqa_attend matches the dense oracle for MHA, GQA and MQA") {
    oracle::TestRng rng(31);
    const int hd = 16;
    const int64_t seq = 24;
    struct Cfg {
        int n_heads, n_kv;
    } cfgs[] = {{4, 4}, {8, 2}, {6, 1}};
    for (const auto& c : cfgs) {
        auto q = rng.vec(static_cast<size_t>(seq * c.n_heads * hd));
        auto k = rng.vec(static_cast<size_t>(seq * c.n_kv * hd));
        auto v = rng.vec(static_cast<size_t>(seq * c.n_kv * hd));
        auto got = attend_last(q, k, v, seq, c.n_heads, c.n_kv, hd, 64);
        auto ref = oracle::ref_attention(q, k, v, seq, c.n_heads, c.n_kv, hd);
        const size_t off = static_cast<size_t>((seq - 1) * c.n_heads * hd);
        for (size_t i = 0; i < got.size(); i++)
            CHECK(std::fabs(got[i] - ref[off + i]) <= 1e-5);
    }
}

TEST_CASE("sliding window truncates attention to the last W positions") {
    oracle::TestRng rng(32);
    const int n_heads = 4, n_kv = 2, hd = 8;
    const int64_t seq = 40, window = 16;
    auto q = rng.vec(static_cast<size_t>(seq * n_heads * hd));
    auto k = rng.vec(static_cast<size_t>(seq * n_kv * hd));
    auto v = rng.vec(static_cast<size_t>(seq * n_kv * hd));
    auto got = attend_last(q, k, v, seq, n_heads, n_kv, hd, window);
    auto ref = oracle::ref_attention(q, k, v, seq, n_heads, n_kv, hd, nullptr, window);
    const size_t off = static_cast<size_t>((seq - 1) * n_heads * hd);
    for (size_t i = 0; i < got.size(); i++)
        CHECK(std::fabs(got[i] - ref[off + i]) <= 1e-5);

    // a window at least as long as the sequence is exactly the unbounded result
    auto wide = attend_last(q, k, v, seq, n_heads, n_kv, hd, seq);
    auto huge = attend_last(q, k, v, seq, n_heads, n_kv, hd, 4096);
    for (size_t i = 0; i < wide.size(); i++) CHECK(wide[i] == huge[i]);
}

TEST_CASE("sparse mask matches the band-plus-global rule") {
    SparsePattern p{2, 0, 1};
    auto mask = build_sparse_mask(8, p);
    REQUIRE(mask.size() == 64);
    // query block 2 (rows 4-5): keeps global block 0 and its own block
    const uint8_t row5[] = {1, 1, 0, 0, 1, 1, 0, 0};
    for (int s = 0; s < 8; s++) CHECK(mask[5 * 8 + s] == row5[s]);
    // causality on top of the pattern
    for (int t = 0; t < 8; t++)
        for (int s = t + 1; s < 8; s++) CHECK(mask[t * 8 + s] == 0);
    // diagonal always active (own block is within the band)
    for (int t = 0; t < 8; t++) CHECK(mask[t * 8 + t] == 1);

    // a band of 1 block with one global block covers everything at seq 6, B=2
    auto full = build_sparse_mask(6, SparsePattern{2, 1, 1});
    for (int t = 0; t < 6; t++)
        for (int s = 0; s <= t; s++) CHECK(full[t * 6 + s] == 1);

    CHECK_THROWS_AS(build_sparse_mask(0, p), format_error);
}

TEST_CASE("pattern activity is symmetric in the global rule") {
    SparsePattern p{64, 4, 1};
    CHECK(p.active(0, 0));
    CHECK(p.active(10, 0));   // key in global block
    CHECK(p.active(0, 10));   // query in global block sees everything
    CHECK(p.active(10, 6));   // |10-6| <= 4
    CHECK(!p.active(10, 5));  // outside band, not global
}

TEST_CASE("sparse_attend equals masked-dense attention from the oracle") {
    oracle::TestRng rng(33);
    const int n_heads = 4, n_kv = 2, hd = 8;
    const int64_t seq = 32;
    SparsePattern p{4, 1, 1};
    auto mask = build_sparse_mask(seq, p);
    auto q = rng.vec(static_cast<size_t>(seq * n_heads * hd));
    auto k = rng.vec(static_cast<size_t>(seq * n_kv * hd));
    auto v = rng.vec(static_cast<size_t>(seq * n_kv * hd));
    std::vector<float> out(static_cast<size_t>(seq * n_heads * hd));
    sparse_attend(q, k, v, seq, n_heads, n_kv, hd, mask, out);
    auto ref = oracle::ref_attention(q, k, v, seq, n_heads, n_kv, hd, mask.data());
    for (size_t i = 0; i < out.size(); i++) CHECK(std::fabs(out[i] - ref[i]) <= 1e-5);

    // with an everything-active causal mask it reduces to dense attention
    std::vector<uint8_t> causal(static_cast<size_t>(seq * seq), 0);
    for (int64_t t = 0; t < seq; t++)
        for (int64_t s = 0; s <= t; s++) causal[static_cast<size_t>(t * seq + s)] = 1;
    sparse_attend(q, k, v, seq, n_heads, n_kv, hd, causal, out);
    auto dense = oracle::ref_attention(q, k, v, seq, n_heads, n_kv, hd);
    for (size_t i = 0; i < out.size(); i++) CHECK(std::fabs(out[i] - dense[i]) <= 1e-5);

    std::vector<uint8_t> empty_row = causal;
    for (int64_t s = 0; s < seq; s++) empty_row[static_cast<size_t>(3 * seq + s)] = 0;
    CHECK_THROWS_AS(sparse_attend(q, k, v, seq, n_heads, n_kv, hd, empty_row, out),
                    std::runtime_error);
    CHECK_THROWS_AS(
        sparse_attend(q, k, v, seq, n_heads, n_kv, hd, std::span<const uint8_t>(causal)
                          .subspan(0, static_cast<size_t>(seq * seq - 1)), out),
        shape_error);
}

TEST_CASE("gqa_attend_pattern agrees with the masked oracle at each position") {
    oracle::TestRng rng(34);
    const int n_heads = 4, n_kv = 4, hd = 8;
    const int64_t seq = 24;
    SparsePattern p{4, 0, 1};
    auto mask = build_sparse_mask(seq, p);
    auto q = rng.vec(static_cast<size_t>(seq * n_heads * hd));
    auto k = rng.vec(static_cast<size_t>(seq * n_kv * hd));
    auto v = rng.vec(static_cast<size_t>(seq * n_kv * hd));
    auto ref = oracle::ref_attention(q, k, v, seq, n_heads, n_kv, hd, mask.data());

    KvCache cache(seq, n_kv, hd);
    const size_t row = static_cast<size_t>(n_kv * hd);
    std::vector<float> out(static_cast<size_t>(n_heads * hd));
    for (int64_t t = 0; t < seq; t++) {
        cache.append(std::span<const float>(k).subspan(static_cast<size_t>(t) * row, row),
                     std::span<const float>(v).subspan(static_cast<size_t>(t) * row, row), t);
        gqa_attend_pattern(
            std::span<const float>(q).subspan(static_cast<size_t>(t) * out.size(), out.size()),
            n_heads, cache, p, t, out);
        for (size_t i = 0; i < out.size(); i++)
            CHECK(std::fabs(out[i] - ref[static_cast<size_t>(t) * out.size() + i]) <= 1e-5);
    }
}

TEST_CASE("attention weights of identical keys are uniform") {
    // all keys equal: softmax is uniform, so the output is the mean of V
    KvCache cache(8, 1, 2);
    std::vector<float> k = {1.0f, 1.0f};
    for (int64_t t = 0; t < 4; t++) {
        std::vector<float> v = {static_cast<float>(t), 1.0f};
        cache.append(k, v, t);
    }
    std::vector<float> q = {2.0f, -1.0f}, out(2);
    gqa_attend(q, 1, cache, out);
    CHECK(out[0] == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-6));
}

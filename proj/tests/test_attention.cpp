#include <stdexcept>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ksa/attention.hpp"
#include "ksa/equiv.hpp"
#include "ksa/rng.hpp"

using namespace ksa;

TEST_SUITE_BEGIN("attention");

namespace {

template <typename T>
AttentionInputs<T> random_inputs(std::size_t L, std::size_t h, std::size_t h_kv, std::size_t d,
                                 std::uint64_t seed) {
    Rng rng(seed);
    AttentionInputs<T> in;
    in.q = Tensor<T>({L, h, d});
    in.k = Tensor<T>({L, h_kv, d});
    in.v = Tensor<T>({L, h_kv, d});
    rng.fill_normal(in.q.data, 0.0, 1.0);
    rng.fill_normal(in.k.data, 0.0, 1.0);
    rng.fill_normal(in.v.data, 0.0, 1.0);
    in.scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    in.group_map = make_group_map(h, h_kv);
    return in;
}

VisibilityMask identity_mask(std::size_t n) {
    VisibilityMask m(n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
    return m;
}

}  // namespace

TEST_CASE("identity mask returns V per grouped head") {
    auto in = random_inputs<double>(6, 4, 2, 8, 1);
    auto out = dense_masked_attention(in, identity_mask(6));
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t hq = 0; hq < 4; ++hq)
            for (std::size_t x = 0; x < 8; ++x)
                CHECK(out.at(t, hq, x) ==
                      doctest::Approx(in.v.at(t, in.group_map[hq], x)).epsilon(1e-12));
}

TEST_CASE("single token full causal returns V row 0") {
    auto in = random_inputs<double>(1, 2, 2, 4, 2);
    auto out = dense_masked_attention(in, full_causal_mask(1));
    for (std::size_t hq = 0; hq < 2; ++hq)
        for (std::size_t x = 0; x < 4; ++x)
            CHECK(out.at(0, hq, x) == doctest::Approx(in.v.at(0, hq, x)).epsilon(1e-12));
}

TEST_CASE("three token causal matches the hand-computed mixture") {
    // frozen from an independent softmax-mixture calculation (1 head, d=2,
    // scale 1/sqrt(2))
    AttentionInputs<double> in;
    in.q = Tensor<double>({3, 1, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
    in.k = Tensor<double>({3, 1, 2}, {0.7, -0.1, 0.2, 0.3, -0.4, 0.5});
    in.v = Tensor<double>({3, 1, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    in.scale = 1.0 / std::sqrt(2.0);
    in.group_map = {0};
    auto out = dense_masked_attention(in, full_causal_mask(3));
    const double expected[3][2] = {{1.0, 2.0},
                                   {2.1091647867391425, 3.1091647867391421},
                                   {2.5749131967750767, 3.5749131967750762}};
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t x = 0; x < 2; ++x)
            CHECK(out.at(t, 0, x) == doctest::Approx(expected[t][x]).epsilon(1e-12));
}

TEST_CASE("empty attention row throws") {
    auto in = random_inputs<double>(3, 1, 1, 4, 3);
    VisibilityMask m(3);
    m.set(0, 0, true);
    m.set(2, 0, true);  // row 1 has nothing
    CHECK_THROWS_WITH_AS(dense_masked_attention(in, m), "empty attention row",
                         std::runtime_error);
}

TEST_CASE("block sparse equals dense over mask families and block sizes") {
    EquivConfig cfg;
    cfg.heads = 4;
    cfg.kv_heads = 2;
    cfg.head_dim = 8;
    cfg.ksa = KsaConfig{4, 1, 4};
    for (auto kind : {MaskKind::Full, MaskKind::Swa, MaskKind::Sca, MaskKind::Ksa}) {
        for (std::size_t b : {2, 4, 8, 16}) {
            cfg.seed = 100 + b;
            CHECK(block_sparse_max_delta<double>(kind, 33, b, cfg) < 1e-10);
        }
    }
}

TEST_CASE("block sparse f32 tolerance") {
    EquivConfig cfg;
    cfg.ksa = KsaConfig{4, 2, 4};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        cfg.seed = seed;
        CHECK(block_sparse_max_delta<float>(MaskKind::Ksa, 48, 8, cfg) < 1e-5);
    }
}

TEST_CASE("single full diagonal block equals dense on that block") {
    auto in = random_inputs<double>(4, 2, 2, 4, 4);
    const auto mask = full_causal_mask(4);
    const auto bm = blockify(mask, 4);
    auto dense = dense_masked_attention(in, mask);
    auto sparse = block_sparse_attention(in, bm);
    for (std::size_t i = 0; i < dense.size(); ++i)
        CHECK(sparse.data[i] == doctest::Approx(dense.data[i]).epsilon(1e-12));
}

TEST_CASE("ksa block list is strictly smaller than the causal tiling") {
    const KsaConfig cfg{4, 1, 4};
    const auto aug = augment(16, cfg);
    const auto bm = blockify(ksa_mask(aug, cfg), 4);
    const std::size_t grid = bm.block_grid();
    const std::size_t causal_pairs = grid * (grid + 1) / 2;
    CHECK(bm.blocks.size() < causal_pairs);
}

TEST_CASE("key permutation with mask columns leaves output unchanged") {
    const KsaConfig kc{4, 1, 4};
    const auto aug = augment(8, kc);
    REQUIRE(aug.size() == 10);
    auto in = random_inputs<float>(10, 2, 2, 8, 6);
    const auto mask = ksa_mask(aug, kc);
    auto base = dense_masked_attention(in, mask);

    // permute K/V rows together with mask columns
    std::vector<std::size_t> perm(10);
    for (std::size_t i = 0; i < 10; ++i) perm[i] = (i * 3 + 7) % 10;
    AttentionInputs<float> pin = in;
    VisibilityMask pmask(10);
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t x = 0; x < 8; ++x) {
                pin.k.at(perm[i], h, x) = in.k.at(i, h, x);
                pin.v.at(perm[i], h, x) = in.v.at(i, h, x);
            }
        for (std::size_t q = 0; q < 10; ++q) pmask.set(q, perm[i], mask.at(q, i));
    }
    auto permuted = dense_masked_attention(pin, pmask);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(std::abs(base.data[i] - permuted.data[i]) < 1e-5f);
}

TEST_CASE("gqa with identity grouping equals mha exactly") {
    auto in = random_inputs<double>(9, 4, 4, 8, 7);
    const auto mask = full_causal_mask(9);
    auto grouped = dense_masked_attention(in, mask);
    AttentionInputs<double> mha = in;
    mha.group_map = {0, 1, 2, 3};
    auto plain = dense_masked_attention(mha, mask);
    CHECK(grouped.data == plain.data);
}

TEST_CASE("monotone masking: more keys never NaN; just self reduces to V") {
    auto in = random_inputs<double>(8, 2, 1, 4, 8);
    auto full = dense_masked_attention(in, full_causal_mask(8));
    CHECK(full.all_finite());
    auto self_only = dense_masked_attention(in, identity_mask(8));
    for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t hq = 0; hq < 2; ++hq)
            for (std::size_t x = 0; x < 4; ++x)
                CHECK(self_only.at(t, hq, x) == doctest::Approx(in.v.at(t, 0, x)));
}

TEST_CASE("attention probe rows are normalized and masked to the visible set") {
    auto in = random_inputs<double>(10, 2, 2, 8, 9);
    const KsaConfig kc{4, 1, 4};
    const auto aug = augment(8, kc);
    const auto mask = ksa_mask(aug, kc);
    const std::size_t q = 7;
    auto w = attention_probe(in, mask, q);
    for (std::size_t h = 0; h < 2; ++h) {
        double sum = 0.0;
        for (std::size_t kv = 0; kv < 10; ++kv) {
            if (!mask.at(q, kv)) CHECK(w.at(h, kv) == 0.0);
            sum += w.at(h, kv);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(attention_probe(in, mask, 10), std::invalid_argument);
}

TEST_CASE("attention probe with identity mask puts weight 1 on self") {
    auto in = random_inputs<double>(5, 1, 1, 4, 10);
    auto w = attention_probe(in, identity_mask(5), 3);
    CHECK(w.at(0, 3) == doctest::Approx(1.0));
}

TEST_CASE("uniform keys give uniform weights over the visible set") {
    AttentionInputs<double> in;
    const std::size_t L = 6, d = 4;
    in.q = Tensor<double>({L, 1, d});
    in.k = Tensor<double>({L, 1, d});
    in.v = Tensor<double>({L, 1, d});
    Rng rng(11);
    rng.fill_normal(in.q.data, 0.0, 1.0);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t x = 0; x < d; ++x) in.k.at(t, 0, x) = 0.25;  // all keys equal
    in.scale = 0.5;
    in.group_map = {0};
    auto w = attention_probe(in, full_causal_mask(L), 4);
    for (std::size_t kv = 0; kv <= 4; ++kv)
        CHECK(w.at(0, kv) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_SUITE_END();

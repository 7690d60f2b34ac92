#include <stdexcept>
#include <algorithm>
#include <set>

#include "doctest.h"
#include "ksa/equiv.hpp"
#include "ksa/kvcache.hpp"
#include "ksa/rng.hpp"

using namespace ksa;

TEST_SUITE_BEGIN("kvcache");

namespace {

template <typename T>
Tensor<T> entry(Rng& rng, std::size_t h, std::size_t d) {
    Tensor<T> t({h, d});
    rng.fill_normal(t.data, 0.0, 1.0);
    return t;
}

template <typename T>
SummaryStep<T> dummy_summary(Rng& rng, std::size_t h, std::size_t h_kv, std::size_t d) {
    return {entry<T>(rng, h, d), entry<T>(rng, h_kv, d), entry<T>(rng, h_kv, d)};
}

}  // namespace

TEST_CASE("arena sizes follow the config") {
    KsaKvCache<float> cache(KsaConfig{4, 1, 4}, 16, 2, 2, 4);
    CHECK(cache.scratch_offset() == 0);
    CHECK(cache.current_offset() == 1);
    CHECK(cache.ring_offset() == 5);
    CHECK(cache.summary_offset() == 9);
    CHECK(cache.arena_slots() == 13);  // 1 + 4 + 4 + 4
}

TEST_CASE("degenerate configs are allowed") {
    KsaKvCache<float> k1(KsaConfig{1, 2, 4}, 8, 1, 1, 2);  // every token summarized
    CHECK(k1.arena_slots() == 1 + 1 + 2 + 8);
    KsaKvCache<float> c0(KsaConfig{4, 0, 4}, 8, 1, 1, 2);  // no text window
    CHECK(c0.ring_offset() == c0.summary_offset());
}

TEST_CASE("append fills right to left and overflows at k+1") {
    Rng rng(1);
    KsaKvCache<double> cache(KsaConfig{4, 1, 4}, 16, 1, 1, 2);
    for (std::size_t t = 0; t < 4; ++t) {
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
        CHECK(cache.current_fill() == t + 1);
        // occupied span stays right-aligned against the ring
        const auto desc = cache.read_visible();
        REQUIRE(desc.ranges.size() == 1);
        CHECK(desc.ranges[0].start == cache.current_offset() + (4 - (t + 1)));
        CHECK(desc.ranges[0].len == t + 1);
    }
    CHECK_THROWS_WITH_AS(cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2), 4),
                         "chunk overflow", std::runtime_error);
}

TEST_CASE("finalize on a partial chunk throws") {
    Rng rng(2);
    KsaKvCache<double> cache(KsaConfig{4, 1, 4}, 16, 1, 1, 2);
    cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2), 0);
    CHECK_THROWS_WITH_AS(cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2)),
                         "premature finalize", std::runtime_error);
}

TEST_CASE("lifecycle counters after two chunks, k=4 C=1") {
    Rng rng(3);
    KsaKvCache<double> cache(KsaConfig{4, 1, 4}, 16, 1, 1, 2);
    for (std::size_t t = 0; t < 8; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
    }
    cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
    CHECK(cache.complete_chunks() == 2);
    CHECK(cache.visible_summaries() == 1);  // max(0, 2-1)
    // ring (C=1) now holds chunk 1's tokens
    for (std::size_t t = 0; t < 4; ++t)
        CHECK(cache.slot_position(cache.ring_offset() + t) == static_cast<std::int64_t>(4 + t));
}

TEST_CASE("ring holds the newest C chunks after eviction") {
    Rng rng(4);
    KsaKvCache<double> cache(KsaConfig{4, 2, 4}, 32, 1, 1, 2);
    for (std::size_t t = 0; t < 12; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
    }
    cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
    CHECK(cache.complete_chunks() == 3);
    // chunk 0 evicted; ring holds chunks 1 and 2 (physical order modular)
    std::multiset<std::int64_t> ring_positions;
    for (std::size_t s = cache.ring_offset(); s < cache.summary_offset(); ++s)
        ring_positions.insert(cache.slot_position(s));
    std::multiset<std::int64_t> expected{4, 5, 6, 7, 8, 9, 10, 11};
    CHECK(ring_positions == expected);
    CHECK(cache.ring_write_chunk() == 1);  // wrapped around once
}

TEST_CASE("read_visible covers the Eq.3 set; k=4 C=1, 10 tokens") {
    Rng rng(5);
    KsaKvCache<double> cache(KsaConfig{4, 1, 4}, 16, 1, 1, 2);
    for (std::size_t t = 0; t < 10; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
    }
    const auto desc = cache.read_visible();
    REQUIRE(desc.ranges.size() == 1);
    CHECK(desc.total() == 7);  // {s0} + {t4..t7} + {t8, t9}
    // positions: current chunk (newest first), ring chunk 1, then s0 at pos 3
    std::multiset<std::int64_t> got(desc.positions.begin(), desc.positions.end());
    CHECK(got == std::multiset<std::int64_t>{9, 8, 4, 5, 6, 7, 3});
    CHECK(cache.cache_entries() == 8);  // 2 + 4 + 2, includes the whole ring
}

TEST_CASE("before any finalize only the current chunk is visible") {
    Rng rng(6);
    KsaKvCache<double> cache(KsaConfig{4, 2, 4}, 16, 1, 1, 2);
    CHECK(cache.read_visible().ranges.empty());
    cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2), 0);
    const auto desc = cache.read_visible();
    REQUIRE(desc.ranges.size() == 1);
    CHECK(desc.total() == 1);
}

TEST_CASE("no summaries visible while m <= C") {
    Rng rng(7);
    KsaKvCache<double> cache(KsaConfig{2, 3, 4}, 32, 1, 1, 2);
    for (std::size_t t = 0; t < 6; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
    }
    CHECK(cache.complete_chunks() == 2);
    CHECK(cache.visible_summaries() == 0);
    const auto desc = cache.read_visible();
    REQUIRE(desc.ranges.size() == 1);  // partial ring + current, still one slice
    CHECK(desc.total() == 6);
}

TEST_CASE("cache entries n < k") {
    Rng rng(8);
    KsaKvCache<double> cache(KsaConfig{8, 1, 4}, 16, 1, 1, 2);
    for (std::size_t t = 0; t < 5; ++t)
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
    CHECK(cache.cache_entries() == 5);
}

TEST_CASE("entries per token tend to 1/k") {
    Rng rng(9);
    const std::size_t k = 4, n = 4096;
    KsaKvCache<float> cache(KsaConfig{k, 1, 4}, n, 1, 1, 1);
    Tensor<float> unit({1, 1}, {1.0f});
    for (std::size_t t = 0; t < n; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk({unit, unit, unit});
        cache.append_text(unit, unit, static_cast<std::int64_t>(t));
    }
    const double ratio = static_cast<double>(cache.cache_entries()) / n;
    CHECK(ratio == doctest::Approx(1.0 / k).epsilon(0.05));
}

TEST_CASE("decode step 0 returns value of token 0") {
    Rng rng(10);
    KsaKvCache<double> cache(KsaConfig{4, 1, 4}, 16, 2, 1, 4);
    auto q = entry<double>(rng, 2, 4);
    auto k = entry<double>(rng, 1, 4);
    auto v = entry<double>(rng, 1, 4);
    auto res = cache.decode_attention(q, k, v, 0, nullptr);
    CHECK_FALSE(res.finalized);
    for (std::size_t hq = 0; hq < 2; ++hq)
        for (std::size_t x = 0; x < 4; ++x)
            CHECK(res.out.at(hq, x) == doctest::Approx(v.at(0, x)).epsilon(1e-12));
}

TEST_CASE("decode equals prefill row for all steps (primary property)") {
    EquivConfig cfg;
    cfg.heads = 4;
    cfg.kv_heads = 2;
    cfg.head_dim = 8;
    for (std::size_t k : {2, 4, 8}) {
        for (std::size_t c : {0, 1, 2}) {
            cfg.n = 96;
            cfg.ksa = KsaConfig{k, c, 4};
            cfg.seed = k * 10 + c;
            CHECK(decode_prefill_max_delta<double>(cfg) < 1e-10);
        }
    }
}

TEST_CASE("decode equals prefill in f32 within 1e-5") {
    EquivConfig cfg;
    cfg.n = 48;
    cfg.ksa = KsaConfig{4, 1, 4};
    cfg.seed = 77;
    CHECK(decode_prefill_max_delta<float>(cfg) < 1e-5);
}

TEST_CASE("physically rotating the ring does not change decode outputs") {
    EquivConfig cfg;
    cfg.n = 64;
    cfg.ksa = KsaConfig{4, 2, 4};
    cfg.seed = 13;
    CHECK(decode_prefill_max_delta_rotated<double>(cfg, 1) < 1e-10);
    cfg.ksa = KsaConfig{2, 4, 4};
    CHECK(decode_prefill_max_delta_rotated<double>(cfg, 3) < 1e-10);
}

TEST_CASE("slice economy: one contiguous range at every step") {
    Rng rng(14);
    KsaKvCache<double> cache(KsaConfig{3, 2, 4}, 64, 1, 1, 2);
    for (std::size_t t = 0; t < 64; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
        const auto desc = cache.read_visible();
        REQUIRE(desc.ranges.size() == 1);
        CHECK(desc.positions.size() == desc.total());
    }
}

TEST_CASE("randomized lifecycle fuzz keeps accounting exact") {
    Rng rng(15);
    const std::size_t k = 4, C = 2;
    KsaKvCache<double> cache(KsaConfig{k, C, 4}, 10000, 1, 1, 2);
    std::size_t fill = 0, complete = 0;
    std::int64_t pos = 0;
    for (std::size_t step = 0; step < 10000; ++step) {
        if (cache.chunk_full()) {
            cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
            ++complete;
            fill = 0;
        }
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2), pos++);
        ++fill;
        REQUIRE(cache.cache_entries() == fill + std::min(complete, C) * k + complete);
        REQUIRE(cache.current_fill() == fill);
        REQUIRE(cache.complete_chunks() == complete);
        // no double counting: visible text chunks and visible summaries are disjoint
        const auto desc = cache.read_visible();
        std::set<std::int64_t> text_pos, summary_pos;
        const std::size_t vis_sum = cache.visible_summaries();
        for (std::size_t i = 0; i < desc.positions.size(); ++i) {
            if (i < desc.total() - vis_sum)
                text_pos.insert(desc.positions[i]);
            else
                summary_pos.insert(desc.positions[i]);
        }
        for (auto sp : summary_pos) REQUIRE(text_pos.count(sp) == 0);
    }
}

TEST_CASE("summary buffer capacity errors out rather than overflowing") {
    Rng rng(16);
    KsaKvCache<double> cache(KsaConfig{2, 1, 4}, 4, 1, 1, 2);  // capacity: 2 chunks
    Tensor<double> e({1, 2}, {1.0, 2.0});
    for (std::size_t t = 0; t < 4; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(e, e, static_cast<std::int64_t>(t));
    }
    cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
    CHECK_THROWS_AS(
        [&] {
            cache.append_text(e, e, 4);
            cache.append_text(e, e, 5);
            cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        }(),
        std::runtime_error);
}

TEST_CASE("dump json shape") {
    Rng rng(17);
    KsaKvCache<double> cache(KsaConfig{4, 1, 4}, 16, 1, 1, 2);
    for (std::size_t t = 0; t < 10; ++t) {
        if (cache.chunk_full()) cache.finalize_chunk(dummy_summary<double>(rng, 1, 1, 2));
        cache.append_text(entry<double>(rng, 1, 2), entry<double>(rng, 1, 2),
                          static_cast<std::int64_t>(t));
    }
    CHECK(cache.dump_json() ==
          "{\"k\":4,\"C\":1,\"m\":2,\"current_fill\":2,\"ring_write_chunk\":0,"
          "\"entries\":8,\"visible_summaries\":1}");
}

TEST_SUITE_END();

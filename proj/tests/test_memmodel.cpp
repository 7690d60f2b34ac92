#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "ksa/memmodel.hpp"

using namespace ksa;

TEST_SUITE_BEGIN("memmodel");

namespace {

CostParams reference_params(double n) {
    CostParams p;  // k=8, h=128, d=128, g=8, d_c=512, d_r=64 defaults
    p.n = n;
    p.w = 4096;
    return p;
}

}  // namespace

TEST_CASE("reference compression rates match the published table") {
    const CostParams p = reference_params(65536);
    CHECK(compression_rate({Mechanism::GQA, p}) * 100 == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(compression_rate({Mechanism::MLA, p}) * 100 ==
          doctest::Approx(1.76).epsilon(0.005));
    CHECK(compression_rate({Mechanism::KSA, p}) * 100 == doctest::Approx(12.5).epsilon(1e-12));
    CHECK(compression_rate({Mechanism::KSA_GQA, p}) * 100 ==
          doctest::Approx(0.78).epsilon(0.005));
    CHECK(compression_rate({Mechanism::KSA_MLA, p}) * 100 ==
          doctest::Approx(0.22).epsilon(0.01));
    CHECK(compression_rate({Mechanism::MHA, p}) == 1.0);
}

TEST_CASE("combined rates are exact products of component rates") {
    const CostParams p = reference_params(8192);
    CHECK(compression_rate({Mechanism::KSA_GQA, p}) ==
          compression_rate({Mechanism::KSA, p}) * compression_rate({Mechanism::GQA, p}));
    CHECK(compression_rate({Mechanism::KSA_MLA, p}) ==
          compression_rate({Mechanism::KSA, p}) * compression_rate({Mechanism::MLA, p}));
}

TEST_CASE("rate equals the entries ratio when heads are not grouped") {
    CostParams p = reference_params(4096);
    p.g = p.h;  // with g == h every mechanism's rate is its entries ratio
    const double mha = entries({Mechanism::MHA, p});
    for (auto m : {Mechanism::GQA, Mechanism::MLA, Mechanism::GDN, Mechanism::SWA,
                   Mechanism::KSA, Mechanism::KSA_GQA, Mechanism::KSA_MLA}) {
        CHECK(compression_rate({m, p}) ==
              doctest::Approx(entries({m, p}) / mha).epsilon(1e-12));
    }
}

TEST_CASE("gdn state is constant and its rate vanishes with n") {
    CostParams p = reference_params(1024);
    const double e1 = entries({Mechanism::GDN, p});
    p.n = 1 << 20;
    CHECK(entries({Mechanism::GDN, p}) == e1);
    CHECK(compression_rate({Mechanism::GDN, p}) < 1e-3);
    p.gdn_per_head = false;  // the body-text variant without the head factor
    CHECK(entries({Mechanism::GDN, p}) == doctest::Approx(e1 / p.h));
}

TEST_CASE("missing parameters raise configuration errors") {
    CostParams p;
    p.n = 0;
    CHECK_THROWS_AS(entries({Mechanism::MHA, p}), std::invalid_argument);
    p.n = 128;
    p.w = 0;
    CHECK_THROWS_AS(entries({Mechanism::SWA, p}), std::invalid_argument);
}

TEST_CASE("curve: mha doubles with n, gdn stays flat, ksa slope is mha/k") {
    const auto rows = curve({Mechanism::MHA, Mechanism::GDN, Mechanism::KSA},
                            {1024, 2048, 4096}, reference_params(0), 2.0, 4);
    REQUIRE(rows.size() == 9);
    auto find = [&](double n, Mechanism m) -> const CurveRow& {
        for (const auto& r : rows)
            if (r.n == n && r.mechanism == m) return r;
        throw std::logic_error("row not found");
    };
    CHECK(find(2048, Mechanism::MHA).bytes ==
          doctest::Approx(2 * find(1024, Mechanism::MHA).bytes));
    CHECK(find(2048, Mechanism::GDN).bytes == find(1024, Mechanism::GDN).bytes);
    const double slope_mha =
        find(4096, Mechanism::MHA).bytes - find(2048, Mechanism::MHA).bytes;
    const double slope_ksa =
        find(4096, Mechanism::KSA).bytes - find(2048, Mechanism::KSA).bytes;
    CHECK(slope_ksa == doctest::Approx(slope_mha / 8.0).epsilon(1e-12));
    CHECK(find(1024, Mechanism::KSA).rate_vs_mha == doctest::Approx(1.0 / 8.0));
}

TEST_CASE("curve rejects bad n ranges") {
    CHECK_THROWS_AS(curve({Mechanism::MHA}, {}, reference_params(0), 2.0, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(curve({Mechanism::MHA}, {8, 8}, reference_params(0), 2.0, 1),
                    std::invalid_argument);
}

TEST_CASE("curve csv header") {
    const auto rows = curve({Mechanism::MHA}, {16}, reference_params(0), 2.0, 1);
    const auto csv = curve_to_csv(rows);
    CHECK(csv.rfind("n,mechanism,entries,bytes,rate_vs_mha\n", 0) == 0);
}

TEST_CASE("simulation matches the lifecycle example and the bound") {
    const auto r = simulate_vs_formula(KsaConfig{4, 1, 4}, 10);
    CHECK(r.simulated_entries == 8.0);  // 2 + 4 + 2
    CHECK(r.formula_entries == doctest::Approx(2.5));
    CHECK(r.delta <= r.bound);
}

TEST_CASE("simulation is exact for chunk-aligned n with C=0") {
    const auto r = simulate_vs_formula(KsaConfig{4, 0, 4}, 64);
    CHECK(r.simulated_entries == 16.0);
    CHECK(r.delta == 0.0);
}

TEST_CASE("simulation converges to n/k within 5% at n=4096") {
    const auto r = simulate_vs_formula(KsaConfig{8, 2, 4}, 4096);
    const double ratio = r.simulated_entries / 4096.0;
    CHECK(std::abs(ratio - 1.0 / 8.0) / (1.0 / 8.0) < 0.05);
    const double target = 1.0 / 8.0 + (2.0 + 1.0) * 8.0 / 4096.0;
    CHECK(std::abs(ratio - target) / target < 0.05);
}

TEST_CASE("simulated entries never exceed formula plus the constant bound") {
    for (std::size_t n : {1, 7, 64, 513, 4096, 40000, 131072}) {
        const auto r = simulate_vs_formula(KsaConfig{8, 2, 16}, n);
        CHECK(r.simulated_entries <= r.formula_entries + r.bound);
    }
}

TEST_CASE("hybrid cache sits 2x to 4x below pure full at 128k") {
    const KsaConfig cfg{8, 128, 16};
    const double hybrid = hybrid_simulated_bytes(cfg, 131072, 24, 3, 8, 128, 2.0);
    const double full = full_simulated_bytes(131072, 24, 8, 128, 2.0);
    CHECK(full / hybrid > 2.0);
    CHECK(full / hybrid < 4.0);
}

TEST_SUITE_END();

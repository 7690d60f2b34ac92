#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "ksa/recipes.hpp"

using namespace ksa;

TEST_SUITE_BEGIN("recipes");

namespace {

ModelConfig student_cfg() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 32;
    cfg.heads = 2;
    cfg.kv_heads = 2;
    cfg.head_dim = 16;
    cfg.d_ff = 64;
    cfg.vocab = 16;
    cfg.ksa = KsaConfig{4, 1, 4};
    cfg.schedule = LayerSchedule::uniform(2, LayerKind::Ksa);
    cfg.seed = 11;
    return cfg;
}

std::vector<std::size_t> tokens16() {
    std::vector<std::size_t> t(16);
    for (std::size_t i = 0; i < 16; ++i) t[i] = (i * 5 + 1) % 16;
    return t;
}

}  // namespace

TEST_CASE("anneal boundaries and midpoint") {
    const AnnealSchedule sched{50, 150};
    CHECK(anneal_lambda(0, sched) == 1.0);
    CHECK(anneal_lambda(50, sched) == 1.0);
    CHECK(anneal_lambda(150, sched) == 0.0);
    CHECK(anneal_lambda(500, sched) == 0.0);
    CHECK(anneal_lambda(100, sched) == 0.5);
}

TEST_CASE("anneal is monotone non-increasing on a dense grid") {
    const AnnealSchedule sched{10, 237};
    double prev = 2.0;
    for (std::size_t s = 0; s <= 300; ++s) {
        const double l = anneal_lambda(s, sched);
        CHECK(l <= prev + 1e-15);
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
        prev = l;
    }
}

TEST_CASE("anneal rejects inverted windows") {
    CHECK_THROWS_AS(anneal_lambda(0, AnnealSchedule{10, 10}), std::invalid_argument);
}

TEST_CASE("student projections route only summary rows") {
    const auto cfg = student_cfg();
    Rng rng(1);
    const auto params = Parameters<double>::init(cfg, rng);
    auto projs = SummaryProjections<double>::clone_from(params);
    const auto aug = augment(8, cfg.ksa);
    Tensor<double> hidden({aug.size(), cfg.d_model});
    rng.fill_normal(hidden.data, 0.0, 1.0);

    SUBCASE("identical projections reproduce the shared model") {
        const auto qkv = student_qkv(hidden, params.layers[0], projs, 0, aug);
        const auto shared = project_positional<double>(hidden, aug, params.layers[0].wk,
                                                       nullptr, 1.0);
        CHECK(qkv.k.data == shared.data);
    }

    SUBCASE("doubling W_S^K doubles exactly the summary rows of K") {
        for (auto& x : projs.wk[0].data) x *= 2.0;
        const auto qkv = student_qkv(hidden, params.layers[0], projs, 0, aug);
        const auto shared = project_positional<double>(hidden, aug, params.layers[0].wk,
                                                       nullptr, 1.0);
        for (std::size_t r = 0; r < aug.size(); ++r) {
            const bool summary = aug.entries[r].role == Role::Summary;
            for (std::size_t j = 0; j < qkv.k.shape[1]; ++j) {
                const double expect = summary ? 2.0 * shared.at(r, j) : shared.at(r, j);
                CHECK(qkv.k.at(r, j) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }

    SUBCASE("no summaries means teacher-identical projections") {
        const auto aug3 = augment(3, cfg.ksa);
        Tensor<double> h3({3, cfg.d_model});
        rng.fill_normal(h3.data, 0.0, 1.0);
        for (auto& x : projs.wq[0].data) x *= -1.5;
        const auto qkv = student_qkv(h3, params.layers[0], projs, 0, aug3);
        const auto shared =
            project_positional<double>(h3, aug3, params.layers[0].wq, nullptr, 1.0);
        CHECK(qkv.q.data == shared.data);
    }
}

TEST_CASE("interpolated projections mix by lambda") {
    const auto cfg = student_cfg();
    Rng rng(2);
    const auto params = Parameters<double>::init(cfg, rng);
    auto projs = SummaryProjections<double>::clone_from(params);
    for (auto& x : projs.wk[0].data) x *= 3.0;  // W_S^K = 3 W^K
    const auto aug = augment(8, cfg.ksa);
    Tensor<double> hidden({aug.size(), cfg.d_model});
    rng.fill_normal(hidden.data, 0.0, 1.0);

    const auto full = student_qkv(hidden, params.layers[0], projs, 0, aug);
    const auto lam1 = interpolated_qkv(hidden, params.layers[0], projs, 0, aug, 1.0);
    CHECK(full.k.data == lam1.k.data);

    const auto lam0 = interpolated_qkv(hidden, params.layers[0], projs, 0, aug, 0.0);
    const auto shared =
        project_positional<double>(hidden, aug, params.layers[0].wk, nullptr, 1.0);
    CHECK(lam0.k.data == shared.data);  // bit identical: projections removable

    const auto half = interpolated_qkv(hidden, params.layers[0], projs, 0, aug, 0.5);
    for (std::size_t r = 0; r < aug.size(); ++r) {
        const bool summary = aug.entries[r].role == Role::Summary;
        for (std::size_t j = 0; j < half.k.shape[1]; ++j) {
            const double expect = summary ? 2.0 * shared.at(r, j) : shared.at(r, j);
            CHECK(half.k.at(r, j) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("mse alignment values") {
    std::vector<Tensor<double>> teacher, student;
    teacher.emplace_back(Tensor<double>({1, 2}, {1.0, 2.0}));
    student.emplace_back(Tensor<double>({1, 2}, {0.0, 1.0}));  // diff (1,1)
    const std::vector<std::size_t> map{0};
    CHECK(mse_align(teacher, student, map) == doctest::Approx(2.0).epsilon(1e-12));

    SUBCASE("identical branches cost zero") {
        CHECK(mse_align(teacher, teacher, map) == 0.0);
    }
    SUBCASE("quadratic homogeneity") {
        std::vector<Tensor<double>> scaled = student;
        // scale the difference by 3: diff becomes (3,3)
        scaled[0] = Tensor<double>({1, 2}, {-2.0, -1.0});
        CHECK(mse_align(teacher, scaled, map) == doctest::Approx(18.0).epsilon(1e-12));
    }
}

TEST_CASE("kl of matching distributions is zero, hand case ln2, and nonnegative") {
    Tensor<double> w = Tensor<double>::identity(2);
    Tensor<double> ht({1, 2}, {30.0, 0.0});   // teacher p ~ (1, 0)
    Tensor<double> hs({1, 2}, {0.0, 0.0});    // student p_hat = (0.5, 0.5)
    CHECK(kl_logits(ht, ht, w) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(kl_logits(ht, hs, w) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> a({2, 2}), b({2, 2});
        rng.fill_normal(a.data, 0.0, 2.0);
        rng.fill_normal(b.data, 0.0, 2.0);
        CHECK(kl_logits(a, b, w) >= -1e-12);
    }
}

TEST_CASE("total loss combines linearly") {
    CHECK(total_loss(1.0, 2.0, 3.0, DistillWeights{0.5, 0.25}) == doctest::Approx(2.75));
    CHECK(total_loss(1.3, 9.0, 4.0, DistillWeights{0.0, 0.0}) == doctest::Approx(1.3));
}

TEST_CASE("teacher branch ignores projections and lambda") {
    const auto cfg = student_cfg();
    Rng rng(4);
    const auto params = Parameters<double>::init(cfg, rng);
    const auto tokens = tokens16();
    const auto t1 = teacher_forward(cfg, params, tokens);
    const auto t2 = teacher_forward(cfg, params, tokens);
    CHECK(t1.logits.data == t2.logits.data);
    // teacher runs the unaugmented full schedule: context rows == n
    CHECK(t1.contexts[0].shape[0] == tokens.size());
}

TEST_CASE("losses read text positions only: perturbing teacher summary rows is impossible "
          "by construction, student summary rows do not move the loss") {
    const auto cfg = student_cfg();
    Rng rng(5);
    const auto params = Parameters<double>::init(cfg, rng);
    auto projs = SummaryProjections<double>::clone_from(params);
    const auto tokens = tokens16();
    std::vector<std::int64_t> targets(tokens.size(), -1);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        targets[i] = static_cast<std::int64_t>(tokens[i + 1]);
    const auto teacher = teacher_forward(cfg, params, tokens);

    const auto base = distill_losses<double>(cfg, params, projs, 1.0, tokens, targets, teacher,
                                             DistillWeights{}, nullptr, nullptr);

    // hand the loss a student context tensor with garbage in the summary rows:
    // mse_align must not read them
    const auto strace = forward_pass(cfg, params, tokens, SummaryMix<double>{&projs, 1.0});
    std::vector<Tensor<double>> contexts;
    for (const auto& lt : strace.layers) contexts.push_back(lt.context);
    auto poisoned = contexts;
    for (auto& c : poisoned)
        for (std::size_t r = 0; r < strace.aug.size(); ++r)
            if (strace.aug.entries[r].role == Role::Summary)
                for (std::size_t j = 0; j < c.shape[1]; ++j) c.at(r, j) += 1e6;
    CHECK(mse_align(teacher.contexts, contexts, strace.aug.text_to_aug) ==
          mse_align(teacher.contexts, poisoned, strace.aug.text_to_aug));
    CHECK(base.mse ==
          doctest::Approx(mse_align(teacher.contexts, contexts, strace.aug.text_to_aug)));
}

TEST_CASE("absorbability: lambda 0 forward is bit-identical without projections") {
    const auto cfg = student_cfg();
    Rng rng(6);
    const auto params = Parameters<double>::init(cfg, rng);
    auto projs = SummaryProjections<double>::clone_from(params);
    Rng noise(7);
    for (auto& grp : projs.groups())
        for (auto& x : grp.second->data) x += noise.normal(0.0, 0.5);
    CHECK(projections_absorbed(cfg, params, projs, tokens16()));
}

TEST_CASE("distillation gradients match finite differences at several lambdas") {
    const auto cfg = student_cfg();
    const auto tokens = tokens16();
    for (double lambda : {1.0, 0.6, 0.0}) {
        const auto report = distill_grad_check(cfg, lambda, tokens, 1e-5, 16, 2024);
        CAPTURE(lambda);
        CAPTURE(report.worst_group);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradient flow respects lambda routing") {
    const auto cfg = student_cfg();
    const auto tokens = tokens16();
    // lambda=1: summary projections receive gradient
    auto r1 = distill_grad_check(cfg, 1.0, tokens, 1e-5, 4, 1);
    double proj_grad = 0.0, shared_grad = 0.0;
    for (const auto& grp : r1.groups) {
        if (grp.name.rfind("summary", 0) == 0)
            proj_grad = std::max(proj_grad, grp.max_abs_grad);
        if (grp.name.rfind("layer", 0) == 0)
            shared_grad = std::max(shared_grad, grp.max_abs_grad);
    }
    CHECK(proj_grad > 1e-12);
    CHECK(shared_grad > 1e-12);
    // lambda=0: projections get exactly zero gradient
    auto r0 = distill_grad_check(cfg, 0.0, tokens, 1e-5, 4, 2);
    for (const auto& grp : r0.groups)
        if (grp.name.rfind("summary", 0) == 0) CHECK(grp.max_abs_grad == 0.0);
}

TEST_CASE("short distill run anneals lambda across the window") {
    DistillConfig dc;
    dc.model = student_cfg();
    dc.steps = 12;
    dc.batch = 2;
    dc.seq_len = 12;
    dc.anneal = AnnealSchedule{4, 8};
    dc.adam.lr = 1e-4;
    dc.seed = 3;
    const auto result = run_distill<float>(dc);
    REQUIRE(result.metrics.size() == 12);
    CHECK(result.metrics.front().lambda == 1.0);
    CHECK(result.metrics[4].lambda == doctest::Approx(0.75));  // step 5
    CHECK(result.metrics[5].lambda == doctest::Approx(0.5));   // step 6
    CHECK(result.metrics.back().lambda == 0.0);
    const auto csv = distill_metrics_to_csv(result.metrics);
    CHECK(csv.rfind("step,lambda,loss_lm,loss_mse,loss_kl,total\n", 0) == 0);
}

TEST_SUITE_END();

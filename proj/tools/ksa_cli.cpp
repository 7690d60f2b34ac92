#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ksa/equiv.hpp"
#include "ksa/memmodel.hpp"
#include "ksa/recipes.hpp"

using json = nlohmann::json;
using namespace ksa;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string dtype = "f32";
    std::string out = "-";
};

void emit(const std::string& out_path, const std::string& payload) {
    if (out_path == "-") {
        std::fputs(payload.c_str(), stdout);
        return;
    }
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot open output path: " + out_path);
    f << payload;
}

void preamble(const json& cfg) {
    std::fputs(cfg.dump().c_str(), stdout);
    std::fputc('\n', stdout);
}

std::vector<double> parse_n_range(const std::string& spec) {
    // a:b:xS geometric or a:b:+S arithmetic
    const auto c1 = spec.find(':');
    const auto c2 = spec.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw std::invalid_argument("n-range must be start:stop:xFactor or start:stop:+Step");
    const double start = std::stod(spec.substr(0, c1));
    const double stop = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
    const std::string step = spec.substr(c2 + 1);
    if (step.size() < 2 || (step[0] != 'x' && step[0] != '+'))
        throw std::invalid_argument("n-range step must start with 'x' or '+'");
    const double s = std::stod(step.substr(1));
    std::vector<double> out;
    if (step[0] == 'x') {
        if (s <= 1.0) throw std::invalid_argument("geometric step must be > 1");
        for (double n = start; n <= stop * (1 + 1e-12); n *= s) out.push_back(n);
    } else {
        if (s <= 0.0) throw std::invalid_argument("arithmetic step must be > 0");
        for (double n = start; n <= stop * (1 + 1e-12); n += s) out.push_back(n);
    }
    if (out.empty()) throw std::invalid_argument("n-range is empty");
    return out;
}

LayerSchedule schedule_for(const std::string& arch, std::size_t layers, std::size_t ratio) {
    if (arch == "full") return LayerSchedule::uniform(layers, LayerKind::Full);
    if (arch == "swa") return LayerSchedule::uniform(layers, LayerKind::Swa);
    if (arch == "sca") return LayerSchedule::uniform(layers, LayerKind::Sca);
    if (arch == "ksa") return LayerSchedule::uniform(layers, LayerKind::Ksa);
    if (arch == "hybrid-ksa") return LayerSchedule::hybrid(layers, ratio);
    throw std::invalid_argument("unknown arch: " + arch);
}

struct ModelFlags {
    std::size_t layers = 2;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t kv_heads = 4;
    std::size_t head_dim = 16;
    std::size_t d_ff = 128;
    std::size_t vocab = 64;
    std::size_t k = 4;
    std::size_t c = 2;
    std::size_t window = 0;  // 0 -> (C+1)*k
    std::size_t ratio = 1;
    std::string arch = "hybrid-ksa";

    ModelConfig build(std::uint64_t seed) const {
        ModelConfig cfg;
        cfg.layers = layers;
        cfg.d_model = d_model;
        cfg.heads = heads;
        cfg.kv_heads = kv_heads;
        cfg.head_dim = head_dim;
        cfg.d_ff = d_ff;
        cfg.vocab = vocab;
        cfg.ksa = KsaConfig{k, c, 16};
        cfg.swa_window = window == 0 ? (c + 1) * k : window;
        cfg.schedule = schedule_for(arch, layers, ratio);
        cfg.seed = seed;
        return cfg;
    }

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--layers", layers);
        cmd->add_option("--d-model", d_model);
        cmd->add_option("--heads", heads);
        cmd->add_option("--kv-heads", kv_heads);
        cmd->add_option("--head-dim", head_dim);
        cmd->add_option("--d-ff", d_ff);
        cmd->add_option("--vocab", vocab);
        cmd->add_option("--k", k);
        cmd->add_option("--c", c);
        cmd->add_option("--window", window);
        cmd->add_option("--ratio", ratio);
        cmd->add_option("--arch", arch)
            ->check(CLI::IsMember({"full", "swa", "sca", "ksa", "hybrid-ksa"}));
    }
};

int cmd_mask(const GlobalOpts& g, std::size_t n, std::size_t k, std::size_t c,
             const std::string& kind, const std::string& format, std::size_t block_size,
             std::size_t window) {
    const KsaConfig cfg{k, c, block_size};
    VisibilityMask mask;
    if (kind == "ksa") {
        mask = ksa_mask(augment(n, cfg), cfg);
    } else if (kind == "swa") {
        mask = swa_mask(n, window == 0 ? (c + 1) * k : window);
    } else if (kind == "sca") {
        mask = sca_mask(n, cfg);
    } else {
        mask = full_causal_mask(n);
    }
    preamble({{"subcommand", "mask"},
              {"n", n},
              {"k", k},
              {"c", c},
              {"kind", kind},
              {"format", format},
              {"block_size", block_size},
              {"size", mask.size()},
              {"ones", mask.count()},
              {"sparsity", sparsity(mask)},
              {"seed", g.seed},
              {"out", g.out}});
    if (format == "csv")
        emit(g.out, mask_to_csv(mask));
    else if (format == "pbm")
        emit(g.out, mask_to_pbm(mask));
    else
        emit(g.out, blocks_to_text(blockify(mask, block_size)));
    return 0;
}

int cmd_mem(const GlobalOpts& g, const std::vector<std::string>& mech_names,
            const std::string& n_range, CostParams params, double bytes, std::size_t layers,
            const std::string& format, std::size_t hybrid_ratio, std::size_t hybrid_c) {
    const auto n_values = parse_n_range(n_range);
    std::vector<Mechanism> mechs;
    bool hybrid = false;
    for (const auto& m : mech_names) {
        if (m == "hybrid-ksa")
            hybrid = true;
        else
            mechs.push_back(mechanism_from_string(m));
    }
    preamble({{"subcommand", "mem"},
              {"mechanisms", mech_names},
              {"n_range", n_range},
              {"h", params.h},
              {"g", params.g},
              {"d", params.d},
              {"d_c", params.d_c},
              {"d_r", params.d_r},
              {"k", params.k},
              {"w", params.w},
              {"bytes_per_element", bytes},
              {"layers", layers},
              {"format", format},
              {"hybrid_ratio", hybrid_ratio},
              {"seed", g.seed},
              {"out", g.out}});

    if (format == "table") {
        std::ostringstream os;
        char buf[160];
        os << "mechanism      entries(n)            rate_vs_mha\n";
        for (Mechanism m : mechs) {
            CostParams p = params;
            p.n = n_values.back();
            std::snprintf(buf, sizeof(buf), "%-14s %-21.6g %.4f%%\n", mechanism_name(m),
                          entries({m, p}), compression_rate({m, p}) * 100.0);
            os << buf;
        }
        emit(g.out, os.str());
        return 0;
    }

    auto rows = curve(mechs, n_values, params, bytes, layers);
    std::string csv = curve_to_csv(rows);
    if (hybrid) {
        // per-layer mix: KSA layers use the simulated cache, full layers n slots
        std::ostringstream os;
        char buf[160];
        const KsaConfig kcfg{static_cast<std::size_t>(params.k), hybrid_c, 16};
        for (double n : n_values) {
            const std::size_t ni = static_cast<std::size_t>(n);
            const double hb =
                hybrid_simulated_bytes(kcfg, ni, layers, hybrid_ratio, params.g, params.d, bytes);
            const double fb = full_simulated_bytes(ni, layers, params.g, params.d, bytes);
            std::snprintf(buf, sizeof(buf), "%.0f,hybrid-ksa,%.6g,%.6g,%.8g\n", n,
                          hb / bytes / layers, hb, hb / fb);
            os << buf;
        }
        csv += os.str();
    }
    emit(g.out, csv);
    return 0;
}

template <typename T>
int run_equiv(const GlobalOpts& g, std::size_t n, std::size_t k, std::size_t c,
              std::size_t trials, double tol, const std::string& mode) {
    EquivConfig cfg;
    cfg.n = n;
    cfg.ksa = KsaConfig{k, c, 8};
    double worst = 0.0;
    std::ostringstream os;
    std::size_t failures = 0;
    char buf[192];
    for (std::size_t t = 0; t < trials; ++t) {
        cfg.seed = g.seed * 1000 + t;
        if (mode == "all" || mode == "decode") {
            const double delta = decode_prefill_max_delta<T>(cfg);
            worst = std::max(worst, delta);
            failures += delta > tol;
            std::snprintf(buf, sizeof(buf), "decode,%zu,%.3e,%s\n", t, delta,
                          delta <= tol ? "pass" : "FAIL");
            os << buf;
        }
        if (mode == "all" || mode == "block") {
            for (auto kind : {MaskKind::Full, MaskKind::Swa, MaskKind::Sca, MaskKind::Ksa}) {
                for (std::size_t b : {4, 8, 16}) {
                    const double delta = block_sparse_max_delta<T>(kind, n, b, cfg);
                    worst = std::max(worst, delta);
                    failures += delta > tol;
                    std::snprintf(buf, sizeof(buf), "block,%zu,%s,B=%zu,%.3e,%s\n", t,
                                  mask_kind_name(kind), b, delta,
                                  delta <= tol ? "pass" : "FAIL");
                    os << buf;
                }
            }
        }
    }
    std::snprintf(buf, sizeof(buf), "max_delta,%.6e\nresult,%s\n", worst,
                  failures == 0 ? "pass" : "FAIL");
    os << buf;
    emit(g.out, os.str());
    if (failures != 0) throw std::runtime_error("equivalence check failed: max delta " +
                                                std::to_string(worst) + " exceeds tolerance");
    return 0;
}

int cmd_equiv(const GlobalOpts& g, std::size_t n, std::size_t k, std::size_t c,
              std::size_t trials, double tol, const std::string& mode) {
    preamble({{"subcommand", "equiv"},
              {"n", n},
              {"k", k},
              {"c", c},
              {"trials", trials},
              {"tol", tol},
              {"mode", mode},
              {"dtype", g.dtype},
              {"seed", g.seed},
              {"out", g.out}});
    if (g.dtype == "f64") return run_equiv<double>(g, n, k, c, trials, tol, mode);
    return run_equiv<float>(g, n, k, c, trials, tol, mode);
}

int cmd_train(const GlobalOpts& g, const ModelFlags& mf, const std::string& task,
              std::size_t steps, std::size_t batch, double lr, std::size_t seq_len,
              std::size_t pair_max, std::size_t eval_every, std::size_t eval_samples,
              std::size_t copy_span) {
    const ModelConfig cfg = mf.build(g.seed);
    TrainConfig tc;
    tc.task = task;
    tc.steps = steps;
    tc.batch = batch;
    tc.adam.lr = lr;
    tc.eval_every = eval_every;
    tc.eval_samples = eval_samples;
    tc.seed = g.seed;
    tc.recall.seq_len = seq_len;
    tc.recall.pair_max_pos = pair_max;
    tc.copy_span = copy_span;
    preamble({{"subcommand", "train"},
              {"task", task},
              {"arch", mf.arch},
              {"layers", mf.layers},
              {"steps", steps},
              {"batch", batch},
              {"lr", lr},
              {"seq_len", seq_len},
              {"k", mf.k},
              {"c", mf.c},
              {"window", cfg.swa_window},
              {"dtype", g.dtype},
              {"seed", g.seed},
              {"out", g.out}});
    const TrainResult result = g.dtype == "f64" ? train<double>(cfg, tc) : train<float>(cfg, tc);
    emit(g.out, metrics_to_csv(result.metrics, mf.arch, g.seed));
    std::printf("final_accuracy,%.6f\n", result.final_accuracy);
    return 0;
}

int cmd_distill(const GlobalOpts& g, const ModelFlags& mf, std::size_t steps,
                std::size_t anneal_start, std::size_t anneal_end, double alpha, double beta,
                std::size_t batch, std::size_t seq_len, double lr) {
    DistillConfig dc;
    dc.model = mf.build(g.seed);
    dc.steps = steps;
    dc.batch = batch;
    dc.seq_len = seq_len;
    dc.anneal = AnnealSchedule{anneal_start, anneal_end};
    dc.weights = DistillWeights{alpha, beta};
    dc.adam.lr = lr;
    dc.seed = g.seed;
    preamble({{"subcommand", "distill"},
              {"arch", mf.arch},
              {"steps", steps},
              {"anneal_start", anneal_start},
              {"anneal_end", anneal_end},
              {"alpha", alpha},
              {"beta", beta},
              {"batch", batch},
              {"seq_len", seq_len},
              {"lr", lr},
              {"dtype", g.dtype},
              {"seed", g.seed},
              {"out", g.out}});
    const auto metrics = g.dtype == "f64" ? run_distill<double>(dc).metrics
                                          : run_distill<float>(dc).metrics;
    emit(g.out, distill_metrics_to_csv(metrics));
    return 0;
}

template <typename T>
std::string attn_dump_csv(const ModelConfig& cfg, std::size_t layer, std::size_t query,
                          std::size_t n, std::uint64_t seed) {
    Rng init_rng(cfg.seed);
    const auto params = Parameters<T>::init(cfg, init_rng);
    Rng data_rng(seed + 1);
    std::vector<std::size_t> tokens(n);
    for (auto& t : tokens) t = data_rng.uniform_int(cfg.vocab);
    const auto trace = forward_pass(cfg, params, tokens);
    if (layer >= cfg.layers) throw std::invalid_argument("layer index out of range");
    if (query >= trace.aug.size()) throw std::invalid_argument("query index out of range");
    const std::size_t L = trace.aug.size();
    std::ostringstream os;
    os << "key_index,role,weight\n";
    char buf[96];
    for (std::size_t kv = 0; kv < L; ++kv) {
        double w = 0.0;
        for (std::size_t hq = 0; hq < cfg.heads; ++hq)
            w += static_cast<double>(trace.layers[layer].probs.at(hq, query, kv));
        w /= static_cast<double>(cfg.heads);
        const char* role = trace.aug.entries[kv].role == Role::Summary ? "summary" : "text";
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.8e\n", kv, role, w);
        os << buf;
    }
    return os.str();
}

int cmd_attn_dump(const GlobalOpts& g, const ModelFlags& mf, std::size_t layer,
                  std::size_t query, std::size_t n) {
    const ModelConfig cfg = mf.build(g.seed);
    preamble({{"subcommand", "attn-dump"},
              {"arch", mf.arch},
              {"layer", layer},
              {"query", query},
              {"n", n},
              {"k", mf.k},
              {"c", mf.c},
              {"dtype", g.dtype},
              {"seed", g.seed},
              {"out", g.out}});
    const std::string csv = g.dtype == "f64"
                                ? attn_dump_csv<double>(cfg, layer, query, n, g.seed)
                                : attn_dump_csv<float>(cfg, layer, query, n, g.seed);
    emit(g.out, csv);
    return 0;
}

template <typename T>
std::string decode_bench_json(std::size_t n, const KsaConfig& kcfg, std::size_t heads,
                              std::size_t kv_heads, std::size_t head_dim, std::uint64_t seed) {
    Rng rng(seed);
    KsaKvCache<T> cache(kcfg, n, heads, kv_heads, head_dim);
    const RopeConfig rope{1e4, head_dim};
    auto random_entry = [&](std::size_t h) {
        Tensor<T> t({h, head_dim});
        rng.fill_normal(t.data, 0.0, 1.0);
        return t;
    };
    SummaryProvider<T> provider = [&](std::size_t, std::int64_t pos) -> SummaryStep<T> {
        auto q = random_entry(heads);
        auto k = random_entry(kv_heads);
        auto v = random_entry(kv_heads);
        for (std::size_t h = 0; h < heads; ++h)
            rope_rotate_inplace(q.data.data() + h * head_dim, head_dim, rope.theta, pos);
        for (std::size_t h = 0; h < kv_heads; ++h)
            rope_rotate_inplace(k.data.data() + h * head_dim, head_dim, rope.theta, pos);
        return {q, k, v};
    };
    for (std::size_t t = 0; t < n; ++t) {
        auto q = random_entry(heads);
        auto k = random_entry(kv_heads);
        auto v = random_entry(kv_heads);
        const auto pos = static_cast<std::int64_t>(t);
        for (std::size_t h = 0; h < heads; ++h)
            rope_rotate_inplace(q.data.data() + h * head_dim, head_dim, rope.theta, pos);
        for (std::size_t h = 0; h < kv_heads; ++h)
            rope_rotate_inplace(k.data.data() + h * head_dim, head_dim, rope.theta, pos);
        cache.decode_attention(q, k, v, pos, provider);
    }
    return cache.dump_json() + "\n";
}

int cmd_decode_bench(const GlobalOpts& g, std::size_t n, std::size_t k, std::size_t c,
                     std::size_t heads, std::size_t kv_heads, std::size_t head_dim, bool dump) {
    const KsaConfig kcfg{k, c, 8};
    preamble({{"subcommand", "decode-bench"},
              {"n", n},
              {"k", k},
              {"c", c},
              {"heads", heads},
              {"kv_heads", kv_heads},
              {"head_dim", head_dim},
              {"dump", dump},
              {"dtype", g.dtype},
              {"seed", g.seed},
              {"out", g.out}});
    const std::string state = g.dtype == "f64"
                                  ? decode_bench_json<double>(n, kcfg, heads, kv_heads,
                                                              head_dim, g.seed)
                                  : decode_bench_json<float>(n, kcfg, heads, kv_heads,
                                                             head_dim, g.seed);
    if (dump) emit(g.out, state);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kwai Summary Attention: masks, cache, cost model, toy training"};
    app.set_help_flag("--help", "print help");  // frees --h for the head-count flag
    app.require_subcommand(1);

    GlobalOpts g;
    if (const char* env = std::getenv("KSA_DTYPE")) g.dtype = env;
    app.add_option("--seed", g.seed, "global rng seed");
    app.add_option("--dtype", g.dtype)->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--out", g.out, "output path ('-' for stdout)");

    // mask
    auto* mask = app.add_subcommand("mask", "emit a visibility mask");
    std::size_t m_n = 8, m_k = 4, m_c = 1, m_block = 4, m_window = 0;
    std::string m_kind = "ksa", m_format = "csv";
    mask->add_option("--n", m_n);
    mask->add_option("--k", m_k);
    mask->add_option("--c", m_c);
    mask->add_option("--kind", m_kind)->check(CLI::IsMember({"ksa", "swa", "sca", "full"}));
    mask->add_option("--format", m_format)->check(CLI::IsMember({"csv", "pbm", "blocks"}));
    mask->add_option("--block-size", m_block);
    mask->add_option("--window", m_window);

    // mem
    auto* mem = app.add_subcommand("mem", "closed-form KV cache cost model");
    std::vector<std::string> mm_mechs{"mha", "gqa", "mla", "gdn", "swa", "ksa", "ksa+gqa",
                                      "ksa+mla"};
    std::string mm_range = "65536:65536:x2", mm_format = "table";
    CostParams mm_params;
    mm_params.w = 4096;
    double mm_bytes = 2.0;
    std::size_t mm_layers = 1, mm_ratio = 3, mm_c = 128;
    bool mm_gdn_flat = false;
    mem->add_option("--mechanisms", mm_mechs)->delimiter(',');
    mem->add_option("--n-range", mm_range);
    mem->add_option("--h", mm_params.h);
    mem->add_option("--g", mm_params.g);
    mem->add_option("--d", mm_params.d);
    mem->add_option("--dc", mm_params.d_c);
    mem->add_option("--dr", mm_params.d_r);
    mem->add_option("--k", mm_params.k);
    mem->add_option("--w", mm_params.w);
    mem->add_option("--bytes", mm_bytes);
    mem->add_option("--layers", mm_layers);
    mem->add_option("--format", mm_format)->check(CLI::IsMember({"table", "csv"}));
    mem->add_option("--hybrid-ratio", mm_ratio);
    mem->add_option("--hybrid-c", mm_c);
    mem->add_flag("--gdn-no-head-factor", mm_gdn_flat,
                  "use the 2*d^2 state size without the head factor");

    // equiv
    auto* equiv = app.add_subcommand("equiv", "decode-vs-prefill and block-vs-dense oracles");
    std::size_t e_n = 96, e_k = 4, e_c = 1, e_trials = 20;
    double e_tol = 1e-10;
    std::string e_mode = "all";
    equiv->add_option("--n", e_n);
    equiv->add_option("--k", e_k);
    equiv->add_option("--c", e_c);
    equiv->add_option("--trials", e_trials);
    equiv->add_option("--tol", e_tol);
    equiv->add_option("--mode", e_mode)->check(CLI::IsMember({"all", "decode", "block"}));

    // train
    auto* train_cmd = app.add_subcommand("train", "train the toy model on a synthetic task");
    ModelFlags t_mf;
    std::string t_task = "distant-recall";
    std::size_t t_steps = 2000, t_batch = 16, t_seq = 48, t_pair = 8, t_eval_every = 100,
                t_eval_samples = 128, t_span = 8;
    double t_lr = 1e-3;
    t_mf.add_flags(train_cmd);
    train_cmd->add_option("--task", t_task)->check(CLI::IsMember({"copy", "distant-recall"}));
    train_cmd->add_option("--steps", t_steps);
    train_cmd->add_option("--batch", t_batch);
    train_cmd->add_option("--lr", t_lr);
    train_cmd->add_option("--seq-len", t_seq);
    train_cmd->add_option("--pair-max", t_pair);
    train_cmd->add_option("--eval-every", t_eval_every);
    train_cmd->add_option("--eval-samples", t_eval_samples);
    train_cmd->add_option("--copy-span", t_span);

    // distill
    auto* distill = app.add_subcommand("distill", "teacher-student warmup with annealing");
    ModelFlags d_mf;
    d_mf.arch = "ksa";
    std::size_t d_steps = 200, d_start = 50, d_end = 150, d_batch = 4, d_seq = 32;
    double d_alpha = 1.0, d_beta = 1.0, d_lr = 1e-4;
    d_mf.add_flags(distill);
    distill->add_option("--steps", d_steps);
    distill->add_option("--anneal-start", d_start);
    distill->add_option("--anneal-end", d_end);
    distill->add_option("--alpha", d_alpha);
    distill->add_option("--beta", d_beta);
    distill->add_option("--batch", d_batch);
    distill->add_option("--seq-len", d_seq);
    distill->add_option("--lr", d_lr);

    // attn-dump
    auto* dump = app.add_subcommand("attn-dump", "post-softmax weights of one query row");
    ModelFlags a_mf;
    std::size_t a_layer = 0, a_query = 0, a_n = 32;
    a_mf.add_flags(dump);
    dump->add_option("--layer", a_layer);
    dump->add_option("--query", a_query);
    dump->add_option("--n", a_n);

    // decode-bench
    auto* bench = app.add_subcommand("decode-bench", "run the decode cache lifecycle");
    std::size_t b_n = 64, b_k = 4, b_c = 2, b_h = 4, b_kvh = 2, b_d = 16;
    bool b_dump = true;
    bench->add_option("--n", b_n);
    bench->add_option("--k", b_k);
    bench->add_option("--c", b_c);
    bench->add_option("--heads", b_h);
    bench->add_option("--kv-heads", b_kvh);
    bench->add_option("--head-dim", b_d);
    bench->add_flag("--dump,!--no-dump", b_dump);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*mask) return cmd_mask(g, m_n, m_k, m_c, m_kind, m_format, m_block, m_window);
        if (*mem) {
            mm_params.gdn_per_head = !mm_gdn_flat;
            return cmd_mem(g, mm_mechs, mm_range, mm_params, mm_bytes, mm_layers, mm_format,
                           mm_ratio, mm_c);
        }
        if (*equiv) return cmd_equiv(g, e_n, e_k, e_c, e_trials, e_tol, e_mode);
        if (*train_cmd)
            return cmd_train(g, t_mf, t_task, t_steps, t_batch, t_lr, t_seq, t_pair,
                             t_eval_every, t_eval_samples, t_span);
        if (*distill)
            return cmd_distill(g, d_mf, d_steps, d_start, d_end, d_alpha, d_beta, d_batch,
                               d_seq, d_lr);
        if (*dump) return cmd_attn_dump(g, a_mf, a_layer, a_query, a_n);
        if (*bench) return cmd_decode_bench(g, b_n, b_k, b_c, b_h, b_kvh, b_d, b_dump);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

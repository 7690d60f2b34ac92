#include "ksa/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ksa/attention.hpp"

namespace ksa {

namespace {
constexpr double kRmsEps = 1e-6;
}

bool LayerSchedule::uses_summaries() const {
    for (auto k : kinds)
        if (k == LayerKind::Ksa) return true;
    return false;
}

std::size_t LayerSchedule::count(LayerKind kind) const {
    std::size_t c = 0;
    for (auto k : kinds)
        if (k == kind) ++c;
    return c;
}

LayerSchedule LayerSchedule::hybrid(std::size_t layers, std::size_t ratio) {
    LayerSchedule s;
    s.kinds.resize(layers);
    for (std::size_t l = 0; l < layers; ++l)
        s.kinds[l] = (l % (ratio + 1) == ratio) ? LayerKind::Full : LayerKind::Ksa;
    return s;
}

LayerSchedule LayerSchedule::uniform(std::size_t layers, LayerKind kind) {
    LayerSchedule s;
    s.kinds.assign(layers, kind);
    return s;
}

void ModelConfig::validate() const {
    if (layers < 1 || schedule.size() != layers)
        throw std::invalid_argument("schedule must cover every layer");
    if (heads * head_dim != d_model)
        throw std::invalid_argument("d_model must equal heads * head_dim");
    if (kv_heads == 0 || heads % kv_heads != 0)
        throw std::invalid_argument("heads must be divisible by kv_heads");
    if (vocab < 2) throw std::invalid_argument("vocab must be >= 2");
    if (head_dim % 2 != 0) throw std::invalid_argument("head_dim must be even for rope");
    const bool local = schedule.count(LayerKind::Swa) + schedule.count(LayerKind::Sca) > 0;
    if (local && schedule.uses_summaries())
        throw std::invalid_argument("swa/sca layers cannot mix with ksa layers");
}

// --- parameters --------------------------------------------------------------

template <typename T>
Parameters<T> Parameters<T>::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Parameters<T> p;
    const double sigma = 0.02;
    p.embedding = Tensor<T>({cfg.vocab + 1, cfg.d_model});
    rng.fill_normal(p.embedding.data, 0.0, sigma);
    p.layers.resize(cfg.layers);
    for (auto& lp : p.layers) {
        lp.wq = Tensor<T>({cfg.heads * cfg.head_dim, cfg.d_model});
        lp.wk = Tensor<T>({cfg.kv_heads * cfg.head_dim, cfg.d_model});
        lp.wv = Tensor<T>({cfg.kv_heads * cfg.head_dim, cfg.d_model});
        lp.wo = Tensor<T>({cfg.d_model, cfg.heads * cfg.head_dim});
        lp.w1 = Tensor<T>({cfg.d_ff, cfg.d_model});
        lp.w2 = Tensor<T>({cfg.d_model, cfg.d_ff});
        rng.fill_normal(lp.wq.data, 0.0, sigma);
        rng.fill_normal(lp.wk.data, 0.0, sigma);
        rng.fill_normal(lp.wv.data, 0.0, sigma);
        rng.fill_normal(lp.wo.data, 0.0, sigma);
        rng.fill_normal(lp.w1.data, 0.0, sigma);
        rng.fill_normal(lp.w2.data, 0.0, sigma);
        lp.gamma_attn = Tensor<T>({cfg.d_model});
        lp.gamma_mlp = Tensor<T>({cfg.d_model});
        std::fill(lp.gamma_attn.data.begin(), lp.gamma_attn.data.end(), T(1));
        std::fill(lp.gamma_mlp.data.begin(), lp.gamma_mlp.data.end(), T(1));
    }
    p.gamma_final = Tensor<T>({cfg.d_model});
    std::fill(p.gamma_final.data.begin(), p.gamma_final.data.end(), T(1));
    p.head = Tensor<T>({cfg.vocab, cfg.d_model});
    rng.fill_normal(p.head.data, 0.0, sigma);
    return p;
}

template <typename T>
Parameters<T> Parameters<T>::zeros_like(const Parameters<T>& other) {
    Parameters<T> p;
    p.embedding = Tensor<T>(other.embedding.shape);
    p.layers.resize(other.layers.size());
    for (std::size_t l = 0; l < other.layers.size(); ++l) {
        const auto& o = other.layers[l];
        auto& lp = p.layers[l];
        lp.wq = Tensor<T>(o.wq.shape);
        lp.wk = Tensor<T>(o.wk.shape);
        lp.wv = Tensor<T>(o.wv.shape);
        lp.wo = Tensor<T>(o.wo.shape);
        lp.w1 = Tensor<T>(o.w1.shape);
        lp.w2 = Tensor<T>(o.w2.shape);
        lp.gamma_attn = Tensor<T>(o.gamma_attn.shape);
        lp.gamma_mlp = Tensor<T>(o.gamma_mlp.shape);
    }
    p.gamma_final = Tensor<T>(other.gamma_final.shape);
    p.head = Tensor<T>(other.head.shape);
    return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Parameters<T>::groups() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("embedding", &embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "wq", &layers[l].wq);
        out.emplace_back(p + "wk", &layers[l].wk);
        out.emplace_back(p + "wv", &layers[l].wv);
        out.emplace_back(p + "wo", &layers[l].wo);
        out.emplace_back(p + "w1", &layers[l].w1);
        out.emplace_back(p + "w2", &layers[l].w2);
        out.emplace_back(p + "gamma_attn", &layers[l].gamma_attn);
        out.emplace_back(p + "gamma_mlp", &layers[l].gamma_mlp);
    }
    out.emplace_back("gamma_final", &gamma_final);
    out.emplace_back("head", &head);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Parameters<T>::groups() const {
    auto mut = const_cast<Parameters<T>*>(this)->groups();
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    out.reserve(mut.size());
    for (auto& g : mut) out.emplace_back(g.first, g.second);
    return out;
}

template <typename T>
SummaryProjections<T> SummaryProjections<T>::clone_from(const Parameters<T>& params) {
    SummaryProjections<T> s;
    for (const auto& lp : params.layers) {
        s.wq.push_back(lp.wq);
        s.wk.push_back(lp.wk);
        s.wv.push_back(lp.wv);
    }
    return s;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> SummaryProjections<T>::groups() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t l = 0; l < wq.size(); ++l) {
        const std::string p = "summary" + std::to_string(l) + ".";
        out.emplace_back(p + "wq", &wq[l]);
        out.emplace_back(p + "wk", &wk[l]);
        out.emplace_back(p + "wv", &wv[l]);
    }
    return out;
}

// --- forward -----------------------------------------------------------------

namespace {

// y[out] = x[in] . W[out, in] row
template <typename T>
void matvec_wt(const T* x, const Tensor<T>& w, T* y) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    for (std::size_t o = 0; o < out_dim; ++o) {
        T acc = T(0);
        const T* wr = w.data.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += x[i] * wr[i];
        y[o] = acc;
    }
}

// dW[out, in] += dy[out] * x[in], scaled
template <typename T>
void accum_dw(const T* dy, const T* x, T coeff, Tensor<T>& dw) {
    const std::size_t out_dim = dw.shape[0], in_dim = dw.shape[1];
    for (std::size_t o = 0; o < out_dim; ++o) {
        T* wr = dw.data.data() + o * in_dim;
        const T g = dy[o] * coeff;
        for (std::size_t i = 0; i < in_dim; ++i) wr[i] += g * x[i];
    }
}

// dx[in] += coeff * dy[out] . W[out, in]
template <typename T>
void accum_dx(const T* dy, const Tensor<T>& w, T coeff, T* dx) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    for (std::size_t o = 0; o < out_dim; ++o) {
        const T* wr = w.data.data() + o * in_dim;
        const T g = dy[o] * coeff;
        for (std::size_t i = 0; i < in_dim; ++i) dx[i] += g * wr[i];
    }
}

template <typename T>
void rmsnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, Tensor<T>& y,
                     std::vector<T>& inv_rms) {
    const std::size_t rows = x.shape[0], d = x.shape[1];
    y = Tensor<T>({rows, d});
    inv_rms.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T ss = T(0);
        for (std::size_t i = 0; i < d; ++i) ss += x.at(r, i) * x.at(r, i);
        const T ir = T(1) / std::sqrt(ss / static_cast<T>(d) + static_cast<T>(kRmsEps));
        inv_rms[r] = ir;
        for (std::size_t i = 0; i < d; ++i) y.at(r, i) = x.at(r, i) * ir * gamma.at(i);
    }
}

template <typename T>
void rmsnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const std::vector<T>& inv_rms,
                      const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dgamma) {
    const std::size_t rows = x.shape[0], d = x.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
        const T ir = inv_rms[r];
        T dot = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            dot += dy.at(r, i) * gamma.at(i) * x.at(r, i);
            dgamma.at(i) += dy.at(r, i) * x.at(r, i) * ir;
        }
        const T c = dot * ir * ir * ir / static_cast<T>(d);
        for (std::size_t i = 0; i < d; ++i)
            dx.at(r, i) += dy.at(r, i) * gamma.at(i) * ir - x.at(r, i) * c;
    }
}

}  // namespace

template <typename T>
Tensor<T> project_positional(const Tensor<T>& hidden, const AugmentedSequence& aug,
                             const Tensor<T>& w, const Tensor<T>* ws, T lambda) {
    if (hidden.rank() != 2 || hidden.shape[0] != aug.size() || hidden.shape[1] != w.shape[1])
        throw std::invalid_argument("project_positional shape mismatch");
    if (ws != nullptr && ws->shape != w.shape)
        throw std::invalid_argument("summary projection shape differs from shared weight");
    const std::size_t rows = hidden.shape[0];
    const std::size_t out_dim = w.shape[0];
    Tensor<T> out({rows, out_dim});
    std::vector<T> tmp(out_dim);
    for (std::size_t r = 0; r < rows; ++r) {
        T* dst = out.data.data() + r * out_dim;
        const T* x = hidden.data.data() + r * hidden.shape[1];
        const bool summary = aug.entries[r].role == Role::Summary;
        if (!summary || ws == nullptr || lambda == T(0)) {
            matvec_wt(x, w, dst);  // lambda == 0 takes the exact shared path
        } else if (lambda == T(1)) {
            matvec_wt(x, *ws, dst);
        } else {
            matvec_wt(x, *ws, dst);
            matvec_wt(x, w, tmp.data());
            for (std::size_t o = 0; o < out_dim; ++o)
                dst[o] = lambda * dst[o] + (T(1) - lambda) * tmp[o];
        }
    }
    return out;
}

namespace {

// Gradient counterpart of project_rows: routes dY into dW / dWs / dnormed with
// the same per-row mixing coefficients.
template <typename T>
void project_rows_backward(const Tensor<T>& normed, const AugmentedSequence& aug,
                           const Tensor<T>& w, const Tensor<T>* ws, T lambda,
                           const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>* dws,
                           Tensor<T>& dnormed) {
    const std::size_t rows = normed.shape[0];
    const std::size_t out_dim = w.shape[0];
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = normed.data.data() + r * normed.shape[1];
        const T* g = dy.data.data() + r * out_dim;
        T* dx = dnormed.data.data() + r * normed.shape[1];
        const bool summary = aug.entries[r].role == Role::Summary;
        if (!summary || ws == nullptr) {
            accum_dw(g, x, T(1), dw);
            accum_dx(g, w, T(1), dx);
        } else {
            if (lambda != T(0) && dws != nullptr) {
                accum_dw(g, x, lambda, *dws);
                accum_dx(g, *ws, lambda, dx);
            }
            if (lambda != T(1)) {
                accum_dw(g, x, T(1) - lambda, dw);
                accum_dx(g, w, T(1) - lambda, dx);
            }
        }
    }
}

template <typename T>
T silu(T a) {
    const T s = T(1) / (T(1) + std::exp(-a));
    return a * s;
}

template <typename T>
T silu_grad(T a) {
    const T s = T(1) / (T(1) + std::exp(-a));
    return s * (T(1) + a * (T(1) - s));
}

struct MaskSet {
    VisibilityMask per_kind[4];
    bool built[4] = {false, false, false, false};
};

const VisibilityMask& mask_for(MaskSet& set, LayerKind kind, const ModelConfig& cfg,
                               const AugmentedSequence& aug) {
    const int idx = static_cast<int>(kind);
    if (!set.built[idx]) {
        switch (kind) {
            case LayerKind::Full: set.per_kind[idx] = full_causal_mask(aug.size()); break;
            case LayerKind::Ksa: set.per_kind[idx] = ksa_mask(aug, cfg.ksa); break;
            case LayerKind::Swa: set.per_kind[idx] = swa_mask(aug.size(), cfg.swa_window); break;
            case LayerKind::Sca: set.per_kind[idx] = sca_mask(aug.size(), cfg.ksa); break;
        }
        set.built[idx] = true;
    }
    return set.per_kind[idx];
}

}  // namespace

template <typename T>
ForwardTrace<T> forward_pass(const ModelConfig& cfg, const Parameters<T>& params,
                             const std::vector<std::size_t>& tokens, const SummaryMix<T>& mix) {
    cfg.validate();
    for (auto t : tokens)
        if (t >= cfg.vocab)
            throw std::invalid_argument("token id out of range (the summary id is internal)");
    if (mix.projs != nullptr && mix.projs->wq.size() != cfg.layers)
        throw std::invalid_argument("summary projections must cover every layer");

    ForwardTrace<T> trace;
    trace.tokens = tokens;
    trace.aug = cfg.schedule.uses_summaries() ? augment(tokens.size(), cfg.ksa)
                                              : text_only_sequence(tokens.size());
    const AugmentedSequence& aug = trace.aug;
    const std::size_t L = aug.size();
    const std::size_t n_text = tokens.size();
    const std::size_t h = cfg.heads, g = cfg.kv_heads, d = cfg.head_dim;
    const std::size_t dm = cfg.d_model;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const auto group_map = make_group_map(h, g);
    const auto positions = aug.positions();
    const RopeConfig rope{cfg.rope_theta, d};

    Tensor<T> x({L, dm});
    for (std::size_t p = 0; p < L; ++p) {
        const std::size_t row =
            aug.entries[p].role == Role::Text ? tokens[aug.entries[p].index] : cfg.summary_id();
        std::copy(params.embedding.data.begin() + row * dm,
                  params.embedding.data.begin() + (row + 1) * dm, x.data.begin() + p * dm);
    }

    MaskSet masks;
    trace.layers.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerTrace<T>& lt = trace.layers[l];
        const LayerParams<T>& lp = params.layers[l];
        lt.x_in = x;
        rmsnorm_forward(lt.x_in, lp.gamma_attn, lt.normed, lt.inv_rms);

        const Tensor<T>* wsq = mix.projs ? &mix.projs->wq[l] : nullptr;
        const Tensor<T>* wsk = mix.projs ? &mix.projs->wk[l] : nullptr;
        const Tensor<T>* wsv = mix.projs ? &mix.projs->wv[l] : nullptr;
        Tensor<T> qf = project_positional(lt.normed, aug, lp.wq, wsq, mix.lambda);
        Tensor<T> kf = project_positional(lt.normed, aug, lp.wk, wsk, mix.lambda);
        Tensor<T> vf = project_positional(lt.normed, aug, lp.wv, wsv, mix.lambda);
        lt.q = Tensor<T>({L, h, d}, std::move(qf.data));
        lt.k = Tensor<T>({L, g, d}, std::move(kf.data));
        lt.v = Tensor<T>({L, g, d}, std::move(vf.data));
        lt.q = rope_apply(lt.q, positions, rope);
        lt.k = rope_apply(lt.k, positions, rope);

        const VisibilityMask& mask = mask_for(masks, cfg.schedule.kinds[l], cfg, aug);
        lt.probs = Tensor<T>({h, L, L});
        lt.context = Tensor<T>({L, h * d});
        std::vector<T> logits(L);
        for (std::size_t qi = 0; qi < L; ++qi) {
            for (std::size_t hq = 0; hq < h; ++hq) {
                const std::size_t hk = group_map[hq];
                const T* qv = lt.q.data.data() + (qi * h + hq) * d;
                for (std::size_t kv = 0; kv < L; ++kv) {
                    if (!mask.at(qi, kv)) {
                        logits[kv] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* kvec = lt.k.data.data() + (kv * g + hk) * d;
                    T acc = T(0);
                    for (std::size_t xd = 0; xd < d; ++xd) acc += qv[xd] * kvec[xd];
                    logits[kv] = acc * scale;
                }
                softmax_row_inplace(logits.data(), L);
                T* prow = lt.probs.data.data() + (hq * L + qi) * L;
                std::copy(logits.begin(), logits.end(), prow);
                T* ctx = lt.context.data.data() + qi * h * d + hq * d;
                for (std::size_t kv = 0; kv < L; ++kv) {
                    const T w = prow[kv];
                    if (w == T(0)) continue;
                    const T* vv = lt.v.data.data() + (kv * g + hk) * d;
                    for (std::size_t xd = 0; xd < d; ++xd) ctx[xd] += w * vv[xd];
                }
            }
        }

        lt.x_mid = Tensor<T>({L, dm});
        for (std::size_t p = 0; p < L; ++p) {
            T* out_row = lt.x_mid.data.data() + p * dm;
            matvec_wt(lt.context.data.data() + p * h * d, lp.wo, out_row);
            const T* in_row = lt.x_in.data.data() + p * dm;
            for (std::size_t i = 0; i < dm; ++i) out_row[i] += in_row[i];
        }

        rmsnorm_forward(lt.x_mid, lp.gamma_mlp, lt.normed2, lt.inv_rms2);
        lt.mlp_pre = Tensor<T>({L, cfg.d_ff});
        lt.mlp_act = Tensor<T>({L, cfg.d_ff});
        x = Tensor<T>({L, dm});
        for (std::size_t p = 0; p < L; ++p) {
            T* pre = lt.mlp_pre.data.data() + p * cfg.d_ff;
            matvec_wt(lt.normed2.data.data() + p * dm, lp.w1, pre);
            T* act = lt.mlp_act.data.data() + p * cfg.d_ff;
            for (std::size_t i = 0; i < cfg.d_ff; ++i) act[i] = silu(pre[i]);
            T* out_row = x.data.data() + p * dm;
            matvec_wt(act, lp.w2, out_row);
            const T* mid = lt.x_mid.data.data() + p * dm;
            for (std::size_t i = 0; i < dm; ++i) out_row[i] += mid[i];
        }
    }

    trace.pre_final = std::move(x);
    rmsnorm_forward(trace.pre_final, params.gamma_final, trace.final_hidden,
                    trace.inv_rms_final);

    trace.text_hidden = Tensor<T>({n_text, dm});
    for (std::size_t t = 0; t < n_text; ++t) {
        const std::size_t p = aug.text_to_aug[t];
        std::copy(trace.final_hidden.data.begin() + p * dm,
                  trace.final_hidden.data.begin() + (p + 1) * dm,
                  trace.text_hidden.data.begin() + t * dm);
    }

    const Tensor<T>& wh = params.head;
    trace.logits = Tensor<T>({n_text, cfg.vocab});
    for (std::size_t t = 0; t < n_text; ++t) {
        const T* hrow = trace.text_hidden.data.data() + t * dm;
        T* lrow = trace.logits.data.data() + t * cfg.vocab;
        if (cfg.tied_head) {
            for (std::size_t v = 0; v < cfg.vocab; ++v) {
                T acc = T(0);
                const T* er = params.embedding.data.data() + v * dm;
                for (std::size_t i = 0; i < dm; ++i) acc += hrow[i] * er[i];
                lrow[v] = acc;
            }
        } else {
            matvec_wt(hrow, wh, lrow);
        }
    }
    return trace;
}

// --- losses ------------------------------------------------------------------

template <typename T>
T loss_lm(const Tensor<T>& logits, const std::vector<std::int64_t>& targets) {
    if (logits.shape[0] != targets.size())
        throw std::invalid_argument("targets length does not match logits rows");
    const std::size_t rows = logits.shape[0], vocab = logits.shape[1];
    T total = T(0);
    std::size_t supervised = 0;
    std::vector<T> row(vocab);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0) continue;
        if (static_cast<std::size_t>(targets[r]) >= vocab)
            throw std::invalid_argument("target id out of range");
        std::copy(logits.data.begin() + r * vocab, logits.data.begin() + (r + 1) * vocab,
                  row.begin());
        softmax_row_inplace(row.data(), vocab);
        total += -std::log(row[static_cast<std::size_t>(targets[r])]);
        ++supervised;
    }
    if (supervised == 0) return T(0);
    return total / static_cast<T>(supervised);
}

template <typename T>
Tensor<T> loss_lm_backward(const Tensor<T>& logits, const std::vector<std::int64_t>& targets) {
    const std::size_t rows = logits.shape[0], vocab = logits.shape[1];
    Tensor<T> dlogits({rows, vocab});
    std::size_t supervised = 0;
    for (std::size_t r = 0; r < rows; ++r)
        if (targets[r] >= 0) ++supervised;
    if (supervised == 0) return dlogits;
    const T inv = T(1) / static_cast<T>(supervised);
    std::vector<T> row(vocab);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0) continue;
        std::copy(logits.data.begin() + r * vocab, logits.data.begin() + (r + 1) * vocab,
                  row.begin());
        softmax_row_inplace(row.data(), vocab);
        for (std::size_t v = 0; v < vocab; ++v) dlogits.at(r, v) = row[v] * inv;
        dlogits.at(r, static_cast<std::size_t>(targets[r])) -= inv;
    }
    return dlogits;
}

// --- backward ----------------------------------------------------------------

template <typename T>
void backward_pass(const ModelConfig& cfg, const Parameters<T>& params,
                   const ForwardTrace<T>& trace, const SummaryMix<T>& mix,
                   const Tensor<T>& dlogits, const std::vector<Tensor<T>>* dcontext_extra,
                   Parameters<T>& grads, SummaryProjections<T>* proj_grads) {
    const AugmentedSequence& aug = trace.aug;
    const std::size_t L = aug.size();
    const std::size_t n_text = trace.logits.shape[0];
    const std::size_t h = cfg.heads, g = cfg.kv_heads, d = cfg.head_dim;
    const std::size_t dm = cfg.d_model;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const auto group_map = make_group_map(h, g);
    const auto positions = aug.positions();
    const RopeConfig rope{cfg.rope_theta, d};
    if (dcontext_extra && dcontext_extra->size() != cfg.layers)
        throw std::invalid_argument("dcontext_extra must cover every layer");

    // head backward
    Tensor<T> dfinal({L, dm});
    for (std::size_t t = 0; t < n_text; ++t) {
        const std::size_t p = aug.text_to_aug[t];
        const T* dl = dlogits.data.data() + t * cfg.vocab;
        const T* hrow = trace.text_hidden.data.data() + t * dm;
        T* df = dfinal.data.data() + p * dm;
        if (cfg.tied_head) {
            for (std::size_t v = 0; v < cfg.vocab; ++v) {
                const T gld = dl[v];
                const T* er = params.embedding.data.data() + v * dm;
                T* ger = grads.embedding.data.data() + v * dm;
                for (std::size_t i = 0; i < dm; ++i) {
                    df[i] += gld * er[i];
                    ger[i] += gld * hrow[i];
                }
            }
        } else {
            accum_dx(dl, params.head, T(1), df);
            accum_dw(dl, hrow, T(1), grads.head);
        }
    }

    Tensor<T> dx({L, dm});
    rmsnorm_backward(trace.pre_final, params.gamma_final, trace.inv_rms_final, dfinal, dx,
                     grads.gamma_final);

    std::vector<T> dp_row(L);
    for (std::size_t li = cfg.layers; li-- > 0;) {
        const LayerTrace<T>& lt = trace.layers[li];
        const LayerParams<T>& lp = params.layers[li];
        LayerParams<T>& gl = grads.layers[li];

        // mlp block: x_out = x_mid + W2 silu(W1 normed2)
        Tensor<T> dx_mid = dx;  // residual path
        {
            Tensor<T> dnormed2({L, dm});
            for (std::size_t p = 0; p < L; ++p) {
                const T* dout = dx.data.data() + p * dm;
                const T* act = lt.mlp_act.data.data() + p * cfg.d_ff;
                accum_dw(dout, act, T(1), gl.w2);
                std::vector<T> dact(cfg.d_ff, T(0));
                accum_dx(dout, lp.w2, T(1), dact.data());
                const T* pre = lt.mlp_pre.data.data() + p * cfg.d_ff;
                for (std::size_t i = 0; i < cfg.d_ff; ++i) dact[i] *= silu_grad(pre[i]);
                accum_dw(dact.data(), lt.normed2.data.data() + p * dm, T(1), gl.w1);
                accum_dx(dact.data(), lp.w1, T(1), dnormed2.data.data() + p * dm);
            }
            rmsnorm_backward(lt.x_mid, lp.gamma_mlp, lt.inv_rms2, dnormed2, dx_mid,
                             gl.gamma_mlp);
        }

        // attention block: x_mid = x_in + Wo context
        Tensor<T> dcontext({L, h * d});
        for (std::size_t p = 0; p < L; ++p) {
            const T* dmid = dx_mid.data.data() + p * dm;
            accum_dw(dmid, lt.context.data.data() + p * h * d, T(1), gl.wo);
            accum_dx(dmid, lp.wo, T(1), dcontext.data.data() + p * h * d);
        }
        if (dcontext_extra)
            for (std::size_t i = 0; i < dcontext.size(); ++i)
                dcontext.data[i] += (*dcontext_extra)[li].data[i];

        Tensor<T> dq({L, h, d}), dk({L, g, d}), dv({L, g, d});
        for (std::size_t hq = 0; hq < h; ++hq) {
            const std::size_t hk = group_map[hq];
            for (std::size_t qi = 0; qi < L; ++qi) {
                const T* prow = lt.probs.data.data() + (hq * L + qi) * L;
                const T* dctx = dcontext.data.data() + qi * h * d + hq * d;
                T dot_sum = T(0);
                for (std::size_t kv = 0; kv < L; ++kv) {
                    if (prow[kv] == T(0)) {
                        dp_row[kv] = T(0);
                        continue;
                    }
                    const T* vv = lt.v.data.data() + (kv * g + hk) * d;
                    T acc = T(0);
                    for (std::size_t xd = 0; xd < d; ++xd) acc += dctx[xd] * vv[xd];
                    dp_row[kv] = acc;
                    dot_sum += acc * prow[kv];
                }
                const T* qv = lt.q.data.data() + (qi * h + hq) * d;
                T* dqv = dq.data.data() + (qi * h + hq) * d;
                for (std::size_t kv = 0; kv < L; ++kv) {
                    const T p = prow[kv];
                    if (p == T(0)) continue;
                    const T ds = p * (dp_row[kv] - dot_sum) * scale;
                    const T* kvec = lt.k.data.data() + (kv * g + hk) * d;
                    T* dkv = dk.data.data() + (kv * g + hk) * d;
                    T* dvv = dv.data.data() + (kv * g + hk) * d;
                    for (std::size_t xd = 0; xd < d; ++xd) {
                        dqv[xd] += ds * kvec[xd];
                        dkv[xd] += ds * qv[xd];
                        dvv[xd] += p * dctx[xd];
                    }
                }
            }
        }

        // rope is an orthogonal rotation; its adjoint rotates by -position
        std::vector<std::int64_t> neg(positions.size());
        for (std::size_t i = 0; i < positions.size(); ++i) neg[i] = -positions[i];
        dq = rope_apply(dq, neg, rope);
        dk = rope_apply(dk, neg, rope);

        Tensor<T> dqf({L, h * d}, std::move(dq.data));
        Tensor<T> dkf({L, g * d}, std::move(dk.data));
        Tensor<T> dvf({L, g * d}, std::move(dv.data));
        Tensor<T> dnormed({L, dm});
        const Tensor<T>* wsq = mix.projs ? &mix.projs->wq[li] : nullptr;
        const Tensor<T>* wsk = mix.projs ? &mix.projs->wk[li] : nullptr;
        const Tensor<T>* wsv = mix.projs ? &mix.projs->wv[li] : nullptr;
        Tensor<T>* gsq = proj_grads ? &proj_grads->wq[li] : nullptr;
        Tensor<T>* gsk = proj_grads ? &proj_grads->wk[li] : nullptr;
        Tensor<T>* gsv = proj_grads ? &proj_grads->wv[li] : nullptr;
        project_rows_backward(lt.normed, aug, lp.wq, wsq, mix.lambda, dqf, gl.wq, gsq, dnormed);
        project_rows_backward(lt.normed, aug, lp.wk, wsk, mix.lambda, dkf, gl.wk, gsk, dnormed);
        project_rows_backward(lt.normed, aug, lp.wv, wsv, mix.lambda, dvf, gl.wv, gsv, dnormed);

        Tensor<T> dx_in = dx_mid;  // residual path
        rmsnorm_backward(lt.x_in, lp.gamma_attn, lt.inv_rms, dnormed, dx_in, gl.gamma_attn);
        dx = std::move(dx_in);
    }

    // embedding scatter: the summary row collects every summary position
    for (std::size_t p = 0; p < L; ++p) {
        const std::size_t row = aug.entries[p].role == Role::Text
                                    ? trace.tokens[aug.entries[p].index]
                                    : cfg.summary_id();
        T* ger = grads.embedding.data.data() + row * dm;
        const T* dxr = dx.data.data() + p * dm;
        for (std::size_t i = 0; i < dm; ++i) ger[i] += dxr[i];
    }
}

// --- optimizer ---------------------------------------------------------------

template <typename T>
Adam<T>::Adam(const AdamConfig& cfg, const std::vector<Tensor<T>*>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto* p : params) {
        m_.emplace_back(p->size(), T(0));
        v_.emplace_back(p->size(), T(0));
    }
}

template <typename T>
void Adam<T>::step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw std::invalid_argument("adam parameter list changed");
    ++t_;
    double sq = 0.0;
    for (const auto* gt : grads)
        for (const auto& g : gt->data) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    const double clip =
        (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = m_[i];
        auto& v = v_[i];
        auto& p = params[i]->data;
        const auto& g = grads[i]->data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = static_cast<double>(g[j]) * clip;
            const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
            const double vj =
                cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update =
                cfg_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
            p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
        }
    }
}

// --- synthetic tasks ----------------------------------------------------------

TaskSample gen_copy_sample(Rng& rng, std::size_t vocab, std::size_t span) {
    if (vocab < 4) throw std::invalid_argument("copy task needs vocab >= 4");
    const std::size_t bos = 0, sep = 1;
    TaskSample s;
    const std::size_t n = 2 * span + 2;
    s.tokens.resize(n);
    s.targets.assign(n, -1);
    s.tokens[0] = bos;
    for (std::size_t i = 0; i < span; ++i)
        s.tokens[1 + i] = 2 + rng.uniform_int(vocab - 2);
    s.tokens[span + 1] = sep;
    for (std::size_t i = 0; i < span; ++i) {
        s.tokens[span + 2 + i] = s.tokens[1 + i];
        // position preceding each copied token predicts it
        s.targets[span + 1 + i] = static_cast<std::int64_t>(s.tokens[1 + i]);
    }
    return s;
}

TaskSample gen_distant_recall_sample(Rng& rng, std::size_t vocab, std::size_t chunk_size,
                                     const RecallTaskConfig& task) {
    const std::size_t n = task.seq_len;
    if (n < task.pair_max_pos + 4) throw std::invalid_argument("recall sequence too short");
    TaskSample s;
    s.tokens.resize(n);
    s.targets.assign(n, -1);
    const std::size_t key = rng.uniform_int(vocab);
    const std::size_t value = rng.uniform_int(vocab);
    // keep the pair inside one chunk so a single summary can carry it
    std::size_t pair_pos;
    do {
        pair_pos = rng.uniform_int(task.pair_max_pos);
    } while (chunk_size > 1 && pair_pos % chunk_size == chunk_size - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t f = rng.uniform_int(vocab - 1);
        if (f >= key) ++f;  // filler never collides with the key
        s.tokens[i] = f;
    }
    s.tokens[pair_pos] = key;
    s.tokens[pair_pos + 1] = value;
    s.tokens[n - 1] = key;
    s.targets[n - 1] = static_cast<std::int64_t>(value);
    return s;
}

// --- training ----------------------------------------------------------------

namespace {

TaskSample draw_sample(const std::string& task, Rng& rng, const ModelConfig& cfg,
                       const TrainConfig& tc) {
    if (task == "copy") return gen_copy_sample(rng, cfg.vocab, tc.copy_span);
    if (task == "distant-recall")
        return gen_distant_recall_sample(rng, cfg.vocab, cfg.ksa.chunk_size, tc.recall);
    throw std::invalid_argument("unknown task: " + task);
}

template <typename T>
double eval_accuracy(const ModelConfig& cfg, const Parameters<T>& params,
                     const TrainConfig& tc, std::uint64_t eval_seed) {
    Rng rng(eval_seed);
    std::size_t correct = 0, total = 0;
    for (std::size_t s = 0; s < tc.eval_samples; ++s) {
        const TaskSample sample = draw_sample(tc.task, rng, cfg, tc);
        const auto trace = forward_pass(cfg, params, sample.tokens);
        for (std::size_t r = 0; r < sample.targets.size(); ++r) {
            if (sample.targets[r] < 0) continue;
            const T* row = trace.logits.data.data() + r * cfg.vocab;
            std::size_t best = 0;
            for (std::size_t v = 1; v < cfg.vocab; ++v)
                if (row[v] > row[best]) best = v;
            correct += best == static_cast<std::size_t>(sample.targets[r]);
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

template <typename T>
TrainResult train(const ModelConfig& cfg, const TrainConfig& tc) {
    Rng init_rng(cfg.seed);
    Parameters<T> params = Parameters<T>::init(cfg, init_rng);
    Parameters<T> grads = Parameters<T>::zeros_like(params);

    std::vector<Tensor<T>*> pptrs, gptrs;
    for (auto& g : params.groups()) pptrs.push_back(g.second);
    for (auto& g : grads.groups()) gptrs.push_back(g.second);
    Adam<T> opt(tc.adam, pptrs);

    Rng data_rng(tc.seed * 0x9e3779b9ULL + 1);
    TrainResult result;
    for (std::size_t step = 1; step <= tc.steps; ++step) {
        for (auto* g : gptrs) std::fill(g->data.begin(), g->data.end(), T(0));
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < tc.batch; ++b) {
            const TaskSample sample = draw_sample(tc.task, data_rng, cfg, tc);
            const auto trace = forward_pass(cfg, params, sample.tokens);
            const T loss = loss_lm(trace.logits, sample.targets);
            loss_sum += static_cast<double>(loss);
            Tensor<T> dlogits = loss_lm_backward(trace.logits, sample.targets);
            backward_pass<T>(cfg, params, trace, SummaryMix<T>{}, dlogits, nullptr, grads, nullptr);
        }
        const double loss = loss_sum / static_cast<double>(tc.batch);
        if (!std::isfinite(loss))
            throw std::runtime_error("training diverged (non-finite loss) at step " +
                                     std::to_string(step));
        const T inv_batch = T(1) / static_cast<T>(tc.batch);
        for (auto* g : gptrs)
            for (auto& x : g->data) x *= inv_batch;
        opt.step(pptrs, gptrs);

        if (step % tc.eval_every == 0 || step == tc.steps) {
            const double acc = eval_accuracy(cfg, params, tc, tc.seed * 7919ULL + step);
            result.metrics.push_back({step, loss, acc});
        }
    }
    result.final_accuracy =
        eval_accuracy(cfg, params, tc, tc.seed * 7919ULL + tc.steps + 1);
    return result;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows, const std::string& arch,
                           std::uint64_t seed) {
    std::ostringstream os;
    os << "step,loss,accuracy,arch,seed\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%s,%llu\n", r.step, r.loss, r.accuracy,
                      arch.c_str(), static_cast<unsigned long long>(seed));
        os << buf;
    }
    return os.str();
}

// --- gradient verification -----------------------------------------------------

GradCheckReport grad_check(const ModelConfig& cfg, const std::vector<std::size_t>& tokens,
                           const std::vector<std::int64_t>& targets, double eps,
                           std::size_t max_probes, std::uint64_t seed) {
    using T = double;
    Rng init_rng(cfg.seed);
    Parameters<T> params = Parameters<T>::init(cfg, init_rng);
    Parameters<T> grads = Parameters<T>::zeros_like(params);

    const auto trace = forward_pass(cfg, params, tokens);
    const Tensor<T> dlogits = loss_lm_backward(trace.logits, targets);
    backward_pass<T>(cfg, params, trace, SummaryMix<T>{}, dlogits, nullptr, grads, nullptr);

    auto loss_at = [&]() {
        const auto t2 = forward_pass(cfg, params, tokens);
        return loss_lm(t2.logits, targets);
    };

    GradCheckReport report;
    Rng probe_rng(seed);
    auto pgroups = params.groups();
    auto ggroups = grads.groups();
    for (std::size_t gi = 0; gi < pgroups.size(); ++gi) {
        Tensor<T>* pt = pgroups[gi].second;
        const Tensor<T>* gt = ggroups[gi].second;
        std::vector<std::size_t> probes;
        if (pt->size() <= max_probes) {
            probes.resize(pt->size());
            for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = i;
        } else {
            probes.resize(max_probes);
            for (auto& p : probes) p = probe_rng.uniform_int(pt->size());
        }
        GroupError ge{pgroups[gi].first, 0.0, 0.0};
        for (const auto& g : gt->data)
            ge.max_abs_grad = std::max(ge.max_abs_grad, std::abs(static_cast<double>(g)));
        for (std::size_t idx : probes) {
            const T saved = pt->data[idx];
            pt->data[idx] = saved + static_cast<T>(eps);
            const double lp = loss_at();
            pt->data[idx] = saved - static_cast<T>(eps);
            const double lm = loss_at();
            pt->data[idx] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = static_cast<double>(gt->data[idx]);
            const double rel =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
            ge.max_rel_err = std::max(ge.max_rel_err, rel);
        }
        if (ge.max_rel_err > report.max_rel_err) {
            report.max_rel_err = ge.max_rel_err;
            report.worst_group = ge.name;
        }
        report.groups.push_back(ge);
    }
    const std::size_t dm = cfg.d_model;
    for (std::size_t i = 0; i < dm; ++i)
        report.summary_embedding_grad_max =
            std::max(report.summary_embedding_grad_max,
                     std::abs(static_cast<double>(
                         grads.embedding.data[cfg.summary_id() * dm + i])));
    return report;
}

// --- explicit instantiations ---------------------------------------------------

template Tensor<float> project_positional(const Tensor<float>&, const AugmentedSequence&,
                                          const Tensor<float>&, const Tensor<float>*, float);
template Tensor<double> project_positional(const Tensor<double>&, const AugmentedSequence&,
                                           const Tensor<double>&, const Tensor<double>*,
                                           double);
template struct Parameters<float>;
template struct Parameters<double>;
template struct SummaryProjections<float>;
template struct SummaryProjections<double>;
template class Adam<float>;
template class Adam<double>;
template ForwardTrace<float> forward_pass(const ModelConfig&, const Parameters<float>&,
                                          const std::vector<std::size_t>&,
                                          const SummaryMix<float>&);
template ForwardTrace<double> forward_pass(const ModelConfig&, const Parameters<double>&,
                                           const std::vector<std::size_t>&,
                                           const SummaryMix<double>&);
template float loss_lm(const Tensor<float>&, const std::vector<std::int64_t>&);
template double loss_lm(const Tensor<double>&, const std::vector<std::int64_t>&);
template Tensor<float> loss_lm_backward(const Tensor<float>&,
                                        const std::vector<std::int64_t>&);
template Tensor<double> loss_lm_backward(const Tensor<double>&,
                                         const std::vector<std::int64_t>&);
template void backward_pass(const ModelConfig&, const Parameters<float>&,
                            const ForwardTrace<float>&, const SummaryMix<float>&,
                            const Tensor<float>&, const std::vector<Tensor<float>>*,
                            Parameters<float>&, SummaryProjections<float>*);
template void backward_pass(const ModelConfig&, const Parameters<double>&,
                            const ForwardTrace<double>&, const SummaryMix<double>&,
                            const Tensor<double>&, const std::vector<Tensor<double>>*,
                            Parameters<double>&, SummaryProjections<double>*);
template TrainResult train<float>(const ModelConfig&, const TrainConfig&);
template TrainResult train<double>(const ModelConfig&, const TrainConfig&);

}  // namespace ksa

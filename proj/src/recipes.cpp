#include "ksa/recipes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ksa {

namespace {
constexpr double kKlProbFloor = 1e-12;
}

void AnnealSchedule::validate() const {
    if (s_start >= s_end)
        throw std::invalid_argument("anneal schedule needs s_start < s_end");
}

double anneal_lambda(std::size_t s, const AnnealSchedule& sched) {
    sched.validate();
    if (s <= sched.s_start) return 1.0;
    if (s >= sched.s_end) return 0.0;
    return 1.0 - static_cast<double>(s - sched.s_start) /
                     static_cast<double>(sched.s_end - sched.s_start);
}

template <typename T>
StudentQkv<T> student_qkv(const Tensor<T>& hidden, const LayerParams<T>& layer,
                          const SummaryProjections<T>& projs, std::size_t layer_index,
                          const AugmentedSequence& aug) {
    return interpolated_qkv(hidden, layer, projs, layer_index, aug, T(1));
}

template <typename T>
StudentQkv<T> interpolated_qkv(const Tensor<T>& hidden, const LayerParams<T>& layer,
                               const SummaryProjections<T>& projs, std::size_t layer_index,
                               const AugmentedSequence& aug, T lambda) {
    if (layer_index >= projs.wq.size())
        throw std::invalid_argument("summary projection layer index out of range");
    StudentQkv<T> out;
    out.q = project_positional(hidden, aug, layer.wq, &projs.wq[layer_index], lambda);
    out.k = project_positional(hidden, aug, layer.wk, &projs.wk[layer_index], lambda);
    out.v = project_positional(hidden, aug, layer.wv, &projs.wv[layer_index], lambda);
    return out;
}

template <typename T>
T mse_align(const std::vector<Tensor<T>>& teacher_outputs,
            const std::vector<Tensor<T>>& student_outputs,
            const std::vector<std::size_t>& text_to_aug) {
    if (teacher_outputs.size() != student_outputs.size())
        throw std::invalid_argument("teacher/student layer count mismatch");
    const std::size_t layers = teacher_outputs.size();
    const std::size_t n_text = text_to_aug.size();
    if (layers == 0 || n_text == 0) return T(0);
    T total = T(0);
    for (std::size_t l = 0; l < layers; ++l) {
        const Tensor<T>& o = teacher_outputs[l];
        const Tensor<T>& ohat = student_outputs[l];
        if (o.shape[0] != n_text || o.shape[1] != ohat.shape[1])
            throw std::invalid_argument("aligned output shape mismatch");
        const std::size_t width = o.shape[1];
        for (std::size_t t = 0; t < n_text; ++t) {
            const T* a = o.data.data() + t * width;
            const T* b = ohat.data.data() + text_to_aug[t] * width;
            for (std::size_t j = 0; j < width; ++j) {
                const T diff = a[j] - b[j];
                total += diff * diff;
            }
        }
    }
    return total / (static_cast<T>(layers) * static_cast<T>(n_text));
}

namespace {

// KL(p || p_hat) per row from logits, student floored before the log.
template <typename T>
T kl_rows_from_logits(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits) {
    if (teacher_logits.shape != student_logits.shape)
        throw std::invalid_argument("KL logits shape mismatch");
    const std::size_t rows = teacher_logits.shape[0], vocab = teacher_logits.shape[1];
    if (rows == 0) return T(0);
    std::vector<T> p(vocab), phat(vocab);
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(teacher_logits.data.begin() + r * vocab,
                  teacher_logits.data.begin() + (r + 1) * vocab, p.begin());
        std::copy(student_logits.data.begin() + r * vocab,
                  student_logits.data.begin() + (r + 1) * vocab, phat.begin());
        softmax_row_inplace(p.data(), vocab);
        softmax_row_inplace(phat.data(), vocab);
        for (std::size_t v = 0; v < vocab; ++v) {
            if (p[v] == T(0)) continue;
            const T q = std::max(phat[v], static_cast<T>(kKlProbFloor));
            total += p[v] * std::log(p[v] / q);
        }
    }
    return total / static_cast<T>(rows);
}

}  // namespace

template <typename T>
T kl_logits(const Tensor<T>& teacher_hidden, const Tensor<T>& student_hidden,
            const Tensor<T>& w_head) {
    Tensor<T> tl = matmul(teacher_hidden, transpose(w_head));
    Tensor<T> sl = matmul(student_hidden, transpose(w_head));
    return kl_rows_from_logits(tl, sl);
}

// --- pipeline ------------------------------------------------------------------

ModelConfig teacher_config(const ModelConfig& student_cfg) {
    ModelConfig t = student_cfg;
    t.schedule = LayerSchedule::uniform(student_cfg.layers, LayerKind::Full);
    return t;
}

template <typename T>
TeacherActivations<T> teacher_forward(const ModelConfig& student_cfg,
                                      const Parameters<T>& params,
                                      const std::vector<std::size_t>& tokens) {
    const ModelConfig tcfg = teacher_config(student_cfg);
    const auto trace = forward_pass(tcfg, params, tokens);
    TeacherActivations<T> acts;
    acts.contexts.reserve(trace.layers.size());
    for (const auto& lt : trace.layers) acts.contexts.push_back(lt.context);
    acts.logits = trace.logits;
    return acts;
}

template <typename T>
DistillLosses<T> distill_losses(const ModelConfig& cfg, const Parameters<T>& params,
                                const SummaryProjections<T>& projs, T lambda,
                                const std::vector<std::size_t>& tokens,
                                const std::vector<std::int64_t>& targets,
                                const TeacherActivations<T>& teacher,
                                const DistillWeights& weights, Parameters<T>* grads,
                                SummaryProjections<T>* proj_grads) {
    const SummaryMix<T> mix{&projs, lambda};
    const auto trace = forward_pass(cfg, params, tokens, mix);
    const std::size_t n_text = tokens.size();
    const std::size_t vocab = cfg.vocab;

    DistillLosses<T> losses;
    losses.lm = loss_lm(trace.logits, targets);

    std::vector<Tensor<T>> student_contexts;
    student_contexts.reserve(trace.layers.size());
    for (const auto& lt : trace.layers) student_contexts.push_back(lt.context);
    losses.mse = mse_align(teacher.contexts, student_contexts, trace.aug.text_to_aug);
    losses.kl = kl_rows_from_logits(teacher.logits, trace.logits);
    losses.total = total_loss(losses.lm, losses.mse, losses.kl, weights);

    if (grads == nullptr) return losses;

    // d(total)/dlogits: cross-entropy plus beta * (p_hat - p) / n_text
    Tensor<T> dlogits = loss_lm_backward(trace.logits, targets);
    {
        std::vector<T> p(vocab), phat(vocab);
        const T coeff = static_cast<T>(weights.beta) / static_cast<T>(n_text);
        for (std::size_t r = 0; r < n_text; ++r) {
            std::copy(teacher.logits.data.begin() + r * vocab,
                      teacher.logits.data.begin() + (r + 1) * vocab, p.begin());
            std::copy(trace.logits.data.begin() + r * vocab,
                      trace.logits.data.begin() + (r + 1) * vocab, phat.begin());
            softmax_row_inplace(p.data(), vocab);
            softmax_row_inplace(phat.data(), vocab);
            for (std::size_t v = 0; v < vocab; ++v)
                dlogits.at(r, v) += coeff * (phat[v] - p[v]);
        }
    }

    // d(total)/dcontext_l at text rows: 2 alpha (O_hat - O) / (L * |T|)
    std::vector<Tensor<T>> dctx;
    dctx.reserve(cfg.layers);
    const T mse_coeff = static_cast<T>(2.0 * weights.alpha) /
                        (static_cast<T>(cfg.layers) * static_cast<T>(n_text));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        Tensor<T> d({trace.aug.size(), trace.layers[l].context.shape[1]});
        const std::size_t width = d.shape[1];
        for (std::size_t t = 0; t < n_text; ++t) {
            const std::size_t p = trace.aug.text_to_aug[t];
            const T* o = teacher.contexts[l].data.data() + t * width;
            const T* ohat = trace.layers[l].context.data.data() + p * width;
            T* dst = d.data.data() + p * width;
            for (std::size_t j = 0; j < width; ++j) dst[j] = mse_coeff * (ohat[j] - o[j]);
        }
        dctx.push_back(std::move(d));
    }

    backward_pass(cfg, params, trace, mix, dlogits, &dctx, *grads, proj_grads);
    return losses;
}

template <typename T>
DistillResult<T> run_distill(const DistillConfig& dc) {
    const ModelConfig& cfg = dc.model;
    cfg.validate();
    if (!cfg.schedule.uses_summaries())
        throw std::invalid_argument("distillation needs a student schedule with KSA layers");
    dc.anneal.validate();

    Rng init_rng(cfg.seed);
    DistillResult<T> result;
    result.params = Parameters<T>::init(cfg, init_rng);
    result.projs = SummaryProjections<T>::clone_from(result.params);

    Parameters<T> grads = Parameters<T>::zeros_like(result.params);
    SummaryProjections<T> proj_grads = SummaryProjections<T>::clone_from(grads);

    std::vector<Tensor<T>*> pptrs, gptrs;
    for (auto& g : result.params.groups()) pptrs.push_back(g.second);
    for (auto& g : result.projs.groups()) pptrs.push_back(g.second);
    for (auto& g : grads.groups()) gptrs.push_back(g.second);
    for (auto& g : proj_grads.groups()) gptrs.push_back(g.second);
    Adam<T> opt(dc.adam, pptrs);

    Rng data_rng(dc.seed * 0x51f15eedULL + 3);
    for (std::size_t step = 1; step <= dc.steps; ++step) {
        const T lambda = static_cast<T>(anneal_lambda(step, dc.anneal));
        for (auto* g : gptrs) std::fill(g->data.begin(), g->data.end(), T(0));
        DistillLosses<T> avg{T(0), T(0), T(0), T(0)};
        for (std::size_t b = 0; b < dc.batch; ++b) {
            std::vector<std::size_t> tokens(dc.seq_len);
            for (auto& t : tokens) t = data_rng.uniform_int(cfg.vocab);
            std::vector<std::int64_t> targets(dc.seq_len, -1);
            for (std::size_t i = 0; i + 1 < dc.seq_len; ++i)
                targets[i] = static_cast<std::int64_t>(tokens[i + 1]);
            const auto teacher = teacher_forward(cfg, result.params, tokens);
            const auto losses =
                distill_losses(cfg, result.params, result.projs, lambda, tokens, targets,
                               teacher, dc.weights, &grads, &proj_grads);
            avg.lm += losses.lm;
            avg.mse += losses.mse;
            avg.kl += losses.kl;
            avg.total += losses.total;
        }
        const T inv = T(1) / static_cast<T>(dc.batch);
        for (auto* g : gptrs)
            for (auto& x : g->data) x *= inv;
        opt.step(pptrs, gptrs);
        result.metrics.push_back({step, static_cast<double>(lambda),
                                  static_cast<double>(avg.lm * inv),
                                  static_cast<double>(avg.mse * inv),
                                  static_cast<double>(avg.kl * inv),
                                  static_cast<double>(avg.total * inv)});
    }
    return result;
}

std::string distill_metrics_to_csv(const std::vector<DistillMetricsRow>& rows) {
    std::ostringstream os;
    os << "step,lambda,loss_lm,loss_mse,loss_kl,total\n";
    char buf[192];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.step, r.lambda,
                      r.loss_lm, r.loss_mse, r.loss_kl, r.total);
        os << buf;
    }
    return os.str();
}

template <typename T>
bool projections_absorbed(const ModelConfig& cfg, const Parameters<T>& params,
                          const SummaryProjections<T>& projs,
                          const std::vector<std::size_t>& tokens) {
    const auto with = forward_pass(cfg, params, tokens, SummaryMix<T>{&projs, T(0)});
    const auto without = forward_pass(cfg, params, tokens);
    if (with.logits.data.size() != without.logits.data.size()) return false;
    for (std::size_t i = 0; i < with.logits.data.size(); ++i)
        if (with.logits.data[i] != without.logits.data[i]) return false;
    for (std::size_t i = 0; i < with.final_hidden.data.size(); ++i)
        if (with.final_hidden.data[i] != without.final_hidden.data[i]) return false;
    return true;
}

GradCheckReport distill_grad_check(const ModelConfig& cfg, double lambda,
                                   const std::vector<std::size_t>& tokens, double eps,
                                   std::size_t max_probes, std::uint64_t seed) {
    using T = double;
    Rng init_rng(cfg.seed);
    Parameters<T> params = Parameters<T>::init(cfg, init_rng);
    SummaryProjections<T> projs = SummaryProjections<T>::clone_from(params);
    // nudge the projections away from the shared weights so the two paths differ
    Rng nudge(seed + 17);
    for (auto& g : projs.groups())
        for (auto& x : g.second->data) x += static_cast<T>(nudge.normal(0.0, 0.01));

    std::vector<std::int64_t> targets(tokens.size(), -1);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        targets[i] = static_cast<std::int64_t>(tokens[i + 1]);
    const DistillWeights weights;

    // teacher activations are captured once and held fixed through the probes
    const auto teacher = teacher_forward(cfg, params, tokens);

    Parameters<T> grads = Parameters<T>::zeros_like(params);
    SummaryProjections<T> proj_grads = SummaryProjections<T>::clone_from(grads);
    distill_losses(cfg, params, projs, static_cast<T>(lambda), tokens, targets, teacher,
                   weights, &grads, &proj_grads);

    auto loss_at = [&]() {
        return static_cast<double>(distill_losses<T>(cfg, params, projs, static_cast<T>(lambda),
                                                  tokens, targets, teacher, weights, nullptr,
                                                  nullptr)
                                       .total);
    };

    GradCheckReport report;
    Rng probe_rng(seed);
    auto run_group = [&](const std::string& name, Tensor<T>* pt, const Tensor<T>* gt) {
        std::vector<std::size_t> probes;
        if (pt->size() <= max_probes) {
            probes.resize(pt->size());
            for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = i;
        } else {
            probes.resize(max_probes);
            for (auto& p : probes) p = probe_rng.uniform_int(pt->size());
        }
        GroupError ge{name, 0.0, 0.0};
        for (const auto& g : gt->data)
            ge.max_abs_grad = std::max(ge.max_abs_grad, std::abs(g));
        for (std::size_t idx : probes) {
            const T saved = pt->data[idx];
            pt->data[idx] = saved + eps;
            const double lp = loss_at();
            pt->data[idx] = saved - eps;
            const double lm = loss_at();
            pt->data[idx] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = gt->data[idx];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
            ge.max_rel_err = std::max(ge.max_rel_err, rel);
        }
        if (ge.max_rel_err > report.max_rel_err) {
            report.max_rel_err = ge.max_rel_err;
            report.worst_group = ge.name;
        }
        report.groups.push_back(ge);
    };

    auto pg = params.groups();
    auto gg = grads.groups();
    for (std::size_t i = 0; i < pg.size(); ++i) run_group(pg[i].first, pg[i].second, gg[i].second);
    auto spg = projs.groups();
    auto sgg = proj_grads.groups();
    for (std::size_t i = 0; i < spg.size(); ++i)
        run_group(spg[i].first, spg[i].second, sgg[i].second);

    const std::size_t dm = cfg.d_model;
    for (std::size_t i = 0; i < dm; ++i)
        report.summary_embedding_grad_max =
            std::max(report.summary_embedding_grad_max,
                     std::abs(grads.embedding.data[cfg.summary_id() * dm + i]));
    return report;
}

// --- explicit instantiations -----------------------------------------------------

template StudentQkv<float> student_qkv(const Tensor<float>&, const LayerParams<float>&,
                                       const SummaryProjections<float>&, std::size_t,
                                       const AugmentedSequence&);
template StudentQkv<double> student_qkv(const Tensor<double>&, const LayerParams<double>&,
                                        const SummaryProjections<double>&, std::size_t,
                                        const AugmentedSequence&);
template StudentQkv<float> interpolated_qkv(const Tensor<float>&, const LayerParams<float>&,
                                            const SummaryProjections<float>&, std::size_t,
                                            const AugmentedSequence&, float);
template StudentQkv<double> interpolated_qkv(const Tensor<double>&, const LayerParams<double>&,
                                             const SummaryProjections<double>&, std::size_t,
                                             const AugmentedSequence&, double);
template float mse_align(const std::vector<Tensor<float>>&, const std::vector<Tensor<float>>&,
                         const std::vector<std::size_t>&);
template double mse_align(const std::vector<Tensor<double>>&,
                          const std::vector<Tensor<double>>&,
                          const std::vector<std::size_t>&);
template float kl_logits(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template double kl_logits(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template TeacherActivations<float> teacher_forward(const ModelConfig&,
                                                   const Parameters<float>&,
                                                   const std::vector<std::size_t>&);
template TeacherActivations<double> teacher_forward(const ModelConfig&,
                                                    const Parameters<double>&,
                                                    const std::vector<std::size_t>&);
template DistillLosses<float> distill_losses(const ModelConfig&, const Parameters<float>&,
                                             const SummaryProjections<float>&, float,
                                             const std::vector<std::size_t>&,
                                             const std::vector<std::int64_t>&,
                                             const TeacherActivations<float>&,
                                             const DistillWeights&, Parameters<float>*,
                                             SummaryProjections<float>*);
template DistillLosses<double> distill_losses(const ModelConfig&, const Parameters<double>&,
                                              const SummaryProjections<double>&, double,
                                              const std::vector<std::size_t>&,
                                              const std::vector<std::int64_t>&,
                                              const TeacherActivations<double>&,
                                              const DistillWeights&, Parameters<double>*,
                                              SummaryProjections<double>*);
template DistillResult<float> run_distill(const DistillConfig&);
template DistillResult<double> run_distill(const DistillConfig&);
template bool projections_absorbed(const ModelConfig&, const Parameters<float>&,
                                   const SummaryProjections<float>&,
                                   const std::vector<std::size_t>&);
template bool projections_absorbed(const ModelConfig&, const Parameters<double>&,
                                   const SummaryProjections<double>&,
                                   const std::vector<std::size_t>&);

}  // namespace ksa

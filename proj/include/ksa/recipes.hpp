#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ksa/toymodel.hpp"

namespace ksa {

struct AnnealSchedule {
    std::size_t s_start = 0;
    std::size_t s_end = 1;

    void validate() const;
};

// lambda(s): 1 up to s_start, linear down to 0 at s_end, 0 after.
double anneal_lambda(std::size_t s, const AnnealSchedule& sched);

struct DistillWeights {
    double alpha = 1.0;  // layer-wise MSE weight
    double beta = 1.0;   // logit KL weight
};

// Position-specific student projections: text rows use the shared weights,
// summary rows the independent summary matrices.
template <typename T>
struct StudentQkv {
    Tensor<T> q, k, v;
};

template <typename T>
StudentQkv<T> student_qkv(const Tensor<T>& hidden, const LayerParams<T>& layer,
                          const SummaryProjections<T>& projs, std::size_t layer_index,
                          const AugmentedSequence& aug);

template <typename T>
StudentQkv<T> interpolated_qkv(const Tensor<T>& hidden, const LayerParams<T>& layer,
                               const SummaryProjections<T>& projs, std::size_t layer_index,
                               const AugmentedSequence& aug, T lambda);

// (1 / (L * |T|)) sum_l || O_l - O_hat_l|_T ||^2 with the student restricted
// to text rows via text_to_aug.
template <typename T>
T mse_align(const std::vector<Tensor<T>>& teacher_outputs,
            const std::vector<Tensor<T>>& student_outputs,
            const std::vector<std::size_t>& text_to_aug);

// Forward KL(p || p_hat) between the two predictive distributions under the
// shared LM head, averaged over text positions. Student probabilities are
// floored at 1e-12 before the log.
template <typename T>
T kl_logits(const Tensor<T>& teacher_hidden, const Tensor<T>& student_hidden,
            const Tensor<T>& w_head);

template <typename T>
T total_loss(T loss_lm, T loss_mse, T loss_kl, const DistillWeights& w) {
    return loss_lm + static_cast<T>(w.alpha) * loss_mse + static_cast<T>(w.beta) * loss_kl;
}

// --- distillation pipeline ---------------------------------------------------

// Teacher-side activations, captured once per sample and treated as constants
// by the student's gradients (the teacher branch is stop-gradient).
template <typename T>
struct TeacherActivations {
    std::vector<Tensor<T>> contexts;  // per layer [n, h*d]
    Tensor<T> logits;                 // [n, vocab]
};

// Full-attention teacher pass over the raw text sequence with the shared
// weights (no augmentation, no summary projections).
template <typename T>
TeacherActivations<T> teacher_forward(const ModelConfig& student_cfg,
                                      const Parameters<T>& params,
                                      const std::vector<std::size_t>& tokens);

ModelConfig teacher_config(const ModelConfig& student_cfg);

template <typename T>
struct DistillLosses {
    T lm, mse, kl, total;
};

// One student evaluation of the combined objective against fixed teacher
// activations; when grads are non-null, accumulates d(total)/d(params) and
// d(total)/d(projs) via the shared backward engine.
template <typename T>
DistillLosses<T> distill_losses(const ModelConfig& cfg, const Parameters<T>& params,
                                const SummaryProjections<T>& projs, T lambda,
                                const std::vector<std::size_t>& tokens,
                                const std::vector<std::int64_t>& targets,
                                const TeacherActivations<T>& teacher,
                                const DistillWeights& weights, Parameters<T>* grads,
                                SummaryProjections<T>* proj_grads);

struct DistillConfig {
    ModelConfig model;  // student; schedule must contain KSA layers
    std::size_t steps = 200;
    std::size_t batch = 4;
    std::size_t seq_len = 32;
    AnnealSchedule anneal{50, 150};
    DistillWeights weights;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

struct DistillMetricsRow {
    std::size_t step;
    double lambda;
    double loss_lm;
    double loss_mse;
    double loss_kl;
    double total;
};

template <typename T>
struct DistillResult {
    std::vector<DistillMetricsRow> metrics;
    Parameters<T> params;
    SummaryProjections<T> projs;
};

template <typename T>
DistillResult<T> run_distill(const DistillConfig& cfg);

std::string distill_metrics_to_csv(const std::vector<DistillMetricsRow>& rows);

// True when the forward with projections at lambda == 0 is bit-identical to
// the forward with the projections deleted.
template <typename T>
bool projections_absorbed(const ModelConfig& cfg, const Parameters<T>& params,
                          const SummaryProjections<T>& projs,
                          const std::vector<std::size_t>& tokens);

// Finite-difference check of the combined distillation objective, covering
// the shared weights and the summary projections at the given lambda.
GradCheckReport distill_grad_check(const ModelConfig& cfg, double lambda,
                                   const std::vector<std::size_t>& tokens, double eps,
                                   std::size_t max_probes, std::uint64_t seed);

}  // namespace ksa

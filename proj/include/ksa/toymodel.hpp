#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ksa/masking.hpp"
#include "ksa/rng.hpp"
#include "ksa/rope.hpp"
#include "ksa/tensor.hpp"

namespace ksa {

enum class LayerKind : std::uint8_t { Full, Ksa, Swa, Sca };

struct LayerSchedule {
    std::vector<LayerKind> kinds;

    std::size_t size() const { return kinds.size(); }
    bool uses_summaries() const;
    std::size_t count(LayerKind kind) const;

    // ratio R KSA layers per full layer: layer l is Full iff l % (R+1) == R.
    // R == 0 gives pure full attention.
    static LayerSchedule hybrid(std::size_t layers, std::size_t ratio);
    static LayerSchedule uniform(std::size_t layers, LayerKind kind);
};

struct ModelConfig {
    std::size_t layers = 4;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t kv_heads = 4;
    std::size_t head_dim = 16;
    std::size_t d_ff = 128;
    std::size_t vocab = 64;
    KsaConfig ksa{4, 2, 8};
    std::size_t swa_window = 12;  // (C+1)*k by default
    LayerSchedule schedule = LayerSchedule::uniform(4, LayerKind::Ksa);
    double rope_theta = 1e4;
    bool tied_head = false;
    std::uint64_t seed = 0;

    std::size_t summary_id() const { return vocab; }  // extra embedding row
    void validate() const;
};

template <typename T>
struct LayerParams {
    Tensor<T> wq;  // [h*d, d_model]
    Tensor<T> wk;  // [g*d, d_model]
    Tensor<T> wv;  // [g*d, d_model]
    Tensor<T> wo;  // [d_model, h*d]
    Tensor<T> w1;  // [d_ff, d_model]
    Tensor<T> w2;  // [d_model, d_ff]
    Tensor<T> gamma_attn;  // [d_model]
    Tensor<T> gamma_mlp;   // [d_model]
};

template <typename T>
struct Parameters {
    Tensor<T> embedding;  // [vocab+1, d_model]; row `vocab` is the shared summary token
    std::vector<LayerParams<T>> layers;
    Tensor<T> gamma_final;  // [d_model]
    Tensor<T> head;         // [vocab, d_model]; ignored when tied

    static Parameters init(const ModelConfig& cfg, Rng& rng);
    static Parameters zeros_like(const Parameters& other);

    // named views over every tensor, for the optimizer and gradient checks
    std::vector<std::pair<std::string, Tensor<T>*>> groups();
    std::vector<std::pair<std::string, const Tensor<T>*>> groups() const;
};

// Per-KSA-layer independent projections routed through summary positions
// during warm-up; interpolated against the shared weights by lambda and
// removable once lambda reaches 0.
template <typename T>
struct SummaryProjections {
    std::vector<Tensor<T>> wq, wk, wv;  // one triple per layer, shapes match LayerParams

    static SummaryProjections clone_from(const Parameters<T>& params);
    std::vector<std::pair<std::string, Tensor<T>*>> groups();
};

// How summary positions project QKV: null projs means fully shared weights.
// lambda == 1 uses only the summary projections, lambda == 0 takes the exact
// shared-weights code path (so deleting the projections changes nothing).
template <typename T>
struct SummaryMix {
    const SummaryProjections<T>* projs = nullptr;
    T lambda = T(1);
};

template <typename T>
struct LayerTrace {
    Tensor<T> x_in;      // [L, d_model]
    Tensor<T> normed;    // [L, d_model]
    std::vector<T> inv_rms;
    Tensor<T> q, k, v;   // post-rope [L,h,d] / [L,g,d]
    Tensor<T> probs;     // [h, L, L], exactly 0 where masked
    Tensor<T> context;   // [L, h*d]; the attention output O_l used for alignment
    Tensor<T> x_mid;     // [L, d_model]
    Tensor<T> normed2;   // [L, d_model]
    std::vector<T> inv_rms2;
    Tensor<T> mlp_pre;   // [L, d_ff]
    Tensor<T> mlp_act;   // [L, d_ff]
};

template <typename T>
struct ForwardTrace {
    AugmentedSequence aug;
    std::vector<std::size_t> tokens;
    std::vector<LayerTrace<T>> layers;
    Tensor<T> pre_final;     // [L, d_model] before the final norm
    std::vector<T> inv_rms_final;
    Tensor<T> final_hidden;  // [L, d_model]
    Tensor<T> text_hidden;   // [n_text, d_model] rows of final_hidden at text positions
    Tensor<T> logits;        // [n_text, vocab]
};

// Position-routed projection y = x W^T with summary rows mixed against ws by
// lambda. lambda == 0 takes the shared-weights code path exactly.
template <typename T>
Tensor<T> project_positional(const Tensor<T>& hidden, const AugmentedSequence& aug,
                             const Tensor<T>& w, const Tensor<T>* ws, T lambda);

template <typename T>
ForwardTrace<T> forward_pass(const ModelConfig& cfg, const Parameters<T>& params,
                             const std::vector<std::size_t>& tokens,
                             const SummaryMix<T>& mix = {});

// Mean cross-entropy over text positions; targets use -1 for ignored rows.
template <typename T>
T loss_lm(const Tensor<T>& logits, const std::vector<std::int64_t>& targets);

template <typename T>
Tensor<T> loss_lm_backward(const Tensor<T>& logits, const std::vector<std::int64_t>& targets);

// Reverse pass. dlogits feeds the head; dcontext_extra (optional, per layer,
// [L, h*d]) injects gradients directly at each layer's attention output, which
// is how the distillation MSE term reaches intermediate layers.
template <typename T>
void backward_pass(const ModelConfig& cfg, const Parameters<T>& params,
                   const ForwardTrace<T>& trace, const SummaryMix<T>& mix,
                   const Tensor<T>& dlogits, const std::vector<Tensor<T>>* dcontext_extra,
                   Parameters<T>& grads, SummaryProjections<T>* proj_grads);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double clip_norm = 1.0;
};

// Adam over an arbitrary list of tensors (shared weights alone, or shared
// weights plus summary projections during distillation). Gradient clipping
// is by global norm across every tensor in the list.
template <typename T>
class Adam {
public:
    Adam(const AdamConfig& cfg, const std::vector<Tensor<T>*>& params);
    void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads);

private:
    AdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    std::size_t t_ = 0;
};

// --- synthetic tasks -------------------------------------------------------

struct TaskSample {
    std::vector<std::size_t> tokens;
    std::vector<std::int64_t> targets;  // -1 = unsupervised position
};

struct RecallTaskConfig {
    std::size_t seq_len = 48;
    std::size_t pair_max_pos = 8;  // key/value pair lands in [0, pair_max_pos)
};

TaskSample gen_copy_sample(Rng& rng, std::size_t vocab, std::size_t span);
TaskSample gen_distant_recall_sample(Rng& rng, std::size_t vocab, std::size_t chunk_size,
                                     const RecallTaskConfig& task);

struct TrainConfig {
    std::string task = "distant-recall";
    std::size_t steps = 2000;
    std::size_t batch = 16;
    AdamConfig adam;
    std::size_t eval_every = 100;
    std::size_t eval_samples = 128;
    std::uint64_t seed = 0;
    RecallTaskConfig recall;
    std::size_t copy_span = 8;
};

struct MetricsRow {
    std::size_t step;
    double loss;
    double accuracy;
};

struct TrainResult {
    std::vector<MetricsRow> metrics;
    double final_accuracy = 0.0;
};

template <typename T>
TrainResult train(const ModelConfig& cfg, const TrainConfig& tc);

std::string metrics_to_csv(const std::vector<MetricsRow>& rows, const std::string& arch,
                           std::uint64_t seed);

// --- gradient verification -------------------------------------------------

struct GroupError {
    std::string name;
    double max_rel_err;
    double max_abs_grad;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_group;
    std::vector<GroupError> groups;
    double summary_embedding_grad_max = 0.0;  // max |dL/ds| over the summary row
};

// Central finite differences against the analytic gradients (f64). Groups
// larger than max_probes get a seeded random subset of probed indices.
GradCheckReport grad_check(const ModelConfig& cfg, const std::vector<std::size_t>& tokens,
                           const std::vector<std::int64_t>& targets, double eps,
                           std::size_t max_probes, std::uint64_t seed);

}  // namespace ksa

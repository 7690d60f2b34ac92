#include "ksa/equiv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ksa/attention.hpp"
#include "ksa/rng.hpp"

namespace ksa {

MaskKind mask_kind_from_string(const std::string& s) {
    if (s == "full") return MaskKind::Full;
    if (s == "swa") return MaskKind::Swa;
    if (s == "sca") return MaskKind::Sca;
    if (s == "ksa") return MaskKind::Ksa;
    throw std::invalid_argument("unknown mask kind: " + s);
}

const char* mask_kind_name(MaskKind kind) {
    switch (kind) {
        case MaskKind::Full: return "full";
        case MaskKind::Swa: return "swa";
        case MaskKind::Sca: return "sca";
        case MaskKind::Ksa: return "ksa";
    }
    return "?";
}

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::vector<std::size_t> shape) {
    Tensor<T> t(std::move(shape));
    rng.fill_normal(t.data, 0.0, 1.0);
    return t;
}

template <typename T>
Tensor<T> slice_row(const Tensor<T>& t, std::size_t row) {
    const std::size_t h = t.shape[1], d = t.shape[2];
    Tensor<T> out({h, d});
    std::copy(t.data.begin() + row * h * d, t.data.begin() + (row + 1) * h * d,
              out.data.begin());
    return out;
}

template <typename T>
double max_abs_row_delta(const Tensor<T>& full, std::size_t row, const Tensor<T>& single) {
    const std::size_t stride = full.shape[1] * full.shape[2];
    double m = 0.0;
    for (std::size_t i = 0; i < stride; ++i) {
        const double d = std::abs(static_cast<double>(full.data[row * stride + i]) -
                                  static_cast<double>(single.data[i]));
        if (d > m) m = d;
    }
    return m;
}

template <typename T>
double run_decode_equiv(const EquivConfig& cfg, bool rotate, std::size_t shift_chunks) {
    const AugmentedSequence aug = augment(cfg.n, cfg.ksa);
    const std::size_t L = aug.size();
    if (L == 0) return 0.0;

    Rng rng(cfg.seed);
    Tensor<T> q = random_tensor<T>(rng, {L, cfg.heads, cfg.head_dim});
    Tensor<T> k = random_tensor<T>(rng, {L, cfg.kv_heads, cfg.head_dim});
    Tensor<T> v = random_tensor<T>(rng, {L, cfg.kv_heads, cfg.head_dim});

    const RopeConfig rope{cfg.rope_theta, cfg.head_dim};
    const auto positions = aug.positions();
    q = rope_apply(q, positions, rope);
    k = rope_apply(k, positions, rope);

    AttentionInputs<T> in{q, k, v,
                          static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim))),
                          make_group_map(cfg.heads, cfg.kv_heads)};
    const Tensor<T> prefill = dense_masked_attention(in, ksa_mask(aug, cfg.ksa));

    KsaKvCache<T> cache(cfg.ksa, cfg.n, cfg.heads, cfg.kv_heads, cfg.head_dim);
    double max_delta = 0.0;
    std::size_t next_summary = 0;  // index into aug.summary_to_aug, tracked by the provider
    SummaryProvider<T> provider = [&](std::size_t chunk_index,
                                      std::int64_t inherited) -> SummaryStep<T> {
        const std::size_t a = aug.summary_to_aug.at(chunk_index);
        if (aug.entries[a].position != static_cast<std::size_t>(inherited))
            throw std::runtime_error("inherited position mismatch");
        next_summary = chunk_index + 1;
        return {slice_row(q, a), slice_row(k, a), slice_row(v, a)};
    };

    for (std::size_t t = 0; t < cfg.n; ++t) {
        const std::size_t a = aug.text_to_aug[t];
        auto res = cache.decode_attention(slice_row(q, a), slice_row(k, a), slice_row(v, a),
                                          static_cast<std::int64_t>(t), provider);
        if (res.finalized) {
            const std::size_t sa = aug.summary_to_aug.at(next_summary - 1);
            max_delta = std::max(max_delta, max_abs_row_delta(prefill, sa, res.summary_out));
            if (rotate) cache.rotate_ring(shift_chunks);
        }
        max_delta = std::max(max_delta, max_abs_row_delta(prefill, a, res.out));
    }
    return max_delta;
}

}  // namespace

template <typename T>
double decode_prefill_max_delta(const EquivConfig& cfg) {
    return run_decode_equiv<T>(cfg, false, 0);
}

template <typename T>
double decode_prefill_max_delta_rotated(const EquivConfig& cfg, std::size_t shift_chunks) {
    return run_decode_equiv<T>(cfg, true, shift_chunks);
}

template <typename T>
double block_sparse_max_delta(MaskKind kind, std::size_t n, std::size_t block_size,
                              const EquivConfig& cfg) {
    AugmentedSequence aug =
        kind == MaskKind::Ksa ? augment(n, cfg.ksa) : text_only_sequence(n);
    VisibilityMask mask;
    switch (kind) {
        case MaskKind::Full: mask = full_causal_mask(n); break;
        case MaskKind::Swa: mask = swa_mask(n, (cfg.ksa.sliding_chunks + 1) * cfg.ksa.chunk_size); break;
        case MaskKind::Sca: mask = sca_mask(n, cfg.ksa); break;
        case MaskKind::Ksa: mask = ksa_mask(aug, cfg.ksa); break;
    }
    const std::size_t L = mask.size();
    if (L == 0) return 0.0;

    Rng rng(cfg.seed);
    Tensor<T> q = random_tensor<T>(rng, {L, cfg.heads, cfg.head_dim});
    Tensor<T> k = random_tensor<T>(rng, {L, cfg.kv_heads, cfg.head_dim});
    Tensor<T> v = random_tensor<T>(rng, {L, cfg.kv_heads, cfg.head_dim});
    const RopeConfig rope{cfg.rope_theta, cfg.head_dim};
    const auto positions = aug.positions();
    q = rope_apply(q, positions, rope);
    k = rope_apply(k, positions, rope);

    AttentionInputs<T> in{q, k, v,
                          static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim))),
                          make_group_map(cfg.heads, cfg.kv_heads)};
    const Tensor<T> dense = dense_masked_attention(in, mask);
    const Tensor<T> sparse = block_sparse_attention(in, blockify(mask, block_size));
    double max_delta = 0.0;
    for (std::size_t i = 0; i < dense.size(); ++i)
        max_delta = std::max(max_delta, std::abs(static_cast<double>(dense.data[i]) -
                                                 static_cast<double>(sparse.data[i])));
    return max_delta;
}

template double decode_prefill_max_delta<float>(const EquivConfig&);
template double decode_prefill_max_delta<double>(const EquivConfig&);
template double decode_prefill_max_delta_rotated<float>(const EquivConfig&, std::size_t);
template double decode_prefill_max_delta_rotated<double>(const EquivConfig&, std::size_t);
template double block_sparse_max_delta<float>(MaskKind, std::size_t, std::size_t,
                                              const EquivConfig&);
template double block_sparse_max_delta<double>(MaskKind, std::size_t, std::size_t,
                                               const EquivConfig&);

}  // namespace ksa

#include "ksa/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ksa {

std::vector<std::size_t> make_group_map(std::size_t heads, std::size_t kv_heads) {
    if (kv_heads == 0 || heads % kv_heads != 0)
        throw std::invalid_argument("query heads must be divisible by kv heads");
    const std::size_t group = heads / kv_heads;
    std::vector<std::size_t> map(heads);
    for (std::size_t h = 0; h < heads; ++h) map[h] = h / group;
    return map;
}

template <typename T>
void AttentionInputs<T>::validate(std::size_t mask_size) const {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
        throw std::invalid_argument("attention inputs must be [L, heads, d]");
    if (q.shape[0] != mask_size || k.shape[0] != mask_size || v.shape[0] != mask_size)
        throw std::invalid_argument("attention sequence length does not match mask size");
    if (k.shape != v.shape) throw std::invalid_argument("K/V shape mismatch");
    if (q.shape[2] != k.shape[2]) throw std::invalid_argument("head_dim mismatch");
    if (group_map.size() != q.shape[1])
        throw std::invalid_argument("group_map must cover every query head");
    for (auto g : group_map)
        if (g >= k.shape[1]) throw std::invalid_argument("group_map kv head out of range");
    if (!(scale > T(0))) throw std::invalid_argument("attention scale must be positive");
}

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t d) {
    T acc = T(0);
    for (std::size_t i = 0; i < d; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

template <typename T>
Tensor<T> dense_masked_attention(const AttentionInputs<T>& in, const VisibilityMask& mask) {
    in.validate(mask.size());
    const std::size_t L = in.seq_len(), h = in.heads(), d = in.head_dim();
    const std::size_t h_kv = in.kv_heads();
    Tensor<T> out({L, h, d});
    std::vector<T> logits(L);
    std::vector<std::size_t> visible;
    visible.reserve(L);
    for (std::size_t qi = 0; qi < L; ++qi) {
        visible.clear();
        for (std::size_t kv = 0; kv < L; ++kv)
            if (mask.at(qi, kv)) visible.push_back(kv);
        if (visible.empty()) throw std::runtime_error("empty attention row");
        for (std::size_t hq = 0; hq < h; ++hq) {
            const std::size_t hk = in.group_map[hq];
            const T* qv = in.q.data.data() + (qi * h + hq) * d;
            for (std::size_t m = 0; m < visible.size(); ++m) {
                const T* kv = in.k.data.data() + (visible[m] * h_kv + hk) * d;
                logits[m] = dot(qv, kv, d) * in.scale;
            }
            softmax_row_inplace(logits.data(), visible.size());
            T* o = out.data.data() + (qi * h + hq) * d;
            for (std::size_t m = 0; m < visible.size(); ++m) {
                const T w = logits[m];
                const T* vv = in.v.data.data() + (visible[m] * h_kv + hk) * d;
                for (std::size_t x = 0; x < d; ++x) o[x] += w * vv[x];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> block_sparse_attention(const AttentionInputs<T>& in, const BlockSparseMask& bmask) {
    in.validate(bmask.mask_size);
    const std::size_t L = in.seq_len(), h = in.heads(), d = in.head_dim();
    const std::size_t h_kv = in.kv_heads();
    const std::size_t B = bmask.block_size;
    Tensor<T> out({L, h, d});

    // per-query streaming accumulators, reused across one query block's key blocks
    std::vector<T> run_max, run_den, acc;

    std::size_t bi = 0;
    while (bi < bmask.blocks.size()) {
        const std::size_t qb = bmask.blocks[bi].qb;
        std::size_t bend = bi;
        while (bend < bmask.blocks.size() && bmask.blocks[bend].qb == qb) ++bend;

        const std::size_t q_lo = qb * B;
        const std::size_t q_hi = std::min(q_lo + B, L);
        const std::size_t rows = q_hi - q_lo;

        run_max.assign(rows * h, -std::numeric_limits<T>::infinity());
        run_den.assign(rows * h, T(0));
        acc.assign(rows * h * d, T(0));

        for (std::size_t b = bi; b < bend; ++b) {
            const MaskBlock& blk = bmask.blocks[b];
            const bool full = blk.kind == BlockKind::Full;
            const std::size_t kv_lo = blk.kb * B;
            const std::size_t kv_hi = std::min(kv_lo + B, L);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t qi = q_lo + r;
                for (std::size_t kv = kv_lo; kv < kv_hi; ++kv) {
                    if (!full && blk.bits[r * B + (kv - kv_lo)] == 0) continue;
                    for (std::size_t hq = 0; hq < h; ++hq) {
                        const std::size_t hk = in.group_map[hq];
                        const T* qv = in.q.data.data() + (qi * h + hq) * d;
                        const T* kvec = in.k.data.data() + (kv * h_kv + hk) * d;
                        const T logit = dot(qv, kvec, d) * in.scale;
                        T& m = run_max[r * h + hq];
                        T& den = run_den[r * h + hq];
                        T* a = acc.data() + (r * h + hq) * d;
                        if (logit > m) {
                            // rescale history to the new running max
                            const T corr =
                                m == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(m - logit);
                            den *= corr;
                            for (std::size_t x = 0; x < d; ++x) a[x] *= corr;
                            m = logit;
                        }
                        const T w = std::exp(logit - m);
                        den += w;
                        const T* vv = in.v.data.data() + (kv * h_kv + hk) * d;
                        for (std::size_t x = 0; x < d; ++x) a[x] += w * vv[x];
                    }
                }
            }
        }

        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t hq = 0; hq < h; ++hq) {
                const T den = run_den[r * h + hq];
                if (den == T(0)) throw std::runtime_error("empty attention row");
                const T* a = acc.data() + (r * h + hq) * d;
                T* o = out.data.data() + ((q_lo + r) * h + hq) * d;
                for (std::size_t x = 0; x < d; ++x) o[x] = a[x] / den;
            }
        }
        bi = bend;
    }

    // query rows not covered by any block pair have no visible keys
    for (std::size_t qi = 0; qi < L; ++qi) {
        bool covered = false;
        for (const auto& blk : bmask.blocks)
            if (qi >= blk.qb * B && qi < blk.qb * B + B) { covered = true; break; }
        if (!covered) throw std::runtime_error("empty attention row");
    }
    return out;
}

template <typename T>
Tensor<T> attention_probe(const AttentionInputs<T>& in, const VisibilityMask& mask,
                          std::size_t query_index) {
    in.validate(mask.size());
    if (query_index >= mask.size()) throw std::invalid_argument("query index out of range");
    const std::size_t L = in.seq_len(), h = in.heads(), d = in.head_dim();
    const std::size_t h_kv = in.kv_heads();
    Tensor<T> weights({h, L});
    std::vector<T> logits;
    std::vector<std::size_t> visible;
    for (std::size_t kv = 0; kv < L; ++kv)
        if (mask.at(query_index, kv)) visible.push_back(kv);
    if (visible.empty()) throw std::runtime_error("empty attention row");
    logits.resize(visible.size());
    for (std::size_t hq = 0; hq < h; ++hq) {
        const std::size_t hk = in.group_map[hq];
        const T* qv = in.q.data.data() + (query_index * h + hq) * d;
        for (std::size_t m = 0; m < visible.size(); ++m) {
            const T* kvec = in.k.data.data() + (visible[m] * h_kv + hk) * d;
            logits[m] = dot(qv, kvec, d) * in.scale;
        }
        softmax_row_inplace(logits.data(), visible.size());
        for (std::size_t m = 0; m < visible.size(); ++m)
            weights.at(hq, visible[m]) = logits[m];
    }
    return weights;
}

template struct AttentionInputs<float>;
template struct AttentionInputs<double>;
template Tensor<float> dense_masked_attention(const AttentionInputs<float>&,
                                              const VisibilityMask&);
template Tensor<double> dense_masked_attention(const AttentionInputs<double>&,
                                               const VisibilityMask&);
template Tensor<float> block_sparse_attention(const AttentionInputs<float>&,
                                              const BlockSparseMask&);
template Tensor<double> block_sparse_attention(const AttentionInputs<double>&,
                                               const BlockSparseMask&);
template Tensor<float> attention_probe(const AttentionInputs<float>&, const VisibilityMask&,
                                       std::size_t);
template Tensor<double> attention_probe(const AttentionInputs<double>&, const VisibilityMask&,
                                        std::size_t);

}  // namespace ksa

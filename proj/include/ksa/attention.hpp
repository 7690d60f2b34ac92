#pragma once

#include <cstddef>
#include <vector>

#include "ksa/masking.hpp"
#include "ksa/tensor.hpp"

namespace ksa {

// Grouped-query attention inputs over one (possibly augmented) sequence.
// Q is [L, h, d]; K and V are [L, h_kv, d]; group_map assigns each query
// head its kv head.
template <typename T>
struct AttentionInputs {
    Tensor<T> q;
    Tensor<T> k;
    Tensor<T> v;
    T scale;
    std::vector<std::size_t> group_map;

    std::size_t seq_len() const { return q.shape[0]; }
    std::size_t heads() const { return q.shape[1]; }
    std::size_t kv_heads() const { return k.shape[1]; }
    std::size_t head_dim() const { return q.shape[2]; }
    void validate(std::size_t mask_size) const;
};

std::vector<std::size_t> make_group_map(std::size_t heads, std::size_t kv_heads);

// Reference masked attention: materializes each query row's logits over the
// visible keys. This is the oracle the block-sparse path is checked against.
template <typename T>
Tensor<T> dense_masked_attention(const AttentionInputs<T>& in, const VisibilityMask& mask);

// Block-sparse attention: visits only the nonzero block pairs and keeps a
// streaming (running max, running denominator) softmax per query, so the
// dense score matrix is never materialized. Partial blocks apply their
// bitmask; Full blocks skip masking entirely.
template <typename T>
Tensor<T> block_sparse_attention(const AttentionInputs<T>& in, const BlockSparseMask& bmask);

// Post-softmax weights of one query row (head-resolved), for heatmap export.
// Masked keys are exactly 0; the row sums to 1 per head.
template <typename T>
Tensor<T> attention_probe(const AttentionInputs<T>& in, const VisibilityMask& mask,
                          std::size_t query_index);  // -> [h, L]

}  // namespace ksa

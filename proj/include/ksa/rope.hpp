#pragma once

#include <cstdint>
#include <vector>

#include "ksa/tensor.hpp"

namespace ksa {

struct RopeConfig {
    double theta = 1e4;
    std::size_t head_dim = 0;

    void validate() const;
};

// Rotates consecutive dimension pairs (2i, 2i+1) of each head vector by
// angle position * theta^(-2i/head_dim). Pure function; positions may be
// negative (used by the inverse-rotation property tests).
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x,  // [tokens, heads, head_dim]
                     const std::vector<std::int64_t>& positions, const RopeConfig& cfg);

// Rotate one head vector in place by the pair angles for `position`.
template <typename T>
void rope_rotate_inplace(T* head_vec, std::size_t head_dim, double theta, std::int64_t position);

}  // namespace ksa

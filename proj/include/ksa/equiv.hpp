#pragma once

#include <cstdint>
#include <string>

#include "ksa/kvcache.hpp"
#include "ksa/masking.hpp"
#include "ksa/rope.hpp"

namespace ksa {

enum class MaskKind { Full, Swa, Sca, Ksa };

MaskKind mask_kind_from_string(const std::string& s);
const char* mask_kind_name(MaskKind kind);

struct EquivConfig {
    std::size_t n = 32;
    std::size_t heads = 4;
    std::size_t kv_heads = 2;
    std::size_t head_dim = 8;
    KsaConfig ksa{4, 1, 4};
    double rope_theta = 1e4;
    std::uint64_t seed = 0;
};

// Runs the full decode lifecycle against the dense prefill oracle over the
// same randomly generated per-entry Q/K/V. Returns the max |decode - prefill|
// over every text step (and every summary insertion) of the run.
template <typename T>
double decode_prefill_max_delta(const EquivConfig& cfg);

// Same decode run, but with the ring physically rotated by `shift_chunks`
// after every finalize; the output must not change.
template <typename T>
double decode_prefill_max_delta_rotated(const EquivConfig& cfg, std::size_t shift_chunks);

// Max |block_sparse - dense| on random inputs under the given mask family.
template <typename T>
double block_sparse_max_delta(MaskKind kind, std::size_t n, std::size_t block_size,
                              const EquivConfig& cfg);

}  // namespace ksa

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ksa/masking.hpp"
#include "ksa/tensor.hpp"

namespace ksa {

struct CacheRange {
    std::size_t start;  // slot offset into the arena
    std::size_t len;
};

// Visible-KV read: the contiguous arena range(s) the next query attends,
// plus the position id of every covered entry (in range order).
struct SliceDescriptor {
    std::vector<CacheRange> ranges;  // at most 2; exactly 1 with this layout
    std::vector<std::int64_t> positions;

    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& r : ranges) t += r.len;
        return t;
    }
};

// Inputs for one summary-token insertion, already RoPE-rotated at the
// chunk's inherited position.
template <typename T>
struct SummaryStep {
    Tensor<T> q;  // [h, d]
    Tensor<T> k;  // [h_kv, d]
    Tensor<T> v;  // [h_kv, d]
};

template <typename T>
using SummaryProvider =
    std::function<SummaryStep<T>(std::size_t chunk_index, std::int64_t inherited_position)>;

// Decode-time KSA KV cache. One contiguous arena per K and V holds, left to
// right: [scratch (1 slot)][Current Chunk (k slots, fills right to left)]
// [Sliding Chunk Text ring (C*k slots)][Summary Token Buffer (grows right)].
// The current chunk's occupied slots stay right-aligned against the ring, so
// every visible-KV read is one contiguous slice. Keys are stored rotated;
// each entry carries its own position encoding and the physical order inside
// the ring never matters.
template <typename T>
class KsaKvCache {
public:
    KsaKvCache(const KsaConfig& cfg, std::size_t max_text_tokens, std::size_t heads,
               std::size_t kv_heads, std::size_t head_dim);

    // Fig. 7(b): write the token KV into the next available current-chunk slot.
    void append_text(const Tensor<T>& key_rotated, const Tensor<T>& value,
                     std::int64_t position);

    // Fig. 7(c)-(e): summary attention over the k current-chunk entries, KV to
    // the scratch slot, chunk text into the ring (overwriting the oldest in a
    // modular fashion), summary KV committed to the buffer's right end.
    // Returns the summary token's attention output [h, d].
    Tensor<T> finalize_chunk(const SummaryStep<T>& step);

    SliceDescriptor read_visible() const;

    struct DecodeResult {
        Tensor<T> out;  // [h, d]
        bool finalized = false;
        Tensor<T> summary_out;  // [h, d], only when finalized
    };

    // Single decode entry point: finalizes lazily if the previous append
    // filled the chunk, appends self KV, then attends the visible slice.
    DecodeResult decode_attention(const Tensor<T>& q_rotated, const Tensor<T>& self_k_rotated,
                                  const Tensor<T>& self_v, std::int64_t position,
                                  const SummaryProvider<T>& provider);

    // Stored KV slots per kv-head (K and V each counted once by the caller).
    std::size_t cache_entries() const {
        return fill_ + std::min(complete_, cfg_.sliding_chunks) * cfg_.chunk_size + complete_;
    }

    bool chunk_full() const { return fill_ == cfg_.chunk_size; }
    std::size_t current_fill() const { return fill_; }
    std::size_t complete_chunks() const { return complete_; }
    std::size_t ring_write_chunk() const { return ring_next_; }
    std::size_t visible_summaries() const {
        return complete_ > cfg_.sliding_chunks ? complete_ - cfg_.sliding_chunks : 0;
    }
    std::int64_t inherited_position() const;  // position id the next summary inherits
    const KsaConfig& config() const { return cfg_; }

    // region extents, exposed for the accounting tests
    std::size_t scratch_offset() const { return 0; }
    std::size_t current_offset() const { return 1; }
    std::size_t ring_offset() const { return 1 + cfg_.chunk_size; }
    std::size_t summary_offset() const {
        return 1 + cfg_.chunk_size + cfg_.sliding_chunks * cfg_.chunk_size;
    }
    std::size_t arena_slots() const { return summary_offset() + max_chunks_; }

    std::int64_t slot_position(std::size_t slot) const { return positions_[slot]; }

    // Cyclically shifts the ring's physical contents (positions included).
    // The visible set is unchanged; used by the ring-order-freedom tests.
    void rotate_ring(std::size_t shift_chunks);

    std::string dump_json() const;

private:
    void write_slot(std::size_t slot, const Tensor<T>& key, const Tensor<T>& value,
                    std::int64_t position);
    void copy_slot(std::size_t dst, std::size_t src);
    Tensor<T> attend_ranges(const Tensor<T>& q, const std::vector<CacheRange>& ranges) const;

    KsaConfig cfg_;
    std::size_t heads_;
    std::size_t kv_heads_;
    std::size_t head_dim_;
    std::size_t max_chunks_;
    std::vector<std::size_t> group_map_;
    T scale_;

    std::size_t fill_ = 0;       // occupied current-chunk slots
    std::size_t ring_next_ = 0;  // ring write pointer, in chunks
    std::size_t complete_ = 0;   // finalized chunks == stored summaries

    // [arena_slots, kv_heads, head_dim] row-major
    std::vector<T> keys_;
    std::vector<T> values_;
    std::vector<std::int64_t> positions_;
};

}  // namespace ksa

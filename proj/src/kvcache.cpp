#include "ksa/kvcache.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "ksa/attention.hpp"

namespace ksa {

template <typename T>
KsaKvCache<T>::KsaKvCache(const KsaConfig& cfg, std::size_t max_text_tokens, std::size_t heads,
                          std::size_t kv_heads, std::size_t head_dim)
    : cfg_(cfg),
      heads_(heads),
      kv_heads_(kv_heads),
      head_dim_(head_dim),
      max_chunks_(max_text_tokens / cfg.chunk_size),
      group_map_(make_group_map(heads, kv_heads)),
      scale_(static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)))) {
    cfg_.validate();
    if (max_text_tokens < 1) throw std::invalid_argument("max_text_tokens must be >= 1");
    const std::size_t per_slot = kv_heads_ * head_dim_;
    if (per_slot == 0) throw std::invalid_argument("cache needs kv_heads and head_dim >= 1");
    keys_.assign(arena_slots() * per_slot, T(0));
    values_.assign(arena_slots() * per_slot, T(0));
    positions_.assign(arena_slots(), -1);
}

template <typename T>
void KsaKvCache<T>::write_slot(std::size_t slot, const Tensor<T>& key, const Tensor<T>& value,
                               std::int64_t position) {
    const std::size_t per_slot = kv_heads_ * head_dim_;
    if (key.size() != per_slot || value.size() != per_slot)
        throw std::invalid_argument("cache KV entry must be [kv_heads, head_dim]");
    std::memcpy(keys_.data() + slot * per_slot, key.data.data(), per_slot * sizeof(T));
    std::memcpy(values_.data() + slot * per_slot, value.data.data(), per_slot * sizeof(T));
    positions_[slot] = position;
}

template <typename T>
void KsaKvCache<T>::copy_slot(std::size_t dst, std::size_t src) {
    const std::size_t per_slot = kv_heads_ * head_dim_;
    std::memcpy(keys_.data() + dst * per_slot, keys_.data() + src * per_slot,
                per_slot * sizeof(T));
    std::memcpy(values_.data() + dst * per_slot, values_.data() + src * per_slot,
                per_slot * sizeof(T));
    positions_[dst] = positions_[src];
}

template <typename T>
void KsaKvCache<T>::append_text(const Tensor<T>& key_rotated, const Tensor<T>& value,
                                std::int64_t position) {
    if (fill_ == cfg_.chunk_size) throw std::runtime_error("chunk overflow");
    // fills right to left: slot k-1 first, keeping the occupied span
    // right-aligned against the ring region
    const std::size_t slot = current_offset() + (cfg_.chunk_size - 1 - fill_);
    write_slot(slot, key_rotated, value, position);
    ++fill_;
}

template <typename T>
std::int64_t KsaKvCache<T>::inherited_position() const {
    if (fill_ == 0) throw std::runtime_error("no chunk in progress");
    // newest token sits at the left edge of the occupied span
    return positions_[current_offset() + (cfg_.chunk_size - fill_)];
}

template <typename T>
Tensor<T> KsaKvCache<T>::finalize_chunk(const SummaryStep<T>& step) {
    const std::size_t k = cfg_.chunk_size;
    const std::size_t C = cfg_.sliding_chunks;
    if (fill_ != k) throw std::runtime_error("premature finalize");
    if (complete_ == max_chunks_) throw std::runtime_error("summary buffer capacity exceeded");

    // (i) summary attention over exactly the current chunk's k entries
    Tensor<T> summary_out = attend_ranges(step.q, {{current_offset(), k}});

    // self-KV into the scratch slot left of the current chunk
    write_slot(scratch_offset(), step.k, step.v, positions_[current_offset()]);

    // (ii) chunk text into the ring at the write pointer (temporal order
    // inside the chunk slot); skipped entirely when C == 0
    if (C > 0) {
        const std::size_t base = ring_offset() + ring_next_ * k;
        for (std::size_t t = 0; t < k; ++t)
            copy_slot(base + t, current_offset() + (k - 1 - t));
        ring_next_ = (ring_next_ + 1) % C;
    }

    // (iii) summary KV from scratch to the buffer's right end
    copy_slot(summary_offset() + complete_, scratch_offset());
    ++complete_;
    fill_ = 0;
    return summary_out;
}

template <typename T>
SliceDescriptor KsaKvCache<T>::read_visible() const {
    const std::size_t k = cfg_.chunk_size;
    const std::size_t C = cfg_.sliding_chunks;
    SliceDescriptor desc;
    const std::size_t ring_valid = std::min(complete_, C);
    const std::size_t vis_sum = visible_summaries();
    const std::size_t start = current_offset() + (k - fill_);
    // the occupied current chunk, the valid ring prefix, and the visible
    // summary prefix are physically adjacent, so this is one slice; the ring
    // is only partially valid exactly when no summary is visible yet
    const std::size_t end = vis_sum > 0 ? summary_offset() + vis_sum
                                        : ring_offset() + ring_valid * k;
    if (end > start) {
        desc.ranges.push_back({start, end - start});
        desc.positions.reserve(end - start);
        for (std::size_t s = start; s < end; ++s) desc.positions.push_back(positions_[s]);
    }
    return desc;
}

template <typename T>
Tensor<T> KsaKvCache<T>::attend_ranges(const Tensor<T>& q,
                                       const std::vector<CacheRange>& ranges) const {
    if (q.size() != heads_ * head_dim_)
        throw std::invalid_argument("decode query must be [heads, head_dim]");
    std::size_t total = 0;
    for (const auto& r : ranges) total += r.len;
    if (total == 0) throw std::runtime_error("empty attention row");

    const std::size_t d = head_dim_;
    Tensor<T> out({heads_, d});
    std::vector<T> logits(total);
    for (std::size_t hq = 0; hq < heads_; ++hq) {
        const std::size_t hk = group_map_[hq];
        const T* qv = q.data.data() + hq * d;
        std::size_t m = 0;
        for (const auto& r : ranges) {
            for (std::size_t s = r.start; s < r.start + r.len; ++s, ++m) {
                const T* kv = keys_.data() + (s * kv_heads_ + hk) * d;
                T acc = T(0);
                for (std::size_t x = 0; x < d; ++x) acc += qv[x] * kv[x];
                logits[m] = acc * scale_;
            }
        }
        softmax_row_inplace(logits.data(), total);
        T* o = out.data.data() + hq * d;
        m = 0;
        for (const auto& r : ranges) {
            for (std::size_t s = r.start; s < r.start + r.len; ++s, ++m) {
                const T w = logits[m];
                const T* vv = values_.data() + (s * kv_heads_ + hk) * d;
                for (std::size_t x = 0; x < d; ++x) o[x] += w * vv[x];
            }
        }
    }
    return out;
}

template <typename T>
typename KsaKvCache<T>::DecodeResult KsaKvCache<T>::decode_attention(
    const Tensor<T>& q_rotated, const Tensor<T>& self_k_rotated, const Tensor<T>& self_v,
    std::int64_t position, const SummaryProvider<T>& provider) {
    DecodeResult res;
    if (chunk_full()) {
        if (!provider) throw std::runtime_error("chunk overflow");
        const std::int64_t pos = positions_[current_offset()];
        res.summary_out = finalize_chunk(provider(complete_, pos));
        res.finalized = true;
    }
    append_text(self_k_rotated, self_v, position);
    res.out = attend_ranges(q_rotated, read_visible().ranges);
    return res;
}

template <typename T>
void KsaKvCache<T>::rotate_ring(std::size_t shift_chunks) {
    const std::size_t k = cfg_.chunk_size;
    const std::size_t C = cfg_.sliding_chunks;
    // a cyclic shift only commutes with the modular write pointer once the
    // ring is full; before that, slots still fill in arrival order
    if (complete_ < C || C < 2) return;
    const std::size_t ring_valid = C;
    const std::size_t per_slot = kv_heads_ * head_dim_;
    const std::size_t n = ring_valid * k;
    const std::size_t shift = (shift_chunks % ring_valid) * k;
    if (shift == 0) return;
    ring_next_ = (ring_next_ + ring_valid - shift_chunks % ring_valid) % ring_valid;
    std::vector<T> kbuf(keys_.begin() + ring_offset() * per_slot,
                        keys_.begin() + (ring_offset() + n) * per_slot);
    std::vector<T> vbuf(values_.begin() + ring_offset() * per_slot,
                        values_.begin() + (ring_offset() + n) * per_slot);
    std::vector<std::int64_t> pbuf(positions_.begin() + ring_offset(),
                                   positions_.begin() + ring_offset() + n);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t src = (s + shift) % n;
        std::memcpy(keys_.data() + (ring_offset() + s) * per_slot, kbuf.data() + src * per_slot,
                    per_slot * sizeof(T));
        std::memcpy(values_.data() + (ring_offset() + s) * per_slot,
                    vbuf.data() + src * per_slot, per_slot * sizeof(T));
        positions_[ring_offset() + s] = pbuf[src];
    }
}

template <typename T>
std::string KsaKvCache<T>::dump_json() const {
    std::ostringstream os;
    os << "{\"k\":" << cfg_.chunk_size << ",\"C\":" << cfg_.sliding_chunks
       << ",\"m\":" << complete_ << ",\"current_fill\":" << fill_
       << ",\"ring_write_chunk\":" << ring_next_ << ",\"entries\":" << cache_entries()
       << ",\"visible_summaries\":" << visible_summaries() << "}";
    return os.str();
}

template class KsaKvCache<float>;
template class KsaKvCache<double>;

}  // namespace ksa

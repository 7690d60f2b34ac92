#include "ksa/masking.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace ksa {

void KsaConfig::validate() const {
    if (chunk_size < 1) throw std::invalid_argument("chunk_size must be >= 1");
    if (block_size < 1) throw std::invalid_argument("block_size must be >= 1");
}

std::vector<std::int64_t> AugmentedSequence::positions() const {
    std::vector<std::int64_t> out(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i)
        out[i] = static_cast<std::int64_t>(entries[i].position);
    return out;
}

AugmentedSequence augment(std::size_t n, const KsaConfig& cfg) {
    cfg.validate();
    const std::size_t k = cfg.chunk_size;
    AugmentedSequence aug;
    aug.text_len = n;
    aug.chunk_size = k;
    aug.entries.reserve(n + n / k);
    aug.text_to_aug.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        aug.text_to_aug[i] = aug.entries.size();
        aug.entries.push_back({Role::Text, i, i});
        if (i % k == k - 1) {
            // chunk complete: summary inherits the last text token's position
            aug.summary_to_aug.push_back(aug.entries.size());
            aug.entries.push_back({Role::Summary, i / k, i});
        }
    }
    return aug;
}

AugmentedSequence text_only_sequence(std::size_t n) {
    AugmentedSequence aug;
    aug.text_len = n;
    aug.chunk_size = 1;
    aug.entries.reserve(n);
    aug.text_to_aug.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        aug.text_to_aug[i] = i;
        aug.entries.push_back({Role::Text, i, i});
    }
    return aug;
}

std::size_t VisibilityMask::count() const {
    std::size_t c = 0;
    for (auto b : bits_) c += b;
    return c;
}

std::size_t VisibilityMask::row_count(std::size_t q) const {
    std::size_t c = 0;
    for (std::size_t kv = 0; kv < size_; ++kv) c += bits_[q * size_ + kv];
    return c;
}

VisibilityMask ksa_mask(const AugmentedSequence& aug, const KsaConfig& cfg) {
    cfg.validate();
    if (aug.chunk_size != cfg.chunk_size)
        throw std::invalid_argument("augmented sequence built with a different chunk size");
    const std::size_t k = cfg.chunk_size;
    const std::size_t C = cfg.sliding_chunks;
    const std::size_t L = aug.size();
    VisibilityMask mask(L);
    for (std::size_t q = 0; q < L; ++q) {
        const AugEntry& qe = aug.entries[q];
        if (qe.role == Role::Summary) {
            // summary sees exactly its own chunk's text tokens, nothing else
            const std::size_t j = qe.index;
            for (std::size_t t = j * k; t < (j + 1) * k; ++t)
                mask.set(q, aug.text_to_aug[t], true);
            continue;
        }
        const std::size_t i = qe.index;
        const std::size_t ci = i / k;
        const std::size_t window_chunk = ci > C ? ci - C : 0;  // clamp at chunk 0
        for (std::size_t t = window_chunk * k; t <= i; ++t)
            mask.set(q, aug.text_to_aug[t], true);
        if (ci > C) {
            // distant summaries s_0 .. s_{ci-C-1}
            const std::size_t last = ci - C - 1;
            for (std::size_t m = 0; m <= last && m < aug.summary_to_aug.size(); ++m)
                mask.set(q, aug.summary_to_aug[m], true);
        }
    }
    return mask;
}

VisibilityMask swa_mask(std::size_t n, std::size_t w) {
    if (w < 1) throw std::invalid_argument("swa window must be >= 1");
    VisibilityMask mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;
        for (std::size_t j = lo; j <= i; ++j) mask.set(i, j, true);
    }
    return mask;
}

VisibilityMask sca_mask(std::size_t n, const KsaConfig& cfg) {
    cfg.validate();
    const std::size_t k = cfg.chunk_size;
    const std::size_t C = cfg.sliding_chunks;
    VisibilityMask mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ci = i / k;
        const std::size_t start = (ci > C ? ci - C : 0) * k;  // chunk-aligned window start
        for (std::size_t j = start; j <= i; ++j) mask.set(i, j, true);
    }
    return mask;
}

VisibilityMask full_causal_mask(std::size_t n) {
    VisibilityMask mask(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
    return mask;
}

double sparsity(const VisibilityMask& mask) {
    if (mask.size() == 0) return 0.0;
    return static_cast<double>(mask.count()) /
           (static_cast<double>(mask.size()) * static_cast<double>(mask.size()));
}

BlockSparseMask blockify(const VisibilityMask& mask, std::size_t block_size) {
    if (block_size < 1) throw std::invalid_argument("block_size must be >= 1");
    BlockSparseMask out;
    out.block_size = block_size;
    out.mask_size = mask.size();
    const std::size_t grid = out.block_grid();
    for (std::size_t qb = 0; qb < grid; ++qb) {
        for (std::size_t kb = 0; kb < grid; ++kb) {
            std::size_t trues = 0;
            std::vector<std::uint8_t> bits(block_size * block_size, 0);
            for (std::size_t r = 0; r < block_size; ++r) {
                const std::size_t q = qb * block_size + r;
                if (q >= mask.size()) break;
                for (std::size_t c = 0; c < block_size; ++c) {
                    const std::size_t kv = kb * block_size + c;
                    if (kv >= mask.size()) break;
                    if (mask.at(q, kv)) {
                        bits[r * block_size + c] = 1;
                        ++trues;
                    }
                }
            }
            if (trues == 0) continue;
            MaskBlock blk;
            blk.qb = qb;
            blk.kb = kb;
            if (trues == block_size * block_size) {
                blk.kind = BlockKind::Full;
            } else {
                blk.kind = BlockKind::Partial;
                blk.bits = std::move(bits);
            }
            out.blocks.push_back(std::move(blk));
        }
    }
    return out;
}

VisibilityMask reconstruct(const BlockSparseMask& bmask) {
    VisibilityMask mask(bmask.mask_size);
    const std::size_t B = bmask.block_size;
    for (const auto& blk : bmask.blocks) {
        for (std::size_t r = 0; r < B; ++r) {
            const std::size_t q = blk.qb * B + r;
            if (q >= mask.size()) break;
            for (std::size_t c = 0; c < B; ++c) {
                const std::size_t kv = blk.kb * B + c;
                if (kv >= mask.size()) break;
                const bool v =
                    blk.kind == BlockKind::Full ? true : blk.bits[r * B + c] != 0;
                if (v) mask.set(q, kv, true);
            }
        }
    }
    return mask;
}

std::string mask_to_csv(const VisibilityMask& mask) {
    std::ostringstream os;
    for (std::size_t q = 0; q < mask.size(); ++q) {
        for (std::size_t kv = 0; kv < mask.size(); ++kv) {
            if (kv) os << ',';
            os << (mask.at(q, kv) ? '1' : '0');
        }
        os << '\n';
    }
    return os.str();
}

std::string mask_to_pbm(const VisibilityMask& mask) {
    std::ostringstream os;
    os << "P1\n" << mask.size() << ' ' << mask.size() << '\n';
    for (std::size_t q = 0; q < mask.size(); ++q) {
        for (std::size_t kv = 0; kv < mask.size(); ++kv) {
            if (kv) os << ' ';
            os << (mask.at(q, kv) ? '1' : '0');
        }
        os << '\n';
    }
    return os.str();
}

std::string blocks_to_text(const BlockSparseMask& bmask) {
    std::ostringstream os;
    for (const auto& blk : bmask.blocks)
        os << blk.qb << ',' << blk.kb << ','
           << (blk.kind == BlockKind::Full ? "full" : "partial") << '\n';
    return os.str();
}

}  // namespace ksa

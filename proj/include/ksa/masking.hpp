#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ksa {

struct KsaConfig {
    std::size_t chunk_size = 8;      // k: tokens per summary chunk
    std::size_t sliding_chunks = 128;  // C: complete chunks kept as raw text
    std::size_t block_size = 16;     // B: block-sparse granularity

    void validate() const;
};

enum class Role : std::uint8_t { Text, Summary };

struct AugEntry {
    Role role;
    std::size_t index;     // text index i, or chunk index j for a summary
    std::size_t position;  // rope position id
};

// Summary-augmented index space: each complete chunk of k text tokens is
// followed by one summary entry whose position id equals the chunk's last
// text token's. A trailing partial chunk carries no summary.
struct AugmentedSequence {
    std::size_t text_len = 0;
    std::size_t chunk_size = 1;
    std::vector<AugEntry> entries;
    std::vector<std::size_t> text_to_aug;     // text index -> augmented index
    std::vector<std::size_t> summary_to_aug;  // chunk index -> augmented index

    std::size_t size() const { return entries.size(); }
    std::size_t complete_chunks() const { return summary_to_aug.size(); }
    std::vector<std::int64_t> positions() const;
};

AugmentedSequence augment(std::size_t n, const KsaConfig& cfg);

// Identity sequence (no summaries); used when a schedule has no KSA layer.
AugmentedSequence text_only_sequence(std::size_t n);

class VisibilityMask {
public:
    VisibilityMask() = default;
    explicit VisibilityMask(std::size_t size) : size_(size), bits_(size * size, 0) {}

    std::size_t size() const { return size_; }
    bool at(std::size_t q, std::size_t kv) const { return bits_[q * size_ + kv] != 0; }
    void set(std::size_t q, std::size_t kv, bool v) { bits_[q * size_ + kv] = v ? 1 : 0; }

    std::size_t count() const;
    std::size_t row_count(std::size_t q) const;
    bool operator==(const VisibilityMask& other) const {
        return size_ == other.size_ && bits_ == other.bits_;
    }

private:
    std::size_t size_ = 0;
    std::vector<std::uint8_t> bits_;
};

VisibilityMask ksa_mask(const AugmentedSequence& aug, const KsaConfig& cfg);
VisibilityMask swa_mask(std::size_t n, std::size_t w);
VisibilityMask sca_mask(std::size_t n, const KsaConfig& cfg);
VisibilityMask full_causal_mask(std::size_t n);

double sparsity(const VisibilityMask& mask);

enum class BlockKind : std::uint8_t { Full, Partial };

struct MaskBlock {
    std::size_t qb;
    std::size_t kb;
    BlockKind kind;
    std::vector<std::uint8_t> bits;  // B*B row-major, only for Partial
};

// Block decomposition of a dense mask: all-false blocks are dropped,
// all-true blocks are tagged Full, mixed blocks keep their exact bitmask.
struct BlockSparseMask {
    std::size_t block_size = 1;
    std::size_t mask_size = 0;
    std::vector<MaskBlock> blocks;  // sorted by (qb, kb)

    std::size_t block_grid() const { return (mask_size + block_size - 1) / block_size; }
};

BlockSparseMask blockify(const VisibilityMask& mask, std::size_t block_size);
VisibilityMask reconstruct(const BlockSparseMask& bmask);

// Export formats used by the CLI.
std::string mask_to_csv(const VisibilityMask& mask);
std::string mask_to_pbm(const VisibilityMask& mask);
std::string blocks_to_text(const BlockSparseMask& bmask);

}  // namespace ksa

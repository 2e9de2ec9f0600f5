// 64-bit allocation-parameter packing. Regular requests carry
// H(1) | L(1) | nID | rID | size from the MSB down; huge requests set H and
// use the remaining 63 bits for the raw size. A plain size below the huge
// threshold round-trips untouched, which keeps untransformed callers
// working against the same interface.
#pragma once

#include <cstdint>
#include <stdexcept>

#include "semalloc/tracker.hpp"

namespace semalloc {

struct FieldLayout {
    unsigned nid_bits = 16;
    unsigned rid_bits = 14;
    unsigned size_bits = 32;

    constexpr bool valid() const {
        return nid_bits >= 1 && rid_bits >= 1 && size_bits >= 1 &&
               nid_bits + rid_bits + size_bits + 2 == 64;
    }
    constexpr std::uint64_t nid_mask() const { return (nid_bits >= 64) ? ~0ull : (1ull << nid_bits) - 1; }
    constexpr std::uint64_t rid_mask() const { return (rid_bits >= 64) ? ~0ull : (1ull << rid_bits) - 1; }
    constexpr std::uint64_t size_mask() const { return (1ull << size_bits) - 1; }
    constexpr std::uint64_t huge_threshold() const { return 1ull << size_bits; }
    constexpr unsigned rid_shift() const { return size_bits; }
    constexpr unsigned nid_shift() const { return size_bits + rid_bits; }
};

inline constexpr std::uint64_t kHugeBit = 1ull << 63;
inline constexpr std::uint64_t kLoopBit = 1ull << 62;

struct EncodedRequest {
    std::uint64_t word = 0;
};

enum class BlockKind : std::uint8_t { Regular, Huge };

struct DecodedRequest {
    BlockKind kind = BlockKind::Regular;
    SemaTypeTag tag;  // zero tag for huge blocks
    std::uint64_t size = 0;
};

inline EncodedRequest encode(const SemaTypeTag& tag, std::uint64_t size,
                             const FieldLayout& layout = {}) {
    if (size == 0) throw std::invalid_argument("allocation size must be positive");
    if (size >= (1ull << 63)) throw std::invalid_argument("allocation size exceeds 63 bits");
    if (size >= layout.huge_threshold()) return {kHugeBit | size};
    std::uint64_t word = size;
    if (tag.loop) word |= kLoopBit;
    word |= (tag.nid & layout.nid_mask()) << layout.nid_shift();
    word |= (tag.rid & layout.rid_mask()) << layout.rid_shift();
    return {word};
}

// Total: every 64-bit word decodes. A raw legacy size yields a zero tag.
inline DecodedRequest decode(EncodedRequest r, const FieldLayout& layout = {}) {
    DecodedRequest d;
    if (r.word & kHugeBit) {
        d.kind = BlockKind::Huge;
        d.size = r.word & ~kHugeBit;
        return d;
    }
    d.kind = BlockKind::Regular;
    d.tag.loop = (r.word & kLoopBit) != 0;
    d.tag.nid = (r.word >> layout.nid_shift()) & layout.nid_mask();
    d.tag.rid = (r.word >> layout.rid_shift()) & layout.rid_mask();
    d.size = r.word & layout.size_mask();
    return d;
}

}  // namespace semalloc

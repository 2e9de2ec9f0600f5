// Simulated SemaType-segregating BIBOP backend. Models the address space
// as bookkeeping: per-thread heaps with a global pool (one-time blocks,
// addresses retired forever on free), a lazy pool (first sighting of a
// recurrent SemaType), and individual pools keyed by (nid, rid, class)
// whose free lists are the only source of address reuse. Frees from the
// wrong thread are parked on the owner's queue and applied at the owner's
// next heap operation.
#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "semalloc/encoding.hpp"

namespace semalloc {

class OutOfAddressSpace : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kHeaderBytes = 16;
inline constexpr std::uint64_t kMinClassBytes = 16;

// Smallest power of two >= size, floor 16. Requests 65..128 share 128.
std::uint64_t size_class_for(std::uint64_t size);

enum class PoolKind : std::uint8_t { Global, Lazy, Individual };

std::string_view to_string(PoolKind k);

// The 16 modeled bytes immediately below each returned block.
struct BlockHeader {
    BlockKind kind = BlockKind::Regular;
    std::uint16_t thread_id = 0;
    std::uint64_t pool_ref = 0;  // modeled pool pointer
    std::uint32_t align_offset = 0;
    std::uint64_t huge_size = 0;
};

// Journal entry; one per placement, kept for the heap's lifetime.
struct BlockRecord {
    std::uint64_t addr = 0;       // address handed out
    std::uint64_t slot_addr = 0;  // slot data start (addr minus align offset)
    std::uint64_t span = 0;       // slot bytes (class, or mapped size for huge)
    std::uint64_t user_size = 0;
    std::uint32_t thread_id = 0;  // owner
    SemaTypeTag tag;              // zero for huge blocks
    BlockKind kind = BlockKind::Regular;
    PoolKind pool = PoolKind::Global;
    std::uint64_t alloc_seq = 0;
    std::optional<std::uint64_t> free_seq;
    std::string label;  // caller-supplied object id, may be empty

    std::uint64_t begin() const { return slot_addr; }
    std::uint64_t end() const { return slot_addr + span; }
};

struct HeapStats {
    std::uint64_t allocs = 0;
    std::uint64_t frees = 0;
    std::uint64_t reuses = 0;
    std::uint64_t invalid_frees = 0;
    std::uint64_t deferred_frees = 0;
    std::uint64_t recurrent_allocs = 0;
    std::uint64_t recurrent_pools = 0;
    double recurrent_alloc_pct = 0.0;
    double avg_allocs_per_recurrent_pool = 0.0;
    std::uint64_t leak_bytes = 0;
    double leak_pct = 0.0;  // of all slot bytes ever placed
    std::uint64_t peak_virtual = 0;
    std::uint64_t peak_resident = 0;
    std::uint64_t distinct_sematypes = 0;
    std::uint64_t pool_growths = 0;
};

struct SimHeapConfig {
    std::uint64_t base_address = 0x100000000ull;
    std::uint64_t address_budget = 1ull << 44;  // modeled bytes available
    std::uint64_t initial_chunk = 1ull << 16;   // first range per sub-pool
    FieldLayout layout{};
};

class SimHeap {
public:
    explicit SimHeap(SimHeapConfig config = {});

    // Returns the block address. Throws OutOfAddressSpace when the modeled
    // budget is exhausted. `alignment` models the memalign family.
    std::uint64_t malloc_block(std::uint32_t tid, EncodedRequest req, std::uint64_t alignment = 0,
                               std::string label = {});

    enum class FreeStatus { Freed, Deferred, Invalid };
    FreeStatus free_block(std::uint32_t tid, std::uint64_t addr);

    HeapStats stats() const;

    const std::vector<BlockRecord>& history() const { return journal_; }
    const BlockRecord* find_live(std::uint64_t addr) const;
    const BlockHeader* header_of(std::uint64_t addr) const;
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }
    // Segregation-invariant breaches observed during placement. Must stay
    // empty; anything here is an implementation bug surfaced to callers.
    const std::vector<std::string>& violations() const { return violations_; }

private:
    struct SubPool {
        PoolKind kind = PoolKind::Global;
        std::uint64_t class_bytes = 0;
        std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
        std::uint64_t cursor = 0;
        std::vector<std::uint64_t> free_list;  // individual pools only, LIFO
        std::uint64_t id = 0;                  // modeled pool pointer
    };
    using SemaKey = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>;  // nid, rid, class

    struct ThreadHeap {
        std::map<std::uint64_t, SubPool> global_by_class;
        std::map<std::uint64_t, SubPool> lazy_by_class;
        std::map<SemaKey, SubPool> individual;
        std::set<SemaKey> seen;  // recurrent keys served once by the lazy pool
        std::deque<std::uint64_t> pending;
        std::set<std::uint64_t> pending_set;
    };

    std::uint64_t reserve_range(std::uint64_t bytes);
    std::uint64_t place(SubPool& pool);
    void drain_pending(std::uint32_t tid);
    void apply_free(std::size_t journal_idx);
    void record_placement(std::size_t journal_idx);
    void bump_peaks();

    SimHeapConfig config_;
    std::map<std::uint32_t, ThreadHeap> heaps_;
    std::map<std::uint64_t, std::size_t> live_;  // addr -> journal idx
    std::map<std::uint64_t, BlockHeader> headers_;
    std::vector<BlockRecord> journal_;
    std::map<std::uint64_t, std::vector<std::size_t>> by_start_;
    std::uint64_t max_span_ = 0;
    std::vector<std::string> diagnostics_;
    std::vector<std::string> violations_;
    std::set<std::tuple<std::uint32_t, bool, std::uint64_t, std::uint64_t>> sematypes_;

    std::uint64_t next_va_ = 0;
    std::uint64_t seq_ = 0;
    std::uint64_t next_pool_id_ = 1;
    std::uint64_t virtual_now_ = 0;
    std::uint64_t resident_now_ = 0;
    HeapStats stats_;
    std::uint64_t placed_bytes_total_ = 0;
};

}  // namespace semalloc

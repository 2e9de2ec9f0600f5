#include "semalloc/backend.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

namespace semalloc {

std::uint64_t size_class_for(std::uint64_t size) {
    if (size <= kMinClassBytes) return kMinClassBytes;
    return std::bit_ceil(size);
}

std::string_view to_string(PoolKind k) {
    switch (k) {
        case PoolKind::Global: return "global";
        case PoolKind::Lazy: return "lazy";
        case PoolKind::Individual: return "individual";
    }
    return "?";
}

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

constexpr std::uint64_t kRangeAlign = 4096;

std::uint64_t round_up(std::uint64_t v, std::uint64_t align) {
    return (v + align - 1) / align * align;
}

}  // namespace

SimHeap::SimHeap(SimHeapConfig config) : config_(config), next_va_(config.base_address) {}

std::uint64_t SimHeap::reserve_range(std::uint64_t bytes) {
    bytes = round_up(bytes, kRangeAlign);
    if (next_va_ - config_.base_address + bytes > config_.address_budget)
        throw OutOfAddressSpace("modeled address space exhausted (" +
                                std::to_string(config_.address_budget) + " bytes)");
    std::uint64_t start = next_va_;
    next_va_ += bytes;
    virtual_now_ += bytes;
    bump_peaks();
    return start;
}

std::uint64_t SimHeap::place(SubPool& pool) {
    const std::uint64_t stride = pool.class_bytes + kHeaderBytes;
    if (pool.ranges.empty() || pool.cursor + stride > pool.ranges.back().second) {
        std::uint64_t want = pool.ranges.empty()
                                 ? std::max(config_.initial_chunk, stride)
                                 : std::max((pool.ranges.back().second - pool.ranges.back().first) * 2,
                                            stride);
        std::uint64_t start = reserve_range(want);
        if (!pool.ranges.empty()) ++stats_.pool_growths;
        pool.ranges.emplace_back(start, start + round_up(want, kRangeAlign));
        pool.cursor = start;
    }
    std::uint64_t slot = pool.cursor;
    pool.cursor += stride;
    resident_now_ += stride;
    placed_bytes_total_ += pool.class_bytes;
    bump_peaks();
    return slot + kHeaderBytes;  // data sits above the 16-byte header
}

void SimHeap::bump_peaks() {
    stats_.peak_virtual = std::max(stats_.peak_virtual, virtual_now_);
    stats_.peak_resident = std::max(stats_.peak_resident, resident_now_);
}

std::uint64_t SimHeap::malloc_block(std::uint32_t tid, EncodedRequest req, std::uint64_t alignment,
                                    std::string label) {
    drain_pending(tid);
    DecodedRequest d = decode(req, config_.layout);
    if (d.size == 0) throw std::invalid_argument("zero-size allocation");

    BlockRecord rec;
    rec.user_size = d.size;
    rec.thread_id = tid;
    rec.kind = d.kind;
    rec.label = std::move(label);

    BlockHeader hdr;
    hdr.thread_id = static_cast<std::uint16_t>(tid);

    if (d.kind == BlockKind::Huge) {
        std::uint64_t mapped = round_up(d.size + kHeaderBytes, kRangeAlign);
        std::uint64_t start = reserve_range(mapped);
        resident_now_ += mapped;
        placed_bytes_total_ += d.size;
        bump_peaks();
        rec.addr = rec.slot_addr = start + kHeaderBytes;
        rec.span = mapped - kHeaderBytes;
        hdr.kind = BlockKind::Huge;
        hdr.huge_size = d.size;
    } else {
        d.tag.thread_id = tid;  // queried, never encoded
        rec.tag = d.tag;

        std::uint64_t need = d.size;
        if (alignment > kHeaderBytes) need += alignment;
        const std::uint64_t cls = size_class_for(need);

        ThreadHeap& th = heaps_[tid];
        SubPool* pool = nullptr;
        if (!d.tag.loop) {
            pool = &th.global_by_class[cls];
            if (pool->class_bytes == 0) {
                pool->kind = PoolKind::Global;
                pool->class_bytes = cls;
                pool->id = next_pool_id_++;
            }
        } else {
            SemaKey key{d.tag.nid, d.tag.rid, cls};
            auto ind = th.individual.find(key);
            if (ind != th.individual.end()) {
                pool = &ind->second;
            } else if (th.seen.count(key)) {
                // Second sighting: the SemaType recurs, give it its own pool.
                SubPool p;
                p.kind = PoolKind::Individual;
                p.class_bytes = cls;
                p.id = next_pool_id_++;
                pool = &th.individual.emplace(key, std::move(p)).first->second;
                ++stats_.recurrent_pools;
            } else {
                th.seen.insert(key);
                pool = &th.lazy_by_class[cls];
                if (pool->class_bytes == 0) {
                    pool->kind = PoolKind::Lazy;
                    pool->class_bytes = cls;
                    pool->id = next_pool_id_++;
                }
            }
        }

        std::uint64_t slot;
        if (pool->kind == PoolKind::Individual && !pool->free_list.empty()) {
            slot = pool->free_list.back();
            pool->free_list.pop_back();
            ++stats_.reuses;
        } else {
            slot = place(*pool);
        }
        rec.slot_addr = slot;
        rec.span = cls;
        rec.pool = pool->kind;
        hdr.pool_ref = pool->id;
        rec.addr = slot;
        if (alignment > 1) {
            rec.addr = round_up(slot, alignment);
            hdr.align_offset = static_cast<std::uint32_t>(rec.addr - slot);
        }

        if (d.tag.loop) ++stats_.recurrent_allocs;
        sematypes_.insert({tid, d.tag.loop, d.tag.nid, d.tag.rid});
    }

    rec.alloc_seq = seq_++;
    journal_.push_back(rec);
    const std::size_t idx = journal_.size() - 1;
    if (!live_.emplace(rec.addr, idx).second)
        violations_.push_back("live block already present at " + hex(rec.addr));
    headers_[rec.addr] = hdr;
    record_placement(idx);
    ++stats_.allocs;
    return rec.addr;
}

// Every placement is checked against the full journal: any interval overlap
// must be a free-list reuse, i.e. same thread, same SemaType, same class,
// freed strictly before re-allocated.
void SimHeap::record_placement(std::size_t journal_idx) {
    const BlockRecord& rec = journal_[journal_idx];
    max_span_ = std::max(max_span_, rec.span);

    std::uint64_t low = rec.begin() > max_span_ ? rec.begin() - max_span_ : 0;
    for (auto it = by_start_.lower_bound(low); it != by_start_.end() && it->first < rec.end(); ++it) {
        for (std::size_t other_idx : it->second) {
            const BlockRecord& other = journal_[other_idx];
            if (other.end() <= rec.begin() || other.begin() >= rec.end()) continue;
            if (!other.free_seq) {
                violations_.push_back("overlap with live block at " + hex(other.addr));
                continue;
            }
            bool ok = rec.kind == BlockKind::Regular && other.kind == BlockKind::Regular &&
                      rec.tag.loop && other.tag.loop && rec.thread_id == other.thread_id &&
                      rec.tag.nid == other.tag.nid && rec.tag.rid == other.tag.rid &&
                      rec.span == other.span && *other.free_seq < rec.alloc_seq;
            if (!ok)
                violations_.push_back("segregation breach: " + hex(rec.addr) + " reuses " +
                                      hex(other.addr) + " across SemaTypes");
        }
    }
    by_start_[rec.begin()].push_back(journal_idx);
}

void SimHeap::drain_pending(std::uint32_t tid) {
    auto it = heaps_.find(tid);
    if (it == heaps_.end()) return;
    while (!it->second.pending.empty()) {
        std::uint64_t addr = it->second.pending.front();
        it->second.pending.pop_front();
        it->second.pending_set.erase(addr);
        auto live = live_.find(addr);
        if (live != live_.end()) apply_free(live->second);
    }
}

void SimHeap::apply_free(std::size_t journal_idx) {
    BlockRecord& rec = journal_[journal_idx];
    rec.free_seq = seq_++;
    live_.erase(rec.addr);
    ++stats_.frees;

    if (rec.kind == BlockKind::Huge) {
        std::uint64_t mapped = rec.span + kHeaderBytes;
        virtual_now_ -= mapped;
        resident_now_ -= mapped;
        headers_.erase(rec.addr);
        return;
    }

    ThreadHeap& th = heaps_[rec.thread_id];
    if (rec.pool == PoolKind::Individual) {
        SemaKey key{rec.tag.nid, rec.tag.rid, rec.span};
        th.individual.at(key).free_list.push_back(rec.slot_addr);
        return;
    }
    // Global/lazy: pages released, address retired forever.
    resident_now_ -= rec.span + kHeaderBytes;
    stats_.leak_bytes += rec.span;
}

SimHeap::FreeStatus SimHeap::free_block(std::uint32_t tid, std::uint64_t addr) {
    drain_pending(tid);
    auto it = live_.find(addr);
    if (it == live_.end()) {
        ++stats_.invalid_frees;
        diagnostics_.push_back("invalid or double free at " + hex(addr));
        return FreeStatus::Invalid;
    }
    const BlockRecord& rec = journal_[it->second];
    if (rec.kind == BlockKind::Huge) {  // header decides before any thread check
        apply_free(it->second);
        return FreeStatus::Freed;
    }
    if (rec.thread_id != tid) {
        ThreadHeap& owner = heaps_[rec.thread_id];
        if (!owner.pending_set.insert(addr).second) {
            ++stats_.invalid_frees;
            diagnostics_.push_back("double free (already deferred) at " + hex(addr));
            return FreeStatus::Invalid;
        }
        owner.pending.push_back(addr);
        ++stats_.deferred_frees;
        return FreeStatus::Deferred;
    }
    apply_free(it->second);
    return FreeStatus::Freed;
}

HeapStats SimHeap::stats() const {
    HeapStats s = stats_;
    s.distinct_sematypes = sematypes_.size();
    if (s.allocs) s.recurrent_alloc_pct = 100.0 * static_cast<double>(s.recurrent_allocs) /
                                          static_cast<double>(s.allocs);
    if (s.recurrent_pools)
        s.avg_allocs_per_recurrent_pool =
            static_cast<double>(s.recurrent_allocs) / static_cast<double>(s.recurrent_pools);
    if (placed_bytes_total_)
        s.leak_pct = 100.0 * static_cast<double>(s.leak_bytes) /
                     static_cast<double>(placed_bytes_total_);
    return s;
}

const BlockRecord* SimHeap::find_live(std::uint64_t addr) const {
    auto it = live_.find(addr);
    return it == live_.end() ? nullptr : &journal_[it->second];
}

const BlockHeader* SimHeap::header_of(std::uint64_t addr) const {
    auto it = headers_.find(addr);
    return it == headers_.end() ? nullptr : &it->second;
}

}  // namespace semalloc

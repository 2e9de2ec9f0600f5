// Per-thread runtime state behind SemaType deduction: the cumulative
// call-site weight (nID), the frame stack of live intra-SCC calls and its
// aggregation (rID), and the recurrence depth driving the loop bit.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semalloc/weights.hpp"

namespace semalloc {

struct SemaTypeTag {
    bool loop = false;
    std::uint64_t nid = 0;
    std::uint64_t rid = 0;
    // Not part of the encoded word; the backend queries it directly.
    std::uint32_t thread_id = 0;

    friend bool operator==(const SemaTypeTag&, const SemaTypeTag&) = default;
};

// Folds a frame-address sequence, oldest first, into the recurrence id:
// two address bits (bits 6-7) per frame, shifted through a window. The
// final mask keeps the newest rid_bits/2 frames.
std::uint64_t aggregate_rid(std::span<const std::uint64_t> frames, unsigned rid_bits = 14);

// Stand-in for real stack pointers: deterministic, 8-byte aligned frame
// addresses derived from the live call chain.
struct SyntheticFrameModel {
    std::uint64_t base_address = 0x7ffd00000000ull;

    // Frame sizes are 64/128/192/256 bytes, picked by hashing the id, so
    // consecutive frames of distinct functions may differ in bits 6-7.
    std::uint64_t frame_size(std::string_view fn) const;
    // Address handed to a callee when `live_stack` frames are active.
    std::uint64_t frame_address(std::span<const std::string> live_stack) const;
};

struct TrackerConfig {
    unsigned nid_bits = 16;
    unsigned rid_bits = 14;
};

class ThreadTracker {
public:
    ThreadTracker(std::uint32_t thread_id, const WeightedDag& wd, TrackerConfig config = {},
                  SyntheticFrameModel model = {});

    // Applies a call over the named site. Plain/branch sites add their
    // weight to the nID accumulator; loop sites additionally bump the
    // recurrence depth. Entering a recursive SCC starts a fresh frame-stack
    // activation; intra-SCC calls push a synthetic frame; leaving the SCC
    // aggregates the stack into the carried rID and parks the frames for
    // restoration on return.
    void on_call(const std::string& site_id);

    // Exact inverse of the matching on_call.
    void on_return();

    // Tag for an allocation in the current function, which must be an
    // allocator (the allocator edge's call has already been applied).
    SemaTypeTag on_alloc();

    const std::string& current_function() const { return fn_stack_.back(); }
    // Site of the innermost live call; throws when the stack is empty.
    const std::string& current_site() const;
    std::size_t call_depth() const { return call_stack_.size(); }
    std::uint64_t loop_depth() const { return depth_l_; }
    std::uint64_t nid_raw() const { return nid_acc_; }
    std::uint64_t carried_rid() const { return h_current_; }
    std::span<const std::uint64_t> scc_frames() const { return scc_stack_; }
    std::uint64_t nid_wraps() const { return nid_wraps_; }
    std::uint32_t thread_id() const { return thread_id_; }

private:
    struct CallRecord {
        std::string site_id;
        std::uint64_t weight = 0;
        std::uint64_t l_delta = 0;
        std::uint64_t saved_h = 0;
        bool restore_stack = false;
        bool pushed_frame = false;
        std::vector<std::uint64_t> saved_stack;
    };

    const WeightedDag* wd_;
    TrackerConfig config_;
    SyntheticFrameModel model_;
    std::uint32_t thread_id_;

    std::uint64_t nid_acc_ = 0;
    std::uint64_t depth_l_ = 0;
    std::uint64_t h_current_ = 0;
    std::vector<std::uint64_t> scc_stack_;
    std::vector<CallRecord> call_stack_;
    std::vector<std::string> fn_stack_;
    std::uint64_t nid_wraps_ = 0;
};

}  // namespace semalloc

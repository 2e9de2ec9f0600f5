#include "semalloc/tracker.hpp"

namespace semalloc {

std::uint64_t aggregate_rid(std::span<const std::uint64_t> frames, unsigned rid_bits) {
    std::uint64_t h = 0;
    for (std::uint64_t p : frames) h = (h << 2) + ((p >> 6) & 0x3);
    std::uint64_t mask = rid_bits >= 64 ? ~0ull : (1ull << rid_bits) - 1;
    return h & mask;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::uint64_t SyntheticFrameModel::frame_size(std::string_view fn) const {
    return 64 * (1 + (fnv1a(fn) & 0x3));
}

std::uint64_t SyntheticFrameModel::frame_address(std::span<const std::string> live_stack) const {
    std::uint64_t addr = base_address;
    for (const auto& fn : live_stack) addr -= frame_size(fn);
    return addr;
}

ThreadTracker::ThreadTracker(std::uint32_t thread_id, const WeightedDag& wd, TrackerConfig config,
                             SyntheticFrameModel model)
    : wd_(&wd), config_(config), model_(model), thread_id_(thread_id) {
    fn_stack_.push_back(wd.graph.entry);
}

void ThreadTracker::on_call(const std::string& site_id) {
    const RuntimeEdge& e = wd_->runtime_edge(site_id);
    if (e.caller != current_function())
        throw ValidationError("site '" + site_id + "' does not emanate from current function '" +
                              current_function() + "'");

    CallRecord rec;
    rec.site_id = site_id;
    rec.weight = e.weight;  // zero for intra-SCC sites and spliced heads
    rec.saved_h = h_current_;

    switch (e.cls) {
        case EdgeClass::Plain:
            break;
        case EdgeClass::Inbound:
            rec.restore_stack = true;
            rec.saved_stack = std::move(scc_stack_);
            scc_stack_.clear();
            h_current_ = 0;
            scc_stack_.push_back(model_.frame_address(fn_stack_));
            break;
        case EdgeClass::Inner:
            scc_stack_.push_back(model_.frame_address(fn_stack_));
            rec.pushed_frame = true;
            break;
        case EdgeClass::Outbound:
            h_current_ = aggregate_rid(scc_stack_, config_.rid_bits);
            rec.restore_stack = true;
            rec.saved_stack = std::move(scc_stack_);
            scc_stack_.clear();
            break;
    }
    // A looped site and an SCC entry both mean the callee's allocations can
    // recur; the depth records that once per call.
    if (e.in_loop || e.cls == EdgeClass::Inbound) rec.l_delta = 1;

    nid_acc_ += rec.weight;
    depth_l_ += rec.l_delta;
    fn_stack_.push_back(e.callee);
    call_stack_.push_back(std::move(rec));
}

void ThreadTracker::on_return() {
    if (call_stack_.empty()) throw ValidationError("return with empty call stack");
    CallRecord rec = std::move(call_stack_.back());
    call_stack_.pop_back();
    fn_stack_.pop_back();

    nid_acc_ -= rec.weight;
    depth_l_ -= rec.l_delta;
    if (rec.restore_stack)
        scc_stack_ = std::move(rec.saved_stack);
    else if (rec.pushed_frame)
        scc_stack_.pop_back();
    h_current_ = rec.saved_h;
}

const std::string& ThreadTracker::current_site() const {
    if (call_stack_.empty()) throw ValidationError("no live call");
    return call_stack_.back().site_id;
}

SemaTypeTag ThreadTracker::on_alloc() {
    const FunctionNode* fn = wd_->graph.find_node(current_function());
    if (!fn || !fn->is_allocator)
        throw ValidationError("allocation outside an allocator function ('" + current_function() +
                              "')");
    SemaTypeTag tag;
    tag.thread_id = thread_id_;
    tag.loop = depth_l_ != 0;
    std::uint64_t nid_mask = config_.nid_bits >= 64 ? ~0ull : (1ull << config_.nid_bits) - 1;
    if (nid_acc_ > nid_mask) ++nid_wraps_;
    tag.nid = nid_acc_ & nid_mask;
    tag.rid = scc_stack_.empty() ? h_current_ : aggregate_rid(scc_stack_, config_.rid_bits);
    return tag;
}

}  // namespace semalloc

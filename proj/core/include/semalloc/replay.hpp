// Event traces: parsing/validation, deterministic replay through
// tracker + encoding + backend, dangling-pointer overlap probes, and a
// pseudo-random trace generator for property corpora.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "semalloc/backend.hpp"
#include "semalloc/tracker.hpp"

namespace semalloc {

struct TraceEvent {
    enum class Kind : std::uint8_t { Call, Ret, Alloc, Free, Spawn };
    Kind kind = Kind::Call;
    std::uint32_t tid = 0;
    std::string site;           // Call
    std::string obj;            // Alloc / Free
    std::uint64_t size = 0;     // Alloc
    std::uint32_t spawned = 0;  // Spawn
    std::size_t line = 0;       // source line when parsed from text
};

class ReplayError : public std::runtime_error {
public:
    ReplayError(std::string msg, std::size_t event_index)
        : std::runtime_error("event " + std::to_string(event_index) + ": " + msg),
          event_index_(event_index) {}
    std::size_t event_index() const { return event_index_; }

private:
    std::size_t event_index_;
};

// Line-oriented format (thread 0 exists implicitly):
//   spawn <tid>
//   T<tid> call <site_id>
//   T<tid> ret
//   T<tid> alloc <obj> <size>
//   T<tid> free <obj>
//   # comment
// An alloc in a non-allocator function implies the (unique) allocator
// edge's call and return; the explicit call/alloc/ret form is also valid.
std::vector<TraceEvent> parse_trace(std::string_view text, const WeightedDag& wd);

std::string format_trace(std::span<const TraceEvent> events);

struct SiteCensus {
    std::uint64_t allocs = 0;
    std::uint64_t distinct_sematypes = 0;
};

struct ReplayReport {
    HeapStats heap;
    std::map<std::string, SiteCensus> per_site;  // allocator edge -> census
    std::size_t native_sites = 0;                // distinct alloc sites exercised
    bool segregation_ok = true;
    std::vector<std::string> violations;
    std::vector<std::string> diagnostics;
    std::uint64_t nid_wraps = 0;
    std::size_t events = 0;
};

struct ObjectInfo {
    std::size_t journal_idx = 0;
    std::uint64_t addr = 0;
    std::string alloc_site;
};

struct ReplayOptions {
    FieldLayout layout{};
    SimHeapConfig heap{};
    SyntheticFrameModel frames{};
};

struct ReplayResult {
    ReplayReport report;
    SimHeap heap;  // full journal retained for probing
    std::map<std::string, ObjectInfo> objects;
};

ReplayResult replay(const WeightedDag& wd, std::span<const TraceEvent> events,
                    const ReplayOptions& options = {});

struct UafProbe {
    std::string dangling;                // object freed during the trace
    std::vector<std::string> attackers;  // objects allocated after that free
};

enum class UafVerdict : std::uint8_t { Blocked, Overlap };

struct UafFinding {
    std::string attacker;
    UafVerdict verdict = UafVerdict::Blocked;
    SemaTypeTag attacker_tag;
    SemaTypeTag dangling_tag;
    std::uint64_t attacker_addr = 0;
    std::uint64_t dangling_addr = 0;
};

// Overlap iff the attacker's slot interval intersects the dangling
// object's former interval. Throws ValidationError for unknown objects or
// probes inconsistent with the trace.
std::vector<UafFinding> check_uaf(const WeightedDag& wd, std::span<const TraceEvent> events,
                                  const UafProbe& probe, const ReplayOptions& options = {});

struct GenOptions {
    std::uint64_t seed = 1;
    std::size_t n_events = 100;      // action budget before unwinding
    unsigned recursion_bound = 2;    // per-activation uses of an intra-SCC site
    unsigned loop_bound = 2;         // per-frame uses of a loop site
    unsigned threads = 1;
    double free_prob = 0.8;          // chance a still-live object is freed at the end
    unsigned max_depth = 48;
};

// Deterministic pseudo-random walk over the graph; the output always
// passes parse_trace against the same WeightedDag.
std::vector<TraceEvent> gen_trace(const WeightedDag& wd, const GenOptions& options);

inline std::vector<TraceEvent> gen_trace(const WeightedDag& wd, std::uint64_t seed,
                                         std::size_t n_events, unsigned recursion_bound,
                                         unsigned loop_bound) {
    GenOptions o;
    o.seed = seed;
    o.n_events = n_events;
    o.recursion_bound = recursion_bound;
    o.loop_bound = loop_bound;
    return gen_trace(wd, o);
}

}  // namespace semalloc

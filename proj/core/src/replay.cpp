#include "semalloc/replay.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

namespace semalloc {

namespace {

std::vector<std::string_view> tokenize(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

std::uint32_t parse_tid(std::string_view tok, std::size_t lineno) {
    if (tok.size() < 2 || tok[0] != 'T')
        throw ParseError("expected thread token T<tid>, got '" + std::string(tok) + "'", lineno);
    std::uint32_t tid = 0;
    auto num = tok.substr(1);
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), tid);
    if (ec != std::errc{} || p != num.data() + num.size())
        throw ParseError("bad thread id '" + std::string(tok) + "'", lineno);
    return tid;
}

// Sorted allocator out-edges per function; one entry means an alloc event
// can resolve the site implicitly.
std::map<std::string, std::vector<std::string>> allocator_sites(const WeightedDag& wd) {
    std::map<std::string, std::vector<std::string>> out;
    auto adj = wd.graph.adjacency();
    for (const auto& [fn, edge_idx] : adj)
        for (std::size_t ei : edge_idx) {
            const CallSiteEdge& e = wd.graph.edges[ei];
            if (wd.runtime_edge(e.site_id).callee_is_allocator) out[fn].push_back(e.site_id);
        }
    return out;
}

bool is_allocator_fn(const WeightedDag& wd, const std::string& fn) {
    const FunctionNode* n = wd.graph.find_node(fn);
    return n && n->is_allocator;
}

}  // namespace

std::vector<TraceEvent> parse_trace(std::string_view text, const WeightedDag& wd) {
    std::vector<TraceEvent> events;
    auto alloc_sites = allocator_sites(wd);

    struct ThreadState {
        std::vector<std::string> fn_stack;
    };
    std::map<std::uint32_t, ThreadState> threads;
    threads[0].fn_stack.push_back(wd.graph.entry);
    std::map<std::string, bool> objects;  // obj -> freed

    auto thread_of = [&](std::uint32_t tid, std::size_t lineno) -> ThreadState& {
        auto it = threads.find(tid);
        if (it == threads.end())
            throw ParseError("thread " + std::to_string(tid) + " used before spawn", lineno);
        return it->second;
    };

    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++lineno;

        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        auto tok = tokenize(line);
        if (tok.empty()) continue;

        TraceEvent ev;
        ev.line = lineno;

        if (tok[0] == "spawn") {
            if (tok.size() != 2) throw ParseError("expected 'spawn <tid>'", lineno);
            std::uint32_t tid = 0;
            auto [p, ec] = std::from_chars(tok[1].data(), tok[1].data() + tok[1].size(), tid);
            if (ec != std::errc{} || p != tok[1].data() + tok[1].size())
                throw ParseError("bad thread id '" + std::string(tok[1]) + "'", lineno);
            if (threads.count(tid))
                throw ParseError("thread " + std::to_string(tid) + " already exists", lineno);
            threads[tid].fn_stack.push_back(wd.graph.entry);
            ev.kind = TraceEvent::Kind::Spawn;
            ev.spawned = tid;
            events.push_back(std::move(ev));
            continue;
        }

        ev.tid = parse_tid(tok[0], lineno);
        ThreadState& ts = thread_of(ev.tid, lineno);
        if (tok.size() < 2) throw ParseError("missing event kind", lineno);

        if (tok[1] == "call") {
            if (tok.size() != 3) throw ParseError("expected 'T<tid> call <site>'", lineno);
            ev.kind = TraceEvent::Kind::Call;
            ev.site = std::string(tok[2]);
            const RuntimeEdge* e = nullptr;
            try {
                e = &wd.runtime_edge(ev.site);
            } catch (const ValidationError&) {
                throw ParseError("unknown site id '" + ev.site + "'", lineno);
            }
            if (e->caller != ts.fn_stack.back())
                throw ParseError("site '" + ev.site + "' does not emanate from '" +
                                     ts.fn_stack.back() + "'",
                                 lineno);
            ts.fn_stack.push_back(e->callee);
        } else if (tok[1] == "ret") {
            if (tok.size() != 2) throw ParseError("expected 'T<tid> ret'", lineno);
            if (ts.fn_stack.size() <= 1) throw ParseError("return below trace start", lineno);
            ev.kind = TraceEvent::Kind::Ret;
            ts.fn_stack.pop_back();
        } else if (tok[1] == "alloc") {
            if (tok.size() != 4) throw ParseError("expected 'T<tid> alloc <obj> <size>'", lineno);
            ev.kind = TraceEvent::Kind::Alloc;
            ev.obj = std::string(tok[2]);
            auto [p, ec] = std::from_chars(tok[3].data(), tok[3].data() + tok[3].size(), ev.size);
            if (ec != std::errc{} || p != tok[3].data() + tok[3].size() || ev.size == 0)
                throw ParseError("bad allocation size '" + std::string(tok[3]) + "'", lineno);
            if (objects.count(ev.obj))
                throw ParseError("duplicate object id '" + ev.obj + "'", lineno);
            const std::string& fn = ts.fn_stack.back();
            if (!is_allocator_fn(wd, fn)) {
                auto it = alloc_sites.find(fn);
                if (it == alloc_sites.end())
                    throw ParseError("function '" + fn + "' has no allocator call site", lineno);
                if (it->second.size() > 1)
                    throw ParseError("function '" + fn +
                                         "' has several allocator call sites; use the explicit "
                                         "call/alloc/ret form",
                                     lineno);
            }
            objects[ev.obj] = false;
        } else if (tok[1] == "free") {
            if (tok.size() != 3) throw ParseError("expected 'T<tid> free <obj>'", lineno);
            ev.kind = TraceEvent::Kind::Free;
            ev.obj = std::string(tok[2]);
            auto it = objects.find(ev.obj);
            if (it == objects.end())
                throw ParseError("free of unknown object '" + ev.obj + "'", lineno);
            if (it->second) throw ParseError("object '" + ev.obj + "' already freed", lineno);
            it->second = true;
        } else {
            throw ParseError("unknown event '" + std::string(tok[1]) + "'", lineno);
        }
        events.push_back(std::move(ev));
    }
    return events;
}

std::string format_trace(std::span<const TraceEvent> events) {
    std::ostringstream os;
    for (const TraceEvent& ev : events) {
        switch (ev.kind) {
            case TraceEvent::Kind::Spawn: os << "spawn " << ev.spawned; break;
            case TraceEvent::Kind::Call: os << 'T' << ev.tid << " call " << ev.site; break;
            case TraceEvent::Kind::Ret: os << 'T' << ev.tid << " ret"; break;
            case TraceEvent::Kind::Alloc:
                os << 'T' << ev.tid << " alloc " << ev.obj << ' ' << ev.size;
                break;
            case TraceEvent::Kind::Free: os << 'T' << ev.tid << " free " << ev.obj; break;
        }
        os << '\n';
    }
    return os.str();
}

ReplayResult replay(const WeightedDag& wd, std::span<const TraceEvent> events,
                    const ReplayOptions& options) {
    SimHeapConfig heap_config = options.heap;
    heap_config.layout = options.layout;
    ReplayResult result{ReplayReport{}, SimHeap(heap_config), {}};

    TrackerConfig tracker_config{options.layout.nid_bits, options.layout.rid_bits};
    std::map<std::uint32_t, ThreadTracker> trackers;
    trackers.emplace(0, ThreadTracker(0, wd, tracker_config, options.frames));

    auto alloc_sites = allocator_sites(wd);
    auto tag_less = [](const SemaTypeTag& a, const SemaTypeTag& b) {
        return std::tie(a.thread_id, a.loop, a.nid, a.rid) <
               std::tie(b.thread_id, b.loop, b.nid, b.rid);
    };
    std::map<std::string, std::set<SemaTypeTag, decltype(tag_less)>> census;

    for (std::size_t i = 0; i < events.size(); ++i) {
        const TraceEvent& ev = events[i];
        try {
            switch (ev.kind) {
                case TraceEvent::Kind::Spawn:
                    if (trackers.count(ev.spawned))
                        throw ValidationError("thread " + std::to_string(ev.spawned) +
                                              " already exists");
                    trackers.emplace(ev.spawned,
                                     ThreadTracker(ev.spawned, wd, tracker_config, options.frames));
                    break;
                case TraceEvent::Kind::Call: trackers.at(ev.tid).on_call(ev.site); break;
                case TraceEvent::Kind::Ret: trackers.at(ev.tid).on_return(); break;
                case TraceEvent::Kind::Alloc: {
                    ThreadTracker& t = trackers.at(ev.tid);
                    if (result.objects.count(ev.obj))
                        throw ValidationError("duplicate object id '" + ev.obj + "'");
                    std::string site;
                    bool implicit = !is_allocator_fn(wd, t.current_function());
                    if (implicit) {
                        auto sites = alloc_sites.find(t.current_function());
                        if (sites == alloc_sites.end())
                            throw ValidationError("function '" + t.current_function() +
                                                  "' has no allocator call site");
                        if (sites->second.size() != 1)
                            throw ValidationError("ambiguous allocator site in '" +
                                                  t.current_function() + "'");
                        site = sites->second.front();
                        t.on_call(site);
                    } else {
                        site = t.current_site();
                    }
                    SemaTypeTag tag = t.on_alloc();
                    std::uint64_t addr = result.heap.malloc_block(
                        ev.tid, encode(tag, ev.size, options.layout), 0, ev.obj);
                    if (implicit) t.on_return();

                    result.objects[ev.obj] =
                        ObjectInfo{result.heap.history().size() - 1, addr, site};
                    census[site].insert(tag);
                    ++result.report.per_site[site].allocs;
                    break;
                }
                case TraceEvent::Kind::Free: {
                    auto it = result.objects.find(ev.obj);
                    if (it == result.objects.end())
                        throw ValidationError("free of unknown object '" + ev.obj + "'");
                    result.heap.free_block(ev.tid, it->second.addr);
                    break;
                }
            }
        } catch (const OutOfAddressSpace& e) {
            throw ReplayError(e.what(), i);
        } catch (const ValidationError& e) {
            throw ReplayError(e.what(), i);
        } catch (const std::invalid_argument& e) {
            throw ReplayError(e.what(), i);
        }
    }

    result.report.heap = result.heap.stats();
    result.report.events = events.size();
    result.report.violations = result.heap.violations();
    result.report.diagnostics = result.heap.diagnostics();
    result.report.segregation_ok = result.report.violations.empty();
    for (auto& [tid, t] : trackers) result.report.nid_wraps += t.nid_wraps();
    for (auto& [site, tags] : census) result.report.per_site[site].distinct_sematypes = tags.size();
    result.report.native_sites = result.report.per_site.size();
    return result;
}

std::vector<UafFinding> check_uaf(const WeightedDag& wd, std::span<const TraceEvent> events,
                                  const UafProbe& probe, const ReplayOptions& options) {
    ReplayResult r = replay(wd, events, options);
    auto find = [&](const std::string& obj) -> const BlockRecord& {
        auto it = r.objects.find(obj);
        if (it == r.objects.end()) throw ValidationError("probe references unknown object '" + obj + "'");
        return r.heap.history()[it->second.journal_idx];
    };

    const BlockRecord& dangling = find(probe.dangling);
    if (!dangling.free_seq)
        throw ValidationError("probe object '" + probe.dangling + "' is never freed in the trace");

    std::vector<UafFinding> findings;
    for (const auto& attacker : probe.attackers) {
        const BlockRecord& a = find(attacker);
        if (a.alloc_seq < *dangling.free_seq)
            throw ValidationError("probe attacker '" + attacker +
                                  "' is allocated before the dangling object is freed");
        UafFinding f;
        f.attacker = attacker;
        f.attacker_tag = a.tag;
        f.dangling_tag = dangling.tag;
        f.attacker_addr = a.addr;
        f.dangling_addr = dangling.addr;
        bool overlap = a.begin() < dangling.end() && dangling.begin() < a.end();
        f.verdict = overlap ? UafVerdict::Overlap : UafVerdict::Blocked;
        findings.push_back(std::move(f));
    }
    return findings;
}

namespace {

// Deterministic, platform-independent generator state.
struct SplitMix64 {
    std::uint64_t s;
    std::uint64_t next() {
        s += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }
    bool chance(double p) { return (next() >> 11) * (1.0 / 9007199254740992.0) < p; }
};

}  // namespace

std::vector<TraceEvent> gen_trace(const WeightedDag& wd, const GenOptions& options) {
    if (options.n_events < 1 || options.loop_bound < 1 || options.threads < 1)
        throw ValidationError("generator bounds must be at least 1");

    SplitMix64 rng{options.seed * 0x2545F4914F6CDD1Dull + 0x9E3779B97F4A7C15ull};
    auto adj = wd.graph.adjacency();
    auto alloc_sites = allocator_sites(wd);

    struct Frame {
        std::string fn;
        std::map<std::string, unsigned> used;  // per-frame site usage
        bool pushed_activation = false;
    };
    struct Thread {
        std::vector<Frame> frames;
        std::vector<std::map<std::string, unsigned>> activations;  // intra-SCC usage
    };
    std::vector<Thread> threads(options.threads);
    for (auto& t : threads) {
        t.frames.push_back(Frame{wd.graph.entry, {}, false});
        t.activations.emplace_back();
    }

    std::vector<TraceEvent> events;
    for (std::uint32_t tid = 1; tid < options.threads; ++tid) {
        TraceEvent ev;
        ev.kind = TraceEvent::Kind::Spawn;
        ev.spawned = tid;
        events.push_back(ev);
    }

    struct LiveObject {
        std::string id;
        std::uint32_t owner;
    };
    std::vector<LiveObject> live;
    std::uint64_t next_obj = 0;
    static constexpr std::uint64_t kSizes[] = {8, 16, 24, 48, 64, 100, 256, 1024, 4000};

    auto emit_alloc = [&](std::uint32_t tid, Thread& t) {
        const std::string& fn = t.frames.back().fn;
        const auto& sites = alloc_sites.at(fn);
        const std::string& site = sites[rng.below(sites.size())];
        std::string obj = "o" + std::to_string(next_obj++);
        std::uint64_t size = kSizes[rng.below(std::size(kSizes))];
        if (sites.size() > 1) {
            // several allocator sites: the implicit form would be ambiguous
            events.push_back({TraceEvent::Kind::Call, tid, site, "", 0, 0, 0});
            events.push_back({TraceEvent::Kind::Alloc, tid, "", obj, size, 0, 0});
            events.push_back({TraceEvent::Kind::Ret, tid, "", "", 0, 0, 0});
        } else {
            events.push_back({TraceEvent::Kind::Alloc, tid, "", obj, size, 0, 0});
        }
        live.push_back({obj, tid});
    };

    auto emit_ret = [&](std::uint32_t tid, Thread& t) {
        if (t.frames.back().pushed_activation) t.activations.pop_back();
        t.frames.pop_back();
        events.push_back({TraceEvent::Kind::Ret, tid, "", "", 0, 0, 0});
    };

    std::size_t budget = options.n_events;
    std::size_t idle_rounds = 0;
    while (budget > 0 && idle_rounds < options.threads * 4ull) {
        std::uint32_t tid = static_cast<std::uint32_t>(rng.below(options.threads));
        Thread& t = threads[tid];
        Frame& top = t.frames.back();

        // Candidate call sites under the loop/recursion bounds.
        std::vector<const std::string*> calls;
        if (t.frames.size() < options.max_depth && !is_allocator_fn(wd, top.fn)) {
            auto it = adj.find(top.fn);
            if (it != adj.end()) {
                for (std::size_t ei : it->second) {
                    const CallSiteEdge& e = wd.graph.edges[ei];
                    const RuntimeEdge& re = wd.runtime_edge(e.site_id);
                    if (re.callee_is_allocator) continue;  // handled by alloc action
                    unsigned frame_cap = e.in_loop ? options.loop_bound : 1;
                    if (top.used[e.site_id] >= frame_cap) continue;
                    if (re.cls == EdgeClass::Inner &&
                        t.activations.back()[e.site_id] >= options.recursion_bound)
                        continue;
                    calls.push_back(&e.site_id);
                }
            }
        }
        bool can_alloc = alloc_sites.count(top.fn) && !is_allocator_fn(wd, top.fn);
        bool can_free = !live.empty();
        bool can_ret = t.frames.size() > 1;

        // Weighted pick: descend 4, alloc 5, free 2, ret 2.
        std::uint64_t w_call = calls.empty() ? 0 : 4;
        std::uint64_t w_alloc = can_alloc ? 5 : 0;
        std::uint64_t w_free = can_free ? 2 : 0;
        std::uint64_t w_ret = can_ret ? 2 : 0;
        std::uint64_t total = w_call + w_alloc + w_free + w_ret;
        if (total == 0) {  // this thread is stuck; another may still act
            ++idle_rounds;
            continue;
        }
        idle_rounds = 0;
        std::uint64_t pick = rng.below(total);
        --budget;

        if (pick < w_call) {
            const std::string& site = *calls[rng.below(calls.size())];
            const RuntimeEdge& re = wd.runtime_edge(site);
            ++top.used[site];
            Frame next{re.callee, {}, false};
            if (re.cls == EdgeClass::Inbound) {
                t.activations.emplace_back();
                next.pushed_activation = true;
            } else if (re.cls == EdgeClass::Inner) {
                ++t.activations.back()[site];
            }
            t.frames.push_back(std::move(next));
            events.push_back({TraceEvent::Kind::Call, tid, site, "", 0, 0, 0});
        } else if (pick < w_call + w_alloc) {
            emit_alloc(tid, t);
        } else if (pick < w_call + w_alloc + w_free) {
            std::size_t idx = rng.below(live.size());
            events.push_back({TraceEvent::Kind::Free, tid, "", live[idx].id, 0, 0, 0});
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
        } else {
            emit_ret(tid, t);
        }
    }

    for (std::uint32_t tid = 0; tid < options.threads; ++tid)
        while (threads[tid].frames.size() > 1) emit_ret(tid, threads[tid]);

    for (const LiveObject& obj : live)
        if (rng.chance(options.free_prob))
            events.push_back({TraceEvent::Kind::Free, obj.owner, "", obj.id, 0, 0, 0});

    return events;
}

}  // namespace semalloc

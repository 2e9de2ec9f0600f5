#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "semalloc/replay.hpp"
#include "semalloc/report.hpp"

using namespace semalloc;

namespace {

std::string read_fixture(const char* name) {
    std::ifstream in(std::string(FIXTURE_DIR) + "/" + name, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

WeightedDag sample_mixed() {
    return build_pipeline(parse_graph(read_fixture("sample_mixed.graph")));
}

// Two one-way paths to the allocator, both inside loops so reuse is in play.
WeightedDag two_lanes() {
    return build_pipeline(parse_graph(
        "entry main\nnode main\nnode x\nnode y\nnode malloc alloc\n"
        "edge e1 main x loop order=0\n"
        "edge e2 x malloc order=0\n"
        "edge e3 main y loop order=1\n"
        "edge e4 y malloc order=0\n"));
}

}  // namespace

TEST_CASE("parse: four-line trace") {
    auto wd = two_lanes();
    auto events = parse_trace("T0 call e1\nT0 alloc o1 16\nT0 free o1\nT0 ret\n", wd);
    REQUIRE(events.size() == 4);
    CHECK(events[0].kind == TraceEvent::Kind::Call);
    CHECK(events[1].kind == TraceEvent::Kind::Alloc);
    CHECK(events[1].size == 16);
    CHECK(events[2].kind == TraceEvent::Kind::Free);
    CHECK(events[3].kind == TraceEvent::Kind::Ret);
}

TEST_CASE("parse: ret below the trace start carries the line number") {
    auto wd = two_lanes();
    try {
        parse_trace("T0 call e1\nT0 ret\nT0 ret\n", wd);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
}

TEST_CASE("parse: rejections") {
    auto wd = two_lanes();
    CHECK_THROWS_AS(parse_trace("T0 call nope\n", wd), ParseError);
    CHECK_THROWS_AS(parse_trace("T0 call e2\n", wd), ParseError);  // not from main
    CHECK_THROWS_AS(parse_trace("T0 free ghost\n", wd), ParseError);
    CHECK_THROWS_AS(parse_trace("T0 alloc o1 16\n", wd), ParseError);  // main has no alloc edge
    CHECK_THROWS_AS(parse_trace("T1 call e1\n", wd), ParseError);      // unspawned thread
    CHECK_THROWS_AS(parse_trace("spawn 1\nspawn 1\n", wd), ParseError);
    CHECK_THROWS_AS(parse_trace("T0 call e1\nT0 alloc o1 0\n", wd), ParseError);
    CHECK_THROWS_AS(
        parse_trace("T0 call e1\nT0 alloc o1 8\nT0 free o1\nT0 free o1\n", wd), ParseError);
}

TEST_CASE("parse: threads nest independently") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "spawn 1\n"
        "T0 call e1\n"
        "T1 call e3\n"
        "T0 alloc o1 8\n"
        "T1 alloc o2 8\n"
        "T1 ret\n"
        "T0 ret\n"
        "T1 free o1\n",  // cross-thread free is legal
        wd);
    CHECK(events.size() == 8);
}

TEST_CASE("parse: several allocator sites need the explicit form") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode malloc alloc\n"
        "edge a main malloc order=0\nedge b main malloc order=1\n"));
    CHECK_THROWS_AS(parse_trace("T0 alloc o1 8\n", wd), ParseError);
    auto events = parse_trace("T0 call a\nT0 alloc o1 8\nT0 ret\n", wd);
    CHECK(events.size() == 3);
}

TEST_CASE("replay: distinct lanes stay apart even after a free") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "T0 call e1\nT0 alloc a1 16\nT0 ret\n"
        "T0 call e1\nT0 alloc a2 16\nT0 ret\n"
        "T0 free a2\n"
        "T0 call e3\nT0 alloc b1 16\nT0 ret\n",
        wd);
    auto r = replay(wd, events);
    CHECK(r.report.segregation_ok);
    const auto& ja = r.heap.history()[r.objects.at("a2").journal_idx];
    const auto& jb = r.heap.history()[r.objects.at("b1").journal_idx];
    CHECK(ja.tag.nid != jb.tag.nid);
    CHECK(ja.addr != jb.addr);
}

TEST_CASE("replay: same lane reuses its own slot and still passes") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "T0 call e1\nT0 alloc a1 16\nT0 ret\n"
        "T0 call e1\nT0 alloc a2 16\nT0 ret\n"
        "T0 free a2\n"
        "T0 call e1\nT0 alloc a3 16\nT0 ret\n",
        wd);
    auto r = replay(wd, events);
    CHECK(r.report.segregation_ok);
    CHECK(r.report.heap.reuses == 1);
    CHECK(r.objects.at("a2").addr == r.objects.at("a3").addr);
}

TEST_CASE("replay: identical traces on two threads never share addresses") {
    auto wd = two_lanes();
    std::ostringstream trace;
    trace << "spawn 1\n";
    for (int t = 0; t < 2; ++t)
        for (int i = 0; i < 5; ++i)
            trace << "T" << t << " call e1\nT" << t << " alloc t" << t << "o" << i
                  << " 16\nT" << t << " ret\n";
    auto r = replay(wd, parse_trace(trace.str(), wd));
    CHECK(r.report.segregation_ok);
    std::set<std::uint64_t> t0, t1;
    for (const auto& [obj, info] : r.objects)
        (obj[1] == '0' ? t0 : t1).insert(info.addr);
    for (auto a : t0) CHECK_FALSE(t1.count(a));
}

TEST_CASE("replay: implicit and explicit alloc forms tag identically") {
    auto wd = sample_mixed();
    auto implicit = replay(wd, parse_trace("T0 call s01\nT0 call s03\nT0 alloc o1 24\n", wd));
    auto explicit_form =
        replay(wd, parse_trace("T0 call s01\nT0 call s03\nT0 call s08\nT0 alloc o1 24\nT0 ret\n", wd));
    auto ta = implicit.heap.history()[0].tag;
    auto tb = explicit_form.heap.history()[0].tag;
    CHECK(ta == tb);
    CHECK(implicit.objects.at("o1").alloc_site == "s08");
    CHECK(explicit_form.objects.at("o1").alloc_site == "s08");
}

TEST_CASE("replay: tags carry the path weights") {
    auto wd = sample_mixed();
    struct Case {
        const char* trace;
        std::uint64_t nid;
        bool loop;
    };
    const Case cases[] = {
        {"T0 call s01\nT0 call s03\nT0 alloc o 8\n", 0, false},
        {"T0 call s01\nT0 call s04\nT0 alloc o 8\n", 1, false},
        {"T0 call s01\nT0 call s05\nT0 call s06\nT0 alloc o 8\n", 2, true},
        {"T0 call s01\nT0 call s05\nT0 alloc o 8\n", 3, true},
        {"T0 call s02\nT0 call s09\nT0 alloc o 8\n", 4, true},
        {"T0 call s02\nT0 call s09\nT0 call s11\nT0 call s12\nT0 alloc o 8\n", 4, true},
    };
    for (const auto& c : cases) {
        auto r = replay(wd, parse_trace(c.trace, wd));
        const auto& tag = r.heap.history()[0].tag;
        CHECK(tag.nid == c.nid);
        CHECK(tag.loop == c.loop);
    }
}

TEST_CASE("replay: reports are byte-for-byte deterministic") {
    auto wd = sample_mixed();
    GenOptions gen;
    gen.seed = 99;
    gen.n_events = 300;
    gen.threads = 2;
    gen.recursion_bound = 3;
    auto events = gen_trace(wd, gen);
    auto r1 = replay(wd, events);
    auto r2 = replay(wd, events);
    CHECK(replay_report(r1.report).dump(2) == replay_report(r2.report).dump(2));
}

TEST_CASE("replay: per-site census counts sites and tags") {
    auto wd = sample_mixed();
    auto events = parse_trace(
        "T0 call s01\nT0 call s03\nT0 alloc o1 8\nT0 ret\nT0 ret\n"
        "T0 call s01\nT0 call s04\nT0 alloc o2 8\nT0 ret\nT0 ret\n"
        "T0 call s01\nT0 call s05\nT0 alloc o3 8\nT0 ret\nT0 ret\n",
        wd);
    auto r = replay(wd, events);
    CHECK(r.report.native_sites == 2);  // s08 twice, s07 once
    CHECK(r.report.per_site.at("s08").allocs == 2);
    CHECK(r.report.per_site.at("s08").distinct_sematypes == 2);
    CHECK(r.report.per_site.at("s07").allocs == 1);
}

TEST_CASE("replay: errors carry the event index") {
    auto wd = two_lanes();
    std::vector<TraceEvent> events;
    events.push_back({TraceEvent::Kind::Call, 0, "e1", "", 0, 0, 0});
    events.push_back({TraceEvent::Kind::Call, 0, "e1", "", 0, 0, 0});  // illegal from x
    try {
        replay(wd, events);
        FAIL("expected ReplayError");
    } catch (const ReplayError& e) {
        CHECK(e.event_index() == 1);
    }
}

TEST_CASE("probe: attacker from the other lane is blocked") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "T0 call e1\nT0 alloc a1 16\nT0 ret\n"
        "T0 call e1\nT0 alloc a2 16\nT0 ret\n"
        "T0 free a2\n"
        "T0 call e3\nT0 alloc b1 16\nT0 ret\n",
        wd);
    auto findings = check_uaf(wd, events, UafProbe{"a2", {"b1"}});
    REQUIRE(findings.size() == 1);
    CHECK(findings[0].verdict == UafVerdict::Blocked);
    CHECK(findings[0].attacker_tag.nid != findings[0].dangling_tag.nid);
}

TEST_CASE("probe: same SemaType on the same thread overlaps") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "T0 call e1\nT0 alloc a1 16\nT0 ret\n"
        "T0 call e1\nT0 alloc a2 16\nT0 ret\n"
        "T0 free a2\n"
        "T0 call e1\nT0 alloc a3 16\nT0 ret\n",
        wd);
    auto findings = check_uaf(wd, events, UafProbe{"a2", {"a3"}});
    REQUIRE(findings.size() == 1);
    CHECK(findings[0].verdict == UafVerdict::Overlap);
    CHECK(findings[0].attacker_addr == findings[0].dangling_addr);
}

TEST_CASE("probe: same SemaType on another thread is blocked") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "spawn 1\n"
        "T0 call e1\nT0 alloc a1 16\nT0 ret\n"
        "T0 call e1\nT0 alloc a2 16\nT0 ret\n"
        "T0 free a2\n"
        "T1 call e1\nT1 alloc b1 16\nT1 ret\n"
        "T1 call e1\nT1 alloc b2 16\nT1 ret\n"
        "T1 call e1\nT1 alloc b3 16\nT1 ret\n",
        wd);
    auto findings = check_uaf(wd, events, UafProbe{"a2", {"b1", "b2", "b3"}});
    REQUIRE(findings.size() == 3);
    for (const auto& f : findings) {
        CHECK(f.verdict == UafVerdict::Blocked);
        CHECK(f.attacker_tag.nid == f.dangling_tag.nid);       // same lane
        CHECK(f.attacker_tag.thread_id != f.dangling_tag.thread_id);
    }
}

TEST_CASE("probe: unknown or inconsistent objects are input errors") {
    auto wd = two_lanes();
    auto events = parse_trace(
        "T0 call e1\nT0 alloc a1 16\nT0 ret\nT0 free a1\n"
        "T0 call e1\nT0 alloc a2 16\nT0 ret\n",
        wd);
    CHECK_THROWS_AS(check_uaf(wd, events, UafProbe{"ghost", {"a2"}}), ValidationError);
    CHECK_THROWS_AS(check_uaf(wd, events, UafProbe{"a2", {"a1"}}), ValidationError);   // never freed
    CHECK_THROWS_AS(check_uaf(wd, events, UafProbe{"a1", {"a1"}}), ValidationError);   // before free
}

TEST_CASE("gen: fixed seed reproduces the trace") {
    auto wd = sample_mixed();
    GenOptions gen;
    gen.seed = 5;
    gen.n_events = 200;
    gen.threads = 3;
    auto a = gen_trace(wd, gen);
    auto b = gen_trace(wd, gen);
    CHECK(format_trace(a) == format_trace(b));
    gen.seed = 6;
    CHECK(format_trace(a) != format_trace(gen_trace(wd, gen)));
}

TEST_CASE("gen: output parses and replays cleanly") {
    auto wd = sample_mixed();
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        GenOptions gen;
        gen.seed = seed;
        gen.n_events = 150;
        gen.threads = 1 + seed % 3;
        gen.recursion_bound = 3;
        gen.loop_bound = 2;
        auto events = gen_trace(wd, gen);
        auto reparsed = parse_trace(format_trace(events), wd);
        CHECK(reparsed.size() == events.size());
        auto r = replay(wd, reparsed);
        CHECK(r.report.segregation_ok);
    }
}

TEST_CASE("gen: loop-free acyclic graph yields one-time allocations only") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode x\nnode malloc alloc\n"
        "edge a main x order=0\nedge b x malloc order=0\n"));
    std::uint64_t total = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        GenOptions gen;
        gen.seed = seed;
        gen.n_events = 120;
        gen.loop_bound = 1;
        gen.recursion_bound = 0;
        auto r = replay(wd, gen_trace(wd, gen));
        total += r.report.heap.allocs;
        CHECK(r.report.heap.recurrent_allocs == 0);
    }
    CHECK(total > 0);  // a straight-line program allocates once per run
}

TEST_CASE("gen: recursion bound exposes distinct rid families") {
    auto wd = sample_mixed();
    std::set<std::uint64_t> rids;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        GenOptions gen;
        gen.seed = seed;
        gen.n_events = 250;
        gen.recursion_bound = 3;
        auto r = replay(wd, gen_trace(wd, gen));
        for (const auto& rec : r.heap.history())
            if (rec.tag.rid != 0) rids.insert(rec.tag.rid);
    }
    CHECK(rids.size() >= 3);
}

TEST_CASE("probe verdicts agree with the tag comparison") {
    // Any overlap must coincide with fully matching (thread, nid, rid) and
    // class; any tag difference must come back blocked.
    auto wd = sample_mixed();
    for (std::uint64_t seed = 40; seed <= 55; ++seed) {
        GenOptions gen;
        gen.seed = seed;
        gen.n_events = 250;
        gen.threads = 2;
        gen.recursion_bound = 2;
        gen.free_prob = 1.0;
        auto events = gen_trace(wd, gen);
        auto base = replay(wd, events);

        // first freed object with successors becomes the dangling probe
        std::string dangling;
        std::uint64_t free_seq = 0;
        for (const auto& [obj, info] : base.objects) {
            const auto& rec = base.heap.history()[info.journal_idx];
            if (rec.free_seq) {
                dangling = obj;
                free_seq = *rec.free_seq;
                break;
            }
        }
        if (dangling.empty()) continue;
        UafProbe probe{dangling, {}};
        for (const auto& [obj, info] : base.objects)
            if (base.heap.history()[info.journal_idx].alloc_seq > free_seq)
                probe.attackers.push_back(obj);
        if (probe.attackers.empty()) continue;

        const auto& drec = base.heap.history()[base.objects.at(dangling).journal_idx];
        for (const auto& f : check_uaf(wd, events, probe)) {
            const auto& arec = base.heap.history()[base.objects.at(f.attacker).journal_idx];
            bool same_key = arec.tag.thread_id == drec.tag.thread_id &&
                            arec.tag.nid == drec.tag.nid && arec.tag.rid == drec.tag.rid &&
                            arec.span == drec.span;
            if (f.verdict == UafVerdict::Overlap) CHECK(same_key);
            if (!same_key) CHECK(f.verdict == UafVerdict::Blocked);
        }
    }
}

TEST_CASE("huge requests flow through the replay") {
    auto wd = two_lanes();
    auto events = parse_trace("T0 call e1\nT0 alloc big 8589934592\nT0 ret\nT0 free big\n", wd);
    auto r = replay(wd, events);
    CHECK(r.report.segregation_ok);
    const auto& rec = r.heap.history()[0];
    CHECK(rec.kind == BlockKind::Huge);
    CHECK(rec.user_size == (1ull << 33));
    CHECK(rec.free_seq.has_value());
    CHECK(r.report.heap.leak_bytes == 0);
}

TEST_CASE("allocations from inside a self-recursive entry stay one-time") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode malloc alloc\n"
        "edge a main main order=0\nedge b main malloc order=1\n"));
    auto events = parse_trace(
        "T0 alloc o1 16\n"
        "T0 call a\nT0 alloc o2 16\nT0 ret\n"
        "T0 free o1\nT0 free o2\n"
        "T0 alloc o3 16\n",
        wd);
    auto r = replay(wd, events);
    CHECK(r.report.segregation_ok);
    // no loop-marked or entering edge on these walks: the loop bit stays off
    for (const auto& rec : r.heap.history()) {
        CHECK_FALSE(rec.tag.loop);
        CHECK(rec.pool == PoolKind::Global);
    }
    // and retired addresses never come back
    CHECK(r.objects.at("o3").addr != r.objects.at("o1").addr);
    CHECK(r.objects.at("o3").addr != r.objects.at("o2").addr);
}

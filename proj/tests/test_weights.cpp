#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "semalloc/weights.hpp"
#include "support/generators.hpp"

using namespace semalloc;
namespace ts = semalloc::testsupport;

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

// Exhaustive walk enumeration from `node`, summing slot weights. Small
// graphs only; used to check that no walk reaches the node's own weight.
void walk_sums(const WeightedDag& wd, const std::string& node, std::uint64_t acc,
               std::vector<std::uint64_t>& out, int depth) {
    REQUIRE(depth < 64);
    for (const Slot& sl : wd.slots.at(node)) {
        out.push_back(acc + sl.weight);
        walk_sums(wd, sl.callee_scc, acc + sl.weight, out, depth + 1);
    }
}

}  // namespace

TEST_CASE("two call sites into one helper get ascending weights") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode f\nnode malloc alloc\n"
        "edge a main f order=0\n"
        "edge b main f order=1\n"
        "edge c f malloc order=0\n"));
    CHECK(wd.node_weight.at("malloc") == 0);
    CHECK(wd.node_weight.at("f") == 1);
    CHECK(wd.node_weight.at("main") == 2);
    CHECK(wd.runtime_edge("a").weight == 0);
    CHECK(wd.runtime_edge("b").weight == 1);
    CHECK(wd.runtime_edge("c").weight == 0);

    auto paths = enumerate_paths(wd, "malloc");
    REQUIRE(paths.size() == 2);
    CHECK(path_nid(wd, paths[0]) == 0);
    CHECK(path_nid(wd, paths[1]) == 1);
}

TEST_CASE("smallest graph: one direct call") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode malloc alloc\nedge a main malloc order=0\n"));
    CHECK(wd.node_weight.at("main") == 1);
    CHECK(wd.runtime_edge("a").weight == 0);
    auto paths = enumerate_paths(wd, "malloc");
    REQUIRE(paths.size() == 1);
    CHECK(path_nid(wd, paths[0]) == 0);
}

TEST_CASE("sample fixture: weights and the five paths") {
    auto wd = sample_mixed();
    CHECK(wd.node_weight.at("main") == 5);
    CHECK(wd.node_weight.at("e") == 1);
    CHECK(wd.node_weight.at("c") == 1);  // the recursion group
    CHECK(wd.node_weight.at("malloc") == 0);

    auto paths = enumerate_paths(wd, "malloc");
    REQUIRE(paths.size() == 5);
    std::set<std::uint64_t> nids;
    std::size_t plain = 0;
    for (const auto& p : paths) {
        nids.insert(path_nid(wd, p));
        if (path_recursive_nodes(wd, p) == 0) ++plain;
    }
    CHECK(nids == std::set<std::uint64_t>{0, 1, 2, 3, 4});
    CHECK(plain == 4);  // the four traces that avoid the recursion group
}

TEST_CASE("sample fixture: runtime weight table") {
    auto wd = sample_mixed();
    const std::pair<const char*, std::uint64_t> expected[] = {
        {"s01", 0}, {"s02", 0}, {"s03", 0}, {"s04", 1}, {"s05", 0}, {"s06", 2}, {"s07", 3},
        {"s08", 0}, {"s09", 4}, {"s10", 0}, {"s11", 0}, {"s12", 0}, {"s13", 0}, {"s14", 0},
    };
    for (const auto& [site, w] : expected) CHECK(wd.runtime_edge(site).weight == w);
    // Both exits of the recursion group share one weight position.
    CHECK(wd.runtime_edge("s10").weight == wd.runtime_edge("s14").weight);
}

TEST_CASE("sample fixture: resolving concrete site sequences") {
    auto wd = sample_mixed();
    using V = std::vector<std::string>;
    CHECK(path_nid(wd, resolve_path(wd, V{"s01", "s03", "s08"})) == 0);
    CHECK(path_nid(wd, resolve_path(wd, V{"s01", "s04", "s08"})) == 1);
    CHECK(path_nid(wd, resolve_path(wd, V{"s01", "s05", "s06", "s08"})) == 2);
    CHECK(path_nid(wd, resolve_path(wd, V{"s01", "s05", "s07"})) == 3);
    CHECK(path_nid(wd, resolve_path(wd, V{"s02", "s09", "s10"})) == 4);
    CHECK(path_nid(wd, resolve_path(wd, V{"s02", "s09", "s14"})) == 4);  // same family
    CHECK_THROWS_AS(resolve_path(wd, V{"s08"}), ValidationError);
    CHECK_THROWS_AS(resolve_path(wd, V{"s01", "s03"}), ValidationError);  // ends at e
}

TEST_CASE("diamond has two paths") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode x\nnode y\nnode z\nnode malloc alloc\n"
        "edge a main x order=0\nedge b main y order=1\n"
        "edge c x z order=0\nedge d y z order=0\n"
        "edge e z malloc order=0\n"));
    CHECK(enumerate_paths(wd, "malloc").size() == 2);
}

TEST_CASE("fork chains double the path count per layer") {
    for (unsigned n = 1; n <= 10; ++n) {
        std::ostringstream g;
        g << "entry f0\n";
        for (unsigned i = 0; i <= n; ++i) g << "node f" << i << "\n";
        g << "node malloc alloc\n";
        for (unsigned i = 0; i < n; ++i) {
            g << "edge a" << i << " f" << i << " f" << i + 1 << " order=0\n";
            g << "edge b" << i << " f" << i << " f" << i + 1 << " order=1\n";
        }
        g << "edge mm f" << n << " malloc order=0\n";
        auto wd = build_pipeline(parse_graph(g.str()));
        CHECK(enumerate_paths(wd, "malloc").size() == (1ull << n));
        CHECK(wd.node_weight.at(wd.entry_scc) == (1ull << n));
    }
}

TEST_CASE("path-count guard trips") {
    std::ostringstream g;
    g << "entry f0\n";
    for (unsigned i = 0; i <= 8; ++i) g << "node f" << i << "\n";
    g << "node malloc alloc\n";
    for (unsigned i = 0; i < 8; ++i) {
        g << "edge a" << i << " f" << i << " f" << i + 1 << " order=0\n";
        g << "edge b" << i << " f" << i << " f" << i + 1 << " order=1\n";
    }
    g << "edge mm f8 malloc order=0\n";
    auto wd = build_pipeline(parse_graph(g.str()));
    CHECK(enumerate_paths(wd, "malloc").size() == 256);
    CHECK_THROWS_AS(enumerate_paths(wd, "malloc", 255), ValidationError);
}

TEST_CASE("every path nid is unique and within range") {
    for (std::uint64_t seed = 1000; seed < 1150; ++seed) {
        ts::GraphGenOptions opts;
        opts.allocators = 1 + static_cast<unsigned>(seed % 3);  // multiple sinks too
        auto wd = build_pipeline(ts::random_graph(seed, opts));
        std::set<std::uint64_t> nids;
        std::uint64_t total = 0;
        for (const auto& site : wd.allocator_nodes) {
            for (const auto& p : enumerate_paths(wd, site, 20000)) {
                std::uint64_t nid = path_nid(wd, p);
                CHECK(nid < wd.node_weight.at(wd.entry_scc));
                CHECK(nids.insert(nid).second);
                ++total;
            }
        }
        // the entry weight counts exactly the distinguishable paths
        CHECK(total == wd.node_weight.at(wd.entry_scc));
    }
}

TEST_CASE("no walk from a node reaches the node's own weight") {
    for (std::uint64_t seed = 2000; seed < 2100; ++seed) {
        ts::GraphGenOptions opts;
        opts.max_nodes = 12;
        auto wd = build_pipeline(ts::random_graph(seed, opts));
        for (const auto& [node, w] : wd.node_weight) {
            if (wd.slots.at(node).empty()) continue;
            std::vector<std::uint64_t> sums;
            walk_sums(wd, node, 0, sums, 0);
            for (std::uint64_t s : sums) CHECK(s < w);
        }
    }
}

TEST_CASE("weights ignore edge declaration order") {
    for (std::uint64_t seed = 3000; seed < 3020; ++seed) {
        auto g = ts::random_graph(seed);
        auto wd1 = build_pipeline(g);
        ts::TestRng rng{seed};
        for (std::size_t i = g.edges.size(); i > 1; --i)
            std::swap(g.edges[i - 1], g.edges[rng.below(i)]);
        auto wd2 = build_pipeline(g);
        CHECK(wd1.node_weight == wd2.node_weight);
        for (const auto& [site, re] : wd1.runtime)
            CHECK(re.weight == wd2.runtime_edge(site).weight);
    }
}

TEST_CASE("profile: loop-free acyclic graph collapses the bounds") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode x\nnode y\nnode malloc alloc\n"
        "edge a main x order=0\nedge b main y order=1\n"
        "edge c x malloc order=0\nedge d y malloc order=0\n"));
    auto p = security_profile(wd, 14);
    CHECK(p.min_sematypes == p.max_sematypes);
    CHECK(p.min_sematypes == 2);
    CHECK(p.k_any_path == 0);
    CHECK(p.k_all_paths == 0);
}

TEST_CASE("profile: sample fixture") {
    auto wd = sample_mixed();
    auto p = security_profile(wd, 14);
    CHECK(p.n_sites == 1);
    CHECK(p.paths_per_site.at("malloc") == 5);
    const auto& rs = p.scc_nodes_per_path.at("malloc");
    std::size_t recursive_paths = 0;
    for (auto r : rs) recursive_paths += r > 0;
    CHECK(recursive_paths == 1);
    CHECK(p.min_sematypes == 5);
    CHECK(p.max_sematypes == 4 + (1ull << 14));  // one recursive family
    CHECK(p.k_any_path == 1);   // some walk to the site crosses a loop edge
    CHECK(p.k_all_paths == 0);  // but not all of them
}

TEST_CASE("profile: recursive path contributes the full rid space") {
    auto wd = build_pipeline(parse_graph(
        "entry main\nnode main\nnode r\nnode malloc alloc\n"
        "edge a main r order=0\nedge b r r order=0\nedge c r malloc order=1\n"));
    auto p = security_profile(wd, 14);
    CHECK(p.min_sematypes == 1);
    CHECK(p.max_sematypes == 1ull << 14);
}

TEST_CASE("enumeration is deterministic") {
    auto wd = sample_mixed();
    auto a = enumerate_paths(wd, "malloc");
    auto b = enumerate_paths(wd, "malloc");
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].steps == b[i].steps);
}

TEST_CASE("a cyclic input to weight assignment is an internal error") {
    // condense never produces this; feed a hand-built cyclic dag
    auto g = parse_graph(
        "entry main\nnode main\nnode a\nnode b\nnode malloc alloc\n"
        "edge e1 main a order=0\nedge e2 a b order=0\nedge e3 b a order=0\n"
        "edge e4 b malloc order=1\n");
    CondensedDag fake;
    fake.sccs = {{"a", {"a"}, false, false},
                 {"b", {"b"}, false, false},
                 {"main", {"main"}, false, false},
                 {"malloc", {"malloc"}, false, true}};
    for (const auto& s : fake.sccs)
        fake.scc_of[s.id] = s.id;
    for (const auto& e : g.edges) {
        fake.edge_class[e.site_id] = EdgeClass::Plain;
        DagEdge de;
        de.caller_scc = e.caller;
        de.callee_scc = e.callee;
        de.sites = {e.site_id};
        de.carrier = e.site_id;
        de.order_key = {e.order};
        fake.dag_edges.push_back(de);
    }
    CHECK_THROWS_AS(assign_weights(g, fake), std::logic_error);
}

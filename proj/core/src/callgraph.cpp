#include "semalloc/callgraph.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace semalloc {

const FunctionNode* FlowCallGraph::find_node(std::string_view id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

const CallSiteEdge* FlowCallGraph::find_edge(std::string_view site_id) const {
    for (const auto& e : edges)
        if (e.site_id == site_id) return &e;
    return nullptr;
}

std::map<std::string, std::vector<std::size_t>> FlowCallGraph::adjacency() const {
    std::map<std::string, std::vector<std::size_t>> adj;
    for (std::size_t i = 0; i < edges.size(); ++i) adj[edges[i].caller].push_back(i);
    for (auto& [fn, out] : adj)
        std::sort(out.begin(), out.end(),
                  [&](std::size_t a, std::size_t b) { return edges[a].order < edges[b].order; });
    return adj;
}

std::string_view to_string(EdgeClass c) {
    switch (c) {
        case EdgeClass::Plain: return "plain";
        case EdgeClass::Inbound: return "inbound";
        case EdgeClass::Inner: return "inner";
        case EdgeClass::Outbound: return "outbound";
    }
    return "?";
}

const SccNode* CondensedDag::find_scc(std::string_view id) const {
    for (const auto& s : sccs)
        if (s.id == id) return &s;
    return nullptr;
}

bool CondensedDag::is_recursive(std::string_view scc_id) const {
    const SccNode* s = find_scc(scc_id);
    return s && s->recursive;
}

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

}  // namespace

FlowCallGraph parse_graph(std::string_view text) {
    FlowCallGraph g;
    std::unordered_map<std::string, std::size_t> node_line;
    std::unordered_map<std::string, std::size_t> site_line;
    std::vector<std::size_t> edge_lines;
    bool have_entry = false;

    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++lineno;

        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        auto tok = tokenize(line);
        if (tok.empty()) continue;

        if (tok[0] == "node") {
            if (tok.size() < 2 || tok.size() > 3)
                throw ParseError("expected 'node <id> [alloc]'", lineno);
            FunctionNode n;
            n.id = std::string(tok[1]);
            if (tok.size() == 3) {
                if (tok[2] != "alloc")
                    throw ParseError("unknown node flag '" + std::string(tok[2]) + "'", lineno);
                n.is_allocator = true;
            }
            if (!node_line.emplace(n.id, lineno).second)
                throw ParseError("duplicate node id '" + n.id + "'", lineno);
            g.nodes.push_back(std::move(n));
        } else if (tok[0] == "edge") {
            if (tok.size() < 4)
                throw ParseError("expected 'edge <site> <caller> <callee> [loop] [indirect] order=<n>'",
                                 lineno);
            CallSiteEdge e;
            e.site_id = std::string(tok[1]);
            e.caller = std::string(tok[2]);
            e.callee = std::string(tok[3]);
            bool have_order = false;
            for (std::size_t i = 4; i < tok.size(); ++i) {
                if (tok[i] == "loop") {
                    e.in_loop = true;
                } else if (tok[i] == "indirect") {
                    e.from_indirect = true;
                } else if (tok[i].starts_with("order=")) {
                    auto num = tok[i].substr(6);
                    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), e.order);
                    if (ec != std::errc{} || p != num.data() + num.size())
                        throw ParseError("bad order value '" + std::string(num) + "'", lineno);
                    have_order = true;
                } else {
                    throw ParseError("unknown edge attribute '" + std::string(tok[i]) + "'", lineno);
                }
            }
            if (!have_order)
                throw ParseError("edge '" + e.site_id + "' is missing order=<n>", lineno);
            if (!site_line.emplace(e.site_id, lineno).second)
                throw ParseError("duplicate site id '" + e.site_id + "'", lineno);
            g.edges.push_back(std::move(e));
            edge_lines.push_back(lineno);
        } else if (tok[0] == "entry") {
            if (tok.size() != 2) throw ParseError("expected 'entry <id>'", lineno);
            if (have_entry) throw ParseError("duplicate entry directive", lineno);
            g.entry = std::string(tok[1]);
            have_entry = true;
        } else {
            throw ParseError("unknown directive '" + std::string(tok[0]) + "'", lineno);
        }
    }

    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        if (!node_line.count(e.caller))
            throw ParseError("edge '" + e.site_id + "' references undeclared node '" + e.caller + "'",
                             edge_lines[i]);
        if (!node_line.count(e.callee))
            throw ParseError("edge '" + e.site_id + "' references undeclared node '" + e.callee + "'",
                             edge_lines[i]);
    }
    {
        std::map<std::string, std::set<int>> orders;
        for (std::size_t i = 0; i < g.edges.size(); ++i) {
            const auto& e = g.edges[i];
            if (!orders[e.caller].insert(e.order).second)
                throw ParseError("caller '" + e.caller + "' has two call sites with order=" +
                                     std::to_string(e.order),
                                 edge_lines[i]);
        }
    }
    if (!have_entry) throw ParseError("missing entry directive");
    const FunctionNode* entry = g.find_node(g.entry);
    if (!entry) throw ParseError("entry references undeclared node '" + g.entry + "'");
    if (entry->is_allocator) throw ParseError("entry node '" + g.entry + "' may not be an allocator");
    return g;
}

namespace {

struct GraphView {
    std::unordered_map<std::string, std::size_t> idx;
    std::vector<std::vector<std::size_t>> out;  // node idx -> edge idx list
    std::vector<std::vector<std::size_t>> in;

    explicit GraphView(const FlowCallGraph& g) {
        for (std::size_t i = 0; i < g.nodes.size(); ++i) idx[g.nodes[i].id] = i;
        out.resize(g.nodes.size());
        in.resize(g.nodes.size());
        for (std::size_t ei = 0; ei < g.edges.size(); ++ei) {
            out[idx.at(g.edges[ei].caller)].push_back(ei);
            in[idx.at(g.edges[ei].callee)].push_back(ei);
        }
    }
};

}  // namespace

FlowCallGraph trim_to_allocators(const FlowCallGraph& g) {
    GraphView v(g);
    const std::size_t n = g.nodes.size();

    // Allocators are terminal: walks never continue past them.
    auto passable = [&](std::size_t node) { return !g.nodes[node].is_allocator; };

    std::vector<char> fwd(n, 0), bwd(n, 0);
    {
        std::vector<std::size_t> stack;
        if (auto it = v.idx.find(g.entry); it != v.idx.end()) {
            fwd[it->second] = 1;
            stack.push_back(it->second);
        }
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            if (!passable(u)) continue;
            for (std::size_t ei : v.out[u]) {
                std::size_t w = v.idx.at(g.edges[ei].callee);
                if (!fwd[w]) {
                    fwd[w] = 1;
                    stack.push_back(w);
                }
            }
        }
    }
    {
        std::vector<std::size_t> stack;
        for (std::size_t i = 0; i < n; ++i)
            if (g.nodes[i].is_allocator) {
                bwd[i] = 1;
                stack.push_back(i);
            }
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t ei : v.in[u]) {
                std::size_t w = v.idx.at(g.edges[ei].caller);
                if (!passable(w)) continue;  // never walk back over an allocator
                if (!bwd[w]) {
                    bwd[w] = 1;
                    stack.push_back(w);
                }
            }
        }
    }

    bool any_alloc_reached = false;
    for (std::size_t i = 0; i < n; ++i)
        if (g.nodes[i].is_allocator && fwd[i]) any_alloc_reached = true;
    if (!any_alloc_reached)
        throw ValidationError("no allocation reachable from entry '" + g.entry + "'");

    FlowCallGraph r;
    r.entry = g.entry;
    for (std::size_t i = 0; i < n; ++i)
        if (fwd[i] && bwd[i]) r.nodes.push_back(g.nodes[i]);
    for (const auto& e : g.edges) {
        std::size_t c = v.idx.at(e.caller), d = v.idx.at(e.callee);
        if (g.nodes[c].is_allocator) continue;
        if (fwd[c] && bwd[c] && fwd[d] && bwd[d]) r.edges.push_back(e);
    }
    return r;
}

namespace {

// Kosaraju-Sharir: DFS finish order on G, then component sweep on the
// transpose in reverse finish order. Iterative to keep deep graphs safe.
std::map<std::string, std::string> kosaraju_components(const FlowCallGraph& g,
                                                       std::vector<SccNode>* sccs_out) {
    GraphView v(g);
    const std::size_t n = g.nodes.size();

    std::vector<std::size_t> order_ids(n);
    for (std::size_t i = 0; i < n; ++i) order_ids[i] = i;
    std::sort(order_ids.begin(), order_ids.end(),
              [&](std::size_t a, std::size_t b) { return g.nodes[a].id < g.nodes[b].id; });

    std::vector<char> seen(n, 0);
    std::vector<std::size_t> finish;
    finish.reserve(n);
    for (std::size_t root : order_ids) {
        if (seen[root]) continue;
        // (node, next out-edge position) pairs
        std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
        seen[root] = 1;
        while (!stack.empty()) {
            auto& [u, next] = stack.back();
            if (next < v.out[u].size()) {
                std::size_t w = v.idx.at(g.edges[v.out[u][next++]].callee);
                if (!seen[w]) {
                    seen[w] = 1;
                    stack.emplace_back(w, 0);
                }
            } else {
                finish.push_back(u);
                stack.pop_back();
            }
        }
    }

    std::vector<int> comp(n, -1);
    int ncomp = 0;
    for (auto it = finish.rbegin(); it != finish.rend(); ++it) {
        if (comp[*it] >= 0) continue;
        int c = ncomp++;
        std::vector<std::size_t> stack{*it};
        comp[*it] = c;
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t ei : v.in[u]) {
                std::size_t w = v.idx.at(g.edges[ei].caller);
                if (comp[w] < 0) {
                    comp[w] = c;
                    stack.push_back(w);
                }
            }
        }
    }

    std::vector<std::vector<std::string>> members(ncomp);
    for (std::size_t i = 0; i < n; ++i) members[comp[i]].push_back(g.nodes[i].id);

    std::map<std::string, std::string> scc_of;
    std::vector<SccNode> sccs;
    for (auto& m : members) {
        std::sort(m.begin(), m.end());
        SccNode s;
        s.id = m.front();
        s.members = m;
        for (const auto& fn : m) scc_of[fn] = s.id;
        sccs.push_back(std::move(s));
    }
    for (auto& s : sccs) {
        if (s.members.size() > 1) {
            s.recursive = true;
            continue;
        }
        for (const auto& e : g.edges)
            if (e.caller == s.id && e.callee == s.id) s.recursive = true;
    }
    std::sort(sccs.begin(), sccs.end(), [](const SccNode& a, const SccNode& b) { return a.id < b.id; });
    if (sccs_out) *sccs_out = std::move(sccs);
    return scc_of;
}

}  // namespace

FlowCallGraph mark_recurrent(const FlowCallGraph& g) {
    GraphView v(g);
    const std::size_t n = g.nodes.size();

    std::vector<SccNode> sccs;
    auto scc_of = kosaraju_components(g, &sccs);
    std::unordered_set<std::string> recursive_sccs;
    for (const auto& s : sccs)
        if (s.recursive) recursive_sccs.insert(s.id);
    auto tainted_node = [&](std::size_t i) {
        return recursive_sccs.count(scc_of.at(g.nodes[i].id)) != 0;
    };

    // Two-state reachability over (node, taint). Taint = the walk so far has
    // crossed an in-loop edge or visited a recursive SCC.
    auto fwd = std::vector<std::array<char, 2>>(n, {0, 0});
    auto bwd = std::vector<std::array<char, 2>>(n, {0, 0});
    {
        std::vector<std::pair<std::size_t, int>> stack;
        if (auto it = v.idx.find(g.entry); it != v.idx.end()) {
            int t = tainted_node(it->second) ? 1 : 0;
            fwd[it->second][t] = 1;
            stack.emplace_back(it->second, t);
        }
        while (!stack.empty()) {
            auto [u, t] = stack.back();
            stack.pop_back();
            for (std::size_t ei : v.out[u]) {
                std::size_t w = v.idx.at(g.edges[ei].callee);
                int t2 = (t || g.edges[ei].in_loop || tainted_node(w)) ? 1 : 0;
                if (!fwd[w][t2]) {
                    fwd[w][t2] = 1;
                    stack.emplace_back(w, t2);
                }
            }
        }
    }
    {
        std::vector<std::pair<std::size_t, int>> stack;
        for (std::size_t i = 0; i < n; ++i)
            if (g.nodes[i].is_allocator) {
                int t = tainted_node(i) ? 1 : 0;
                bwd[i][t] = 1;
                stack.emplace_back(i, t);
            }
        while (!stack.empty()) {
            auto [u, t] = stack.back();
            stack.pop_back();
            for (std::size_t ei : v.in[u]) {
                std::size_t w = v.idx.at(g.edges[ei].caller);
                int t2 = (t || g.edges[ei].in_loop || tainted_node(w)) ? 1 : 0;
                if (!bwd[w][t2]) {
                    bwd[w][t2] = 1;
                    stack.emplace_back(w, t2);
                }
            }
        }
    }

    FlowCallGraph r = g;
    for (auto& e : r.edges) {
        std::size_t c = v.idx.at(e.caller), d = v.idx.at(e.callee);
        bool relevant = false;
        for (int t1 = 0; t1 <= 1; ++t1)
            for (int t2 = 0; t2 <= 1; ++t2)
                if (fwd[c][t1] && bwd[d][t2] && (t1 || t2 || e.in_loop)) relevant = true;
        e.recurrent_relevant = relevant;
        e.prunable = !relevant;
    }
    for (auto& nd : r.nodes) {
        std::size_t i = v.idx.at(nd.id);
        bool relevant = false;
        for (int t1 = 0; t1 <= 1; ++t1)
            for (int t2 = 0; t2 <= 1; ++t2)
                if (fwd[i][t1] && bwd[i][t2] && (t1 || t2)) relevant = true;
        nd.prunable = !relevant;
    }
    return r;
}

CondensedDag condense(const FlowCallGraph& g) {
    CondensedDag d;
    d.scc_of = kosaraju_components(g, &d.sccs);

    for (auto& s : d.sccs)
        if (s.members.size() == 1) {
            const FunctionNode* n = g.find_node(s.id);
            s.allocator = n && n->is_allocator;
        }

    std::unordered_set<std::string> recursive_sccs;
    for (const auto& s : d.sccs)
        if (s.recursive) recursive_sccs.insert(s.id);

    for (const auto& e : g.edges) {
        const std::string& cs = d.scc_of.at(e.caller);
        const std::string& ds = d.scc_of.at(e.callee);
        if (cs == ds) {
            d.inner_sites.push_back(e.site_id);
            d.edge_class[e.site_id] = EdgeClass::Inner;
            continue;
        }
        EdgeClass cls = EdgeClass::Plain;
        if (recursive_sccs.count(cs))
            cls = EdgeClass::Outbound;
        else if (recursive_sccs.count(ds))
            cls = EdgeClass::Inbound;
        d.edge_class[e.site_id] = cls;

        DagEdge de;
        de.caller_scc = cs;
        de.callee_scc = ds;
        de.sites = {e.site_id};
        de.carrier = e.site_id;
        de.in_loop = e.in_loop;
        de.from_indirect = e.from_indirect;
        de.order_key = {e.order};
        d.dag_edges.push_back(std::move(de));
    }
    return d;
}

CondensedDag elide_single_callers(const CondensedDag& d) {
    CondensedDag r = d;
    // Post-trim the entry's SCC has no incoming edge (a cross-SCC edge back
    // into it would close a cycle), so it is never a merge candidate.
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<std::string, std::size_t> in_deg;
        for (const auto& s : r.sccs) in_deg[s.id] = 0;
        for (const auto& e : r.dag_edges) ++in_deg[e.callee_scc];

        for (const auto& s : r.sccs) {
            if (s.recursive || s.allocator || in_deg[s.id] != 1) continue;

            std::size_t in_idx = r.dag_edges.size();
            for (std::size_t i = 0; i < r.dag_edges.size(); ++i)
                if (r.dag_edges[i].callee_scc == s.id) in_idx = i;
            const DagEdge head = r.dag_edges[in_idx];

            std::vector<DagEdge> spliced;
            std::vector<DagEdge> rest;
            for (std::size_t i = 0; i < r.dag_edges.size(); ++i) {
                if (i == in_idx) continue;
                const DagEdge& e = r.dag_edges[i];
                if (e.caller_scc != s.id) {
                    rest.push_back(e);
                    continue;
                }
                DagEdge merged;
                merged.caller_scc = head.caller_scc;
                merged.callee_scc = e.callee_scc;
                merged.sites = head.sites;
                merged.sites.insert(merged.sites.end(), e.sites.begin(), e.sites.end());
                merged.carrier = e.carrier;
                merged.in_loop = head.in_loop || e.in_loop;
                merged.from_indirect = head.from_indirect || e.from_indirect;
                merged.order_key = head.order_key;
                merged.order_key.insert(merged.order_key.end(), e.order_key.begin(),
                                        e.order_key.end());
                spliced.push_back(std::move(merged));
            }
            rest.insert(rest.end(), spliced.begin(), spliced.end());
            r.dag_edges = std::move(rest);
            std::erase_if(r.sccs, [&](const SccNode& x) { return x.id == s.id; });
            changed = true;
            break;
        }
    }
    return r;
}

}  // namespace semalloc

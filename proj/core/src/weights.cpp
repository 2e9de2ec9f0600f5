#include "semalloc/weights.hpp"

#include <algorithm>
#include <cassert>
#include <set>
#include <stdexcept>

namespace semalloc {

namespace {

constexpr std::uint64_t kWeightOverflowGuard = 1ull << 62;

// Sort key of a DAG edge inside its caller's outgoing list.
std::pair<std::vector<int>, std::vector<std::string>> edge_sort_key(const DagEdge& e) {
    return {e.order_key, e.sites};
}

// Group key for outbound edges of a recursive node: everything but the
// first site (the member-local exit) plus the callee.
std::pair<std::string, std::vector<std::string>> outbound_group_key(const DagEdge& e) {
    return {e.callee_scc, {e.sites.begin() + 1, e.sites.end()}};
}

}  // namespace

const RuntimeEdge& WeightedDag::runtime_edge(const std::string& site_id) const {
    auto it = runtime.find(site_id);
    if (it == runtime.end()) throw ValidationError("unknown site id '" + site_id + "'");
    return it->second;
}

WeightedDag assign_weights(const FlowCallGraph& g, const CondensedDag& d) {
    WeightedDag wd;
    wd.graph = g;
    wd.dag = d;
    wd.entry_scc = d.scc_of.at(g.entry);
    for (const auto& n : g.nodes)
        if (n.is_allocator) wd.allocator_nodes.push_back(n.id);
    std::sort(wd.allocator_nodes.begin(), wd.allocator_nodes.end());

    // Build slots per node.
    std::map<std::string, std::vector<std::size_t>> out_edges;
    for (const auto& s : d.sccs) out_edges[s.id];
    for (std::size_t i = 0; i < d.dag_edges.size(); ++i)
        out_edges[d.dag_edges[i].caller_scc].push_back(i);

    for (const auto& s : d.sccs) {
        std::vector<Slot>& slots = wd.slots[s.id];
        if (!s.recursive) {
            for (std::size_t ei : out_edges[s.id]) {
                Slot sl;
                sl.callee_scc = d.dag_edges[ei].callee_scc;
                sl.edge_idx = {ei};
                sl.rep_idx = ei;
                sl.in_loop = d.dag_edges[ei].in_loop;
                slots.push_back(std::move(sl));
            }
        } else {
            std::map<std::pair<std::string, std::vector<std::string>>, Slot> groups;
            for (std::size_t ei : out_edges[s.id]) {
                const DagEdge& e = d.dag_edges[ei];
                Slot& sl = groups[outbound_group_key(e)];
                if (sl.edge_idx.empty()) {
                    sl.callee_scc = e.callee_scc;
                    sl.rep_idx = ei;
                } else if (edge_sort_key(e) < edge_sort_key(d.dag_edges[sl.rep_idx])) {
                    sl.rep_idx = ei;
                }
                sl.edge_idx.push_back(ei);
                sl.in_loop = sl.in_loop || e.in_loop;
            }
            for (auto& [key, sl] : groups) slots.push_back(std::move(sl));
        }
        std::sort(slots.begin(), slots.end(), [&](const Slot& a, const Slot& b) {
            return edge_sort_key(d.dag_edges[a.rep_idx]) < edge_sort_key(d.dag_edges[b.rep_idx]);
        });
    }

    // Kahn topological order, lexicographic tie-break.
    {
        std::map<std::string, std::size_t> in_deg;
        for (const auto& s : d.sccs) in_deg[s.id] = 0;
        for (const auto& e : d.dag_edges) ++in_deg[e.callee_scc];
        std::set<std::string> ready;
        for (const auto& [id, deg] : in_deg)
            if (deg == 0) ready.insert(id);
        while (!ready.empty()) {
            std::string id = *ready.begin();
            ready.erase(ready.begin());
            wd.topo_order.push_back(id);
            for (const Slot& sl : wd.slots[id])
                for (std::size_t ei : sl.edge_idx)
                    if (--in_deg[d.dag_edges[ei].callee_scc] == 0)
                        ready.insert(d.dag_edges[ei].callee_scc);
        }
        if (wd.topo_order.size() != d.sccs.size())
            throw std::logic_error("cycle detected in condensed graph");
    }

    // Callees first.
    for (auto it = wd.topo_order.rbegin(); it != wd.topo_order.rend(); ++it) {
        std::uint64_t w = 0;
        for (Slot& sl : wd.slots[*it]) {
            sl.weight = w;
            std::uint64_t inc = std::max<std::uint64_t>(1, wd.node_weight.at(sl.callee_scc));
            w += inc;
            if (w >= kWeightOverflowGuard) throw ValidationError("path weight overflow");
        }
        wd.node_weight[*it] = w;
    }

    // Per-site runtime table. Carriers of DAG edges receive their slot
    // weight, everything else (spliced heads, intra-SCC sites) carries zero.
    std::map<std::string, const CallSiteEdge*> by_site;
    for (const auto& e : g.edges) by_site[e.site_id] = &e;
    for (const auto& [site, edge] : by_site) {
        RuntimeEdge re;
        re.caller = edge->caller;
        re.callee = edge->callee;
        re.in_loop = edge->in_loop;
        re.cls = d.edge_class.at(site);
        const FunctionNode* callee = g.find_node(edge->callee);
        re.callee_is_allocator = callee && callee->is_allocator;
        wd.runtime[site] = re;
    }
    for (const auto& [node, slots] : wd.slots)
        for (const Slot& sl : slots)
            for (std::size_t ei : sl.edge_idx) wd.runtime.at(d.dag_edges[ei].carrier).weight = sl.weight;

    return wd;
}

WeightedDag build_pipeline(const FlowCallGraph& parsed) {
    FlowCallGraph trimmed = trim_to_allocators(parsed);
    FlowCallGraph marked = mark_recurrent(trimmed);
    CondensedDag cond = condense(marked);
    CondensedDag elided = elide_single_callers(cond);
    return assign_weights(marked, elided);
}

namespace {

std::uint64_t count_paths_to(const WeightedDag& wd, const std::string& target) {
    std::map<std::string, std::uint64_t> ways;
    ways[wd.entry_scc] = 1;
    std::uint64_t total = 0;
    for (const auto& node : wd.topo_order) {
        auto it = ways.find(node);
        if (it == ways.end() || it->second == 0) continue;
        if (node == target) total += it->second;
        for (const Slot& sl : wd.slots.at(node)) ways[sl.callee_scc] += it->second;
    }
    return total;
}

}  // namespace

std::vector<DagPath> enumerate_paths(const WeightedDag& wd, const std::string& site,
                                     std::uint64_t max_paths) {
    auto scc_it = wd.dag.scc_of.find(site);
    if (scc_it == wd.dag.scc_of.end()) throw ValidationError("unknown site '" + site + "'");
    const std::string& target = scc_it->second;
    if (count_paths_to(wd, target) > max_paths)
        throw ValidationError("path-count guard exceeded for site '" + site + "'");

    std::vector<DagPath> out;
    DagPath cur;
    // Deterministic DFS over slots.
    auto dfs = [&](auto&& self, const std::string& node) -> void {
        if (node == target) {
            out.push_back(cur);
            return;
        }
        const auto& slots = wd.slots.at(node);
        for (std::size_t i = 0; i < slots.size(); ++i) {
            cur.steps.emplace_back(node, i);
            self(self, slots[i].callee_scc);
            cur.steps.pop_back();
        }
    };
    dfs(dfs, wd.entry_scc);
    return out;
}

std::uint64_t path_nid(const WeightedDag& wd, const DagPath& path) {
    std::uint64_t sum = 0;
    for (const auto& [node, slot] : path.steps) sum += wd.slots.at(node)[slot].weight;
    return sum;
}

DagPath resolve_path(const WeightedDag& wd, std::span<const std::string> site_ids) {
    DagPath path;
    std::string node = wd.entry_scc;
    std::size_t pos = 0;
    while (pos < site_ids.size()) {
        const auto& slots = wd.slots.at(node);
        bool matched = false;
        for (std::size_t i = 0; i < slots.size() && !matched; ++i) {
            for (std::size_t ei : slots[i].edge_idx) {
                const DagEdge& e = wd.dag.dag_edges[ei];
                if (e.sites.size() > site_ids.size() - pos) continue;
                if (!std::equal(e.sites.begin(), e.sites.end(), site_ids.begin() + pos)) continue;
                path.steps.emplace_back(node, i);
                node = e.callee_scc;
                pos += e.sites.size();
                matched = true;
                break;
            }
        }
        if (!matched)
            throw ValidationError("disconnected path: no edge matches site '" + site_ids[pos] +
                                  "' from '" + node + "'");
    }
    const SccNode* last = wd.dag.find_scc(node);
    if (!last || !last->allocator)
        throw ValidationError("non-terminal path: ends at '" + node + "', not an allocator");
    return path;
}

std::vector<std::string> path_nodes(const WeightedDag& wd, const DagPath& path) {
    std::vector<std::string> nodes{wd.entry_scc};
    for (const auto& [node, slot] : path.steps) nodes.push_back(wd.slots.at(node)[slot].callee_scc);
    return nodes;
}

std::vector<std::string> path_rep_sites(const WeightedDag& wd, const DagPath& path) {
    std::vector<std::string> sites;
    for (const auto& [node, slot] : path.steps) {
        const Slot& sl = wd.slots.at(node)[slot];
        const DagEdge& rep = wd.dag.dag_edges[sl.rep_idx];
        sites.insert(sites.end(), rep.sites.begin(), rep.sites.end());
    }
    return sites;
}

bool path_crosses_loop(const WeightedDag& wd, const DagPath& path) {
    for (const auto& [node, slot] : path.steps)
        if (wd.slots.at(node)[slot].in_loop) return true;
    return false;
}

std::uint64_t path_recursive_nodes(const WeightedDag& wd, const DagPath& path) {
    std::uint64_t r = 0;
    for (const auto& id : path_nodes(wd, path))
        if (wd.dag.is_recursive(id)) ++r;
    return r;
}

SecurityProfile security_profile(const WeightedDag& wd, unsigned rid_bits,
                                 std::uint64_t max_paths) {
    SecurityProfile p;
    p.rid_bits = rid_bits;
    p.n_sites = wd.allocator_nodes.size();
    const std::uint64_t rid_states = rid_bits >= 63 ? (1ull << 62) : (1ull << rid_bits);

    for (const auto& site : wd.allocator_nodes) {
        auto paths = enumerate_paths(wd, site, max_paths);
        p.paths_per_site[site] = paths.size();
        auto& rs = p.scc_nodes_per_path[site];
        auto& nids = p.nid_per_path[site];
        auto& loops = p.loop_per_path[site];
        bool any_loop = false, all_loop = !paths.empty();
        for (const auto& path : paths) {
            std::uint64_t r = path_recursive_nodes(wd, path);
            bool loop = path_crosses_loop(wd, path);
            rs.push_back(r);
            nids.push_back(path_nid(wd, path));
            loops.push_back(loop);
            any_loop |= loop;
            all_loop &= loop;
            p.min_sematypes += 1;
            p.max_sematypes += (r > 0) ? rid_states : 1;
        }
        if (any_loop) ++p.k_any_path;
        if (all_loop) ++p.k_all_paths;
    }
    return p;
}

}  // namespace semalloc

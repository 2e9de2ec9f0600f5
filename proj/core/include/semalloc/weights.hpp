// Collision-free weight assignment over the condensed DAG, path/nID
// machinery, and the derived security profile.
//
// Weights follow the running-sum rule: per node, outgoing positions get
// weights 0, w1, w1+w2, ... where each increment is max(1, callee weight),
// and the node weight is the final sum. The cumulative weight of a full
// entry-to-allocator path is then unique per path.
//
// Outgoing edges of a *recursive* node that leave through different members
// towards the same callee are one logical position: which member makes the
// outbound call is intra-SCC information and is tracked by the recurrence
// id, not the path weight.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "semalloc/callgraph.hpp"

namespace semalloc {

struct RuntimeEdge {
    std::string caller;
    std::string callee;
    EdgeClass cls = EdgeClass::Plain;
    bool in_loop = false;
    bool callee_is_allocator = false;
    std::uint64_t weight = 0;  // nID increment at this call site
};

// One weight position of a DAG node.
struct Slot {
    std::string callee_scc;
    std::uint64_t weight = 0;
    std::vector<std::size_t> edge_idx;  // members, indices into dag.dag_edges
    std::size_t rep_idx = 0;            // deterministic representative
    bool in_loop = false;               // OR over members
};

struct WeightedDag {
    FlowCallGraph graph;  // trimmed (and marked) source graph
    CondensedDag dag;     // post-elision condensation
    std::string entry_scc;
    std::vector<std::string> topo_order;
    std::map<std::string, std::uint64_t> node_weight;
    std::map<std::string, std::vector<Slot>> slots;
    std::map<std::string, RuntimeEdge> runtime;  // every original site id
    std::vector<std::string> allocator_nodes;    // sorted

    const RuntimeEdge& runtime_edge(const std::string& site_id) const;
};

// A path through the DAG as a sequence of (node, slot index) steps.
struct DagPath {
    std::vector<std::pair<std::string, std::size_t>> steps;
};

// `g` must be trimmed; `d` its condensation, with or without elision.
WeightedDag assign_weights(const FlowCallGraph& g, const CondensedDag& d);

// Full pipeline: trim, mark, condense, elide, assign.
WeightedDag build_pipeline(const FlowCallGraph& parsed);

// All entry-to-`site` paths (site = allocator function), deterministic
// order. Throws ValidationError when the count exceeds `max_paths`.
std::vector<DagPath> enumerate_paths(const WeightedDag& wd, const std::string& site,
                                     std::uint64_t max_paths = 1'000'000);

std::uint64_t path_nid(const WeightedDag& wd, const DagPath& path);

// Resolves a concrete original-site sequence (entry to allocator) to the
// DAG path it belongs to. Throws ValidationError for disconnected or
// non-terminal sequences.
DagPath resolve_path(const WeightedDag& wd, std::span<const std::string> site_ids);

// Rendering helpers.
std::vector<std::string> path_nodes(const WeightedDag& wd, const DagPath& path);
std::vector<std::string> path_rep_sites(const WeightedDag& wd, const DagPath& path);
bool path_crosses_loop(const WeightedDag& wd, const DagPath& path);
std::uint64_t path_recursive_nodes(const WeightedDag& wd, const DagPath& path);

struct SecurityProfile {
    std::size_t n_sites = 0;  // allocator functions
    std::map<std::string, std::uint64_t> paths_per_site;
    // Aligned with enumerate_paths order, per site.
    std::map<std::string, std::vector<std::uint64_t>> scc_nodes_per_path;
    std::map<std::string, std::vector<std::uint64_t>> nid_per_path;
    std::map<std::string, std::vector<bool>> loop_per_path;
    std::size_t k_any_path = 0;  // sites with >=1 loop-crossing path
    std::size_t k_all_paths = 0;
    std::uint64_t min_sematypes = 0;
    std::uint64_t max_sematypes = 0;
    unsigned rid_bits = 14;
};

SecurityProfile security_profile(const WeightedDag& wd, unsigned rid_bits,
                                 std::uint64_t max_paths = 1'000'000);

}  // namespace semalloc

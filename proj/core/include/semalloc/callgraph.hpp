// Flow-sensitive call graphs: parsing, validation, trimming to the
// allocation-relevant core, recurrence marking, SCC condensation and
// the single-caller inlining pass.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace semalloc {

// Raised for malformed graph/trace files. `line` is 1-based, 0 when the
// error is not tied to a specific line.
class ParseError : public std::runtime_error {
public:
    ParseError(std::string msg, std::size_t line = 0)
        : std::runtime_error(line ? ("line " + std::to_string(line) + ": " + msg) : msg),
          line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FunctionNode {
    std::string id;
    bool is_allocator = false;
    // Set by mark_recurrent: node sits on no entry-to-allocator walk that
    // can recur, so instrumentation could skip it. Kept, never removed.
    bool prunable = false;
};

// One textual call site. Two calls from the same caller to the same callee
// are two distinct edges; `order` is the site's position within the caller.
struct CallSiteEdge {
    std::string site_id;
    std::string caller;
    std::string callee;
    bool in_loop = false;
    bool from_indirect = false;
    int order = 0;

    // Derived by mark_recurrent.
    bool recurrent_relevant = false;
    bool prunable = false;
};

struct FlowCallGraph {
    std::vector<FunctionNode> nodes;
    std::vector<CallSiteEdge> edges;
    std::string entry;

    const FunctionNode* find_node(std::string_view id) const;
    const CallSiteEdge* find_edge(std::string_view site_id) const;
    // Out-edge indices per function, sorted by `order`.
    std::map<std::string, std::vector<std::size_t>> adjacency() const;
};

enum class EdgeClass : std::uint8_t {
    Plain,     // neither endpoint in a recursive SCC
    Inbound,   // non-recursive caller -> member of a recursive SCC
    Inner,     // both endpoints in the same SCC
    Outbound,  // member of a recursive SCC -> anything outside it
};

std::string_view to_string(EdgeClass c);

struct SccNode {
    std::string id;  // lexicographically smallest member
    std::vector<std::string> members;
    bool recursive = false;  // >1 member, or a single member with a self-edge
    bool allocator = false;  // singleton allocator function
};

// A DAG edge after condensation. Initially wraps exactly one original call
// site; elide_single_callers splices chains, so `sites` grows while
// `carrier` names the one original site that carries the runtime weight.
struct DagEdge {
    std::string caller_scc;
    std::string callee_scc;
    std::vector<std::string> sites;  // original site ids, caller-to-callee order
    std::string carrier;             // last constituent site
    bool in_loop = false;            // OR over constituents
    bool from_indirect = false;
    // Ordering key within the caller: concatenated `order` values of the
    // head sites along the splice chain. Lexicographic compare.
    std::vector<int> order_key;

    const std::string& rep_site() const { return sites.front(); }
};

struct CondensedDag {
    std::vector<SccNode> sccs;                    // sorted by id
    std::map<std::string, std::string> scc_of;    // function id -> scc id
    std::vector<DagEdge> dag_edges;               // cross-SCC edges
    std::vector<std::string> inner_sites;         // intra-SCC original sites
    std::map<std::string, EdgeClass> edge_class;  // every original site id

    const SccNode* find_scc(std::string_view id) const;
    bool is_recursive(std::string_view scc_id) const;
};

// Line-oriented format:
//   node <id> [alloc]
//   edge <site_id> <caller> <callee> [loop] [indirect] order=<n>
//   entry <id>
//   # comment
FlowCallGraph parse_graph(std::string_view text);

// Keeps exactly the nodes and edges lying on some entry-to-allocator walk.
// Allocator nodes are sinks: their outgoing edges are dropped. Throws
// ValidationError when no allocation is reachable from the entry.
FlowCallGraph trim_to_allocators(const FlowCallGraph& g);

// Derives recurrence flags. An edge is recurrent-relevant iff some
// entry-to-allocator walk through it traverses an in-loop edge or touches a
// member of a recursive SCC; everything else is flagged prunable (and kept).
FlowCallGraph mark_recurrent(const FlowCallGraph& g);

// Kosaraju-Sharir SCC condensation plus edge classification.
CondensedDag condense(const FlowCallGraph& g);

// Repeatedly merges every non-allocator, non-recursive DAG node that has
// exactly one incoming edge into its caller. Entry-to-allocator walks are
// preserved one-to-one.
CondensedDag elide_single_callers(const CondensedDag& d);

}  // namespace semalloc

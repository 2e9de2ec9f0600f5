#include "semalloc/report.hpp"

#include <algorithm>
#include <set>

namespace semalloc {

Json tag_json(const SemaTypeTag& tag) {
    Json j;
    j["thread"] = tag.thread_id;
    j["loop"] = tag.loop;
    j["nid"] = tag.nid;
    j["rid"] = tag.rid;
    return j;
}

Json analyze_report(const FlowCallGraph& parsed, const WeightedDag& wd, const SecurityProfile& profile,
                    const FieldLayout& layout, std::size_t path_listing_cap) {
    Json j;

    {
        Json g;
        g["entry"] = parsed.entry;
        g["nodes"] = parsed.nodes.size();
        g["edges"] = parsed.edges.size();
        Json allocs = Json::array();
        for (const auto& n : parsed.nodes)
            if (n.is_allocator) allocs.push_back(n.id);
        g["allocators"] = allocs;
        j["graph"] = g;
    }
    {
        Json t;
        t["kept_nodes"] = wd.graph.nodes.size();
        t["kept_edges"] = wd.graph.edges.size();
        Json removed = Json::array();
        std::set<std::string> kept;
        for (const auto& n : wd.graph.nodes) kept.insert(n.id);
        for (const auto& n : parsed.nodes)
            if (!kept.count(n.id)) removed.push_back(n.id);
        t["removed_nodes"] = removed;
        j["trim"] = t;
    }
    {
        Json m;
        Json rec_sites = Json::array(), prun_edges = Json::array(), prun_nodes = Json::array();
        for (const auto& e : wd.graph.edges) {
            if (e.prunable) prun_edges.push_back(e.site_id);
            if (e.recurrent_relevant && wd.runtime_edge(e.site_id).callee_is_allocator)
                rec_sites.push_back(e.site_id);
        }
        for (const auto& n : wd.graph.nodes)
            if (n.prunable) prun_nodes.push_back(n.id);
        m["recurrent_alloc_sites"] = rec_sites;
        m["prunable_nodes"] = prun_nodes;
        m["prunable_edges"] = prun_edges;
        j["recurrence"] = m;
    }
    {
        Json sccs = Json::array();
        for (const auto& s : condense(wd.graph).sccs) {
            Json sj;
            sj["id"] = s.id;
            sj["members"] = s.members;
            sj["recursive"] = s.recursive;
            sccs.push_back(sj);
        }
        j["sccs"] = sccs;
    }
    {
        Json w;
        Json nodes;
        for (const auto& id : wd.topo_order) nodes[id] = wd.node_weight.at(id);
        w["dag_nodes"] = nodes;
        Json sites;
        for (const auto& [site, re] : wd.runtime) {
            Json sj;
            sj["weight"] = re.weight;
            sj["class"] = std::string(to_string(re.cls));
            sj["loop"] = re.in_loop;
            sites[site] = sj;
        }
        w["sites"] = sites;
        j["weights"] = w;
    }
    {
        Json per_site;
        for (const auto& site : wd.allocator_nodes) {
            Json sj;
            sj["paths"] = profile.paths_per_site.at(site);
            Json listing = Json::array();
            auto paths = enumerate_paths(wd, site);
            const auto& nids = profile.nid_per_path.at(site);
            const auto& loops = profile.loop_per_path.at(site);
            const auto& rs = profile.scc_nodes_per_path.at(site);
            for (std::size_t i = 0; i < paths.size() && i < path_listing_cap; ++i) {
                Json pj;
                auto sites = path_rep_sites(wd, paths[i]);
                std::vector<std::string> functions{wd.graph.entry};
                for (const auto& s : sites) functions.push_back(wd.runtime_edge(s).callee);
                pj["functions"] = functions;
                pj["dag_nodes"] = path_nodes(wd, paths[i]);
                pj["sites"] = sites;
                pj["nid"] = nids[i];
                pj["loop"] = static_cast<bool>(loops[i]);
                pj["recursive_nodes"] = rs[i];
                listing.push_back(pj);
            }
            sj["listing"] = listing;
            sj["listing_truncated"] = paths.size() > path_listing_cap;
            per_site[site] = sj;
        }
        j["paths"] = per_site;
    }
    {
        Json p;
        p["n_sites"] = profile.n_sites;
        Json per;
        for (const auto& [site, count] : profile.paths_per_site) per[site] = count;
        p["paths_per_site"] = per;
        p["k_any_path"] = profile.k_any_path;
        p["k_all_paths"] = profile.k_all_paths;
        p["min_sematypes"] = profile.min_sematypes;
        p["max_sematypes"] = profile.max_sematypes;
        p["rid_bits"] = profile.rid_bits;
        j["profile"] = p;
    }
    {
        Json c;
        c["nid_bits"] = layout.nid_bits;
        c["rid_bits"] = layout.rid_bits;
        c["size_bits"] = layout.size_bits;
        j["config"] = c;
    }
    j["capacity_warning"] =
        profile.min_sematypes > (layout.nid_bits >= 63 ? ~0ull : (1ull << layout.nid_bits));
    return j;
}

namespace {

Json heap_stats_json(const HeapStats& h) {
    Json j;
    j["allocs"] = h.allocs;
    j["frees"] = h.frees;
    j["reuses"] = h.reuses;
    j["invalid_frees"] = h.invalid_frees;
    j["deferred_frees"] = h.deferred_frees;
    j["recurrent_allocs"] = h.recurrent_allocs;
    j["recurrent_pools"] = h.recurrent_pools;
    j["recurrent_alloc_pct"] = h.recurrent_alloc_pct;
    j["avg_allocs_per_recurrent_pool"] = h.avg_allocs_per_recurrent_pool;
    j["leak_bytes"] = h.leak_bytes;
    j["leak_pct"] = h.leak_pct;
    j["peak_virtual"] = h.peak_virtual;
    j["peak_resident"] = h.peak_resident;
    j["distinct_sematypes"] = h.distinct_sematypes;
    j["pool_growths"] = h.pool_growths;
    return j;
}

}  // namespace

Json replay_report(const ReplayReport& report) {
    Json j;
    j["events"] = report.events;
    j["verdict"] = report.segregation_ok ? "pass" : "fail";
    j["heap"] = heap_stats_json(report.heap);
    Json census;
    for (const auto& [site, sc] : report.per_site) {
        Json cj;
        cj["allocs"] = sc.allocs;
        cj["distinct_sematypes"] = sc.distinct_sematypes;
        census[site] = cj;
    }
    j["site_census"] = census;
    j["native_sites"] = report.native_sites;
    j["nid_wraps"] = report.nid_wraps;
    j["violations"] = report.violations;
    j["diagnostics"] = report.diagnostics;
    return j;
}

Json uaf_report(const UafProbe& probe, std::span<const UafFinding> findings) {
    Json j;
    j["dangling"] = probe.dangling;
    Json list = Json::array();
    for (const auto& f : findings) {
        Json fj;
        fj["attacker"] = f.attacker;
        fj["verdict"] = f.verdict == UafVerdict::Overlap ? "overlap" : "blocked";
        fj["attacker_tag"] = tag_json(f.attacker_tag);
        fj["dangling_tag"] = tag_json(f.dangling_tag);
        fj["attacker_addr"] = f.attacker_addr;
        fj["dangling_addr"] = f.dangling_addr;
        list.push_back(fj);
    }
    j["findings"] = list;
    return j;
}

}  // namespace semalloc

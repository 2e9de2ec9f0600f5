// JSON report assembly. Keys are emitted in fixed order so identical
// inputs produce byte-identical reports.
#pragma once

#include <json.hpp>

#include "semalloc/replay.hpp"
#include "semalloc/weights.hpp"

namespace semalloc {

using Json = nlohmann::ordered_json;

// Full static-analysis report: graph summary, trim/recurrence results,
// SCCs, weights, per-site path listing and the security profile.
// `parsed` is the pre-trim input graph, `wd` the pipeline result.
Json analyze_report(const FlowCallGraph& parsed, const WeightedDag& wd, const SecurityProfile& profile,
                    const FieldLayout& layout, std::size_t path_listing_cap = 200);

Json replay_report(const ReplayReport& report);

Json uaf_report(const UafProbe& probe, std::span<const UafFinding> findings);

Json tag_json(const SemaTypeTag& tag);

}  // namespace semalloc

// Micro-benchmarks for the hot paths: pipeline construction, trace
// generation/replay throughput and the leaf encode/aggregate primitives.
#include <benchmark/benchmark.h>

#include "semalloc/replay.hpp"

namespace {

using namespace semalloc;

FlowCallGraph synthetic_graph(unsigned layers, unsigned fanout) {
    FlowCallGraph g;
    g.entry = "f000";
    unsigned next = 0;
    auto name = [](unsigned i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "f%03u", i);
        return std::string(buf);
    };
    std::vector<std::string> prev{name(next++)};
    g.nodes.push_back({prev[0], false, false});
    unsigned site = 0;
    for (unsigned l = 0; l < layers; ++l) {
        std::vector<std::string> cur;
        for (unsigned k = 0; k < fanout; ++k) {
            std::string id = name(next++);
            g.nodes.push_back({id, false, false});
            cur.push_back(id);
        }
        for (const auto& p : prev)
            for (unsigned k = 0; k < fanout; ++k) {
                char buf[16];
                std::snprintf(buf, sizeof buf, "e%04u", site++);
                g.edges.push_back({buf, p, cur[k], k == 0, false, static_cast<int>(k), false, false});
            }
        prev = cur;
    }
    g.nodes.push_back({"malloc", true, false});
    for (const auto& p : prev) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "e%04u", site++);
        g.edges.push_back({buf, p, "malloc", false, false, 0, false, false});
    }
    return g;
}

void BM_pipeline(benchmark::State& state) {
    auto g = synthetic_graph(static_cast<unsigned>(state.range(0)), 3);
    for (auto _ : state) benchmark::DoNotOptimize(build_pipeline(g));
}
BENCHMARK(BM_pipeline)->Arg(4)->Arg(6)->Arg(8);

void BM_replay(benchmark::State& state) {
    auto wd = build_pipeline(synthetic_graph(5, 3));
    GenOptions gen;
    gen.n_events = static_cast<std::size_t>(state.range(0));
    gen.threads = 2;
    gen.loop_bound = 64;  // enough headroom for the larger budgets
    auto events = gen_trace(wd, gen);
    for (auto _ : state) benchmark::DoNotOptimize(replay(wd, events));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(events.size()));
}
BENCHMARK(BM_replay)->Arg(1000)->Arg(10000);

void BM_encode_decode(benchmark::State& state) {
    SemaTypeTag tag{true, 1234, 567, 0};
    std::uint64_t size = 4096;
    for (auto _ : state) {
        auto word = encode(tag, size);
        benchmark::DoNotOptimize(decode(word));
        size = (size % 65536) + 16;
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}
BENCHMARK(BM_encode_decode);

void BM_aggregate(benchmark::State& state) {
    std::vector<std::uint64_t> frames;
    for (unsigned i = 0; i < 32; ++i) frames.push_back(0x7ffd00000000ull - 64 * i);
    for (auto _ : state) benchmark::DoNotOptimize(aggregate_rid(frames));
}
BENCHMARK(BM_aggregate);

}  // namespace

BENCHMARK_MAIN();

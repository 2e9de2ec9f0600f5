// Command-line front end: analyze | replay | check-uaf | gen-trace.
// JSON goes to stdout (or --out), diagnostics to stderr.
// Exit codes: 0 ok, 1 segregation invariant violated, 2 input error.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "semalloc/report.hpp"

namespace {

using namespace semalloc;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_output(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        if (text.empty() || text.back() != '\n') std::cout << '\n';
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + out_path + "'");
    out << text;
}

struct Options {
    unsigned nid_bits = 16;
    unsigned rid_bits = 14;
    unsigned size_bits = 32;
    std::string out;
    std::string graph_path;
    std::string trace_path;

    FieldLayout layout() const {
        FieldLayout l{nid_bits, rid_bits, size_bits};
        if (!l.valid())
            throw ParseError("field widths must satisfy nid + rid + size + 2 == 64 (got " +
                             std::to_string(nid_bits) + "+" + std::to_string(rid_bits) + "+" +
                             std::to_string(size_bits) + "+2)");
        return l;
    }
};

void add_layout_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--nid-bits", o.nid_bits, "nID field width")
        ->envname("SEMATYPE_NID_BITS")
        ->capture_default_str();
    cmd->add_option("--rid-bits", o.rid_bits, "rID field width")
        ->envname("SEMATYPE_RID_BITS")
        ->capture_default_str();
    cmd->add_option("--size-bits", o.size_bits, "size field width")
        ->envname("SEMATYPE_SIZE_BITS")
        ->capture_default_str();
    cmd->add_option("--out", o.out, "write output to a file instead of stdout");
}

WeightedDag load_pipeline(const Options& o) {
    return build_pipeline(parse_graph(read_file(o.graph_path)));
}

int run_analyze(const Options& o) {
    FieldLayout layout = o.layout();
    FlowCallGraph parsed = parse_graph(read_file(o.graph_path));
    WeightedDag wd = build_pipeline(parsed);
    SecurityProfile profile = security_profile(wd, layout.rid_bits);
    Json report = analyze_report(parsed, wd, profile, layout);
    if (report["capacity_warning"].get<bool>())
        std::cerr << "warning: " << profile.min_sematypes << " paths exceed the " << layout.nid_bits
                  << "-bit nID capacity; runtime nIDs wrap\n";
    write_output(report.dump(2), o.out);
    return 0;
}

int run_replay(const Options& o) {
    ReplayOptions ropts;
    ropts.layout = o.layout();
    WeightedDag wd = load_pipeline(o);
    auto events = parse_trace(read_file(o.trace_path), wd);
    ReplayResult result = replay(wd, events, ropts);
    write_output(replay_report(result.report).dump(2), o.out);
    if (!result.report.segregation_ok) {
        std::cerr << "error: segregation invariant violated\n";
        return 1;
    }
    return 0;
}

int run_check_uaf(const Options& o, const UafProbe& probe) {
    ReplayOptions ropts;
    ropts.layout = o.layout();
    WeightedDag wd = load_pipeline(o);
    auto events = parse_trace(read_file(o.trace_path), wd);
    auto findings = check_uaf(wd, events, probe, ropts);
    write_output(uaf_report(probe, findings).dump(2), o.out);
    return 0;
}

int run_gen_trace(const Options& o, const GenOptions& gen) {
    WeightedDag wd = load_pipeline(o);
    auto events = gen_trace(wd, gen);
    write_output(format_trace(events), o.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SemaType call-graph analysis and heap-allocation replay"};
    app.require_subcommand(1);

    Options opts;
    UafProbe probe;
    GenOptions gen;

    CLI::App* analyze = app.add_subcommand("analyze", "run the static pipeline and emit a report");
    analyze->add_option("graph", opts.graph_path, "call-graph file")->required();
    add_layout_flags(analyze, opts);

    CLI::App* replay_cmd = app.add_subcommand("replay", "replay a trace through the heap model");
    replay_cmd->add_option("graph", opts.graph_path, "call-graph file")->required();
    replay_cmd->add_option("trace", opts.trace_path, "trace file")->required();
    add_layout_flags(replay_cmd, opts);

    CLI::App* uaf = app.add_subcommand("check-uaf", "probe address overlap after a free");
    uaf->add_option("graph", opts.graph_path, "call-graph file")->required();
    uaf->add_option("trace", opts.trace_path, "trace file")->required();
    uaf->add_option("--dangling", probe.dangling, "object freed during the trace")->required();
    uaf->add_option("--attacker", probe.attackers, "objects allocated after the free")->required();
    add_layout_flags(uaf, opts);

    CLI::App* gen_cmd = app.add_subcommand("gen-trace", "generate a pseudo-random trace");
    gen_cmd->add_option("graph", opts.graph_path, "call-graph file")->required();
    gen_cmd->add_option("--seed", gen.seed, "generator seed")
        ->envname("SEMATYPE_SEED")
        ->capture_default_str();
    gen_cmd->add_option("--events", gen.n_events, "action budget")->capture_default_str();
    gen_cmd->add_option("--recursion-bound", gen.recursion_bound,
                        "per-activation uses of an intra-SCC site")
        ->capture_default_str();
    gen_cmd->add_option("--loop-bound", gen.loop_bound, "per-frame uses of a loop site")
        ->capture_default_str();
    gen_cmd->add_option("--threads", gen.threads, "thread count")->capture_default_str();
    gen_cmd->add_option("--free-prob", gen.free_prob, "chance a live object is freed at the end")
        ->capture_default_str();
    gen_cmd->add_option("--out", opts.out, "write output to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(analyze)) return run_analyze(opts);
        if (app.got_subcommand(replay_cmd)) return run_replay(opts);
        if (app.got_subcommand(uaf)) return run_check_uaf(opts, probe);
        if (app.got_subcommand(gen_cmd)) return run_gen_trace(opts, gen);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

// smvirt: command-line front end for the SM resource simulator.
//
//   smvirt simulate --kernel F --policy P --arch A [spec overrides] [--json|--csv PATH]
//   smvirt sweep    --kernel F [--grid G] [--arch-list a,b] [--policies p,q] [--out PATH]
//   smvirt phases   --kernel F [--threshold T] [--min-span N]
//   smvirt tables   --arch A
//   smvirt corpus   --out DIR
//
// Exit codes: 0 ok, 1 usage, 2 validation, 3 non-termination.

#include "smvirt/arch.hpp"
#include "smvirt/corpus.hpp"
#include "smvirt/engine.hpp"
#include "smvirt/harness.hpp"
#include "smvirt/kernel.hpp"
#include "smvirt/phase_compiler.hpp"
#include "smvirt/policy.hpp"
#include "smvirt/resource_maps.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace smv;

namespace {

enum Exit { OK = 0, USAGE = 1, VALIDATION = 2, NONTERMINATION = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A path to a kernel file, or the name of a bundled corpus kernel.
struct KernelSource {
    KernelSpec kernel;
    std::optional<CorpusEntry> entry;
};

KernelSource load_kernel(const std::string& arg) {
    if (std::filesystem::exists(arg)) return {load_kernel_file(arg), std::nullopt};
    if (auto e = corpus_entry(arg)) return {e->kernel, e};
    throw UsageError("no kernel file or corpus kernel named '" + arg + "'");
}

ArchConfig load_arch(const std::string& name) {
    auto a = arch_preset(name);
    if (!a) throw UsageError("unknown arch '" + name + "'");
    return *a;
}

PolicyKind load_policy(const std::string& name) {
    auto p = policy_from_name(name);
    if (!p) throw UsageError("unknown policy '" + name + "'");
    return *p;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

struct SimulateArgs {
    std::string kernel;
    std::string policy = "zorua";
    std::string arch = "fermi";
    std::optional<uint32_t> tpb, regs, scratch, blocks;
    uint64_t seed = 1;
    uint32_t sms = 1;
    uint64_t cycle_cap = 200'000'000;
    std::string json, csv, event_log;
    std::optional<uint32_t> o_thresh;
    bool no_guard = false;
    bool check = false;
};

int cmd_simulate(const SimulateArgs& a) {
    KernelSource src = load_kernel(a.kernel);
    KernelSpec k = src.kernel;
    if (a.tpb) k.resource_spec.threads_per_block = *a.tpb;
    if (a.regs) k.resource_spec.regs_per_thread = *a.regs;
    if (a.scratch) k.resource_spec.scratch_bytes_per_block = *a.scratch;
    if (a.blocks) k.resource_spec.num_blocks = *a.blocks;
    validate_kernel(k);
    ArchConfig arch = load_arch(a.arch);
    PolicyKind policy = load_policy(a.policy);

    SimOptions opts;
    opts.seed = a.seed;
    opts.sms = a.sms;
    opts.cycle_cap = a.cycle_cap;
    opts.check_invariants = a.check;
    opts.zorua.fixed_o_thresh = a.o_thresh;
    opts.zorua.deadlock_guard = !a.no_guard;
    std::ofstream log;
    if (!a.event_log.empty()) {
        log.open(a.event_log, std::ios::binary);
        if (!log) throw std::runtime_error("cannot write " + a.event_log);
        opts.event_log = &log;
    }
    SimResult r = run(k, policy, arch, opts);

    const auto& s = k.resource_spec;
    std::printf("kernel %s  arch %s  policy %s\n", k.name.c_str(), a.arch.c_str(), policy_name(policy));
    std::printf("spec   threads_per_block=%u regs_per_thread=%u scratch=%u blocks=%u\n", s.threads_per_block,
                s.regs_per_thread, s.scratch_bytes_per_block, s.num_blocks);
    std::printf("cycles %llu  instructions %llu  epochs %zu\n", static_cast<unsigned long long>(r.cycles),
                static_cast<unsigned long long>(r.instructions), r.epochs.size());
    std::printf("stalls issue=%llu c_idle=%llu c_mem=%llu other=%llu\n",
                static_cast<unsigned long long>(r.total_issue_cycles()),
                static_cast<unsigned long long>(r.total_c_idle()), static_cast<unsigned long long>(r.total_c_mem()),
                static_cast<unsigned long long>(r.total_c_other()));
    std::printf("hit    register=%s scratchpad=%s warp_slot=%s\n", format_fixed(r.hit_rate[0]).c_str(),
                format_fixed(r.hit_rate[1]).c_str(), format_fixed(r.hit_rate[2]).c_str());
    std::printf("warps  mean_schedulable=%s  blocks_in_flight=%u..%u  guard_admissions=%llu\n",
                format_fixed(r.mean_schedulable_warps).c_str(), r.blocks_in_flight_min, r.blocks_in_flight_max,
                static_cast<unsigned long long>(r.guard_admissions));
    if (a.check)
        std::printf("checks %llu  violations %zu\n", static_cast<unsigned long long>(r.invariant_checks),
                    r.invariant_violations.size());

    if (!a.json.empty()) {
        std::ostringstream os;
        emit_sim_json(r, k.name, a.arch, policy, s, os);
        write_text(a.json, os.str());
    }
    if (!a.csv.empty()) {
        std::ostringstream os;
        emit_sim_csv(r, os);
        write_text(a.csv, os.str());
    }
    if (a.check && !r.invariant_violations.empty()) {
        for (const auto& v : r.invariant_violations) std::fprintf(stderr, "violation: %s\n", v.c_str());
        return VALIDATION;
    }
    return OK;
}

struct SweepArgs {
    std::string kernel;
    std::string grid;
    std::string archs;
    std::string policies;
    std::string out;
    std::string format;
    unsigned threads = 0;
    uint32_t sms = 1;
    std::optional<uint64_t> seed;
    bool check = false;
};

int cmd_sweep(const SweepArgs& a) {
    KernelSource src = load_kernel(a.kernel);
    SweepGrid g;
    if (!a.grid.empty()) {
        g = load_grid_file(a.grid);
    } else if (src.entry) {
        g = src.entry->grid;
    } else {
        throw UsageError("--grid is required for kernels outside the corpus");
    }
    if (!a.archs.empty()) g.archs = split_list(a.archs);
    for (const auto& name : g.archs) load_arch(name);
    if (!a.policies.empty()) {
        g.policies.clear();
        for (const auto& p : split_list(a.policies)) g.policies.push_back(load_policy(p));
    }
    if (a.seed) g.seed = *a.seed;

    SweepOptions opts;
    opts.threads = a.threads;
    opts.sms = a.sms;
    opts.check_invariants = a.check;
    SweepResult r = run_sweep(src.kernel, g, opts);
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    std::printf("%-8s %-9s %7s %10s %7s\n", "arch", "policy", "points", "range", "cliffs");
    for (const auto& arch : g.archs) {
        for (PolicyKind p : g.policies) {
            auto rows = r.select(arch, p);
            auto range = performance_range(rows);
            std::printf("%-8s %-9s %7zu %10s %7zu\n", arch.c_str(), policy_name(p), rows.size(),
                        range ? format_fixed(*range).c_str() : "n/a", detect_cliffs(rows).size());
        }
    }
    if (g.archs.size() > 1) {
        std::printf("porting loss (max over candidates within %.0f%% of source best)\n",
                    kPortingCandidateBand * 100);
        for (PolicyKind p : g.policies)
            for (const auto& from : g.archs)
                for (const auto& to : g.archs)
                    if (from != to)
                        std::printf("  %-9s %s -> %s  %s\n", policy_name(p), from.c_str(), to.c_str(),
                                    format_fixed(porting_loss(r.select(from, p), r.select(to, p))).c_str());
    }

    if (!a.out.empty()) {
        std::string fmt = a.format;
        if (fmt.empty()) fmt = std::filesystem::path(a.out).extension() == ".json" ? "json" : "csv";
        if (fmt == "json")
            emit_json(r, a.out);
        else
            emit_csv(r, a.out);
    }
    return OK;
}

int cmd_phases(const std::string& kernel, double threshold, size_t min_span) {
    KernelSource src = load_kernel(kernel);
    PhaseReport rep = detect_phase_boundaries(src.kernel, threshold, min_span);
    std::fputs(format_phase_report(rep).c_str(), stdout);
    return OK;
}

int cmd_tables(const std::string& arch_name) {
    ArchConfig arch = load_arch(arch_name);
    std::printf("%-10s %10s %10s\n", "table", "bits", "bytes");
    for (ResourceKind kind : {ResourceKind::REGISTER, ResourceKind::SCRATCHPAD, ResourceKind::WARP_SLOT}) {
        uint64_t bits = table_size_bits(kind, arch);
        std::string bytes = bits % 8 == 0 ? std::to_string(bits / 8) : format_fixed(static_cast<double>(bits) / 8.0);
        std::printf("%-10s %10llu %10s\n", resource_name(kind), static_cast<unsigned long long>(bits), bytes.c_str());
    }
    return OK;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SM resource virtualization simulator"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "run one kernel under one policy");
    s->add_option("--kernel", sim.kernel, "kernel file or corpus kernel name")->required();
    s->add_option("--policy", sim.policy, "baseline | wlm | zorua");
    s->add_option("--arch", sim.arch, "fermi | kepler | maxwell");
    s->add_option("--threads-per-block", sim.tpb);
    s->add_option("--regs-per-thread", sim.regs);
    s->add_option("--scratch", sim.scratch, "scratchpad bytes per block");
    s->add_option("--blocks", sim.blocks);
    s->add_option("--seed", sim.seed);
    s->add_option("--sms", sim.sms, "SMs to simulate, 0 for the preset count");
    s->add_option("--cycle-cap", sim.cycle_cap);
    s->add_option("--json", sim.json, "write the result as JSON");
    s->add_option("--csv", sim.csv, "write per-epoch statistics as CSV");
    s->add_option("--event-log", sim.event_log, "write a JSON-lines event log");
    s->add_option("--o-thresh", sim.o_thresh, "pin every oversubscription threshold");
    s->add_flag("--no-guard", sim.no_guard, "disable the deadlock guard");
    s->add_flag("--check-invariants", sim.check);

    SweepArgs sw;
    auto* w = app.add_subcommand("sweep", "sweep resource specifications");
    w->add_option("--kernel", sw.kernel, "kernel file or corpus kernel name")->required();
    w->add_option("--grid", sw.grid, "grid file (defaults to the corpus grid)");
    w->add_option("--arch-list", sw.archs, "comma-separated presets");
    w->add_option("--policies", sw.policies, "comma-separated policies");
    w->add_option("--out", sw.out, "CSV or JSON output path");
    w->add_option("--format", sw.format, "csv | json (default from --out extension)")
        ->check(CLI::IsMember({"csv", "json"}));
    w->add_option("--threads", sw.threads, "worker threads, 0 for hardware concurrency");
    w->add_option("--sms", sw.sms);
    w->add_option("--seed", sw.seed);
    w->add_flag("--check-invariants", sw.check);

    std::string ph_kernel;
    double ph_threshold = kDefaultChangeThreshold;
    size_t ph_min_span = kDefaultMinSpan;
    auto* p = app.add_subcommand("phases", "print detected phases");
    p->add_option("--kernel", ph_kernel)->required();
    p->add_option("--threshold", ph_threshold)->check(CLI::Range(0.0, 10.0));
    p->add_option("--min-span", ph_min_span);

    std::string tb_arch = "fermi";
    auto* t = app.add_subcommand("tables", "print mapping-table sizes");
    t->add_option("--arch", tb_arch);

    std::string corpus_dir;
    auto* c = app.add_subcommand("corpus", "write the bundled kernels and grids");
    c->add_option("--out", corpus_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? OK : USAGE;
    }

    try {
        if (*s) return cmd_simulate(sim);
        if (*w) return cmd_sweep(sw);
        if (*p) return cmd_phases(ph_kernel, ph_threshold, ph_min_span);
        if (*t) return cmd_tables(tb_arch);
        if (*c) {
            export_corpus(corpus_dir);
            return OK;
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return USAGE;
    } catch (const NonTermination& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return NONTERMINATION;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return VALIDATION;
    }
    return USAGE;
}

// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "random_kernels.hpp"
#include "smvirt/coordinator.hpp"
#include "smvirt/corpus.hpp"
#include "smvirt/engine.hpp"
#include "smvirt/harness.hpp"
#include "smvirt/phase_compiler.hpp"
#include "smvirt/resource_maps.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace smv;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Shared corpus sweeps, each timed on its own.
struct CorpusRun {
    std::vector<CorpusEntry> entries;
    std::map<std::string, SweepResult> sweeps;
    std::map<std::string, double> seconds;
    double total_seconds = 0;
};

const CorpusRun& corpus_run() {
    static const CorpusRun r = [] {
        CorpusRun out;
        out.entries = builtin_corpus();
        auto all = Clock::now();
        for (const auto& e : out.entries) {
            auto t0 = Clock::now();
            out.sweeps[e.name] = run_sweep(e.kernel, e.grid);
            out.seconds[e.name] = seconds_since(t0);
        }
        out.total_seconds = seconds_since(all);
        return out;
    }();
    return r;
}

Verdict table_sizes() {
    auto f = fermi_preset();
    uint64_t r = table_size_bits(ResourceKind::REGISTER, f);
    uint64_t s = table_size_bits(ResourceKind::SCRATCHPAD, f);
    uint64_t w = table_size_bits(ResourceKind::WARP_SLOT, f);
    Verdict v;
    v.pass = r == 9216 && s == 5376 && w == 448 && r / 8 == 1152 && s / 8 == 672 && w / 8 == 56;
    v.detail = fmt("register %llu bits, scratchpad %llu bits, warp slot %llu bits", (unsigned long long)r,
                   (unsigned long long)s, (unsigned long long)w);
    return v;
}

Verdict threshold_cases() {
    struct Case {
        ResourceKind kind;
        int64_t start;
        int64_t idle_delta;
        int64_t mem_delta;
        int64_t expect;
    };
    // Fermi: registers step 10, cap 256; scratchpad step 1, cap 48.
    const Case cases[] = {
        {ResourceKind::REGISTER, 25, 60, 10, 35},     // raise
        {ResourceKind::REGISTER, 25, 10, 40, 15},     // lower
        {ResourceKind::REGISTER, 25, 20, 10, 25},     // dead zone
        {ResourceKind::REGISTER, 25, 26, 10, 25},     // difference 16, dead zone edge
        {ResourceKind::REGISTER, 25, 27, 10, 35},     // difference 17
        {ResourceKind::REGISTER, 25, 10, 26, 25},     // -16, dead zone edge
        {ResourceKind::REGISTER, 25, 10, 27, 15},     // -17
        {ResourceKind::REGISTER, 25, 0, 0, 25},       // nothing happened
        {ResourceKind::REGISTER, 5, 0, 100, 0},       // clamp at zero
        {ResourceKind::REGISTER, 0, 0, 100, 0},       // stays at zero
        {ResourceKind::REGISTER, 250, 100, 0, 256},   // clamp at the cap
        {ResourceKind::REGISTER, 256, 100, 0, 256},   // stays at the cap
        {ResourceKind::REGISTER, 246, 100, 0, 256},   // lands on the cap
        {ResourceKind::REGISTER, 25, 1000, 983, 35},  // large equal-ish deltas, 17 apart
        {ResourceKind::REGISTER, 25, 1000, 984, 25},  // 16 apart
        {ResourceKind::REGISTER, 25, -50, 0, 15},     // idle fell
        {ResourceKind::REGISTER, 25, -5, -30, 35},    // both fell, memory more
        {ResourceKind::SCRATCHPAD, 4, 60, 10, 5},     // scratch step is one set
        {ResourceKind::SCRATCHPAD, 0, 10, 40, 0},     // scratch clamp at zero
        {ResourceKind::SCRATCHPAD, 48, 60, 10, 48},   // scratch clamp at the cap
    };
    Verdict v;
    int ok = 0, n = 0;
    for (const auto& c : cases) {
        ++n;
        auto st = make_oversubscription_state(fermi_preset(), {});
        st[c.kind].o_thresh = c.start;
        st.c_idle_prev = 5000;
        st.c_mem_prev = 7000;
        update_o_thresh(5000 + c.idle_delta, 7000 + c.mem_delta, st);
        bool good = st[c.kind].o_thresh == c.expect && st.c_idle_prev == 5000 + c.idle_delta &&
                    st.c_mem_prev == 7000 + c.mem_delta;
        if (good) {
            ++ok;
        } else {
            v.pass = false;
            v.detail += fmt(" case %d: got %lld want %lld;", n, (long long)st[c.kind].o_thresh, (long long)c.expect);
        }
    }
    v.detail = fmt("%d/%d hand-traced cases match", ok, n) + v.detail;
    return v;
}

uint32_t floor_oracle(const ResourceSpecification& s, const ArchConfig& a) {
    uint64_t by_regs = a.registers_per_sm / (uint64_t{s.threads_per_block} * s.regs_per_thread);
    uint64_t by_slots = a.warps_per_sm_physical / (s.threads_per_block / 32);
    uint64_t n = std::min<uint64_t>({by_regs, by_slots, a.max_blocks_per_sm_baseline});
    if (s.scratch_bytes_per_block) n = std::min<uint64_t>(n, a.scratch_bytes_per_sm / s.scratch_bytes_per_block);
    return static_cast<uint32_t>(n);
}

Verdict baseline_cliff_location() {
    const auto& cr = corpus_run();
    const auto& r = cr.sweeps.at("reg_cliff");
    Verdict v;
    int mismatches = 0, drops = 0;
    std::string where;
    for (const auto& arch : arch_preset_names()) {
        auto a = *arch_preset(arch);
        auto rows = r.select(arch, PolicyKind::BASELINE);
        for (const auto& row : rows)
            if (row.blocks_in_flight_max != floor_oracle(row.spec, a)) ++mismatches;
        auto cliffs = detect_cliffs(rows);
        std::vector<size_t> two_to_one;
        for (size_t i = 1; i < rows.size(); ++i)
            if (floor_oracle(rows[i - 1].spec, a) == 2 && floor_oracle(rows[i].spec, a) == 1) two_to_one.push_back(i);
        if (two_to_one.empty()) continue;
        ++drops;
        std::vector<size_t> at;
        for (const auto& c : cliffs) at.push_back(c.index);
        if (at != two_to_one) v.pass = false;
        for (const auto& c : cliffs)
            where += fmt(" %s: +%.1f%% at %u thr/blk;", arch.c_str(), 100 * c.slowdown,
                         rows[c.index].spec.threads_per_block);
    }
    if (mismatches || drops == 0) v.pass = false;
    double secs = cr.seconds.at("reg_cliff");
    if (secs >= 30.0) v.pass = false;
    v.detail = fmt("%d blocks-in-flight mismatches vs floor oracle, 2->1 drop on %d arch(s), sweep %.1fs;", mismatches,
                   drops, secs) +
               where;
    return v;
}

Verdict zorua_mitigation() {
    const auto& cr = corpus_run();
    Verdict v;
    const auto& r = cr.sweeps.at("reg_cliff");
    double worst = 0;
    int cliff_points = 0;
    for (const auto& arch : arch_preset_names()) {
        auto b = r.select(arch, PolicyKind::BASELINE);
        auto z = r.select(arch, PolicyKind::ZORUA);
        for (const auto& c : detect_cliffs(b)) {
            ++cliff_points;
            if (!z[c.index].cycles || !z[c.index - 1].cycles) {
                v.pass = false;
                continue;
            }
            double step = double(*z[c.index].cycles) / double(*z[c.index - 1].cycles) - 1.0;
            worst = std::max(worst, step);
            if (step > 0.15) v.pass = false;
        }
    }
    std::string ranges;
    int compared = 0;
    for (const auto& e : cr.entries) {
        const auto& s = cr.sweeps.at(e.name);
        for (const auto& arch : e.grid.archs) {
            auto b = s.select(arch, PolicyKind::BASELINE);
            if (detect_cliffs(b).empty()) continue;
            ++compared;
            double rb = performance_range(b).value_or(0.0);
            double rz = performance_range(s.select(arch, PolicyKind::ZORUA)).value_or(0.0);
            if (!(rz < rb)) {
                v.pass = false;
                ranges += fmt(" %s/%s zorua %.3f >= baseline %.3f;", e.name.c_str(), arch.c_str(), rz, rb);
            }
        }
    }
    if (cr.total_seconds >= 300.0) v.pass = false;
    v.detail = fmt("worst zorua step at %d baseline cliff points %+.1f%%; range lower on %d kernel/arch sweeps with a "
                   "baseline cliff; corpus %.1fs;",
                   cliff_points, 100 * worst, compared, cr.total_seconds) +
               ranges;
    return v;
}

Verdict wlm_scratch_cliff() {
    const auto& cr = corpus_run();
    const auto& r = cr.sweeps.at("scratch_cliff");
    Verdict v;
    for (const auto& arch : arch_preset_names()) {
        size_t w = detect_cliffs(r.select(arch, PolicyKind::WLM)).size();
        size_t z = detect_cliffs(r.select(arch, PolicyKind::ZORUA)).size();
        if (w < 1 || z != 0) v.pass = false;
        v.detail += fmt("%s wlm %zu zorua %zu; ", arch.c_str(), w, z);
    }
    return v;
}

struct RandomSuite {
    int runs = 0;
    int finished = 0;
    int failures = 0;
    uint64_t checks = 0;
    std::vector<std::string> violations;
    double seconds = 0;
    std::string first_failure;
};

const RandomSuite& random_suite() {
    static const RandomSuite s = [] {
        RandomSuite out;
        std::mt19937_64 rng(20160);
        auto t0 = Clock::now();
        for (int i = 0; i < 1000; ++i) {
            auto c = smv::testing::random_case(rng);
            SimOptions o;
            o.seed = c.seed;
            o.check_invariants = true;
            o.cycle_cap = 20'000'000;
            ++out.runs;
            try {
                auto r = run(c.kernel, PolicyKind::ZORUA, c.arch, o);
                if (r.blocks_finished == c.kernel.resource_spec.num_blocks) ++out.finished;
                out.checks += r.invariant_checks;
                for (auto& x : r.invariant_violations) out.violations.push_back(x);
            } catch (const std::exception& e) {
                ++out.failures;
                if (out.first_failure.empty()) out.first_failure = fmt("run %d: %s", i, e.what());
            }
        }
        out.seconds = seconds_since(t0);
        return out;
    }();
    return s;
}

Verdict no_deadlock() {
    const auto& s = random_suite();
    Verdict v;
    v.pass = s.finished == 1000 && s.failures == 0 && s.seconds < 600.0;
    v.detail = fmt("%d/%d runs finished every block, %d errors, %.1fs", s.finished, s.runs, s.failures, s.seconds);
    if (!s.first_failure.empty()) v.detail += "; " + s.first_failure;
    return v;
}

Verdict conservation() {
    const auto& s = random_suite();
    Verdict v;
    v.pass = s.violations.empty() && s.checks > 0 && s.failures == 0;
    v.detail = fmt("%zu violations over %llu invariant checks", s.violations.size(), (unsigned long long)s.checks);
    if (!s.violations.empty()) v.detail += "; first: " + s.violations.front();
    return v;
}

Verdict hit_rates() {
    Verdict v;
    int exact = 0, infeasible = 0, off = 0;
    SimOptions o;
    o.zorua.fixed_o_thresh = 0;
    o.zorua.deadlock_guard = false;
    o.cycle_cap = 20'000'000;
    auto pinned = [&](const KernelSpec& k, const ArchConfig& a, uint64_t seed) {
        o.seed = seed;
        try {
            auto r = run(k, PolicyKind::ZORUA, a, o);
            bool all = r.hit_rate[0] == 1.0 && r.hit_rate[1] == 1.0 && r.hit_rate[2] == 1.0;
            all ? ++exact : ++off;
        } catch (const NonTermination&) {
            ++infeasible;  // deadlocks without the guard
        }
    };
    for (const auto& e : builtin_corpus())
        for (const auto& arch : arch_preset_names()) pinned(e.kernel, *arch_preset(arch), 1);
    std::mt19937_64 rng(4242);
    for (int i = 0; i < 200; ++i) {
        auto c = smv::testing::random_case(rng);
        pinned(c.kernel, c.arch, c.seed);
    }
    if (off) v.pass = false;

    const auto& cr = corpus_run();
    double lowest = 1.0;
    std::string lowest_at;
    for (const auto& [name, s] : cr.sweeps)
        for (const auto& row : s.rows)
            if (row.policy == PolicyKind::ZORUA && row.cycles && row.hit_rate[0] < lowest) {
                lowest = row.hit_rate[0];
                lowest_at = name + "/" + row.arch;
            }
    if (lowest < 0.95) v.pass = false;
    v.detail = fmt("pinned: %d exact, %d below 1.0, %d infeasible (deadlock without guard); adaptive min register "
                   "hit rate %.4f",
                   exact, off, infeasible, lowest);
    if (!lowest_at.empty()) v.detail += " (" + lowest_at + ")";
    return v;
}

Verdict porting() {
    const auto& cr = corpus_run();
    Verdict v;
    auto names = arch_preset_names();
    for (const auto& src : names) {
        for (const auto& dst : names) {
            if (src == dst) continue;
            double lb = 0, lz = 0;
            for (const auto& e : cr.entries) {
                if (!e.cliff_kernel) continue;
                const auto& s = cr.sweeps.at(e.name);
                lb = std::max(lb, porting_loss(s.select(src, PolicyKind::BASELINE), s.select(dst, PolicyKind::BASELINE)));
                lz = std::max(lz, porting_loss(s.select(src, PolicyKind::ZORUA), s.select(dst, PolicyKind::ZORUA)));
            }
            if (lz > lb) v.pass = false;
            v.detail += fmt("%c->%c %.3f/%.3f ", src[0], dst[0], lz, lb);
        }
    }
    v.detail = "zorua/baseline max loss: " + v.detail;
    return v;
}

Verdict determinism() {
    Verdict v;
    auto e = *corpus_entry("scratch_cliff");
    SweepOptions one, three;
    one.threads = 1;
    three.threads = 3;
    auto a = run_sweep(e.kernel, e.grid, one);
    auto b = run_sweep(e.kernel, e.grid, three);
    std::ostringstream ca, cb, ja, jb;
    emit_csv(a, ca);
    emit_csv(b, cb);
    emit_json(a, ja);
    emit_json(b, jb);
    bool sweep_same = ca.str() == cb.str() && ja.str() == jb.str();

    int sims = 0, same = 0;
    std::mt19937_64 rng(77);
    for (int i = 0; i < 30; ++i) {
        auto c = smv::testing::random_case(rng);
        std::string out[2];
        for (auto& s : out) {
            auto r = run(c.kernel, PolicyKind::ZORUA, c.arch, c.seed);
            std::ostringstream js, cs;
            emit_sim_json(r, c.kernel.name, c.arch.name, PolicyKind::ZORUA, c.kernel.resource_spec, js);
            emit_sim_csv(r, cs);
            s = js.str() + cs.str();
        }
        ++sims;
        same += out[0] == out[1];
    }
    v.pass = sweep_same && same == sims;
    v.detail = fmt("sweep CSV+JSON identical across thread counts: %s; %d/%d simulations byte-identical",
                   sweep_same ? "yes" : "no", same, sims);
    return v;
}

// Independent scanner: rebuilds the reference at the last boundary each step.
std::vector<size_t> scan_boundaries(const KernelSpec& k, double thr, size_t min_span) {
    std::vector<size_t> b;
    size_t last = 0;
    for (size_t i = 1; i < k.body.size(); ++i) {
        const auto& ref = k.body[last];
        const auto& in = k.body[i];
        auto moved = [&](double r, double x) { return r == 0 ? x != 0 : (x > r ? x - r : r - x) / r >= thr; };
        if (in.opcode == Opcode::BARRIER || (i - last >= min_span && (moved(ref.live_regs_after, in.live_regs_after) ||
                                                                       moved(ref.live_scratch_after, in.live_scratch_after)))) {
            b.push_back(i);
            last = i;
        }
    }
    return b;
}

Verdict phase_oracle() {
    Verdict v;
    std::mt19937_64 rng(1111);
    int match = 0, maxima = 0;
    for (int n = 0; n < 1000; ++n) {
        auto k = smv::testing::random_case(rng).kernel;
        auto r = detect_phase_boundaries(k);
        bool same = r.boundaries == scan_boundaries(k, kDefaultChangeThreshold, kDefaultMinSpan);
        match += same;
        auto c = annotate_phases(k, r);
        bool ok = validate_compiled(c).empty();
        for (size_t i = 0; i < c.body.size() && ok; ++i) {
            if (c.body[i].opcode != Opcode::PHASE_SPEC) continue;
            uint32_t mr = 0, ms = 0;
            for (size_t j = i + 1; j < c.body.size() && c.body[j].opcode != Opcode::PHASE_SPEC; ++j) {
                mr = std::max(mr, c.body[j].live_regs_after);
                ms = std::max(ms, c.body[j].live_scratch_after);
            }
            ok = c.body[i].phase->live_regs == mr && c.body[i].phase->scratch_bytes == ms;
        }
        maxima += ok;
    }
    v.pass = match == 1000 && maxima == 1000;
    v.detail = fmt("boundaries match on %d/1000 kernels, specifiers equal span maxima on %d/1000", match, maxima);
    return v;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"mapping table sizes", table_sizes},
        {"threshold controller cases", threshold_cases},
        {"baseline cliff location", baseline_cliff_location},
        {"zorua cliff mitigation", zorua_mitigation},
        {"wlm keeps the scratch cliff", wlm_scratch_cliff},
        {"no deadlock", no_deadlock},
        {"accounting conservation", conservation},
        {"hit rates", hit_rates},
        {"porting loss direction", porting},
        {"determinism", determinism},
        {"phase compiler oracle", phase_oracle},
    };
    int failed = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail = std::string("exception: ") + e.what();
        }
        failed += !v.pass;
        std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}

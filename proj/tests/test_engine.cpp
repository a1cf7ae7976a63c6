#include "smvirt/corpus.hpp"
#include "smvirt/engine.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace smv;

namespace {

KernelSpec straight(std::string_view pattern, ResourceSpecification spec, uint32_t regs, uint32_t scratch) {
    KernelSpec k;
    k.name = "k";
    k.resource_spec = spec;
    append_pattern(k, pattern, regs, scratch);
    return k;
}

void check_taxonomy(const SimResult& r) {
    uint64_t total = 0;
    for (const auto& e : r.epochs) {
        CHECK(e.issue_cycles + e.c_idle + e.c_mem + e.c_other == e.cycles);
        total += e.cycles;
    }
    CHECK(total == r.cycles);
    CHECK(r.total_issue_cycles() + r.total_c_idle() + r.total_c_mem() + r.total_c_other() == r.cycles);
}

}  // namespace

TEST_CASE("ten ALU instructions on one warp") {
    auto k = straight("aaaaaaaaaa", {32, 8, 0, 1}, 8, 0);
    // leading phase specifier + 10 instructions, one cycle each
    auto b = run(k, PolicyKind::BASELINE, fermi_preset(), 1);
    CHECK(b.cycles == 11);
    CHECK(b.instructions == 11);
    CHECK(b.blocks_finished == 1);
    // each instruction waits on its 2-cycle table lookups
    auto z = run(k, PolicyKind::ZORUA, fermi_preset(), 1);
    CHECK(z.cycles == 31);
    CHECK(z.hit_rate[0] == 1.0);
    check_taxonomy(b);
    check_taxonomy(z);
}

TEST_CASE("a lone global load stalls in c_mem") {
    auto a = fermi_preset();
    auto k = straight("L", {32, 8, 0, 1}, 8, 0);
    auto r = run(k, PolicyKind::BASELINE, a, 1);
    CHECK(r.cycles == 1 + a.memory_latency_cycles);
    CHECK(r.total_c_mem() == a.memory_latency_cycles - 1);
    CHECK(r.total_c_idle() == 0);
    check_taxonomy(r);
}

TEST_CASE("swapped scratch access costs a memory round trip on top of the lookup") {
    // pin a zero threshold except for what the guard forces: the second
    // block's scratch lands in swap
    auto a = fermi_preset();
    a.warps_per_sm_physical = 2;  // guard floor 0.4 warps: guard never fires
    SimOptions o;
    o.zorua.fixed_o_thresh = 48;
    o.zorua.spill_on_oversubscribe = false;
    o.zorua.exchange_on_access = false;
    auto k = straight("l", {32, 8, 48 * 1024, 2}, 8, 48 * 1024);
    auto r = run(k, PolicyKind::ZORUA, a, o);
    CHECK(r.swap_accesses[1] == 1);
    CHECK(r.accesses[1] == 2);
    CHECK(r.hit_rate[1] == doctest::Approx(0.5));
}

TEST_CASE("same seed gives the same result") {
    for (const auto& e : builtin_corpus()) {
        for (auto p : {PolicyKind::BASELINE, PolicyKind::WLM, PolicyKind::ZORUA}) {
            auto x = run(e.kernel, p, fermi_preset(), 7);
            auto y = run(e.kernel, p, fermi_preset(), 7);
            CHECK(x.cycles == y.cycles);
            CHECK(x.epochs == y.epochs);
            CHECK(x.accesses == y.accesses);
            CHECK(x.swap_accesses == y.swap_accesses);
            CHECK(x.mean_schedulable_warps == y.mean_schedulable_warps);
            check_taxonomy(x);
        }
    }
}

TEST_CASE("static policies never touch swap") {
    for (const auto& e : builtin_corpus()) {
        for (auto p : {PolicyKind::BASELINE, PolicyKind::WLM}) {
            auto r = run(e.kernel, p, kepler_preset(), 3);
            for (size_t i = 0; i < kNumResourceKinds; ++i) {
                CHECK(r.swap_accesses[i] == 0);
                CHECK(r.hit_rate[i] == 1.0);
            }
        }
    }
}

TEST_CASE("zero threshold without the guard hits on-chip every time") {
    SimOptions o;
    o.zorua.fixed_o_thresh = 0;
    o.zorua.deadlock_guard = false;
    o.check_invariants = true;
    for (const auto& e : builtin_corpus()) {
        if (e.name == "dct_like") continue;  // needs the guard on Fermi, below
        auto r = run(e.kernel, PolicyKind::ZORUA, fermi_preset(), o);
        CHECK(r.guard_admissions == 0);
        CHECK(r.hit_rate[0] == 1.0);
        CHECK(r.hit_rate[1] == 1.0);
        CHECK(r.hit_rate[2] == 1.0);
        CHECK(r.invariant_violations.empty());
    }
}

TEST_CASE("register growth deadlocks without the guard") {
    // every resident warp holds its 20-register phase and waits for the
    // 40-register one
    auto e = *corpus_entry("dct_like");
    SimOptions o;
    o.zorua.fixed_o_thresh = 0;
    o.zorua.deadlock_guard = false;
    CHECK_THROWS_AS(run(e.kernel, PolicyKind::ZORUA, fermi_preset(), o), NonTermination);
    o.zorua.deadlock_guard = true;
    auto r = run(e.kernel, PolicyKind::ZORUA, fermi_preset(), o);
    CHECK(r.guard_admissions > 0);
    CHECK(r.blocks_finished == e.kernel.resource_spec.num_blocks);
}

TEST_CASE("cycle cap raises non-termination") {
    auto k = straight("LLLL", {32, 8, 0, 4}, 8, 0);
    SimOptions o;
    o.cycle_cap = 100;
    CHECK_THROWS_AS(run(k, PolicyKind::BASELINE, fermi_preset(), o), NonTermination);
}

TEST_CASE("specs that cannot run are rejected") {
    auto big_regs = straight("a", {32, 63, 0, 1}, 63, 0);
    big_regs.resource_spec.regs_per_thread = 64;
    CHECK_THROWS_AS(run(big_regs, PolicyKind::BASELINE, fermi_preset(), 1), UnrunnableSpec);
    auto heavy = straight("a", {1024, 63, 0, 1}, 63, 0);
    CHECK_THROWS_AS(run(heavy, PolicyKind::BASELINE, fermi_preset(), 1), UnrunnableSpec);
}

TEST_CASE("every epoch of a long run is full length except the last") {
    auto e = *corpus_entry("memory_bound");
    auto a = fermi_preset();
    auto r = run(e.kernel, PolicyKind::ZORUA, a, 1);
    REQUIRE(r.epochs.size() > 1);
    for (size_t i = 0; i + 1 < r.epochs.size(); ++i) {
        CHECK(r.epochs[i].cycles == a.epoch_cycles);
        CHECK(r.epochs[i].start_cycle == i * a.epoch_cycles);
    }
    CHECK(r.epochs.back().cycles <= a.epoch_cycles);
}

TEST_CASE("one threshold update per completed epoch") {
    auto e = *corpus_entry("reg_cliff");
    std::ostringstream log;
    SimOptions o;
    o.event_log = &log;
    auto r = run(e.kernel, PolicyKind::ZORUA, fermi_preset(), o);
    size_t updates = 0, pos = 0;
    const std::string tag = "\"event\":\"threshold\"";
    while ((pos = log.str().find(tag, pos)) != std::string::npos) ++updates, ++pos;
    size_t full = 0;
    for (const auto& ep : r.epochs) full += ep.cycles == fermi_preset().epoch_cycles;
    CHECK(updates == full);
}

TEST_CASE("adding instructions never shortens a straight-line kernel") {
    std::mt19937_64 rng(19);
    const char ops[] = "aaaLSlsB";
    for (int n = 0; n < 60; ++n) {
        std::string pat;
        size_t len = 1 + rng() % 30;
        for (size_t i = 0; i < len; ++i) pat += ops[rng() % 8];
        ResourceSpecification s{32 * static_cast<uint32_t>(1 + rng() % 8), 16, 1024, 1 + static_cast<uint32_t>(rng() % 6)};
        auto k = straight(pat, s, 16, 1024);
        for (auto p : {PolicyKind::BASELINE, PolicyKind::WLM, PolicyKind::ZORUA}) {
            uint64_t prev = run(k, p, fermi_preset(), 1).cycles;
            auto longer = k;
            append_pattern(longer, std::string(1, ops[rng() % 8]), 16, 1024);
            CHECK(run(longer, p, fermi_preset(), 1).cycles >= prev);
        }
    }
}

TEST_CASE("underutilization of the scratch phases") {
    auto e = *corpus_entry("scratch_cliff");
    auto u = measure_underutilization(e.kernel, e.kernel.resource_spec, fermi_preset(), 2048);
    REQUIRE_FALSE(u.empty());
    double lowest = 1.0;
    for (const auto& x : u) {
        CHECK(x.scratch >= 0.0);
        CHECK(x.scratch <= 1.0);
        lowest = std::min(lowest, x.scratch);
    }
    CHECK(lowest < 1.0);

    auto flat = straight("aaaaLaaaaS", {32, 16, 2048, 8}, 16, 2048);
    for (const auto& x : measure_underutilization(flat, flat.resource_spec, fermi_preset(), 512)) {
        CHECK(x.registers == doctest::Approx(1.0));
        CHECK(x.scratch == doctest::Approx(1.0));
    }
}

TEST_CASE("longer epochs do not lower utilization on a rising profile") {
    KernelSpec k;
    k.name = "rise";
    k.resource_spec = {64, 32, 0, 4};
    append_pattern(k, "aaaaaaaaaaaaaaaaaaaaLaaa", 8, 0);
    append_pattern(k, "aaaaaaaaaaaaaaaaaaaaLaaa", 16, 0);
    append_pattern(k, "aaaaaaaaaaaaaaaaaaaaLaaa", 32, 0);
    auto a = fermi_preset();
    auto mean = [&](uint32_t epoch) {
        auto u = measure_underutilization(k, k.resource_spec, a, epoch);
        return u.front().registers;
    };
    CHECK(mean(4000) >= mean(500));
}

TEST_CASE("memory pipe caps outstanding requests") {
    MemoryPipe m(10, 2);
    CHECK(m.issue(0) == 10);
    CHECK(m.issue(0) == 10);
    CHECK(m.saturated(0));
    CHECK(m.issue(0) == 20);
    CHECK(m.next_completion(0) == 10);
    CHECK(m.inflight(15) == 1);
}

TEST_CASE("access skew picks valid sets deterministically") {
    std::array<uint64_t, 8> hist{};
    for (uint64_t pc = 0; pc < 4000; ++pc) {
        uint32_t s = access_set_index(9, 3, pc, 8);
        REQUIRE(s < 8);
        CHECK(s == access_set_index(9, 3, pc, 8));
        ++hist[s];
    }
    CHECK(hist[0] > hist[7]);
    CHECK(access_set_index(1, 1, 1, 1) == 0);
}

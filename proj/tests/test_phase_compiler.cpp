#include "smvirt/phase_compiler.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace smv;

namespace {

KernelSpec from_regs(const std::vector<uint32_t>& regs, const std::vector<size_t>& barriers = {}) {
    KernelSpec k;
    k.name = "t";
    uint32_t mx = 1;
    for (auto r : regs) mx = std::max(mx, r);
    k.resource_spec = {32, mx, 0, 1};
    for (size_t i = 0; i < regs.size(); ++i) {
        bool bar = std::find(barriers.begin(), barriers.end(), i) != barriers.end();
        k.body.push_back({bar ? Opcode::BARRIER : Opcode::ALU, regs[i], 0, std::nullopt});
    }
    return k;
}

// Brute-force scanner: for every index, rebuilds the last boundary and its
// reference values from scratch, then applies the rule with exact integer
// arithmetic (|v - ref| * den >= num * ref).
std::vector<size_t> oracle_boundaries(const KernelSpec& k, uint64_t num, uint64_t den, size_t min_span) {
    std::vector<size_t> out;
    auto moved = [&](uint64_t ref, uint64_t v) {
        if (ref == 0) return v != 0;
        uint64_t d = v > ref ? v - ref : ref - v;
        return d * den >= num * ref;
    };
    for (size_t i = 1; i < k.body.size(); ++i) {
        size_t last = out.empty() ? 0 : out.back();
        const auto& ref = k.body[last];
        const auto& in = k.body[i];
        if (in.opcode == Opcode::BARRIER ||
            (i - last >= min_span &&
             (moved(ref.live_regs_after, in.live_regs_after) || moved(ref.live_scratch_after, in.live_scratch_after))))
            out.push_back(i);
    }
    return out;
}

KernelSpec random_source(std::mt19937_64& rng) {
    auto pick = [&](uint32_t lo, uint32_t hi) { return lo + static_cast<uint32_t>(rng() % (hi - lo + 1)); };
    KernelSpec k;
    k.name = "r";
    k.resource_spec = {32 * pick(1, 8), 63, 8192, 4};
    size_t n = pick(1, 120);
    uint32_t regs = pick(0, 63), scratch = pick(0, 1) ? 0 : pick(0, 8192);
    for (size_t i = 0; i < n; ++i) {
        // mostly steady runs with occasional jumps
        if (pick(0, 9) == 0) regs = pick(0, 63);
        if (pick(0, 14) == 0) scratch = pick(0, 3) == 0 ? 0 : pick(0, 8192);
        static const Opcode ops[] = {Opcode::ALU, Opcode::ALU, Opcode::ALU, Opcode::LD_GLOBAL, Opcode::ST_GLOBAL,
                                     Opcode::LD_SHARED, Opcode::ST_SHARED, Opcode::BARRIER};
        Opcode op = ops[pick(0, 7)];
        if (op == Opcode::BARRIER && pick(0, 2) != 0) op = Opcode::ALU;
        k.body.push_back({op, regs, scratch, std::nullopt});
    }
    return k;
}

// Maximum over each stretch that a specifier governs, computed by walking
// the compiled body.
void check_specifiers_against_spans(const KernelSpec& compiled) {
    for (size_t i = 0; i < compiled.body.size(); ++i) {
        if (compiled.body[i].opcode != Opcode::PHASE_SPEC) continue;
        uint32_t r = 0, s = 0;
        for (size_t j = i + 1; j < compiled.body.size() && compiled.body[j].opcode != Opcode::PHASE_SPEC; ++j) {
            r = std::max(r, compiled.body[j].live_regs_after);
            s = std::max(s, compiled.body[j].live_scratch_after);
        }
        CHECK(compiled.body[i].phase->live_regs == r);
        CHECK(compiled.body[i].phase->scratch_bytes == s);
    }
}

}  // namespace

TEST_CASE("doubling at instruction 12 places a boundary there") {
    std::vector<uint32_t> regs(12, 16);
    regs.resize(24, 32);
    auto r = detect_phase_boundaries(from_regs(regs));
    CHECK(r.boundaries == std::vector<size_t>{12});
    REQUIRE(r.phases.size() == 2);
    CHECK(r.phases[0].max_live_regs == 16);
    CHECK(r.phases[1].max_live_regs == 32);
    CHECK(r.phases[1].span() == 12);
}

TEST_CASE("constant liveness is a single phase") {
    auto r = detect_phase_boundaries(from_regs(std::vector<uint32_t>(30, 20)));
    CHECK(r.boundaries.empty());
    REQUIRE(r.phases.size() == 1);
    CHECK(r.phases[0].span() == 30);
    auto c = annotate_phases(from_regs(std::vector<uint32_t>(30, 20)), r);
    CHECK(c.body.size() == 31);
    CHECK(c.body[0].opcode == Opcode::PHASE_SPEC);
    CHECK(std::count_if(c.body.begin(), c.body.end(), [](auto& i) { return i.opcode == Opcode::PHASE_SPEC; }) == 1);
}

TEST_CASE("early jump is deferred until the minimum span") {
    std::vector<uint32_t> regs(8, 16);
    regs.resize(20, 32);
    auto r = detect_phase_boundaries(from_regs(regs));
    CHECK(r.boundaries == std::vector<size_t>{10});

    // the jump reverts before index 10, so no boundary at all
    std::vector<uint32_t> blip(8, 16);
    blip.push_back(32);
    blip.push_back(32);
    blip.resize(20, 16);
    CHECK(detect_phase_boundaries(from_regs(blip)).boundaries.empty());
}

TEST_CASE("barrier is a boundary regardless of liveness") {
    auto k = from_regs(std::vector<uint32_t>(12, 16), {5});
    auto r = detect_phase_boundaries(k);
    CHECK(r.boundaries == std::vector<size_t>{5});
    CHECK(r.phases[1].starts_at_barrier);
    auto c = annotate_phases(k, r);
    CHECK(c.body.size() == 13);  // no specifier at the barrier
    CHECK(validate_compiled(c).empty());
}

TEST_CASE("empty body is rejected") {
    KernelSpec k;
    k.resource_spec = {32, 1, 0, 1};
    CHECK_THROWS(detect_phase_boundaries(k));
}

TEST_CASE("NQU-like scratch profile compiles to 0 / 4224 / 384") {
    KernelSpec k;
    k.name = "nqu";
    k.resource_spec = {64, 16, 4224, 96};
    for (int i = 0; i < 12; ++i) k.body.push_back({Opcode::ALU, 16, 0, std::nullopt});
    for (int i = 0; i < 16; ++i) k.body.push_back({Opcode::ST_SHARED, 16, 4224, std::nullopt});
    for (int i = 0; i < 20; ++i) k.body.push_back({Opcode::LD_SHARED, 16, 384, std::nullopt});
    auto r = detect_phase_boundaries(k);
    CHECK(r.boundaries == std::vector<size_t>{12, 28});
    auto c = annotate_phases(k, r);
    std::vector<uint32_t> scratch;
    for (const auto& in : c.body)
        if (in.opcode == Opcode::PHASE_SPEC) scratch.push_back(in.phase->scratch_bytes);
    CHECK(scratch == std::vector<uint32_t>{0, 4224, 384});
    CHECK(validate_compiled(c).empty());
}

TEST_CASE("specifier covers barrier phases that follow it") {
    auto k = from_regs({8, 8, 8, 20, 20, 8}, {3});
    auto c = compile_phases(k);
    REQUIRE(c.body[0].opcode == Opcode::PHASE_SPEC);
    CHECK(c.body[0].phase->live_regs == 20);
    CHECK(validate_compiled(c).empty());
}

TEST_CASE("mismatched report is rejected") {
    auto k = from_regs(std::vector<uint32_t>(20, 16));
    auto r = detect_phase_boundaries(k);
    r.phases[0].max_live_regs = 15;
    CHECK_THROWS(annotate_phases(k, r));
    PhaseReport bad;
    bad.boundaries = {25};
    CHECK_THROWS(annotate_phases(k, bad));
}

TEST_CASE("understated specifier gives one violation") {
    KernelSpec k;
    k.name = "u";
    k.resource_spec = {32, 32, 0, 1};
    k.body.push_back({Opcode::PHASE_SPEC, 0, 0, PhaseSpecifier{16, 0}});
    k.body.push_back({Opcode::ALU, 16, 0, std::nullopt});
    k.body.push_back({Opcode::ALU, 24, 0, std::nullopt});
    CHECK(validate_compiled(k).size() == 1);
}

TEST_CASE("missing leading and adjacent specifiers are reported") {
    KernelSpec k;
    k.name = "u";
    k.resource_spec = {32, 32, 0, 1};
    k.body.push_back({Opcode::ALU, 0, 0, std::nullopt});
    k.body.push_back({Opcode::PHASE_SPEC, 0, 0, PhaseSpecifier{16, 0}});
    k.body.push_back({Opcode::PHASE_SPEC, 0, 0, PhaseSpecifier{16, 0}});
    CHECK(validate_compiled(k).size() == 2);
}

TEST_CASE("threshold monotonicity fails on a non-monotone profile") {
    auto k = from_regs({5, 2, 6, 4, 3, 5});
    CHECK(detect_phase_boundaries(k, 0.30, 1).boundaries.size() == 3);
    CHECK(detect_phase_boundaries(k, 0.35, 1).boundaries.size() == 4);
}

TEST_CASE("boundaries match the brute-force scanner on random kernels") {
    std::mt19937_64 rng(77);
    const std::pair<uint64_t, uint64_t> thresholds[] = {{1, 4}, {1, 10}, {1, 2}, {3, 10}};
    for (int n = 0; n < 1000; ++n) {
        auto k = random_source(rng);
        auto [num, den] = thresholds[n % 4];
        size_t span = n % 3 == 0 ? 10 : 1 + rng() % 12;
        auto r = detect_phase_boundaries(k, static_cast<double>(num) / den, span);
        REQUIRE(r.boundaries == oracle_boundaries(k, num, den, span));

        // coverage and per-phase maxima
        size_t at = 0;
        for (const auto& p : r.phases) {
            CHECK(p.begin == at);
            CHECK(p.end > p.begin);
            uint32_t mr = 0, ms = 0;
            for (size_t i = p.begin; i < p.end; ++i) {
                mr = std::max(mr, k.body[i].live_regs_after);
                ms = std::max(ms, k.body[i].live_scratch_after);
            }
            CHECK(p.max_live_regs == mr);
            CHECK(p.max_scratch_bytes == ms);
            at = p.end;
        }
        CHECK(at == k.body.size());
        for (size_t i = 1; i < k.body.size(); ++i)
            if (k.body[i].opcode == Opcode::BARRIER)
                CHECK(std::find(r.boundaries.begin(), r.boundaries.end(), i) != r.boundaries.end());

        auto c = annotate_phases(k, r);
        CHECK(validate_compiled(c).empty());
        check_specifiers_against_spans(c);
        CHECK_NOTHROW(validate_kernel(c));
    }
}

TEST_CASE("raising the threshold on rising profiles never adds boundaries") {
    std::mt19937_64 rng(5);
    for (int n = 0; n < 500; ++n) {
        std::vector<uint32_t> regs;
        uint32_t v = rng() % 8;
        size_t len = 1 + rng() % 80;
        for (size_t i = 0; i < len; ++i) {
            if (rng() % 6 == 0) v += rng() % 10;
            regs.push_back(std::min<uint32_t>(v, 255));
        }
        auto k = from_regs(regs);
        size_t prev = SIZE_MAX;
        for (double t : {0.05, 0.1, 0.25, 0.5, 1.0, 2.0}) {
            size_t b = detect_phase_boundaries(k, t, 1 + n % 10).boundaries.size();
            CHECK(b <= prev);
            prev = b;
        }
    }
}

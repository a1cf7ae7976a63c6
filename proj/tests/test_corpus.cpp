#include "smvirt/corpus.hpp"
#include "smvirt/harness.hpp"

#include <doctest.h>

#include <map>

using namespace smv;

namespace {

struct CorpusSweeps {
    std::vector<CorpusEntry> entries;
    std::map<std::string, SweepResult> by_kernel;
};

const CorpusSweeps& sweeps() {
    static const CorpusSweeps s = [] {
        CorpusSweeps out;
        out.entries = builtin_corpus();
        for (const auto& e : out.entries) out.by_kernel[e.name] = run_sweep(e.kernel, e.grid);
        return out;
    }();
    return s;
}

double mean_schedulable(const std::vector<SweepRow>& rows) {
    double sum = 0;
    size_t n = 0;
    for (const auto& r : rows) {
        if (!r.cycles) continue;
        sum += r.mean_schedulable_warps;
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST_CASE("corpus kernels are valid and cover the documented profiles") {
    const auto& s = sweeps();
    REQUIRE(s.entries.size() == 6);
    for (const auto& e : s.entries) {
        CHECK_NOTHROW(validate_kernel(e.kernel));
        CHECK_FALSE(e.kernel.is_compiled());
        CHECK(e.grid.archs.size() == 3);
    }
    auto nqu = *corpus_entry("scratch_cliff");
    std::vector<uint32_t> levels;
    for (const auto& in : nqu.kernel.body)
        if (levels.empty() || levels.back() != in.live_scratch_after) levels.push_back(in.live_scratch_after);
    CHECK(levels == std::vector<uint32_t>{0, 4224, 384});
}

TEST_CASE("mean range is lowest under zorua on the cliff corpus") {
    const auto& s = sweeps();
    std::map<PolicyKind, double> sum;
    size_t n = 0;
    for (const auto& e : s.entries) {
        if (!e.cliff_kernel) continue;
        const auto& r = s.by_kernel.at(e.name);
        for (const auto& arch : e.grid.archs) {
            for (auto p : {PolicyKind::BASELINE, PolicyKind::WLM, PolicyKind::ZORUA})
                sum[p] += performance_range(r.select(arch, p)).value_or(0.0);
            ++n;
        }
    }
    REQUIRE(n > 0);
    INFO("baseline " << sum[PolicyKind::BASELINE] / n << " wlm " << sum[PolicyKind::WLM] / n << " zorua "
                     << sum[PolicyKind::ZORUA] / n);
    CHECK(sum[PolicyKind::ZORUA] < sum[PolicyKind::BASELINE]);
    CHECK(sum[PolicyKind::ZORUA] < sum[PolicyKind::WLM]);
}

TEST_CASE("schedulable warps: zorua >= wlm >= baseline where baseline falls short") {
    const auto& s = sweeps();
    for (const auto& e : s.entries) {
        if (!e.cliff_kernel) continue;
        const auto& r = s.by_kernel.at(e.name);
        for (const auto& arch : e.grid.archs) {
            double b = mean_schedulable(r.select(arch, PolicyKind::BASELINE));
            double w = mean_schedulable(r.select(arch, PolicyKind::WLM));
            double z = mean_schedulable(r.select(arch, PolicyKind::ZORUA));
            INFO(e.name << " on " << arch << ": baseline " << b << " wlm " << w << " zorua " << z);
            CHECK(w >= b);
            CHECK(z >= w);
        }
    }
}

TEST_CASE("zorua is no slower where baseline loses a block on register-cliff kernels") {
    const auto& s = sweeps();
    size_t checked = 0;
    for (const char* name : {"reg_cliff", "dct_like"}) {
        const auto& r = s.by_kernel.at(name);
        const auto entry = *corpus_entry(name);
        for (const auto& arch : entry.grid.archs) {
            auto b = r.select(arch, PolicyKind::BASELINE);
            auto z = r.select(arch, PolicyKind::ZORUA);
            for (size_t i = 1; i < b.size(); ++i) {
                if (!b[i].cycles || b[i].blocks_in_flight_max >= b[i - 1].blocks_in_flight_max) continue;
                INFO(name << " on " << arch << " point " << i);
                REQUIRE(z[i].cycles.has_value());
                CHECK(*z[i].cycles <= *b[i].cycles);
                ++checked;
            }
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("zorua has no more cliffs than baseline on any corpus sweep") {
    const auto& s = sweeps();
    for (const auto& e : s.entries) {
        const auto& r = s.by_kernel.at(e.name);
        for (const auto& arch : e.grid.archs) {
            INFO(e.name << " on " << arch);
            CHECK(detect_cliffs(r.select(arch, PolicyKind::ZORUA)).size() <=
                  detect_cliffs(r.select(arch, PolicyKind::BASELINE)).size());
        }
    }
}

TEST_CASE("static policies never leave the chip on the corpus") {
    const auto& s = sweeps();
    for (const auto& [name, r] : s.by_kernel)
        for (const auto& row : r.rows)
            if (row.policy != PolicyKind::ZORUA)
                for (double h : row.hit_rate) CHECK(h == 1.0);
}

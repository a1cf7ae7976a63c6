#pragma once
// Specification sweeps and the metrics computed over them.

#include "smvirt/arch.hpp"
#include "smvirt/coordinator.hpp"
#include "smvirt/engine.hpp"
#include "smvirt/kernel.hpp"
#include "smvirt/policy.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace smv {

enum class SweepParam : uint8_t { THREADS_PER_BLOCK, REGS_PER_THREAD, SCRATCH };

const char* sweep_param_name(SweepParam p);
std::optional<SweepParam> sweep_param_from_name(std::string_view name);

struct ParamRange {
    SweepParam param = SweepParam::THREADS_PER_BLOCK;
    uint32_t lo = 0;
    uint32_t hi = 0;
    uint32_t step = 1;

    std::vector<uint32_t> values() const;
    bool operator==(const ParamRange&) const = default;
};

// Text form:
//   grid <name>
//   range threads_per_block=384:1024:32
//   work total_threads=8192        (blocks = ceil(total / threads_per_block))
//   work blocks=96
//   archs fermi,kepler,maxwell     (optional)
//   policies baseline,wlm,zorua    (optional)
//   seed 1                         (optional)
struct SweepGrid {
    std::string name = "grid";
    std::vector<ParamRange> ranges;
    std::optional<uint64_t> total_threads;
    std::optional<uint32_t> blocks;
    std::vector<std::string> archs{"fermi"};
    std::vector<PolicyKind> policies{PolicyKind::BASELINE, PolicyKind::WLM, PolicyKind::ZORUA};
    uint64_t seed = 1;

    bool operator==(const SweepGrid&) const = default;
};

SweepGrid parse_grid(std::string_view text);
std::string serialize_grid(const SweepGrid& g);
SweepGrid load_grid_file(const std::string& path);
void save_grid_file(const SweepGrid& g, const std::string& path);

// Cartesian product of the ranges applied to the kernel's own spec, in
// row-major order (first range varies slowest). Points whose spec cannot
// hold the kernel's liveness are dropped with a warning.
std::vector<ResourceSpecification> grid_points(const SweepGrid& g, const KernelSpec& k,
                                               std::vector<std::string>* warnings = nullptr);

struct SweepRow {
    std::string arch;
    PolicyKind policy = PolicyKind::BASELINE;
    size_t point = 0;
    ResourceSpecification spec;
    std::optional<uint64_t> cycles;  // nullopt: unrunnable
    std::array<double, kNumResourceKinds> hit_rate{1.0, 1.0, 1.0};
    double mean_schedulable_warps = 0.0;
    uint32_t blocks_in_flight_min = 0;
    uint32_t blocks_in_flight_max = 0;
    uint64_t guard_admissions = 0;

    double performance() const { return cycles ? 1.0 / static_cast<double>(*cycles) : 0.0; }
    bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
    std::string kernel;
    std::string grid;
    std::vector<SweepRow> rows;  // arch-major, then policy, then point
    std::vector<std::string> warnings;

    // Rows of one (arch, policy) in point order.
    std::vector<SweepRow> select(std::string_view arch, PolicyKind policy) const;
    bool operator==(const SweepResult&) const = default;
};

struct SweepOptions {
    unsigned threads = 0;  // 0: hardware concurrency
    uint32_t sms = 1;
    uint64_t cycle_cap = 200'000'000;
    ZoruaConfig zorua;
    bool check_invariants = false;
};

// Throws NonTermination if any point exceeds the cycle cap.
SweepResult run_sweep(const KernelSpec& kernel, const SweepGrid& grid, const SweepOptions& opts = {});

// 1 - min/max performance over runnable rows; nullopt with fewer than two.
std::optional<double> performance_range(const std::vector<SweepRow>& rows);

struct Cliff {
    size_t index = 0;        // row after the jump
    double slowdown = 0.0;   // cycles[index] / cycles[index-1] - 1; infinity into an unrunnable row
};

inline constexpr double kDefaultCliffThreshold = 0.25;
inline constexpr double kPortingCandidateBand = 0.05;

std::vector<Cliff> detect_cliffs(const std::vector<SweepRow>& rows, double threshold = kDefaultCliffThreshold);

// Rows of both sides must cover the same points in the same order.
double porting_loss(const std::vector<SweepRow>& src, const std::vector<SweepRow>& dst);

std::string csv_header();
void emit_csv(const SweepResult& r, std::ostream& os);
void emit_json(const SweepResult& r, std::ostream& os);
void emit_csv(const SweepResult& r, const std::string& path);
void emit_json(const SweepResult& r, const std::string& path);
SweepResult sweep_from_json(std::string_view text);

// Single simulation: JSON carries the summary and every epoch, CSV one row
// per epoch.
std::string epoch_csv_header();
void emit_sim_json(const SimResult& r, std::string_view kernel, std::string_view arch, PolicyKind policy,
                   const ResourceSpecification& spec, std::ostream& os);
void emit_sim_csv(const SimResult& r, std::ostream& os);

// Fixed 6-decimal rendering used by every emitter.
std::string format_fixed(double v);

}  // namespace smv

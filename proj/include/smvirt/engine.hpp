#pragma once
// Cycle-approximate SM model. One instance simulates a set of independent
// SM replicas; blocks are dealt to them round-robin.
//
// Timing rules (per warp, in order, one instruction in flight):
//   ALU, LD_SHARED, ST_SHARED, BARRIER, PHASE_SPEC   1 cycle
//   ST_GLOBAL                                        1 cycle, plus one memory request
//   LD_GLOBAL                                        until its memory request completes
// Memory requests complete memory_latency_cycles after they start; at most
// max_inflight_memory are outstanding per SM, later ones queue behind them.
// Under mapping-table policies every instruction other than BARRIER and
// PHASE_SPEC looks up the warp slot, one register set and (shared ops) one
// scratch set before executing; each lookup pays mapping_table_penalty_cycles
// and a swap-resident set adds a memory request. The slowest lookup gates
// execution.

#include "smvirt/arch.hpp"
#include "smvirt/coordinator.hpp"
#include "smvirt/kernel.hpp"
#include "smvirt/policy.hpp"

#include <array>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smv {

struct EpochStats {
    uint64_t start_cycle = 0;
    uint64_t cycles = 0;
    uint64_t issue_cycles = 0;  // cycles with at least one issue
    uint64_t c_idle = 0;        // no issue, warps held back by the resource manager
    uint64_t c_mem = 0;         // no issue, every schedulable warp waits on memory
    uint64_t c_other = 0;       // no issue, barrier or pipeline stall
    uint64_t instructions = 0;
    std::array<uint64_t, kNumResourceKinds> swap_accesses{};
    uint32_t max_blocks_in_flight = 0;

    bool operator==(const EpochStats&) const = default;
};

struct SimResult {
    uint64_t cycles = 0;
    uint64_t instructions = 0;
    std::vector<EpochStats> epochs;
    std::array<uint64_t, kNumResourceKinds> accesses{};
    std::array<uint64_t, kNumResourceKinds> swap_accesses{};
    std::array<double, kNumResourceKinds> hit_rate{1.0, 1.0, 1.0};
    double mean_schedulable_warps = 0.0;
    uint32_t blocks_in_flight_min = 0;
    uint32_t blocks_in_flight_max = 0;
    uint64_t guard_admissions = 0;
    uint64_t blocks_finished = 0;
    uint64_t invariant_checks = 0;
    std::vector<std::string> invariant_violations;

    uint64_t total_c_idle() const;
    uint64_t total_c_mem() const;
    uint64_t total_c_other() const;
    uint64_t total_issue_cycles() const;
};

class NonTermination : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnrunnableSpec : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimOptions {
    uint64_t seed = 1;
    uint64_t cycle_cap = 200'000'000;
    uint32_t sms = 1;  // SM replicas to simulate; 0 means arch.num_sms
    ZoruaConfig zorua;
    bool check_invariants = false;
    std::ostream* event_log = nullptr;
};

// The kernel's resource spec is the one simulated. Source kernels are
// phase-compiled with default thresholds first.
SimResult run(const KernelSpec& kernel, PolicyKind policy, const ArchConfig& arch, const SimOptions& opts = {});
SimResult run(const KernelSpec& kernel, PolicyKind policy, const ArchConfig& arch, uint64_t seed);

struct Utilization {
    uint64_t start_cycle = 0;
    double registers = 1.0;  // mean over cycles of live / allocated
    double scratch = 1.0;
};

// Per-epoch fraction of statically allocated registers and scratchpad that
// is live, under block-granular static allocation.
std::vector<Utilization> measure_underutilization(const KernelSpec& kernel, const ResourceSpecification& spec,
                                                  const ArchConfig& arch, uint32_t epoch_cycles);

// Which logical set (of `live_sets`) an access touches: low-numbered sets
// are hotter. Pure function of its inputs.
uint32_t access_set_index(uint64_t seed, uint64_t warp, uint64_t pc, uint32_t live_sets);

// Memory pipe with a fixed latency and a cap on outstanding requests.
class MemoryPipe {
public:
    MemoryPipe(uint32_t latency, uint32_t max_inflight) : latency_(latency), cap_(max_inflight) {}

    // Starts a request at `now` (or when a slot frees up); returns completion.
    uint64_t issue(uint64_t now);
    bool saturated(uint64_t now);
    // Earliest outstanding completion strictly after `now`, or 0.
    uint64_t next_completion(uint64_t now);
    size_t inflight(uint64_t now);

private:
    void retire(uint64_t now);

    uint32_t latency_;
    uint32_t cap_;
    std::vector<uint64_t> heap_;  // min-heap of completion times
};

}  // namespace smv

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace smv {

// Physical SM capacities plus the timing knobs of the simulator.
struct ArchConfig {
    std::string name;
    uint32_t num_sms = 15;
    uint32_t warps_per_sm_physical = 48;
    uint32_t max_logical_warps = 64;
    uint32_t max_logical_blocks = 16;
    uint32_t registers_per_sm = 32768;
    uint32_t scratch_bytes_per_sm = 48 * 1024;
    uint32_t max_regs_per_thread = 63;
    uint32_t reg_set_size = 4 * 32;  // registers
    uint32_t scratch_set_size = 1024;  // bytes
    uint32_t max_blocks_per_sm_baseline = 8;
    uint32_t mapping_table_penalty_cycles = 2;
    uint32_t memory_latency_cycles = 400;
    uint32_t max_inflight_memory = 64;
    uint32_t epoch_cycles = 2048;
    uint32_t schedulers_per_sm = 2;
    uint32_t warp_state_bytes = 384;  // PC + SIMT stack record per swapped warp slot

    uint32_t physical_reg_sets() const { return registers_per_sm / reg_set_size; }
    uint32_t physical_scratch_sets() const { return scratch_bytes_per_sm / scratch_set_size; }
    uint32_t physical_warp_slots() const { return warps_per_sm_physical; }
    uint32_t max_reg_sets_per_warp() const;
};

ArchConfig fermi_preset();
ArchConfig kepler_preset();
ArchConfig maxwell_preset();

// "fermi" | "kepler" | "maxwell"
std::optional<ArchConfig> arch_preset(std::string_view name);
std::vector<std::string> arch_preset_names();

// Throws std::invalid_argument describing the first broken invariant.
void validate_arch(const ArchConfig& cfg);

}  // namespace smv

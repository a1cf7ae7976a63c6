#include "smvirt/arch.hpp"

#include <stdexcept>

namespace smv {

uint32_t ArchConfig::max_reg_sets_per_warp() const {
    return (max_regs_per_thread * 32 + reg_set_size - 1) / reg_set_size;
}

ArchConfig fermi_preset() {
    ArchConfig c;
    c.name = "fermi";
    return c;
}

// Logical warp/block limits scale with the physical warp slots (64/48).
ArchConfig kepler_preset() {
    ArchConfig c;
    c.name = "kepler";
    c.warps_per_sm_physical = 64;
    c.max_logical_warps = 85;
    c.max_logical_blocks = 21;
    c.registers_per_sm = 65536;
    c.scratch_bytes_per_sm = 48 * 1024;
    c.max_regs_per_thread = 255;
    c.max_blocks_per_sm_baseline = 16;
    return c;
}

ArchConfig maxwell_preset() {
    ArchConfig c = kepler_preset();
    c.name = "maxwell";
    c.scratch_bytes_per_sm = 64 * 1024;
    return c;
}

std::optional<ArchConfig> arch_preset(std::string_view name) {
    if (name == "fermi") return fermi_preset();
    if (name == "kepler") return kepler_preset();
    if (name == "maxwell") return maxwell_preset();
    return std::nullopt;
}

std::vector<std::string> arch_preset_names() { return {"fermi", "kepler", "maxwell"}; }

void validate_arch(const ArchConfig& c) {
    auto fail = [&](const std::string& m) { throw std::invalid_argument("arch '" + c.name + "': " + m); };
    if (c.reg_set_size != 4 * 32) fail("reg_set_size must be 4 x warp width (128)");
    if (c.scratch_set_size != 1024) fail("scratch_set_size must be 1024 bytes");
    if (c.registers_per_sm == 0 || c.registers_per_sm % c.reg_set_size != 0)
        fail("registers_per_sm must be a positive multiple of reg_set_size");
    if (c.scratch_bytes_per_sm % c.scratch_set_size != 0)
        fail("scratch_bytes_per_sm must be a multiple of scratch_set_size");
    if (c.warps_per_sm_physical == 0) fail("warps_per_sm_physical must be > 0");
    if (c.max_logical_warps < c.warps_per_sm_physical) fail("max_logical_warps < physical warp slots");
    if (c.max_logical_blocks == 0 || c.max_blocks_per_sm_baseline == 0) fail("block limits must be > 0");
    if (c.schedulers_per_sm == 0) fail("schedulers_per_sm must be > 0");
    if (c.epoch_cycles == 0) fail("epoch_cycles must be > 0");
    if (c.max_inflight_memory == 0) fail("max_inflight_memory must be > 0");
    if (c.num_sms == 0) fail("num_sms must be > 0");
}

}  // namespace smv

#include "smvirt/policy.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace smv {

const char* policy_name(PolicyKind p) {
    switch (p) {
        case PolicyKind::BASELINE: return "baseline";
        case PolicyKind::WLM: return "wlm";
        case PolicyKind::ZORUA: return "zorua";
    }
    return "?";
}

std::optional<PolicyKind> policy_from_name(std::string_view name) {
    if (name == "baseline") return PolicyKind::BASELINE;
    if (name == "wlm") return PolicyKind::WLM;
    if (name == "zorua") return PolicyKind::ZORUA;
    return std::nullopt;
}

uint32_t baseline_blocks_in_flight(const ResourceSpecification& spec, const ArchConfig& arch) {
    uint64_t regs_per_block = uint64_t{spec.threads_per_block} * spec.regs_per_thread;
    uint64_t by_regs = regs_per_block ? arch.registers_per_sm / regs_per_block : std::numeric_limits<uint64_t>::max();
    uint64_t by_scratch = spec.scratch_bytes_per_block ? arch.scratch_bytes_per_sm / spec.scratch_bytes_per_block
                                                       : std::numeric_limits<uint64_t>::max();
    uint64_t warps = spec.warps_per_block();
    uint64_t by_slots = warps ? arch.warps_per_sm_physical / warps : std::numeric_limits<uint64_t>::max();
    uint64_t n = std::min({by_regs, by_scratch, by_slots, uint64_t{arch.max_blocks_per_sm_baseline}});
    return static_cast<uint32_t>(n);
}

bool wlm_admit(const ResourceSpecification& spec, const FreeCounters& free) {
    return free.warp_slots >= 1 && free.registers >= uint64_t{spec.regs_per_thread} * kWarpWidth;
}

StaticPolicy::StaticPolicy(PolicyKind kind, const ResourceSpecification& spec, const ArchConfig& arch)
    : kind_(kind), spec_(spec), arch_(arch) {
    if (kind == PolicyKind::ZORUA) throw std::invalid_argument("StaticPolicy: ZORUA is not a static policy");
    capacity_ = {arch.registers_per_sm, arch.scratch_bytes_per_sm, arch.warps_per_sm_physical};
    free_ = capacity_;
}

bool StaticPolicy::try_admit_block(BlockId block, std::span<const WarpId> warps, PhaseSpecifier) {
    if (blocks_.size() >= arch_.max_blocks_per_sm_baseline) return false;
    if (free_.scratch_bytes < spec_.scratch_bytes_per_block) return false;

    if (kind_ == PolicyKind::BASELINE) {
        uint64_t regs = uint64_t{spec_.threads_per_block} * spec_.regs_per_thread;
        if (free_.registers < regs || free_.warp_slots < warps.size()) return false;
        free_.registers -= regs;
        free_.warp_slots -= static_cast<uint32_t>(warps.size());
    } else if (pending_count() > 0) {
        // WLM keeps at most one partially admitted block waiting.
        return false;
    }
    free_.scratch_bytes -= spec_.scratch_bytes_per_block;

    Block& b = blocks_[block];
    b.warps.assign(warps.begin(), warps.end());
    for (WarpId id : warps) {
        Warp& w = warps_[id];
        w.block = block;
        w.holds = kind_ == PolicyKind::BASELINE;
        w.state = w.holds ? WarpState::SCHEDULABLE : WarpState::PENDING_REG_Q;
    }
    admit_waiting_warps();
    return true;
}

size_t StaticPolicy::admit_waiting_warps() {
    size_t admitted = 0;
    for (auto& [id, w] : warps_) {
        if (w.state != WarpState::PENDING_REG_Q) continue;
        if (!wlm_admit(spec_, free_)) break;
        free_.warp_slots -= 1;
        free_.registers -= uint64_t{spec_.regs_per_thread} * kWarpWidth;
        w.holds = true;
        w.state = WarpState::SCHEDULABLE;
        ++admitted;
    }
    return admitted;
}

size_t StaticPolicy::maintain() { return kind_ == PolicyKind::WLM ? admit_waiting_warps() : 0; }

bool StaticPolicy::on_barrier(WarpId id) {
    Warp& w = warps_.at(id);
    Block& b = blocks_.at(w.block);
    w.state = WarpState::AT_BARRIER;
    ++b.at_barrier;
    if (b.at_barrier == b.warps.size() - b.finished) {
        b.at_barrier = 0;
        for (WarpId sib : b.warps) {
            Warp& s = warps_.at(sib);
            if (s.state == WarpState::AT_BARRIER) s.state = WarpState::SCHEDULABLE;
        }
        return true;
    }
    return false;
}

bool StaticPolicy::on_warp_finished(WarpId id) {
    Warp& w = warps_.at(id);
    w.state = WarpState::FINISHED;
    if (kind_ == PolicyKind::WLM && w.holds) {
        free_.warp_slots += 1;
        free_.registers += uint64_t{spec_.regs_per_thread} * kWarpWidth;
    }
    w.holds = false;
    Block& b = blocks_.at(w.block);
    if (++b.finished < b.warps.size()) {
        admit_waiting_warps();
        return false;
    }
    if (kind_ == PolicyKind::BASELINE) {
        free_.registers += uint64_t{spec_.threads_per_block} * spec_.regs_per_thread;
        free_.warp_slots += static_cast<uint32_t>(b.warps.size());
    }
    free_.scratch_bytes += spec_.scratch_bytes_per_block;
    BlockId bid = w.block;
    for (WarpId sib : b.warps) warps_.erase(sib);
    blocks_.erase(bid);
    admit_waiting_warps();
    return true;
}

size_t StaticPolicy::pending_count() const {
    return static_cast<size_t>(std::count_if(warps_.begin(), warps_.end(), [](const auto& kv) {
        return kv.second.state == WarpState::PENDING_REG_Q;
    }));
}

uint64_t StaticPolicy::allocated_registers() const { return capacity_.registers - free_.registers; }
uint64_t StaticPolicy::allocated_scratch_bytes() const { return capacity_.scratch_bytes - free_.scratch_bytes; }

std::vector<std::string> StaticPolicy::check_invariants() const {
    std::vector<std::string> v;
    uint64_t regs = 0, slots = 0;
    for (const auto& [id, w] : warps_) {
        if (!w.holds) continue;
        if (kind_ == PolicyKind::WLM) {
            regs += uint64_t{spec_.regs_per_thread} * kWarpWidth;
            ++slots;
        }
    }
    if (kind_ == PolicyKind::BASELINE) {
        regs = uint64_t{spec_.threads_per_block} * spec_.regs_per_thread * blocks_.size();
        for (const auto& [id, b] : blocks_) slots += b.warps.size();
    }
    if (regs + free_.registers != capacity_.registers) v.push_back("static: register accounting broken");
    if (slots + free_.warp_slots != capacity_.warp_slots) v.push_back("static: warp slot accounting broken");
    if (uint64_t{spec_.scratch_bytes_per_block} * blocks_.size() + free_.scratch_bytes != capacity_.scratch_bytes)
        v.push_back("static: scratch accounting broken");
    return v;
}

ZoruaPolicy::ZoruaPolicy(const ArchConfig& arch, ZoruaConfig zc) : coord_(arch, zc) {}

bool ZoruaPolicy::try_admit_block(BlockId block, std::span<const WarpId> warps, PhaseSpecifier initial) {
    if (!coord_.can_accept_block(static_cast<uint32_t>(warps.size()))) return false;
    coord_.on_block_arrival(block, warps, initial);
    return true;
}

bool ZoruaPolicy::on_phase_change(WarpId w, PhaseSpecifier next) {
    coord_.on_phase_change(w, next);
    return coord_.state(w) != WarpState::SCHEDULABLE;
}

uint64_t ZoruaPolicy::allocated_registers() const {
    const auto& t = coord_.maps()[ResourceKind::REGISTER];
    return uint64_t{t.resident() + t.mapped_swap()} * coord_.arch().reg_set_size;
}

uint64_t ZoruaPolicy::allocated_scratch_bytes() const {
    const auto& t = coord_.maps()[ResourceKind::SCRATCHPAD];
    return uint64_t{t.resident() + t.mapped_swap()} * coord_.arch().scratch_set_size;
}

std::unique_ptr<ResourcePolicy> make_policy(PolicyKind kind, const ResourceSpecification& spec,
                                            const ArchConfig& arch, const ZoruaConfig& zc) {
    if (kind == PolicyKind::ZORUA) return std::make_unique<ZoruaPolicy>(arch, zc);
    return std::make_unique<StaticPolicy>(kind, spec, arch);
}

}  // namespace smv

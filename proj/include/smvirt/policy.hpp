#pragma once
// Resource-management policies behind one interface. The engine drives
// them with the same events; they decide which warps may issue.

#include "smvirt/arch.hpp"
#include "smvirt/coordinator.hpp"
#include "smvirt/kernel.hpp"

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace smv {

enum class PolicyKind : uint8_t { BASELINE, WLM, ZORUA };

const char* policy_name(PolicyKind p);
std::optional<PolicyKind> policy_from_name(std::string_view name);

// Concurrent blocks under block-granular static allocation; 0 when a single
// block does not fit.
uint32_t baseline_blocks_in_flight(const ResourceSpecification& spec, const ArchConfig& arch);

struct FreeCounters {
    uint64_t registers = 0;
    uint64_t scratch_bytes = 0;
    uint32_t warp_slots = 0;
};

// Warp-level admission: needs a physical slot and the warp's full register
// allocation; never touches swap. The block must already hold its scratch.
bool wlm_admit(const ResourceSpecification& spec, const FreeCounters& free);

class ResourcePolicy {
public:
    virtual ~ResourcePolicy() = default;

    virtual PolicyKind kind() const = 0;

    // False when the block cannot be taken right now (back-pressure).
    virtual bool try_admit_block(BlockId block, std::span<const WarpId> warps, PhaseSpecifier initial) = 0;
    // Returns true if the warp left the schedulable set.
    virtual bool on_phase_change(WarpId w, PhaseSpecifier next) = 0;
    virtual bool on_barrier(WarpId w) = 0;
    virtual bool on_warp_finished(WarpId w) = 0;
    virtual size_t maintain() { return 0; }  // per-cycle hook (deadlock guard)
    virtual void on_epoch(int64_t /*c_idle*/, int64_t /*c_mem*/) {}
    virtual void set_now(uint64_t /*cycle*/) {}

    virtual WarpState state(WarpId w) const = 0;
    virtual size_t pending_count() const = 0;
    virtual size_t resident_blocks() const = 0;

    virtual bool uses_mapping_tables() const { return false; }
    virtual AccessResult access(WarpId, ResourceKind, uint32_t) { return {}; }
    virtual Coordinator* coordinator() { return nullptr; }

    // Register/scratch amounts currently allocated, for utilization sampling.
    virtual uint64_t allocated_registers() const = 0;
    virtual uint64_t allocated_scratch_bytes() const = 0;

    virtual std::vector<std::string> check_invariants() const { return {}; }
};

// BASELINE (block-granular) and WLM (warp-granular registers/slots,
// block-granular scratchpad) share the static pool bookkeeping.
class StaticPolicy final : public ResourcePolicy {
public:
    StaticPolicy(PolicyKind kind, const ResourceSpecification& spec, const ArchConfig& arch);

    PolicyKind kind() const override { return kind_; }
    bool try_admit_block(BlockId block, std::span<const WarpId> warps, PhaseSpecifier initial) override;
    bool on_phase_change(WarpId, PhaseSpecifier) override { return false; }
    bool on_barrier(WarpId w) override;
    bool on_warp_finished(WarpId w) override;
    size_t maintain() override;

    WarpState state(WarpId w) const override { return warps_.at(w).state; }
    size_t pending_count() const override;
    size_t resident_blocks() const override { return blocks_.size(); }
    uint64_t allocated_registers() const override;
    uint64_t allocated_scratch_bytes() const override;

    const FreeCounters& free_counters() const { return free_; }
    std::vector<std::string> check_invariants() const override;

private:
    struct Warp {
        BlockId block = 0;
        WarpState state = WarpState::PENDING_REG_Q;
        bool holds = false;
    };
    struct Block {
        std::vector<WarpId> warps;
        uint32_t at_barrier = 0;
        uint32_t finished = 0;
    };

    size_t admit_waiting_warps();

    PolicyKind kind_;
    ResourceSpecification spec_;
    ArchConfig arch_;
    FreeCounters capacity_;
    FreeCounters free_;
    std::map<WarpId, Warp> warps_;
    std::map<BlockId, Block> blocks_;
};

class ZoruaPolicy final : public ResourcePolicy {
public:
    ZoruaPolicy(const ArchConfig& arch, ZoruaConfig zc);

    PolicyKind kind() const override { return PolicyKind::ZORUA; }
    bool try_admit_block(BlockId block, std::span<const WarpId> warps, PhaseSpecifier initial) override;
    bool on_phase_change(WarpId w, PhaseSpecifier next) override;
    bool on_barrier(WarpId w) override { return coord_.on_barrier(w); }
    bool on_warp_finished(WarpId w) override { return coord_.on_warp_finished(w); }
    size_t maintain() override { return coord_.deadlock_guard(); }
    void on_epoch(int64_t c_idle, int64_t c_mem) override { coord_.on_epoch(c_idle, c_mem); }
    void set_now(uint64_t cycle) override { coord_.set_now(cycle); }

    WarpState state(WarpId w) const override { return coord_.state(w); }
    size_t pending_count() const override { return coord_.pending_count(); }
    size_t resident_blocks() const override { return coord_.resident_blocks(); }

    bool uses_mapping_tables() const override { return true; }
    AccessResult access(WarpId w, ResourceKind k, uint32_t logical) override { return coord_.access(w, k, logical); }
    Coordinator* coordinator() override { return &coord_; }

    uint64_t allocated_registers() const override;
    uint64_t allocated_scratch_bytes() const override;
    std::vector<std::string> check_invariants() const override { return coord_.check_invariants(); }

private:
    Coordinator coord_;
};

std::unique_ptr<ResourcePolicy> make_policy(PolicyKind kind, const ResourceSpecification& spec,
                                            const ArchConfig& arch, const ZoruaConfig& zc = {});

}  // namespace smv

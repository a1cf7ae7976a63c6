#pragma once
// The virtualization runtime of one SM: pending warps wait in three ordered
// queues (thread/barrier -> scratchpad -> register) until every resource of
// their current phase is granted in physical or swap space. Swap use per
// resource is bounded by an adaptive oversubscription threshold.

#include "smvirt/arch.hpp"
#include "smvirt/kernel.hpp"
#include "smvirt/resource_maps.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace smv {

using WarpId = uint64_t;
using BlockId = uint64_t;

enum class WarpState : uint8_t {
    PENDING_THREAD_BARRIER_Q,
    PENDING_SCRATCH_Q,
    PENDING_REG_Q,
    SCHEDULABLE,
    AT_BARRIER,
    FINISHED,
};

const char* warp_state_name(WarpState s);

inline bool is_pending(WarpState s) {
    return s == WarpState::PENDING_THREAD_BARRIER_Q || s == WarpState::PENDING_SCRATCH_Q ||
           s == WarpState::PENDING_REG_Q;
}

struct WarpRecord {
    WarpId id = 0;
    BlockId block = 0;
    PhaseSpecifier phase;
    uint32_t reg_sets = 0;  // holds logical register sets [0, reg_sets)
    bool has_slot = false;
    WarpState state = WarpState::PENDING_THREAD_BARRIER_Q;
    uint64_t queue_seq = 0;  // FIFO position inside its queue
    bool guard_admitted = false;
};

struct BlockRecord {
    BlockId id = 0;
    std::vector<WarpId> warps;
    uint32_t scratch_sets = 0;  // holds logical scratch sets [0, scratch_sets)
    uint32_t at_barrier = 0;
    uint32_t finished = 0;
};

enum class CoordinatorEventKind : uint8_t {
    BLOCK_ARRIVAL,
    PHASE_CHANGE,
    BARRIER_REACHED,
    WARP_FINISHED,
    BLOCK_FINISHED,
    EPOCH_TICK,
};

const char* event_kind_name(CoordinatorEventKind k);

struct ZoruaConfig {
    double o_default_fraction = 0.10;
    double o_step_fraction = 0.04;
    int64_t c_delta_thresh = 16;
    double hard_cap_fraction = 1.0;
    bool adaptive = true;
    std::optional<uint32_t> fixed_o_thresh;  // pins every threshold when set
    bool deadlock_guard = true;
    double guard_occupancy = 0.20;  // fraction of physical warp slots
    bool spill_on_oversubscribe = true;
    bool exchange_on_access = true;
    // A warp holding nothing may not take a resource that a warp already
    // holding resources is waiting for.
    bool holders_first = true;
    // true: the controller reads running totals of c_idle / c_mem, so each
    // delta is the amount accrued during the epoch. false: it reads each
    // epoch's own counts, so a delta is the change from the previous epoch.
    bool free_running_counters = true;
};

struct ResourceThreshold {
    int64_t o_thresh = 0;
    int64_t o_default = 0;
    int64_t step = 0;
    int64_t hard_cap = 0;
};

struct OversubscriptionState {
    std::array<ResourceThreshold, kNumResourceKinds> per_resource{};
    int64_t c_delta_thresh = 16;
    int64_t c_idle_prev = 0;
    int64_t c_mem_prev = 0;

    ResourceThreshold& operator[](ResourceKind k) { return per_resource[static_cast<size_t>(k)]; }
    const ResourceThreshold& operator[](ResourceKind k) const { return per_resource[static_cast<size_t>(k)]; }
};

OversubscriptionState make_oversubscription_state(const ArchConfig& cfg, const ZoruaConfig& zc);

// One epoch of the threshold controller. Both deltas are shared by all
// three resources; each threshold moves by its own step and is clamped to
// [0, hard_cap].
void update_o_thresh(int64_t c_idle, int64_t c_mem, OversubscriptionState& st);

struct AccessResult {
    Placement where = Placement::PHYSICAL;
    bool migrated = false;          // swapped set brought into a free physical set
    std::optional<SetKey> evicted;  // resident set pushed out to make room
};

struct CoordinatorStats {
    uint64_t events = 0;
    uint64_t guard_admissions = 0;
    uint64_t guard_swap_sets = 0;
    uint64_t spill_stores = 0;
    uint64_t threshold_updates = 0;
    std::vector<std::string> budget_violations;
};

class Coordinator {
public:
    Coordinator(const ArchConfig& cfg, ZoruaConfig zc = {});

    // Virtual-space admission check for a block of `n_warps`.
    bool can_accept_block(uint32_t n_warps) const;

    void on_block_arrival(BlockId block, std::span<const WarpId> warps, PhaseSpecifier initial);
    void on_phase_change(WarpId w, PhaseSpecifier next);
    // Returns true when this arrival released the block's barrier.
    bool on_barrier(WarpId w);
    // Returns true when the warp's block completed as well.
    bool on_warp_finished(WarpId w);

    // Re-offers resources to every queued warp, register queue first.
    size_t retry_all_queues();
    // Forces one admission through swap when too few warps are schedulable.
    size_t deadlock_guard();
    void on_epoch(int64_t c_idle, int64_t c_mem);

    AccessResult access(WarpId w, ResourceKind kind, uint32_t logical);

    void set_now(uint64_t cycle) { now_ = cycle; }
    void set_event_log(std::ostream* log) { log_ = log; }

    const WarpRecord& warp(WarpId w) const;
    const BlockRecord& block(BlockId b) const;
    bool has_warp(WarpId w) const { return warps_.contains(w); }
    WarpState state(WarpId w) const { return warp(w).state; }

    size_t schedulable_count() const;
    size_t pending_count() const;
    size_t resident_warps() const { return warps_.size(); }
    size_t resident_blocks() const { return blocks_.size(); }
    std::vector<WarpId> queue(WarpState which) const;

    const ResourceMaps& maps() const { return maps_; }
    ResourceMaps& maps() { return maps_; }
    const OversubscriptionState& thresholds() const { return thresh_; }
    OversubscriptionState& thresholds() { return thresh_; }
    const CoordinatorStats& stats() const { return stats_; }
    const ArchConfig& arch() const { return cfg_; }
    const ZoruaConfig& config() const { return zc_; }

    // Full-state consistency check (conservation, aliasing, full allocation
    // of schedulable warps, queue ordering).
    std::vector<std::string> check_invariants() const;

private:
    struct Needs {
        uint32_t slot = 0;
        uint32_t scratch = 0;
        uint32_t regs = 0;
    };

    Needs needs_of(const WarpRecord& w) const;
    bool passable(ResourceKind kind, uint32_t need) const;
    bool try_traverse(WarpRecord& w, const std::array<bool, kNumResourceKinds>* contended = nullptr);
    void acquire(ResourceKind kind, OwnerId owner, uint32_t first, uint32_t need, bool forced);
    void shrink_block_scratch(BlockRecord& b);
    void set_state(WarpRecord& w, WarpState s);
    void log_event(CoordinatorEventKind kind, uint64_t id);
    int kinds_held(const WarpRecord& w) const;

    ArchConfig cfg_;
    ZoruaConfig zc_;
    ResourceMaps maps_;
    OversubscriptionState thresh_;
    std::map<WarpId, WarpRecord> warps_;
    std::map<BlockId, BlockRecord> blocks_;
    CoordinatorStats stats_;
    uint64_t seq_ = 0;
    uint64_t now_ = 0;
    std::ostream* log_ = nullptr;
};

}  // namespace smv

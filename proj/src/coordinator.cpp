#include "smvirt/coordinator.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smv {

namespace {

constexpr std::array<ResourceKind, 3> kTraversalOrder = {ResourceKind::WARP_SLOT, ResourceKind::SCRATCHPAD,
                                                         ResourceKind::REGISTER};

WarpState queue_of(ResourceKind k) {
    switch (k) {
        case ResourceKind::WARP_SLOT: return WarpState::PENDING_THREAD_BARRIER_Q;
        case ResourceKind::SCRATCHPAD: return WarpState::PENDING_SCRATCH_Q;
        case ResourceKind::REGISTER: return WarpState::PENDING_REG_Q;
    }
    return WarpState::PENDING_THREAD_BARRIER_Q;
}

ResourceKind waiting_on(WarpState q) {
    switch (q) {
        case WarpState::PENDING_SCRATCH_Q: return ResourceKind::SCRATCHPAD;
        case WarpState::PENDING_REG_Q: return ResourceKind::REGISTER;
        default: return ResourceKind::WARP_SLOT;
    }
}

uint32_t physical_capacity(const ArchConfig& cfg, ResourceKind k) {
    switch (k) {
        case ResourceKind::REGISTER: return cfg.physical_reg_sets();
        case ResourceKind::SCRATCHPAD: return cfg.physical_scratch_sets();
        case ResourceKind::WARP_SLOT: return cfg.physical_warp_slots();
    }
    return 0;
}

}  // namespace

const char* warp_state_name(WarpState s) {
    switch (s) {
        case WarpState::PENDING_THREAD_BARRIER_Q: return "thread_barrier_q";
        case WarpState::PENDING_SCRATCH_Q: return "scratch_q";
        case WarpState::PENDING_REG_Q: return "reg_q";
        case WarpState::SCHEDULABLE: return "schedulable";
        case WarpState::AT_BARRIER: return "at_barrier";
        case WarpState::FINISHED: return "finished";
    }
    return "?";
}

const char* event_kind_name(CoordinatorEventKind k) {
    switch (k) {
        case CoordinatorEventKind::BLOCK_ARRIVAL: return "block_arrival";
        case CoordinatorEventKind::PHASE_CHANGE: return "phase_change";
        case CoordinatorEventKind::BARRIER_REACHED: return "barrier_reached";
        case CoordinatorEventKind::WARP_FINISHED: return "warp_finished";
        case CoordinatorEventKind::BLOCK_FINISHED: return "block_finished";
        case CoordinatorEventKind::EPOCH_TICK: return "epoch_tick";
    }
    return "?";
}

OversubscriptionState make_oversubscription_state(const ArchConfig& cfg, const ZoruaConfig& zc) {
    OversubscriptionState st;
    st.c_delta_thresh = zc.c_delta_thresh;
    for (ResourceKind k : kTraversalOrder) {
        auto cap = static_cast<double>(physical_capacity(cfg, k));
        auto& r = st[k];
        r.o_default = static_cast<int64_t>(std::floor(zc.o_default_fraction * cap));
        r.step = static_cast<int64_t>(std::floor(zc.o_step_fraction * cap));
        r.hard_cap = static_cast<int64_t>(std::floor(zc.hard_cap_fraction * cap));
        r.o_thresh = zc.fixed_o_thresh ? static_cast<int64_t>(*zc.fixed_o_thresh) : r.o_default;
    }
    return st;
}

void update_o_thresh(int64_t c_idle, int64_t c_mem, OversubscriptionState& st) {
    int64_t idle_delta = c_idle - st.c_idle_prev;
    int64_t mem_delta = c_mem - st.c_mem_prev;
    for (auto& r : st.per_resource) {
        if (idle_delta - mem_delta > st.c_delta_thresh) r.o_thresh += r.step;
        if (mem_delta - idle_delta > st.c_delta_thresh) r.o_thresh -= r.step;
        r.o_thresh = std::clamp<int64_t>(r.o_thresh, 0, r.hard_cap);
    }
    st.c_idle_prev = c_idle;
    st.c_mem_prev = c_mem;
}

Coordinator::Coordinator(const ArchConfig& cfg, ZoruaConfig zc)
    : cfg_(cfg), zc_(zc), maps_(cfg), thresh_(make_oversubscription_state(cfg, zc)) {}

bool Coordinator::can_accept_block(uint32_t n_warps) const {
    return blocks_.size() < cfg_.max_logical_blocks && warps_.size() + n_warps <= cfg_.max_logical_warps;
}

const WarpRecord& Coordinator::warp(WarpId w) const {
    auto it = warps_.find(w);
    if (it == warps_.end()) throw std::out_of_range("unknown warp " + std::to_string(w));
    return it->second;
}

const BlockRecord& Coordinator::block(BlockId b) const {
    auto it = blocks_.find(b);
    if (it == blocks_.end()) throw std::out_of_range("unknown block " + std::to_string(b));
    return it->second;
}

void Coordinator::log_event(CoordinatorEventKind kind, uint64_t id) {
    ++stats_.events;
    if (!log_) return;
    nlohmann::json j{{"cycle", now_}, {"event", event_kind_name(kind)}, {"id", id}};
    *log_ << j.dump() << '\n';
}

void Coordinator::set_state(WarpRecord& w, WarpState s) {
    if (w.state == s) return;
    if (log_) {
        nlohmann::json j{{"cycle", now_},
                         {"event", "transition"},
                         {"warp", w.id},
                         {"from", warp_state_name(w.state)},
                         {"to", warp_state_name(s)}};
        *log_ << j.dump() << '\n';
    }
    if (is_pending(s)) w.queue_seq = seq_++;
    w.state = s;
}

Coordinator::Needs Coordinator::needs_of(const WarpRecord& w) const {
    Needs n;
    n.slot = w.has_slot ? 0 : 1;
    uint32_t scratch_target = scratch_sets_for(w.phase.scratch_bytes, cfg_);
    uint32_t held = blocks_.at(w.block).scratch_sets;
    n.scratch = scratch_target > held ? scratch_target - held : 0;
    uint32_t reg_target = reg_sets_for(w.phase.live_regs, cfg_);
    n.regs = reg_target > w.reg_sets ? reg_target - w.reg_sets : 0;
    return n;
}

bool Coordinator::passable(ResourceKind kind, uint32_t need) const {
    if (need == 0) return true;
    const auto& t = maps_[kind];
    if (t.free_physical() >= need) return true;
    int64_t shortfall = need - t.free_physical();
    return static_cast<int64_t>(t.mapped_swap()) + shortfall <= thresh_[kind].o_thresh;
}

void Coordinator::acquire(ResourceKind kind, OwnerId owner, uint32_t first, uint32_t need, bool forced) {
    if (need == 0) return;
    auto& t = maps_[kind];
    uint32_t physical = std::min(need, t.free_physical());
    uint32_t shortfall = need - physical;
    if (shortfall > 0 && !forced && zc_.spill_on_oversubscribe && t.resident() >= shortfall) {
        // Make room by pushing the coldest resident sets out to swap.
        auto spilled = t.spill_lfu(shortfall);
        stats_.spill_stores += spilled.size();
        t.allocate_range(owner, first, need, Placement::PHYSICAL);
    } else {
        t.allocate_range(owner, first, physical, Placement::PHYSICAL);
        t.allocate_range(owner, first + physical, shortfall, Placement::SWAP);
    }
    if (forced) {
        stats_.guard_swap_sets += shortfall;
    } else if (shortfall > 0 && static_cast<int64_t>(t.mapped_swap()) > thresh_[kind].o_thresh) {
        stats_.budget_violations.push_back(std::string(resource_name(kind)) + ": mapped_swap " +
                                           std::to_string(t.mapped_swap()) + " > o_thresh " +
                                           std::to_string(thresh_[kind].o_thresh));
    }
}

bool Coordinator::try_traverse(WarpRecord& w, const std::array<bool, kNumResourceKinds>* contended) {
    Needs n = needs_of(w);
    const std::array<uint32_t, 3> need_in_order = {n.slot, n.scratch, n.regs};
    const bool yields = contended && kinds_held(w) == 0;
    for (size_t i = 0; i < kTraversalOrder.size(); ++i) {
        ResourceKind k = kTraversalOrder[i];
        bool blocked = yields && need_in_order[i] > 0 && (*contended)[static_cast<size_t>(k)];
        if (blocked || !passable(k, need_in_order[i])) {
            set_state(w, queue_of(kTraversalOrder[i]));
            return false;
        }
    }
    BlockRecord& b = blocks_.at(w.block);
    acquire(ResourceKind::WARP_SLOT, w.id, 0, n.slot, false);
    acquire(ResourceKind::SCRATCHPAD, b.id, b.scratch_sets, n.scratch, false);
    acquire(ResourceKind::REGISTER, w.id, w.reg_sets, n.regs, false);
    w.has_slot = true;
    b.scratch_sets += n.scratch;
    w.reg_sets += n.regs;
    set_state(w, WarpState::SCHEDULABLE);
    return true;
}

void Coordinator::on_block_arrival(BlockId block, std::span<const WarpId> warps, PhaseSpecifier initial) {
    if (!can_accept_block(static_cast<uint32_t>(warps.size())))
        throw std::logic_error("on_block_arrival: virtual space exhausted");
    if (blocks_.contains(block)) throw std::logic_error("on_block_arrival: duplicate block id");
    log_event(CoordinatorEventKind::BLOCK_ARRIVAL, block);
    BlockRecord& b = blocks_[block];
    b.id = block;
    b.warps.assign(warps.begin(), warps.end());
    for (WarpId id : warps) {
        if (warps_.contains(id)) throw std::logic_error("on_block_arrival: duplicate warp id");
        WarpRecord& w = warps_[id];
        w.id = id;
        w.block = block;
        w.phase = initial;
        w.state = WarpState::FINISHED;  // placeholder so set_state records the enqueue
        set_state(w, WarpState::PENDING_THREAD_BARRIER_Q);
    }
    retry_all_queues();
}

void Coordinator::shrink_block_scratch(BlockRecord& b) {
    uint32_t want = 0;
    for (WarpId id : b.warps) {
        const auto& w = warps_.at(id);
        if (w.state == WarpState::FINISHED) continue;
        want = std::max(want, scratch_sets_for(w.phase.scratch_bytes, cfg_));
    }
    if (want < b.scratch_sets) {
        maps_[ResourceKind::SCRATCHPAD].free_range(b.id, want, b.scratch_sets - want);
        b.scratch_sets = want;
    }
}

void Coordinator::on_phase_change(WarpId id, PhaseSpecifier next) {
    auto& w = warps_.at(id);
    if (w.state != WarpState::SCHEDULABLE)
        throw std::logic_error("on_phase_change: warp " + std::to_string(id) + " is not schedulable");
    log_event(CoordinatorEventKind::PHASE_CHANGE, id);
    w.phase = next;
    uint32_t reg_target = reg_sets_for(next.live_regs, cfg_);
    if (reg_target < w.reg_sets) {
        maps_[ResourceKind::REGISTER].free_range(w.id, reg_target, w.reg_sets - reg_target);
        w.reg_sets = reg_target;
    }
    shrink_block_scratch(blocks_.at(w.block));
    try_traverse(w);
    retry_all_queues();
}

bool Coordinator::on_barrier(WarpId id) {
    auto& w = warps_.at(id);
    if (w.state != WarpState::SCHEDULABLE)
        throw std::logic_error("on_barrier: warp " + std::to_string(id) + " is not schedulable");
    log_event(CoordinatorEventKind::BARRIER_REACHED, id);
    auto& b = blocks_.at(w.block);
    set_state(w, WarpState::AT_BARRIER);
    ++b.at_barrier;
    bool released = false;
    if (b.at_barrier == b.warps.size() - b.finished) {
        released = true;
        b.at_barrier = 0;
        for (WarpId sib : b.warps) {
            auto& s = warps_.at(sib);
            if (s.state == WarpState::AT_BARRIER) try_traverse(s);
        }
    }
    retry_all_queues();
    return released;
}

bool Coordinator::on_warp_finished(WarpId id) {
    auto& w = warps_.at(id);
    if (w.state != WarpState::SCHEDULABLE)
        throw std::logic_error("on_warp_finished: warp " + std::to_string(id) + " is not schedulable");
    log_event(CoordinatorEventKind::WARP_FINISHED, id);
    maps_[ResourceKind::REGISTER].free_range(w.id, 0, w.reg_sets);
    w.reg_sets = 0;
    if (w.has_slot) maps_[ResourceKind::WARP_SLOT].free_range(w.id, 0, 1);
    w.has_slot = false;
    set_state(w, WarpState::FINISHED);

    auto& b = blocks_.at(w.block);
    ++b.finished;
    bool block_done = b.finished == b.warps.size();
    if (block_done) {
        log_event(CoordinatorEventKind::BLOCK_FINISHED, b.id);
        maps_[ResourceKind::SCRATCHPAD].free_range(b.id, 0, b.scratch_sets);
        for (WarpId sib : b.warps) warps_.erase(sib);
        blocks_.erase(b.id);
    }
    retry_all_queues();
    return block_done;
}

int Coordinator::kinds_held(const WarpRecord& w) const {
    int n = w.has_slot ? 1 : 0;
    n += blocks_.at(w.block).scratch_sets > 0 ? 1 : 0;
    n += w.reg_sets > 0 ? 1 : 0;
    return n;
}

std::vector<WarpId> Coordinator::queue(WarpState which) const {
    std::vector<const WarpRecord*> q;
    for (const auto& [id, w] : warps_)
        if (w.state == which) q.push_back(&w);
    std::stable_sort(q.begin(), q.end(), [&](const WarpRecord* a, const WarpRecord* b) {
        int ha = kinds_held(*a), hb = kinds_held(*b);
        if (ha != hb) return ha > hb;
        return a->queue_seq < b->queue_seq;
    });
    std::vector<WarpId> out;
    out.reserve(q.size());
    for (auto* w : q) out.push_back(w->id);
    return out;
}

size_t Coordinator::retry_all_queues() {
    size_t promoted = 0;
    std::array<bool, kNumResourceKinds> contended{};
    for (WarpState q : {WarpState::PENDING_REG_Q, WarpState::PENDING_SCRATCH_Q, WarpState::PENDING_THREAD_BARRIER_Q}) {
        for (WarpId id : queue(q)) {
            auto& w = warps_.at(id);
            if (w.state != q) continue;
            if (try_traverse(w, zc_.holders_first ? &contended : nullptr)) {
                ++promoted;
            } else if (kinds_held(w) > 0) {
                contended[static_cast<size_t>(waiting_on(w.state))] = true;
            }
        }
    }
    return promoted;
}

size_t Coordinator::schedulable_count() const {
    return static_cast<size_t>(std::count_if(warps_.begin(), warps_.end(), [](const auto& kv) {
        return kv.second.state == WarpState::SCHEDULABLE;
    }));
}

size_t Coordinator::pending_count() const {
    return static_cast<size_t>(
        std::count_if(warps_.begin(), warps_.end(), [](const auto& kv) { return is_pending(kv.second.state); }));
}

size_t Coordinator::deadlock_guard() {
    if (!zc_.deadlock_guard) return 0;
    double floor_warps = zc_.guard_occupancy * cfg_.physical_warp_slots();
    if (static_cast<double>(schedulable_count()) >= floor_warps) return 0;
    WarpRecord* oldest = nullptr;
    for (auto& [id, w] : warps_) {
        if (is_pending(w.state)) {
            oldest = &w;
            break;
        }
    }
    if (!oldest) return 0;
    WarpRecord& w = *oldest;
    Needs n = needs_of(w);
    BlockRecord& b = blocks_.at(w.block);
    acquire(ResourceKind::WARP_SLOT, w.id, 0, n.slot, true);
    acquire(ResourceKind::SCRATCHPAD, b.id, b.scratch_sets, n.scratch, true);
    acquire(ResourceKind::REGISTER, w.id, w.reg_sets, n.regs, true);
    w.has_slot = true;
    b.scratch_sets += n.scratch;
    w.reg_sets += n.regs;
    w.guard_admitted = true;
    ++stats_.guard_admissions;
    if (log_) {
        nlohmann::json j{{"cycle", now_}, {"event", "guard_admission"}, {"warp", w.id}};
        *log_ << j.dump() << '\n';
    }
    set_state(w, WarpState::SCHEDULABLE);
    return 1;
}

void Coordinator::on_epoch(int64_t c_idle, int64_t c_mem) {
    log_event(CoordinatorEventKind::EPOCH_TICK, now_);
    if (zc_.adaptive && !zc_.fixed_o_thresh) {
        update_o_thresh(c_idle, c_mem, thresh_);
        ++stats_.threshold_updates;
        if (log_) {
            nlohmann::json j{{"cycle", now_},
                             {"event", "threshold"},
                             {"c_idle", c_idle},
                             {"c_mem", c_mem},
                             {"register", thresh_[ResourceKind::REGISTER].o_thresh},
                             {"scratchpad", thresh_[ResourceKind::SCRATCHPAD].o_thresh},
                             {"warp_slot", thresh_[ResourceKind::WARP_SLOT].o_thresh}};
            *log_ << j.dump() << '\n';
        }
    }
    maps_.reset_access_counts();
    retry_all_queues();
}

AccessResult Coordinator::access(WarpId id, ResourceKind kind, uint32_t logical) {
    const auto& w = warps_.at(id);
    OwnerId owner = kind == ResourceKind::SCRATCHPAD ? w.block : w.id;
    auto& t = maps_[kind];
    AccessResult r;
    r.where = t.lookup(owner, logical).where;
    if (r.where == Placement::SWAP) {
        if (t.free_physical() > 0) {
            r.migrated = t.migrate_in(owner, logical);
        } else if (zc_.exchange_on_access) {
            r.evicted = t.exchange_with_lfu(owner, logical);
        }
    }
    return r;
}

std::vector<std::string> Coordinator::check_invariants() const {
    auto v = maps_.check_invariants();
    v.insert(v.end(), stats_.budget_violations.begin(), stats_.budget_violations.end());
    for (const auto& [id, w] : warps_) {
        const std::string tag = "warp " + std::to_string(id) + ": ";
        if (w.state == WarpState::FINISHED) {
            if (w.reg_sets || w.has_slot) v.push_back(tag + "finished but still holds resources");
            continue;
        }
        uint32_t regs_owned = maps_[ResourceKind::REGISTER].owned_count(id);
        if (regs_owned != w.reg_sets)
            v.push_back(tag + "register table holds " + std::to_string(regs_owned) + " sets, record says " +
                        std::to_string(w.reg_sets));
        if (w.has_slot != (maps_[ResourceKind::WARP_SLOT].owned_count(id) == 1))
            v.push_back(tag + "warp slot table disagrees with record");
        if (w.state == WarpState::SCHEDULABLE) {
            if (!w.has_slot) v.push_back(tag + "schedulable without a warp slot");
            if (w.reg_sets < reg_sets_for(w.phase.live_regs, cfg_))
                v.push_back(tag + "schedulable with too few register sets");
            if (blocks_.at(w.block).scratch_sets < scratch_sets_for(w.phase.scratch_bytes, cfg_))
                v.push_back(tag + "schedulable with too little scratchpad");
        }
        // A warp that never cleared the queues holds nothing.
        if (is_pending(w.state) && !w.has_slot && w.reg_sets != 0)
            v.push_back(tag + "holds registers before passing the thread queue");
    }
    for (const auto& [id, b] : blocks_) {
        uint32_t owned = maps_[ResourceKind::SCRATCHPAD].owned_count(id);
        if (owned != b.scratch_sets)
            v.push_back("block " + std::to_string(id) + ": scratch table holds " + std::to_string(owned) +
                        " sets, record says " + std::to_string(b.scratch_sets));
    }
    return v;
}

}  // namespace smv

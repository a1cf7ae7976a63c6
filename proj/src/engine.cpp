#include "smvirt/engine.hpp"

#include "smvirt/phase_compiler.hpp"
#include "smvirt/resource_maps.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>
#include <set>

namespace smv {

namespace {

constexpr uint64_t kNever = std::numeric_limits<uint64_t>::max();
constexpr size_t kMaxReportedViolations = 64;

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class EventKind : uint8_t { PHASE_CHANGE = 0, BARRIER = 1, FINISH = 2 };

struct Event {
    uint64_t time;
    EventKind kind;
    WarpId warp;
    PhaseSpecifier phase;

    bool operator>(const Event& o) const {
        if (time != o.time) return time > o.time;
        if (kind != o.kind) return kind > o.kind;
        return warp > o.warp;
    }
};

struct WarpExec {
    WarpId id = 0;
    BlockId block = 0;
    size_t pc = 0;
    uint64_t ready_at = 0;
    bool mem_wait = false;
    bool retiring = false;  // finish event queued
    WarpState state = WarpState::PENDING_THREAD_BARRIER_Q;
    PhaseSpecifier phase;
};

struct UtilAccumulator {
    uint64_t start = 0;
    double reg_sum = 0, scratch_sum = 0;
    uint64_t reg_cycles = 0, scratch_cycles = 0;

    Utilization finish() const {
        Utilization u;
        u.start_cycle = start;
        u.registers = reg_cycles ? reg_sum / static_cast<double>(reg_cycles) : 1.0;
        u.scratch = scratch_cycles ? scratch_sum / static_cast<double>(scratch_cycles) : 1.0;
        return u;
    }
};

PhaseSpecifier initial_phase(const KernelSpec& k) {
    if (!k.body.empty() && k.body.front().opcode == Opcode::PHASE_SPEC && k.body.front().phase)
        return *k.body.front().phase;
    return {k.resource_spec.regs_per_thread, k.resource_spec.scratch_bytes_per_block};
}

class SmSim {
public:
    SmSim(const KernelSpec& k, PolicyKind kind, const ArchConfig& arch, const SimOptions& opts,
          std::vector<BlockId> blocks, std::vector<Utilization>* util)
        : k_(k),
          arch_(arch),
          opts_(opts),
          blocks_(std::move(blocks)),
          policy_(make_policy(kind, k.resource_spec, arch, opts.zorua)),
          mem_(arch.memory_latency_cycles, arch.max_inflight_memory),
          last_issued_(arch.schedulers_per_sm, kNever),
          util_(util) {
        if (auto* c = policy_->coordinator()) c->set_event_log(opts.event_log);
        first_phase_ = initial_phase(k);
        // Liveness a warp carries while sitting at each pc. Specifiers do
        // not change it; before the first real instruction it is that
        // instruction's.
        live_at_.resize(k.body.size() + 1);
        const Instruction* last = nullptr;
        for (size_t pc = 0; pc <= k.body.size(); ++pc) {
            if (pc > 0 && k.body[pc - 1].opcode != Opcode::PHASE_SPEC) last = &k.body[pc - 1];
            live_at_[pc] = last;
        }
        const Instruction* first = nullptr;
        for (const auto& in : k.body)
            if (in.opcode != Opcode::PHASE_SPEC) {
                first = &in;
                break;
            }
        for (auto& l : live_at_)
            if (!l) l = first;
    }

    SimResult run();

private:
    WarpExec* find(WarpId id);
    bool process_events(uint64_t t);
    bool admit_blocks();
    void refresh_states();
    void drain_spill_stores(uint64_t t);
    void check(std::vector<std::string>& out);
    size_t issue(uint64_t t);
    void issue_one(WarpExec& w, uint64_t t);
    uint64_t lookup(WarpExec& w, ResourceKind kind, uint32_t logical, uint64_t t);
    void schedule_retire(WarpExec& w, uint64_t t);
    void sample_utilization(uint64_t span);
    void close_epoch(uint64_t t);
    void log(const nlohmann::json& j) {
        if (opts_.event_log) *opts_.event_log << j.dump() << '\n';
    }

    const KernelSpec& k_;
    const ArchConfig& arch_;
    const SimOptions& opts_;
    std::vector<BlockId> blocks_;
    std::unique_ptr<ResourcePolicy> policy_;
    MemoryPipe mem_;
    std::vector<uint64_t> last_issued_;
    std::vector<Utilization>* util_;
    PhaseSpecifier first_phase_;
    std::vector<const Instruction*> live_at_;

    std::vector<WarpExec> resident_;  // sorted by id
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    size_t next_block_ = 0;
    size_t blocks_done_ = 0;
    uint64_t spill_seen_ = 0;
    uint64_t run_c_idle_ = 0;
    uint64_t run_c_mem_ = 0;

    SimResult res_;
    EpochStats cur_;
    UtilAccumulator util_cur_;
    std::set<std::string> seen_violations_;
};

WarpExec* SmSim::find(WarpId id) {
    auto it = std::lower_bound(resident_.begin(), resident_.end(), id,
                               [](const WarpExec& w, WarpId v) { return w.id < v; });
    return it != resident_.end() && it->id == id ? &*it : nullptr;
}

void SmSim::refresh_states() {
    for (auto& w : resident_) {
        WarpState s = policy_->state(w.id);
        if (policy_->uses_mapping_tables() && s == WarpState::SCHEDULABLE && w.state != WarpState::SCHEDULABLE)
            w.phase = policy_->coordinator()->warp(w.id).phase;
        w.state = s;
    }
}

void SmSim::drain_spill_stores(uint64_t t) {
    auto* c = policy_->coordinator();
    if (!c) return;
    for (; spill_seen_ < c->stats().spill_stores; ++spill_seen_) mem_.issue(t);
}

void SmSim::check(std::vector<std::string>& out) {
    if (!opts_.check_invariants) return;
    ++res_.invariant_checks;
    for (auto& v : policy_->check_invariants()) {
        if (out.size() >= kMaxReportedViolations) break;
        if (seen_violations_.insert(v).second) out.push_back(std::move(v));
    }
}

bool SmSim::process_events(uint64_t t) {
    bool any = false;
    while (!events_.empty() && events_.top().time <= t) {
        Event e = events_.top();
        events_.pop();
        any = true;
        switch (e.kind) {
            case EventKind::PHASE_CHANGE:
                policy_->on_phase_change(e.warp, e.phase);
                if (WarpExec* w = find(e.warp)) w->phase = e.phase;
                break;
            case EventKind::BARRIER: policy_->on_barrier(e.warp); break;
            case EventKind::FINISH: {
                BlockId b = find(e.warp)->block;
                bool block_done = policy_->on_warp_finished(e.warp);
                if (block_done) {
                    ++blocks_done_;
                    ++res_.blocks_finished;
                    std::erase_if(resident_, [b](const WarpExec& w) { return w.block == b; });
                    log({{"cycle", t}, {"event", "block_retired"}, {"block", b}});
                }
                break;
            }
        }
        refresh_states();
    }
    return any;
}

bool SmSim::admit_blocks() {
    bool any = false;
    const uint32_t wpb = k_.resource_spec.warps_per_block();
    while (next_block_ < blocks_.size()) {
        BlockId b = blocks_[next_block_];
        std::vector<WarpId> ids(wpb);
        for (uint32_t i = 0; i < wpb; ++i) ids[i] = b * wpb + i;
        if (!policy_->try_admit_block(b, ids, first_phase_)) break;
        for (WarpId id : ids) {
            WarpExec w;
            w.id = id;
            w.block = b;
            w.phase = first_phase_;
            resident_.insert(std::upper_bound(resident_.begin(), resident_.end(), id,
                                              [](WarpId v, const WarpExec& x) { return v < x.id; }),
                             w);
        }
        ++next_block_;
        any = true;
    }
    if (any) refresh_states();
    return any;
}

uint64_t SmSim::lookup(WarpExec& w, ResourceKind kind, uint32_t logical, uint64_t t) {
    AccessResult r = policy_->access(w.id, kind, logical);
    uint64_t lat = arch_.mapping_table_penalty_cycles;
    if (r.where == Placement::SWAP) {
        lat += mem_.issue(t) - t;
        ++cur_.swap_accesses[static_cast<size_t>(kind)];
        w.mem_wait = true;
    }
    if (r.evicted) mem_.issue(t);
    return lat;
}

void SmSim::schedule_retire(WarpExec& w, uint64_t t) {
    w.retiring = true;
    events_.push({std::max(t + 1, w.ready_at), EventKind::FINISH, w.id, {}});
}

void SmSim::issue_one(WarpExec& w, uint64_t t) {
    const Instruction& in = k_.body[w.pc];
    const bool tables = policy_->uses_mapping_tables();
    uint64_t access = 0;
    w.mem_wait = false;
    if (tables && in.opcode != Opcode::BARRIER && in.opcode != Opcode::PHASE_SPEC) {
        access = lookup(w, ResourceKind::WARP_SLOT, 0, t);
        uint32_t rsets = reg_sets_for(w.phase.live_regs, arch_);
        if (rsets > 0)
            access = std::max(access, lookup(w, ResourceKind::REGISTER,
                                             access_set_index(opts_.seed, w.id, w.pc, rsets), t));
        uint32_t ssets = scratch_sets_for(w.phase.scratch_bytes, arch_);
        if (in.is_shared_memory() && ssets > 0)
            access = std::max(access, lookup(w, ResourceKind::SCRATCHPAD,
                                             access_set_index(opts_.seed ^ 0x5c, w.block, w.pc, ssets), t));
    }
    uint64_t start = t + access;
    uint64_t done = start + 1;
    if (in.opcode == Opcode::LD_GLOBAL) {
        done = mem_.issue(start);
        w.mem_wait = true;
    } else if (in.opcode == Opcode::ST_GLOBAL) {
        mem_.issue(start);
    }
    w.ready_at = done;
    ++w.pc;
    ++cur_.instructions;

    if (in.opcode == Opcode::BARRIER) {
        events_.push({t + 1, EventKind::BARRIER, w.id, {}});
    } else if (in.opcode == Opcode::PHASE_SPEC && tables && w.pc > 1 && in.phase) {
        events_.push({t + 1, EventKind::PHASE_CHANGE, w.id, *in.phase});
    } else if (w.pc == k_.body.size()) {
        schedule_retire(w, t);
    }
}

size_t SmSim::issue(uint64_t t) {
    const uint32_t S = arch_.schedulers_per_sm;
    size_t issued = 0;
    for (uint32_t s = 0; s < S; ++s) {
        WarpExec* pick = nullptr;
        WarpExec* greedy = nullptr;
        for (auto& w : resident_) {
            if (w.id % S != s || w.state != WarpState::SCHEDULABLE || w.retiring) continue;
            if (w.pc == k_.body.size()) {
                // Released from a trailing barrier.
                schedule_retire(w, t);
                continue;
            }
            if (w.ready_at > t) continue;
            if (!pick) pick = &w;
            if (w.id == last_issued_[s]) greedy = &w;
        }
        if (greedy) pick = greedy;
        if (!pick) continue;
        issue_one(*pick, t);
        last_issued_[s] = pick->id;
        ++issued;
    }
    return issued;
}

void SmSim::sample_utilization(uint64_t span) {
    uint64_t alloc_regs = policy_->allocated_registers();
    uint64_t alloc_scratch = policy_->allocated_scratch_bytes();
    uint64_t live_regs = 0, live_scratch = 0;
    BlockId cur_block = kNever;
    uint64_t block_max = 0;
    for (const auto& w : resident_) {
        if (w.block != cur_block) {
            live_scratch += block_max;
            block_max = 0;
            cur_block = w.block;
        }
        if (is_pending(w.state)) continue;
        const Instruction* at = live_at_[w.pc];
        if (!at) continue;
        live_regs += uint64_t{at->live_regs_after} * kWarpWidth;
        block_max = std::max<uint64_t>(block_max, at->live_scratch_after);
    }
    live_scratch += block_max;
    if (alloc_regs > 0) {
        util_cur_.reg_sum += static_cast<double>(span) * static_cast<double>(live_regs) / alloc_regs;
        util_cur_.reg_cycles += span;
    }
    if (alloc_scratch > 0) {
        util_cur_.scratch_sum += static_cast<double>(span) * static_cast<double>(live_scratch) / alloc_scratch;
        util_cur_.scratch_cycles += span;
    }
}

void SmSim::close_epoch(uint64_t t) {
    cur_.cycles = t - cur_.start_cycle;
    res_.epochs.push_back(cur_);
    cur_ = EpochStats{};
    cur_.start_cycle = t;
    if (util_) {
        util_->push_back(util_cur_.finish());
        util_cur_ = UtilAccumulator{};
        util_cur_.start = t;
    }
}

SimResult SmSim::run() {
    const uint64_t E = arch_.epoch_cycles;
    uint64_t t = 0;
    double sched_weighted = 0;
    uint32_t bif_min = std::numeric_limits<uint32_t>::max();
    uint32_t bif_max = 0;
    log({{"cycle", 0}, {"event", "sm_start"}, {"policy", policy_name(policy_->kind())}, {"blocks", blocks_.size()}});

    while (blocks_done_ < blocks_.size()) {
        if (t > opts_.cycle_cap)
            throw NonTermination("cycle cap " + std::to_string(opts_.cycle_cap) + " exceeded with " +
                                 std::to_string(blocks_.size() - blocks_done_) + " blocks unfinished");
        bool changed = false;
        if (t > 0 && t % E == 0 && t != cur_.start_cycle) {
            close_epoch(t);
            policy_->set_now(t);
            const EpochStats& done = res_.epochs.back();
            run_c_idle_ += done.c_idle;
            run_c_mem_ += done.c_mem;
            if (opts_.zorua.free_running_counters)
                policy_->on_epoch(static_cast<int64_t>(run_c_idle_), static_cast<int64_t>(run_c_mem_));
            else
                policy_->on_epoch(static_cast<int64_t>(done.c_idle), static_cast<int64_t>(done.c_mem));
            refresh_states();
            changed = true;
        }
        policy_->set_now(t);
        changed |= process_events(t);
        if (blocks_done_ == blocks_.size()) break;
        changed |= admit_blocks();
        size_t forced = policy_->maintain();
        if (forced) refresh_states();
        drain_spill_stores(t);
        if (changed || forced) check(res_.invariant_violations);

        size_t issued = issue(t);
        drain_spill_stores(t);

        // Classify this cycle.
        size_t sched = 0;
        bool all_mem = true;
        for (const auto& w : resident_) {
            if (w.state != WarpState::SCHEDULABLE) continue;
            ++sched;
            if (!(w.mem_wait && w.ready_at > t)) all_mem = false;
        }
        size_t pending = policy_->pending_count();
        uint64_t* bucket;
        if (issued) {
            bucket = &cur_.issue_cycles;
        } else if (sched > 0 && all_mem) {
            bucket = &cur_.c_mem;
        } else if (pending > 0 || resident_.empty()) {
            bucket = &cur_.c_idle;
        } else {
            bucket = &cur_.c_other;
        }

        // Next cycle at which anything can change.
        uint64_t next = t + 1;
        if (!issued && !forced) {
            next = kNever;
            if (!events_.empty()) next = std::min(next, events_.top().time);
            for (const auto& w : resident_)
                if (w.state == WarpState::SCHEDULABLE && !w.retiring && w.ready_at > t) next = std::min(next, w.ready_at);
            if (uint64_t c = mem_.next_completion(t)) next = std::min(next, c);
            if (next == kNever) {
                if (policy_->pending_count() > 0 || next_block_ < blocks_.size())
                    throw NonTermination("no runnable warp and no pending event at cycle " + std::to_string(t));
                next = t + 1;
            }
            next = std::max(next, t + 1);
        }
        next = std::min(next, (t / E + 1) * E);
        uint64_t span = next - t;

        *bucket += span;
        sched_weighted += static_cast<double>(sched) * static_cast<double>(span);
        auto bif = static_cast<uint32_t>(policy_->resident_blocks());
        bif_max = std::max(bif_max, bif);
        cur_.max_blocks_in_flight = std::max(cur_.max_blocks_in_flight, bif);
        if (next_block_ < blocks_.size()) bif_min = std::min(bif_min, bif);
        if (util_) sample_utilization(span);
        t = next;
    }

    if (t > cur_.start_cycle || res_.epochs.empty()) close_epoch(t);
    check(res_.invariant_violations);
    res_.cycles = t;
    res_.blocks_in_flight_max = bif_max;
    res_.blocks_in_flight_min = bif_min == std::numeric_limits<uint32_t>::max() ? bif_max : bif_min;
    res_.mean_schedulable_warps = t ? sched_weighted / static_cast<double>(t) : 0.0;
    for (const auto& e : res_.epochs) {
        res_.instructions += e.instructions;
        for (size_t i = 0; i < kNumResourceKinds; ++i) res_.swap_accesses[i] += e.swap_accesses[i];
    }
    if (auto* c = policy_->coordinator()) {
        for (size_t i = 0; i < kNumResourceKinds; ++i) {
            const auto& tab = c->maps()[static_cast<ResourceKind>(i)];
            res_.accesses[i] = tab.total_accesses();
        }
        res_.guard_admissions = c->stats().guard_admissions;
    }
    log({{"cycle", t}, {"event", "sm_done"}, {"instructions", res_.instructions}});
    return res_;
}

void merge_into(SimResult& acc, const SimResult& r, bool first) {
    if (first) {
        acc = r;
        return;
    }
    acc.cycles = std::max(acc.cycles, r.cycles);
    acc.instructions += r.instructions;
    for (size_t i = 0; i < r.epochs.size(); ++i) {
        if (i >= acc.epochs.size()) {
            acc.epochs.push_back(r.epochs[i]);
            continue;
        }
        auto& a = acc.epochs[i];
        const auto& b = r.epochs[i];
        a.cycles = std::max(a.cycles, b.cycles);
        a.issue_cycles += b.issue_cycles;
        a.c_idle += b.c_idle;
        a.c_mem += b.c_mem;
        a.c_other += b.c_other;
        a.instructions += b.instructions;
        for (size_t k = 0; k < kNumResourceKinds; ++k) a.swap_accesses[k] += b.swap_accesses[k];
        a.max_blocks_in_flight = std::max(a.max_blocks_in_flight, b.max_blocks_in_flight);
    }
    for (size_t k = 0; k < kNumResourceKinds; ++k) {
        acc.accesses[k] += r.accesses[k];
        acc.swap_accesses[k] += r.swap_accesses[k];
    }
    acc.mean_schedulable_warps += r.mean_schedulable_warps;
    acc.blocks_in_flight_min = std::min(acc.blocks_in_flight_min, r.blocks_in_flight_min);
    acc.blocks_in_flight_max = std::max(acc.blocks_in_flight_max, r.blocks_in_flight_max);
    acc.guard_admissions += r.guard_admissions;
    acc.blocks_finished += r.blocks_finished;
    acc.invariant_checks += r.invariant_checks;
    for (const auto& v : r.invariant_violations)
        if (acc.invariant_violations.size() < kMaxReportedViolations) acc.invariant_violations.push_back(v);
}

void check_runnable(const KernelSpec& k, PolicyKind policy, const ArchConfig& arch) {
    const auto& spec = k.resource_spec;
    if (spec.regs_per_thread > arch.max_regs_per_thread)
        throw UnrunnableSpec(std::to_string(spec.regs_per_thread) + " registers per thread exceeds the " + arch.name +
                             " limit of " + std::to_string(arch.max_regs_per_thread));
    if (spec.warps_per_block() > arch.max_logical_warps)
        throw UnrunnableSpec("block does not fit the logical warp space");
    if (policy != PolicyKind::ZORUA && baseline_blocks_in_flight(spec, arch) == 0)
        throw UnrunnableSpec("a single block does not fit the " + arch.name + " SM");
}

SimResult run_impl(const KernelSpec& kernel, PolicyKind policy, const ArchConfig& arch, const SimOptions& opts,
                   std::vector<Utilization>* util) {
    validate_kernel(kernel);
    validate_arch(arch);
    const KernelSpec k = kernel.is_compiled() ? kernel : compile_phases(kernel);
    check_runnable(k, policy, arch);

    uint32_t sms = opts.sms ? opts.sms : arch.num_sms;
    sms = std::max<uint32_t>(1, std::min(sms, k.resource_spec.num_blocks));
    SimResult total;
    for (uint32_t sm = 0; sm < sms; ++sm) {
        std::vector<BlockId> mine;
        for (BlockId b = sm; b < k.resource_spec.num_blocks; b += sms) mine.push_back(b);
        SmSim sim(k, policy, arch, opts, std::move(mine), sm == 0 ? util : nullptr);
        merge_into(total, sim.run(), sm == 0);
    }
    total.mean_schedulable_warps /= sms;
    for (size_t i = 0; i < kNumResourceKinds; ++i)
        total.hit_rate[i] = total.accesses[i] ? 1.0 - static_cast<double>(total.swap_accesses[i]) /
                                                          static_cast<double>(total.accesses[i])
                                              : 1.0;
    return total;
}

}  // namespace

uint64_t SimResult::total_c_idle() const {
    uint64_t s = 0;
    for (const auto& e : epochs) s += e.c_idle;
    return s;
}
uint64_t SimResult::total_c_mem() const {
    uint64_t s = 0;
    for (const auto& e : epochs) s += e.c_mem;
    return s;
}
uint64_t SimResult::total_c_other() const {
    uint64_t s = 0;
    for (const auto& e : epochs) s += e.c_other;
    return s;
}
uint64_t SimResult::total_issue_cycles() const {
    uint64_t s = 0;
    for (const auto& e : epochs) s += e.issue_cycles;
    return s;
}

uint32_t access_set_index(uint64_t seed, uint64_t warp, uint64_t pc, uint32_t live_sets) {
    if (live_sets <= 1) return 0;
    uint64_t h = splitmix64(seed ^ splitmix64(warp * 0x100000001b3ULL ^ splitmix64(pc)));
    double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    auto idx = static_cast<uint32_t>(u * u * live_sets);
    return std::min(idx, live_sets - 1);
}

void MemoryPipe::retire(uint64_t now) {
    while (!heap_.empty() && heap_.front() <= now) {
        std::pop_heap(heap_.begin(), heap_.end(), std::greater<>());
        heap_.pop_back();
    }
}

uint64_t MemoryPipe::issue(uint64_t now) {
    retire(now);
    uint64_t start = now;
    if (heap_.size() >= cap_) {
        start = heap_.front();
        std::pop_heap(heap_.begin(), heap_.end(), std::greater<>());
        heap_.pop_back();
    }
    uint64_t done = start + latency_;
    heap_.push_back(done);
    std::push_heap(heap_.begin(), heap_.end(), std::greater<>());
    return done;
}

bool MemoryPipe::saturated(uint64_t now) {
    retire(now);
    return heap_.size() >= cap_;
}

uint64_t MemoryPipe::next_completion(uint64_t now) {
    retire(now);
    return heap_.empty() ? 0 : heap_.front();
}

size_t MemoryPipe::inflight(uint64_t now) {
    retire(now);
    return heap_.size();
}

SimResult run(const KernelSpec& kernel, PolicyKind policy, const ArchConfig& arch, const SimOptions& opts) {
    return run_impl(kernel, policy, arch, opts, nullptr);
}

SimResult run(const KernelSpec& kernel, PolicyKind policy, const ArchConfig& arch, uint64_t seed) {
    SimOptions o;
    o.seed = seed;
    return run(kernel, policy, arch, o);
}

std::vector<Utilization> measure_underutilization(const KernelSpec& kernel, const ResourceSpecification& spec,
                                                  const ArchConfig& arch, uint32_t epoch_cycles) {
    KernelSpec k = kernel;
    k.resource_spec = spec;
    ArchConfig a = arch;
    a.epoch_cycles = epoch_cycles;
    std::vector<Utilization> out;
    run_impl(k, PolicyKind::BASELINE, a, SimOptions{}, &out);
    return out;
}

}  // namespace smv

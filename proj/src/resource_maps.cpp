#include "smvirt/resource_maps.hpp"

#include "smvirt/kernel.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

namespace smv {

namespace {

uint32_t ceil_log2(uint32_t n) { return n <= 1 ? 0 : static_cast<uint32_t>(std::bit_width(n - 1)); }

uint32_t ceil_div(uint64_t a, uint64_t b) { return static_cast<uint32_t>((a + b - 1) / b); }

}  // namespace

const char* resource_name(ResourceKind k) {
    switch (k) {
        case ResourceKind::REGISTER: return "register";
        case ResourceKind::SCRATCHPAD: return "scratchpad";
        case ResourceKind::WARP_SLOT: return "warp_slot";
    }
    return "?";
}

uint64_t table_size_bits(ResourceKind kind, const ArchConfig& cfg) {
    switch (kind) {
        case ResourceKind::REGISTER: {
            uint64_t entry = ceil_log2(cfg.physical_reg_sets()) + 1;
            return uint64_t{cfg.max_logical_warps} * cfg.max_reg_sets_per_warp() * entry;
        }
        case ResourceKind::SCRATCHPAD: {
            uint64_t sets = cfg.physical_scratch_sets();
            return uint64_t{cfg.max_logical_blocks} * sets * (ceil_log2(static_cast<uint32_t>(sets)) + 1);
        }
        case ResourceKind::WARP_SLOT:
            return uint64_t{cfg.max_logical_warps} * (ceil_log2(cfg.physical_warp_slots()) + 1);
    }
    return 0;
}

uint32_t reg_sets_for(uint32_t regs_per_thread, const ArchConfig& cfg) {
    return ceil_div(uint64_t{regs_per_thread} * kWarpWidth, cfg.reg_set_size);
}

uint32_t scratch_sets_for(uint32_t scratch_bytes, const ArchConfig& cfg) {
    return ceil_div(scratch_bytes, cfg.scratch_set_size);
}

uint32_t sets_required(ResourceKind kind, const ResourceSpecification& spec, const ArchConfig& cfg) {
    switch (kind) {
        case ResourceKind::REGISTER: return reg_sets_for(spec.regs_per_thread, cfg);
        case ResourceKind::SCRATCHPAD: return scratch_sets_for(spec.scratch_bytes_per_block, cfg);
        case ResourceKind::WARP_SLOT: return 1;
    }
    return 0;
}

MappingTable::MappingTable(ResourceKind kind, uint32_t physical_sets)
    : kind_(kind), physical_sets_(physical_sets) {
    for (uint32_t i = 0; i < physical_sets; ++i) free_.insert(free_.end(), i);
}

void MappingTable::allocate(OwnerId owner, std::span<const uint32_t> logical, Placement place) {
    for (size_t i = 0; i < logical.size(); ++i) {
        if (entries_.contains({owner, logical[i]}) ||
            std::find(logical.begin(), logical.begin() + static_cast<ptrdiff_t>(i), logical[i]) !=
                logical.begin() + static_cast<ptrdiff_t>(i))
            throw MappingError(std::string(resource_name(kind_)) + ": duplicate logical set " +
                               std::to_string(logical[i]) + " for owner " + std::to_string(owner));
    }
    if (place == Placement::PHYSICAL && logical.size() > free_.size())
        throw MappingError(std::string(resource_name(kind_)) + ": insufficient physical space (need " +
                           std::to_string(logical.size()) + ", free " + std::to_string(free_.size()) + ")");
    for (uint32_t l : logical) {
        Entry e;
        if (place == Placement::PHYSICAL) {
            e.physical = *free_.begin();
            e.valid = true;
            free_.erase(free_.begin());
        } else {
            ++mapped_swap_;
        }
        entries_.emplace(SetKey{owner, l}, e);
    }
    if (!logical.empty()) owned_[owner] += static_cast<uint32_t>(logical.size());
}

void MappingTable::allocate_range(OwnerId owner, uint32_t first, uint32_t count, Placement place) {
    std::vector<uint32_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    allocate(owner, idx, place);
}

void MappingTable::free(OwnerId owner, std::span<const uint32_t> logical) {
    for (uint32_t l : logical)
        if (!entries_.contains({owner, l}))
            throw MappingError(std::string(resource_name(kind_)) + ": freeing unknown entry (owner " +
                               std::to_string(owner) + ", set " + std::to_string(l) + ")");
    for (uint32_t l : logical) {
        auto it = entries_.find({owner, l});
        if (it == entries_.end())  // repeated index within the same call
            throw MappingError(std::string(resource_name(kind_)) + ": double free (owner " +
                               std::to_string(owner) + ", set " + std::to_string(l) + ")");
        if (it->second.valid)
            free_.insert(it->second.physical);
        else
            --mapped_swap_;
        entries_.erase(it);
        if (--owned_[owner] == 0) owned_.erase(owner);
    }
}

void MappingTable::free_range(OwnerId owner, uint32_t first, uint32_t count) {
    std::vector<uint32_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    free(owner, idx);
}

bool MappingTable::contains(OwnerId owner, uint32_t logical) const { return entries_.contains({owner, logical}); }

uint32_t MappingTable::owned_count(OwnerId owner) const {
    auto it = owned_.find(owner);
    return it == owned_.end() ? 0 : it->second;
}

uint32_t MappingTable::owned_swap_count(OwnerId owner) const {
    uint32_t n = 0;
    for (auto it = entries_.lower_bound({owner, 0}); it != entries_.end() && it->first.owner == owner; ++it)
        n += it->second.valid ? 0 : 1;
    return n;
}

std::map<SetKey, MappingTable::Entry>::iterator MappingTable::find_or_throw(OwnerId owner, uint32_t logical) {
    auto it = entries_.find({owner, logical});
    if (it == entries_.end())
        throw MappingError(std::string(resource_name(kind_)) + ": no mapping for owner " + std::to_string(owner) +
                           " set " + std::to_string(logical));
    return it;
}

Location MappingTable::lookup(OwnerId owner, uint32_t logical) {
    auto it = find_or_throw(owner, logical);
    ++it->second.accesses;
    ++total_accesses_;
    if (!it->second.valid) {
        ++swap_accesses_;
        return {Placement::SWAP, 0};
    }
    return {Placement::PHYSICAL, it->second.physical};
}

Location MappingTable::peek(OwnerId owner, uint32_t logical) const {
    auto it = entries_.find({owner, logical});
    if (it == entries_.end())
        throw MappingError(std::string(resource_name(kind_)) + ": no mapping for owner " + std::to_string(owner) +
                           " set " + std::to_string(logical));
    return it->second.valid ? Location{Placement::PHYSICAL, it->second.physical} : Location{Placement::SWAP, 0};
}

std::optional<std::map<SetKey, MappingTable::Entry>::iterator> MappingTable::lfu_resident() {
    std::optional<std::map<SetKey, Entry>::iterator> best;
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
        if (!it->second.valid) continue;
        if (!best || it->second.accesses < (*best)->second.accesses) best = it;
    }
    return best;
}

std::vector<SetKey> MappingTable::spill_lfu(uint32_t n) {
    if (n > resident())
        throw MappingError(std::string(resource_name(kind_)) + ": cannot spill " + std::to_string(n) +
                           " sets, only " + std::to_string(resident()) + " resident");
    std::vector<std::map<SetKey, Entry>::iterator> resident_entries;
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
        if (it->second.valid) resident_entries.push_back(it);
    // Map order is (owner, logical) ascending, so a stable sort keeps the tie-break.
    std::stable_sort(resident_entries.begin(), resident_entries.end(),
                     [](auto a, auto b) { return a->second.accesses < b->second.accesses; });
    std::vector<SetKey> spilled;
    for (uint32_t i = 0; i < n; ++i) {
        auto it = resident_entries[i];
        free_.insert(it->second.physical);
        it->second.valid = false;
        it->second.physical = 0;
        ++mapped_swap_;
        spilled.push_back(it->first);
    }
    return spilled;
}

bool MappingTable::migrate_in(OwnerId owner, uint32_t logical) {
    auto it = find_or_throw(owner, logical);
    if (it->second.valid || free_.empty()) return false;
    it->second.physical = *free_.begin();
    it->second.valid = true;
    free_.erase(free_.begin());
    --mapped_swap_;
    return true;
}

std::optional<SetKey> MappingTable::exchange_with_lfu(OwnerId owner, uint32_t logical) {
    auto it = find_or_throw(owner, logical);
    if (it->second.valid) return std::nullopt;
    auto victim = lfu_resident();
    if (!victim || (*victim)->second.accesses >= it->second.accesses) return std::nullopt;
    auto v = *victim;
    it->second.physical = v->second.physical;
    it->second.valid = true;
    v->second.valid = false;
    v->second.physical = 0;
    return v->first;
}

uint64_t MappingTable::access_count(OwnerId owner, uint32_t logical) const {
    auto it = entries_.find({owner, logical});
    return it == entries_.end() ? 0 : it->second.accesses;
}

void MappingTable::reset_access_counts() {
    for (auto& [k, e] : entries_) e.accesses = 0;
}

double MappingTable::hit_rate() const {
    if (total_accesses_ == 0) return 1.0;
    return static_cast<double>(total_accesses_ - swap_accesses_) / static_cast<double>(total_accesses_);
}

std::vector<std::string> MappingTable::check_invariants() const {
    std::vector<std::string> v;
    const std::string name = resource_name(kind_);
    uint32_t valid = 0, swapped = 0;
    std::vector<bool> used(physical_sets_, false);
    for (const auto& [key, e] : entries_) {
        if (!e.valid) {
            ++swapped;
            continue;
        }
        ++valid;
        if (e.physical >= physical_sets_) {
            v.push_back(name + ": physical index out of range");
            continue;
        }
        if (used[e.physical]) v.push_back(name + ": physical set " + std::to_string(e.physical) + " aliased");
        if (free_.contains(e.physical))
            v.push_back(name + ": physical set " + std::to_string(e.physical) + " both mapped and free");
        used[e.physical] = true;
    }
    if (free_physical() + valid != physical_sets_)
        v.push_back(name + ": conservation broken (free " + std::to_string(free_physical()) + " + resident " +
                    std::to_string(valid) + " != " + std::to_string(physical_sets_) + ")");
    if (swapped != mapped_swap_)
        v.push_back(name + ": mapped_swap counter " + std::to_string(mapped_swap_) + " != swapped entries " +
                    std::to_string(swapped));
    if (swap_accesses_ > total_accesses_) v.push_back(name + ": swap accesses exceed total accesses");
    return v;
}

ResourceMaps::ResourceMaps(const ArchConfig& cfg)
    : tables_{MappingTable(ResourceKind::REGISTER, cfg.physical_reg_sets()),
              MappingTable(ResourceKind::SCRATCHPAD, cfg.physical_scratch_sets()),
              MappingTable(ResourceKind::WARP_SLOT, cfg.physical_warp_slots())} {}

void ResourceMaps::reset_access_counts() {
    for (auto& t : tables_) t.reset_access_counts();
}

std::vector<std::string> ResourceMaps::check_invariants() const {
    std::vector<std::string> all;
    for (const auto& t : tables_) {
        auto v = t.check_invariants();
        all.insert(all.end(), v.begin(), v.end());
    }
    return all;
}

}  // namespace smv

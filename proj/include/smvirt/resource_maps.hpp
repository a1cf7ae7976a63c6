#pragma once
// Virtual -> physical/swap indirection for registers, scratchpad and warp
// slots. Each resource is tracked in fixed-size sets; an entry is either
// resident in a physical set (valid) or lives in swap space.

#include "smvirt/arch.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smv {

enum class ResourceKind : uint8_t { REGISTER = 0, SCRATCHPAD = 1, WARP_SLOT = 2 };
inline constexpr size_t kNumResourceKinds = 3;

const char* resource_name(ResourceKind k);

struct ResourceSpecification;

uint64_t table_size_bits(ResourceKind kind, const ArchConfig& cfg);
uint32_t sets_required(ResourceKind kind, const ResourceSpecification& spec, const ArchConfig& cfg);

// Set counts straight from liveness values (one warp / one block).
uint32_t reg_sets_for(uint32_t regs_per_thread, const ArchConfig& cfg);
uint32_t scratch_sets_for(uint32_t scratch_bytes, const ArchConfig& cfg);

// Owner is a warp id for REGISTER/WARP_SLOT and a block id for SCRATCHPAD.
using OwnerId = uint64_t;

struct SetKey {
    OwnerId owner = 0;
    uint32_t logical = 0;

    auto operator<=>(const SetKey&) const = default;
};

enum class Placement { PHYSICAL, SWAP };

struct Location {
    Placement where = Placement::PHYSICAL;
    uint32_t physical_set = 0;  // meaningful only when PHYSICAL

    bool operator==(const Location&) const = default;
};

class MappingError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class MappingTable {
public:
    MappingTable(ResourceKind kind, uint32_t physical_sets);

    ResourceKind kind() const { return kind_; }
    uint32_t physical_sets() const { return physical_sets_; }
    uint32_t free_physical() const { return static_cast<uint32_t>(free_.size()); }
    uint32_t mapped_swap() const { return mapped_swap_; }
    uint32_t resident() const { return physical_sets_ - free_physical(); }

    // Creates entries for `logical` sets of `owner`. PHYSICAL takes the
    // lowest free physical indices.
    void allocate(OwnerId owner, std::span<const uint32_t> logical, Placement place);
    void allocate_range(OwnerId owner, uint32_t first, uint32_t count, Placement place);
    void free(OwnerId owner, std::span<const uint32_t> logical);
    void free_range(OwnerId owner, uint32_t first, uint32_t count);

    bool contains(OwnerId owner, uint32_t logical) const;
    uint32_t owned_count(OwnerId owner) const;
    uint32_t owned_swap_count(OwnerId owner) const;

    // Resolves an entry and records one access against it.
    Location lookup(OwnerId owner, uint32_t logical);
    // Same resolution without touching the statistics.
    Location peek(OwnerId owner, uint32_t logical) const;

    // Moves the `n` least-frequently-accessed resident entries to swap.
    // Ties go to the smaller (owner, logical) key.
    std::vector<SetKey> spill_lfu(uint32_t n);

    // Brings a swapped entry on-chip into a free physical set.
    bool migrate_in(OwnerId owner, uint32_t logical);
    // Swaps a swapped entry with the LFU resident entry when that entry has
    // strictly fewer accesses. Returns the evicted key.
    std::optional<SetKey> exchange_with_lfu(OwnerId owner, uint32_t logical);

    uint64_t access_count(OwnerId owner, uint32_t logical) const;
    void reset_access_counts();

    uint64_t total_accesses() const { return total_accesses_; }
    uint64_t swap_accesses() const { return swap_accesses_; }
    double hit_rate() const;

    // Conservation and aliasing checks; empty when consistent.
    std::vector<std::string> check_invariants() const;

private:
    struct Entry {
        uint32_t physical = 0;
        bool valid = false;
        uint64_t accesses = 0;
    };

    std::map<SetKey, Entry>::iterator find_or_throw(OwnerId owner, uint32_t logical);
    std::optional<std::map<SetKey, Entry>::iterator> lfu_resident();

    ResourceKind kind_;
    uint32_t physical_sets_;
    std::map<SetKey, Entry> entries_;
    std::set<uint32_t> free_;
    std::map<OwnerId, uint32_t> owned_;
    uint32_t mapped_swap_ = 0;
    uint64_t total_accesses_ = 0;
    uint64_t swap_accesses_ = 0;
};

// The three tables of one SM.
class ResourceMaps {
public:
    explicit ResourceMaps(const ArchConfig& cfg);

    MappingTable& operator[](ResourceKind k) { return tables_[static_cast<size_t>(k)]; }
    const MappingTable& operator[](ResourceKind k) const { return tables_[static_cast<size_t>(k)]; }

    void reset_access_counts();
    std::vector<std::string> check_invariants() const;

private:
    std::array<MappingTable, kNumResourceKinds> tables_;
};

}  // namespace smv

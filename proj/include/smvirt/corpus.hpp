#pragma once
// Bundled synthetic kernels and their sweep grids.

#include "smvirt/harness.hpp"
#include "smvirt/kernel.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace smv {

struct CorpusEntry {
    std::string name;
    std::string description;
    KernelSpec kernel;  // source form, no phase specifiers
    SweepGrid grid;
    bool cliff_kernel = false;  // built to show a Baseline cliff on its grid
};

// reg_cliff, scratch_cliff, barrier_heavy, dct_like, uniform, memory_bound
std::vector<CorpusEntry> builtin_corpus();
std::optional<CorpusEntry> corpus_entry(std::string_view name);

// Writes <name>.kernel and <name>.grid for every entry into `dir`.
void export_corpus(const std::string& dir);

// Builds a body from a pattern string, one instruction per character:
//   a ALU, L LD_GLOBAL, S ST_GLOBAL, l LD_SHARED, s ST_SHARED, B BARRIER
// Every instruction gets the given liveness.
void append_pattern(KernelSpec& k, std::string_view pattern, uint32_t live_regs, uint32_t live_scratch);

}  // namespace smv

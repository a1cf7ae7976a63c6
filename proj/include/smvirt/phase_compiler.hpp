#pragma once
// Splits a source kernel into phases of roughly uniform resource demand and
// inserts phase specifiers ahead of each one.

#include "smvirt/kernel.hpp"

#include <string>
#include <vector>

namespace smv {

struct PhaseInfo {
    size_t begin = 0;  // first instruction (source index)
    size_t end = 0;    // one past the last
    uint32_t max_live_regs = 0;
    uint32_t max_scratch_bytes = 0;
    bool starts_at_barrier = false;

    size_t span() const { return end - begin; }
};

struct PhaseReport {
    // Indices where a new phase begins; index 0 is implicit and not listed.
    std::vector<size_t> boundaries;
    std::vector<PhaseInfo> phases;
};

inline constexpr double kDefaultChangeThreshold = 0.25;
inline constexpr size_t kDefaultMinSpan = 10;

// A boundary goes before instruction i when i is a BARRIER, or when the live
// register count or live scratch bytes moved by at least `change_threshold`
// relative to the value at the last boundary and at least `min_span`
// instructions have passed since it. A zero reference counts any nonzero
// value as a full change.
PhaseReport detect_phase_boundaries(const KernelSpec& k, double change_threshold = kDefaultChangeThreshold,
                                    size_t min_span = kDefaultMinSpan);

// Inserts a PHASE_SPEC before instruction 0 and before every non-barrier
// boundary. Barrier-started phases get no specifier.
KernelSpec annotate_phases(const KernelSpec& k, const PhaseReport& report);

// Convenience: detect + annotate with the given thresholds.
KernelSpec compile_phases(const KernelSpec& k, double change_threshold = kDefaultChangeThreshold,
                          size_t min_span = kDefaultMinSpan);

// Empty when `k` is a well-formed compiled kernel.
std::vector<std::string> validate_compiled(const KernelSpec& k);

std::string format_phase_report(const PhaseReport& r);

}  // namespace smv

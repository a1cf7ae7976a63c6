#include "smvirt/phase_compiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace smv {

namespace {

bool changed(uint32_t ref, uint32_t value, double threshold) {
    if (ref == 0) return value != 0;
    double delta = std::abs(static_cast<double>(value) - static_cast<double>(ref));
    return delta / static_cast<double>(ref) >= threshold;
}

void fill_phase_maxima(const KernelSpec& k, PhaseReport& r) {
    r.phases.clear();
    size_t begin = 0;
    auto close = [&](size_t end) {
        PhaseInfo p;
        p.begin = begin;
        p.end = end;
        p.starts_at_barrier = k.body[begin].opcode == Opcode::BARRIER && begin != 0;
        for (size_t i = begin; i < end; ++i) {
            p.max_live_regs = std::max(p.max_live_regs, k.body[i].live_regs_after);
            p.max_scratch_bytes = std::max(p.max_scratch_bytes, k.body[i].live_scratch_after);
        }
        r.phases.push_back(p);
        begin = end;
    };
    for (size_t b : r.boundaries) close(b);
    close(k.body.size());
}

}  // namespace

PhaseReport detect_phase_boundaries(const KernelSpec& k, double change_threshold, size_t min_span) {
    if (k.body.empty()) throw std::invalid_argument("detect_phase_boundaries: empty kernel body");
    if (k.is_compiled()) throw std::invalid_argument("detect_phase_boundaries: kernel already has phase specifiers");

    PhaseReport r;
    size_t last = 0;
    uint32_t ref_regs = k.body[0].live_regs_after;
    uint32_t ref_scratch = k.body[0].live_scratch_after;
    for (size_t i = 1; i < k.body.size(); ++i) {
        const auto& in = k.body[i];
        bool boundary = in.opcode == Opcode::BARRIER;
        if (!boundary && i - last >= min_span) {
            boundary = changed(ref_regs, in.live_regs_after, change_threshold) ||
                       changed(ref_scratch, in.live_scratch_after, change_threshold);
        }
        if (boundary) {
            r.boundaries.push_back(i);
            last = i;
            ref_regs = in.live_regs_after;
            ref_scratch = in.live_scratch_after;
        }
    }
    fill_phase_maxima(k, r);
    return r;
}

KernelSpec annotate_phases(const KernelSpec& k, const PhaseReport& report) {
    if (k.body.empty()) throw std::invalid_argument("annotate_phases: empty kernel body");
    if (k.is_compiled()) throw std::invalid_argument("annotate_phases: kernel already compiled");
    for (size_t i = 0; i < report.boundaries.size(); ++i) {
        size_t b = report.boundaries[i];
        if (b == 0 || b >= k.body.size() || (i > 0 && b <= report.boundaries[i - 1]))
            throw std::invalid_argument("annotate_phases: report does not match kernel (bad boundary " +
                                        std::to_string(b) + ")");
    }
    PhaseReport check{report.boundaries, {}};
    fill_phase_maxima(k, check);
    if (check.phases.size() != report.phases.size())
        throw std::invalid_argument("annotate_phases: report does not match kernel (phase count)");
    for (size_t i = 0; i < check.phases.size(); ++i) {
        const auto& a = check.phases[i];
        const auto& b = report.phases[i];
        if (a.begin != b.begin || a.end != b.end || a.max_live_regs != b.max_live_regs ||
            a.max_scratch_bytes != b.max_scratch_bytes)
            throw std::invalid_argument("annotate_phases: report does not match kernel (phase " +
                                        std::to_string(i) + ")");
    }

    // A specifier covers its own phase plus any barrier-started phases that
    // follow it, so it carries the maximum over that whole stretch.
    const auto& phases = check.phases;
    std::vector<PhaseSpecifier> spec_for(phases.size());
    for (size_t i = 0; i < phases.size();) {
        size_t j = i + 1;
        PhaseSpecifier s{phases[i].max_live_regs, phases[i].max_scratch_bytes};
        while (j < phases.size() && phases[j].starts_at_barrier) {
            s.live_regs = std::max(s.live_regs, phases[j].max_live_regs);
            s.scratch_bytes = std::max(s.scratch_bytes, phases[j].max_scratch_bytes);
            ++j;
        }
        spec_for[i] = s;
        i = j;
    }

    KernelSpec out;
    out.name = k.name;
    out.resource_spec = k.resource_spec;
    out.body.reserve(k.body.size() + phases.size());
    for (size_t p = 0; p < phases.size(); ++p) {
        if (!phases[p].starts_at_barrier) {
            uint32_t regs = out.body.empty() ? 0 : out.body.back().live_regs_after;
            uint32_t scratch = out.body.empty() ? 0 : out.body.back().live_scratch_after;
            out.body.push_back({Opcode::PHASE_SPEC, regs, scratch, spec_for[p]});
        }
        for (size_t i = phases[p].begin; i < phases[p].end; ++i) out.body.push_back(k.body[i]);
    }
    return out;
}

KernelSpec compile_phases(const KernelSpec& k, double change_threshold, size_t min_span) {
    return annotate_phases(k, detect_phase_boundaries(k, change_threshold, min_span));
}

std::vector<std::string> validate_compiled(const KernelSpec& k) {
    std::vector<std::string> v;
    if (k.body.empty() || k.body.front().opcode != Opcode::PHASE_SPEC) {
        v.push_back("missing leading phase specifier");
    }
    const PhaseSpecifier* current = nullptr;
    size_t current_at = 0;
    for (size_t i = 0; i < k.body.size(); ++i) {
        const auto& in = k.body[i];
        if (in.opcode == Opcode::PHASE_SPEC) {
            if (!in.phase) {
                v.push_back("instruction " + std::to_string(i) + ": phase specifier without payload");
                current = nullptr;
                continue;
            }
            if (i > 0 && k.body[i - 1].opcode == Opcode::PHASE_SPEC)
                v.push_back("instruction " + std::to_string(i) + ": adjacent phase specifiers");
            current = &*in.phase;
            current_at = i;
            continue;
        }
        if (!current) continue;
        if (in.live_regs_after > current->live_regs)
            v.push_back("instruction " + std::to_string(i) + ": live_regs " + std::to_string(in.live_regs_after) +
                        " exceeds specifier at " + std::to_string(current_at) + " (" +
                        std::to_string(current->live_regs) + ")");
        if (in.live_scratch_after > current->scratch_bytes)
            v.push_back("instruction " + std::to_string(i) + ": scratch " + std::to_string(in.live_scratch_after) +
                        " exceeds specifier at " + std::to_string(current_at) + " (" +
                        std::to_string(current->scratch_bytes) + ")");
    }
    return v;
}

std::string format_phase_report(const PhaseReport& r) {
    std::ostringstream os;
    os << "phase  begin    end   span  max_regs  max_scratch  start\n";
    for (size_t i = 0; i < r.phases.size(); ++i) {
        const auto& p = r.phases[i];
        char buf[128];
        std::snprintf(buf, sizeof buf, "%5zu %6zu %6zu %6zu %9u %12u  %s\n", i, p.begin, p.end, p.span(),
                      p.max_live_regs, p.max_scratch_bytes,
                      p.begin == 0 ? "entry" : (p.starts_at_barrier ? "barrier" : "liveness"));
        os << buf;
    }
    return os.str();
}

}  // namespace smv

#include "smvirt/kernel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

namespace smv {

namespace {

constexpr struct {
    Opcode op;
    const char* name;
} kOpcodeNames[] = {
    {Opcode::ALU, "ALU"},
    {Opcode::LD_GLOBAL, "LD_GLOBAL"},
    {Opcode::ST_GLOBAL, "ST_GLOBAL"},
    {Opcode::LD_SHARED, "LD_SHARED"},
    {Opcode::ST_SHARED, "ST_SHARED"},
    {Opcode::BARRIER, "BARRIER"},
    {Opcode::PHASE_SPEC, "PHASE_SPEC"},
};

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

uint32_t parse_u32(std::string_view s, size_t line, std::string_view key) {
    uint32_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError(line, "bad integer for '" + std::string(key) + "': '" + std::string(s) + "'");
    return v;
}

// Parses `key=value` tokens; every key in `keys` must appear exactly once.
std::vector<uint32_t> parse_fields(const std::vector<std::string_view>& toks, size_t first,
                                   std::initializer_list<std::string_view> keys, size_t line) {
    std::vector<std::optional<uint32_t>> vals(keys.size());
    for (size_t t = first; t < toks.size(); ++t) {
        auto eq = toks[t].find('=');
        if (eq == std::string_view::npos)
            throw ParseError(line, "expected key=value, got '" + std::string(toks[t]) + "'");
        auto key = toks[t].substr(0, eq);
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) throw ParseError(line, "unknown field '" + std::string(key) + "'");
        auto idx = static_cast<size_t>(it - keys.begin());
        if (vals[idx]) throw ParseError(line, "duplicate field '" + std::string(key) + "'");
        vals[idx] = parse_u32(toks[t].substr(eq + 1), line, key);
    }
    std::vector<uint32_t> out;
    size_t i = 0;
    for (auto key : keys) {
        if (!vals[i]) throw ParseError(line, "missing field '" + std::string(key) + "'");
        out.push_back(*vals[i++]);
    }
    return out;
}

std::string at_line(const std::vector<size_t>* line_of, size_t idx) {
    if (line_of && idx < line_of->size()) return "line " + std::to_string((*line_of)[idx]) + ": ";
    return "instruction " + std::to_string(idx) + ": ";
}

}  // namespace

const char* opcode_name(Opcode op) {
    for (const auto& e : kOpcodeNames)
        if (e.op == op) return e.name;
    return "?";
}

std::optional<Opcode> opcode_from_name(std::string_view name) {
    for (const auto& e : kOpcodeNames)
        if (name == e.name) return e.op;
    return std::nullopt;
}

const char* profile_name(KernelProfile p) {
    switch (p) {
        case KernelProfile::REG_HEAVY: return "reg_heavy";
        case KernelProfile::SCRATCH_HEAVY: return "scratch_heavy";
        case KernelProfile::BARRIER_HEAVY: return "barrier_heavy";
        case KernelProfile::MIXED: return "mixed";
    }
    return "?";
}

bool KernelSpec::is_compiled() const {
    return std::any_of(body.begin(), body.end(),
                       [](const Instruction& i) { return i.opcode == Opcode::PHASE_SPEC; });
}

void validate_resource_spec(const ResourceSpecification& spec) {
    if (spec.threads_per_block < kWarpWidth || spec.threads_per_block > kMaxThreadsPerBlock)
        throw ValidationError("threads_per_block " + std::to_string(spec.threads_per_block) +
                              " outside [32, 1024]");
    if (spec.threads_per_block % kWarpWidth != 0)
        throw ValidationError("threads_per_block " + std::to_string(spec.threads_per_block) +
                              " is not a multiple of the warp width (32)");
    if (spec.regs_per_thread == 0) throw ValidationError("regs_per_thread must be > 0");
    if (spec.num_blocks == 0) throw ValidationError("blocks must be > 0");
}

void validate_kernel(const KernelSpec& k, const std::vector<size_t>* line_of) {
    const auto& spec = k.resource_spec;
    validate_resource_spec(spec);
    for (size_t i = 0; i < k.body.size(); ++i) {
        const auto& in = k.body[i];
        if (in.live_regs_after > spec.regs_per_thread || in.live_scratch_after > spec.scratch_bytes_per_block)
            throw ValidationError(at_line(line_of, i) + "liveness exceeds specification");
        if (in.opcode == Opcode::PHASE_SPEC) {
            if (!in.phase) throw ValidationError(at_line(line_of, i) + "phase specifier without payload");
            if (in.phase->live_regs > spec.regs_per_thread ||
                in.phase->scratch_bytes > spec.scratch_bytes_per_block)
                throw ValidationError(at_line(line_of, i) + "phase specifier exceeds specification");
        } else if (in.phase) {
            throw ValidationError(at_line(line_of, i) + "payload on non-phase instruction");
        }
    }
}

KernelSpec parse_kernel(std::string_view text) {
    KernelSpec k;
    k.name = "kernel";
    bool have_name = false, have_config = false;
    std::vector<size_t> line_of;

    size_t lineno = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        auto toks = split_ws(line);
        if (toks.empty()) {
            if (nl == text.size()) break;
            continue;
        }

        if (toks[0] == "kernel") {
            if (have_name || have_config || !k.body.empty())
                throw ParseError(lineno, "'kernel' line must come first");
            if (toks.size() != 2) throw ParseError(lineno, "expected 'kernel <name>'");
            k.name = std::string(toks[1]);
            have_name = true;
        } else if (toks[0] == "config") {
            if (have_config) throw ParseError(lineno, "duplicate config line");
            if (!k.body.empty()) throw ParseError(lineno, "config must precede instructions");
            auto v = parse_fields(toks, 1, {"threads_per_block", "regs_per_thread", "scratch", "blocks"},
                                  lineno);
            k.resource_spec = {v[0], v[1], v[2], v[3]};
            try {
                validate_resource_spec(k.resource_spec);
            } catch (const ValidationError& e) {
                throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
            }
            have_config = true;
        } else if (toks[0] == "instr") {
            if (!have_config) throw ParseError(lineno, "instruction before config line");
            if (toks.size() < 2) throw ParseError(lineno, "missing opcode");
            auto op = opcode_from_name(toks[1]);
            if (!op || *op == Opcode::PHASE_SPEC)
                throw ParseError(lineno, "unknown opcode '" + std::string(toks[1]) + "'");
            auto v = parse_fields(toks, 2, {"live_regs", "scratch"}, lineno);
            k.body.push_back({*op, v[0], v[1], std::nullopt});
            line_of.push_back(lineno);
        } else if (toks[0] == "phase") {
            if (!have_config) throw ParseError(lineno, "phase before config line");
            auto v = parse_fields(toks, 1, {"live_regs", "scratch"}, lineno);
            // A specifier does not change liveness; it inherits its predecessor's.
            uint32_t regs = k.body.empty() ? 0 : k.body.back().live_regs_after;
            uint32_t scratch = k.body.empty() ? 0 : k.body.back().live_scratch_after;
            k.body.push_back({Opcode::PHASE_SPEC, regs, scratch, PhaseSpecifier{v[0], v[1]}});
            line_of.push_back(lineno);
        } else {
            throw ParseError(lineno, "unknown directive '" + std::string(toks[0]) + "'");
        }
        if (nl == text.size()) break;
    }
    if (!have_config) throw ParseError(0, "missing config line");
    validate_kernel(k, &line_of);
    return k;
}

std::string serialize_kernel(const KernelSpec& k) {
    std::ostringstream os;
    const auto& s = k.resource_spec;
    os << "kernel " << k.name << '\n';
    os << "config threads_per_block=" << s.threads_per_block << " regs_per_thread=" << s.regs_per_thread
       << " scratch=" << s.scratch_bytes_per_block << " blocks=" << s.num_blocks << '\n';
    for (const auto& in : k.body) {
        if (in.opcode == Opcode::PHASE_SPEC) {
            os << "phase live_regs=" << in.phase->live_regs << " scratch=" << in.phase->scratch_bytes << '\n';
        } else {
            os << "instr " << opcode_name(in.opcode) << " live_regs=" << in.live_regs_after
               << " scratch=" << in.live_scratch_after << '\n';
        }
    }
    return os.str();
}

KernelSpec load_kernel_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open kernel file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_kernel(ss.str());
}

void save_kernel_file(const KernelSpec& k, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write kernel file '" + path + "'");
    out << serialize_kernel(k);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

namespace {

// Portable draws: mt19937_64 output is fully specified; distributions are not.
uint32_t draw(std::mt19937_64& rng, uint32_t lo, uint32_t hi) {
    return lo + static_cast<uint32_t>(rng() % (static_cast<uint64_t>(hi) - lo + 1));
}

Opcode draw_op(std::mt19937_64& rng, uint32_t alu, uint32_t gmem, uint32_t smem) {
    uint32_t r = draw(rng, 0, alu + gmem + smem - 1);
    if (r < alu) return Opcode::ALU;
    r -= alu;
    if (r < gmem) return (r % 4 == 0) ? Opcode::ST_GLOBAL : Opcode::LD_GLOBAL;
    return (r % 2 == 0) ? Opcode::LD_SHARED : Opcode::ST_SHARED;
}

}  // namespace

KernelSpec generate_synthetic_kernel(KernelProfile profile, size_t length, uint64_t seed) {
    if (length == 0) throw std::invalid_argument("generate_synthetic_kernel: length must be >= 1");
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(profile) + 1);

    KernelSpec k;
    k.name = std::string(profile_name(profile)) + "_" + std::to_string(length) + "_" + std::to_string(seed);
    k.body.reserve(length);

    if (length == 1) {
        uint32_t regs = draw(rng, 8, 32);
        k.body.push_back({Opcode::ALU, regs, 0, std::nullopt});
    } else {
        // Segments of a few to a few tens of instructions, each with its own
        // liveness level; the profile decides which resource swings.
        size_t i = 0;
        uint32_t segment = 0;
        while (i < length) {
            size_t seg_len = std::min<size_t>(length - i, draw(rng, 4, 24));
            uint32_t regs = 0, scratch = 0;
            uint32_t alu = 6, gmem = 2, smem = 0, barrier_every = 0;
            switch (profile) {
                case KernelProfile::REG_HEAVY:
                    regs = draw(rng, 16, 63);
                    break;
                case KernelProfile::SCRATCH_HEAVY: {
                    // Cycle through none / peak / small, NQU-style.
                    static constexpr uint32_t levels[] = {0, 4224, 384};
                    uint32_t base = levels[segment % 3];
                    scratch = base == 0 ? 0 : base + 128 * draw(rng, 0, 8);
                    regs = draw(rng, 8, 24);
                    smem = scratch ? 4 : 0;
                    break;
                }
                case KernelProfile::BARRIER_HEAVY:
                    regs = draw(rng, 8, 32);
                    scratch = 256 * draw(rng, 0, 8);
                    smem = scratch ? 2 : 0;
                    barrier_every = draw(rng, 3, 8);
                    break;
                case KernelProfile::MIXED:
                    regs = draw(rng, 8, 48);
                    scratch = draw(rng, 0, 1) ? 512 * draw(rng, 1, 8) : 0;
                    smem = scratch ? 3 : 0;
                    barrier_every = draw(rng, 0, 1) ? 12 : 0;
                    break;
            }
            for (size_t j = 0; j < seg_len; ++j, ++i) {
                Opcode op = draw_op(rng, alu, gmem, smem);
                if (barrier_every && j > 0 && j % barrier_every == 0) op = Opcode::BARRIER;
                // Liveness wobbles a little inside a segment.
                uint32_t r = regs > 2 ? regs - draw(rng, 0, 2) : regs;
                k.body.push_back({op, r, scratch, std::nullopt});
            }
            ++segment;
        }
    }

    uint32_t max_regs = 1, max_scratch = 0;
    for (const auto& in : k.body) {
        max_regs = std::max(max_regs, in.live_regs_after);
        max_scratch = std::max(max_scratch, in.live_scratch_after);
    }
    k.resource_spec.threads_per_block = kWarpWidth * draw(rng, 1, 16);
    k.resource_spec.regs_per_thread = max_regs + draw(rng, 0, 4);
    k.resource_spec.scratch_bytes_per_block = max_scratch == 0 ? 0 : max_scratch + 128 * draw(rng, 0, 4);
    k.resource_spec.num_blocks = draw(rng, 1, 12);
    return k;
}

}  // namespace smv

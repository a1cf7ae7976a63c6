#pragma once
// Synthetic kernel IR: straight-line instruction traces annotated with
// per-instruction liveness, plus the resource specification the
// programmer picked for them.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smv {

inline constexpr uint32_t kWarpWidth = 32;
inline constexpr uint32_t kMaxThreadsPerBlock = 1024;

enum class Opcode : uint8_t {
    ALU,
    LD_GLOBAL,
    ST_GLOBAL,
    LD_SHARED,
    ST_SHARED,
    BARRIER,
    PHASE_SPEC,
};

const char* opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(std::string_view name);

// Resource requirements of the phase that follows a PHASE_SPEC.
struct PhaseSpecifier {
    uint32_t live_regs = 0;      // per thread
    uint32_t scratch_bytes = 0;  // per block

    bool operator==(const PhaseSpecifier&) const = default;
};

struct Instruction {
    Opcode opcode = Opcode::ALU;
    uint32_t live_regs_after = 0;
    uint32_t live_scratch_after = 0;
    std::optional<PhaseSpecifier> phase;  // set iff opcode == PHASE_SPEC

    bool operator==(const Instruction&) const = default;

    bool is_global_memory() const {
        return opcode == Opcode::LD_GLOBAL || opcode == Opcode::ST_GLOBAL;
    }
    bool is_shared_memory() const {
        return opcode == Opcode::LD_SHARED || opcode == Opcode::ST_SHARED;
    }
};

struct ResourceSpecification {
    uint32_t threads_per_block = kWarpWidth;
    uint32_t regs_per_thread = 1;
    uint32_t scratch_bytes_per_block = 0;
    uint32_t num_blocks = 1;

    uint32_t warps_per_block() const { return threads_per_block / kWarpWidth; }

    bool operator==(const ResourceSpecification&) const = default;
};

struct KernelSpec {
    std::string name;
    ResourceSpecification resource_spec;
    std::vector<Instruction> body;

    bool operator==(const KernelSpec&) const = default;

    bool is_compiled() const;
};

// Thrown for malformed kernel/grid text. `line` is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(size_t line, const std::string& what)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what)
        , line_(line) {}
    size_t line() const { return line_; }

private:
    size_t line_;
};

// Thrown when a structurally valid kernel breaks a semantic invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws ValidationError on the first broken spec/liveness invariant.
// `line_of` maps body index to source line for error messages (optional).
void validate_kernel(const KernelSpec& k, const std::vector<size_t>* line_of = nullptr);
void validate_resource_spec(const ResourceSpecification& spec);

KernelSpec parse_kernel(std::string_view text);
std::string serialize_kernel(const KernelSpec& k);

KernelSpec load_kernel_file(const std::string& path);
void save_kernel_file(const KernelSpec& k, const std::string& path);

enum class KernelProfile { REG_HEAVY, SCRATCH_HEAVY, BARRIER_HEAVY, MIXED };

const char* profile_name(KernelProfile p);

// Deterministic in (profile, length, seed). Produces a source kernel
// (no PHASE_SPEC) whose resource spec covers its liveness.
KernelSpec generate_synthetic_kernel(KernelProfile profile, size_t length, uint64_t seed);

}  // namespace smv

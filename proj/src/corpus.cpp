#include "smvirt/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace smv {

namespace {

SweepGrid make_grid(std::string name, ParamRange r, std::optional<uint64_t> total_threads,
                    std::optional<uint32_t> blocks) {
    SweepGrid g;
    g.name = std::move(name);
    g.ranges = {r};
    g.total_threads = total_threads;
    g.blocks = blocks;
    g.archs = {"fermi", "kepler", "maxwell"};
    return g;
}

// Long-latency loads with short dependent ALU runs; register pressure
// alternates between a wide and a narrow phase.
CorpusEntry reg_cliff() {
    CorpusEntry e;
    e.name = "reg_cliff";
    e.description = "graph-traversal style loop, 32/16 live registers alternating, no barriers";
    e.cliff_kernel = true;
    KernelSpec& k = e.kernel;
    k.name = e.name;
    k.resource_spec = {512, 32, 0, 16};
    for (int i = 0; i < 4; ++i) {
        append_pattern(k, "LaaaLaaaLaaa", 32, 0);
        append_pattern(k, "LaaaLaaaLaaa", 16, 0);
    }
    append_pattern(k, "aS", 16, 0);
    e.grid = make_grid("reg_cliff_tpb", {SweepParam::THREADS_PER_BLOCK, 384, 1024, 32}, 32768, std::nullopt);
    return e;
}

// Scratchpad peaks briefly at 4224 B, then settles at 384 B; phases are
// separated by barriers.
CorpusEntry scratch_cliff() {
    CorpusEntry e;
    e.name = "scratch_cliff";
    e.description = "board-search style kernel, scratchpad 0 / 4224 / 384 B across barrier phases";
    e.cliff_kernel = true;
    KernelSpec& k = e.kernel;
    k.name = e.name;
    k.resource_spec = {64, 16, 4224, 96};
    append_pattern(k, "LaaaLaaaaaaa", 16, 0);
    append_pattern(k, "B", 16, 4224);
    append_pattern(k, "ssssaaaallllaaaa", 16, 4224);
    append_pattern(k, "B", 16, 384);
    for (int i = 0; i < 3; ++i) append_pattern(k, "lalaLaaalalaLaaa", 16, 384);
    append_pattern(k, "aaS", 16, 384);
    e.grid = make_grid("scratch_cliff_scratch", {SweepParam::SCRATCH, 4224, 40224, 1000}, std::nullopt, 96);
    return e;
}

CorpusEntry barrier_heavy() {
    CorpusEntry e;
    e.name = "barrier_heavy";
    e.description = "tiled stencil, a barrier every six instructions, constant liveness";
    e.cliff_kernel = true;
    KernelSpec& k = e.kernel;
    k.name = e.name;
    k.resource_spec = {256, 24, 2048, 60};
    for (int i = 0; i < 6; ++i) {
        append_pattern(k, "sLaaalB", 24, 2048);
        append_pattern(k, "laasaaB", 24, 2048);
    }
    append_pattern(k, "aS", 24, 2048);
    e.grid = make_grid("barrier_heavy_regs", {SweepParam::REGS_PER_THREAD, 24, 48, 4}, std::nullopt, 60);
    return e;
}

// Register use doubles in the middle of the kernel and drops back.
CorpusEntry dct_like() {
    CorpusEntry e;
    e.name = "dct_like";
    e.description = "transform kernel, 20 -> 40 -> 40 -> 20 live registers, 2 KB scratchpad";
    e.cliff_kernel = true;
    KernelSpec& k = e.kernel;
    k.name = e.name;
    k.resource_spec = {256, 40, 2048, 32};
    append_pattern(k, "LaaaaaLaaaaasa", 20, 2048);
    append_pattern(k, "laaalaaaLaaaaa", 40, 2048);
    append_pattern(k, "B", 40, 2048);
    append_pattern(k, "laaalaaaLaaaaa", 40, 2048);
    append_pattern(k, "saaaLaaaaaaaaS", 20, 2048);
    e.grid = make_grid("dct_like_regs", {SweepParam::REGS_PER_THREAD, 40, 60, 4}, 32768, std::nullopt);
    return e;
}

CorpusEntry uniform() {
    CorpusEntry e;
    e.name = "uniform";
    e.description = "streaming kernel with flat liveness";
    KernelSpec& k = e.kernel;
    k.name = e.name;
    k.resource_spec = {128, 16, 0, 64};
    for (int i = 0; i < 8; ++i) append_pattern(k, "LaaaaaaS", 16, 0);
    e.grid = make_grid("uniform_tpb", {SweepParam::THREADS_PER_BLOCK, 128, 512, 64}, 8192, std::nullopt);
    return e;
}

CorpusEntry memory_bound() {
    CorpusEntry e;
    e.name = "memory_bound";
    e.description = "bandwidth-bound copy, a global access every other instruction";
    KernelSpec& k = e.kernel;
    k.name = e.name;
    k.resource_spec = {256, 12, 0, 32};
    for (int i = 0; i < 16; ++i) append_pattern(k, "LaLS", 12, 0);
    e.grid = make_grid("memory_bound_tpb", {SweepParam::THREADS_PER_BLOCK, 128, 512, 128}, 8192, std::nullopt);
    return e;
}

}  // namespace

void append_pattern(KernelSpec& k, std::string_view pattern, uint32_t live_regs, uint32_t live_scratch) {
    for (char c : pattern) {
        Opcode op;
        switch (c) {
            case 'a': op = Opcode::ALU; break;
            case 'L': op = Opcode::LD_GLOBAL; break;
            case 'S': op = Opcode::ST_GLOBAL; break;
            case 'l': op = Opcode::LD_SHARED; break;
            case 's': op = Opcode::ST_SHARED; break;
            case 'B': op = Opcode::BARRIER; break;
            default: throw std::invalid_argument(std::string("append_pattern: unknown op '") + c + "'");
        }
        k.body.push_back({op, live_regs, live_scratch, std::nullopt});
    }
}

std::vector<CorpusEntry> builtin_corpus() {
    return {reg_cliff(), scratch_cliff(), barrier_heavy(), dct_like(), uniform(), memory_bound()};
}

std::optional<CorpusEntry> corpus_entry(std::string_view name) {
    for (auto& e : builtin_corpus())
        if (e.name == name) return e;
    return std::nullopt;
}

void export_corpus(const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& e : builtin_corpus()) {
        std::ostringstream k;
        k << "# " << e.description << '\n' << serialize_kernel(e.kernel);
        std::ofstream kf(dir + "/" + e.name + ".kernel", std::ios::binary);
        if (!kf) throw std::runtime_error("cannot write " + dir + "/" + e.name + ".kernel");
        kf << k.str();
        save_grid_file(e.grid, dir + "/" + e.name + ".grid");
    }
}

}  // namespace smv

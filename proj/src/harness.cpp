#include "smvirt/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace smv {

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        size_t end = s.find(sep, start);
        if (end == std::string_view::npos) end = s.size();
        out.emplace_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

std::vector<std::string> tokens(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream is{std::string(line)};
    std::string t;
    while (is >> t) out.push_back(t);
    return out;
}

uint64_t parse_u64(std::string_view s, size_t line, std::string_view what) {
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
        throw ParseError(line, "bad " + std::string(what) + " '" + std::string(s) + "'");
    return v;
}

uint32_t parse_u32(std::string_view s, size_t line, std::string_view what) {
    uint64_t v = parse_u64(s, line, what);
    if (v > std::numeric_limits<uint32_t>::max())
        throw ParseError(line, std::string(what) + " out of range '" + std::string(s) + "'");
    return static_cast<uint32_t>(v);
}

uint32_t& field(ResourceSpecification& s, SweepParam p) {
    switch (p) {
        case SweepParam::THREADS_PER_BLOCK: return s.threads_per_block;
        case SweepParam::REGS_PER_THREAD: return s.regs_per_thread;
        case SweepParam::SCRATCH: return s.scratch_bytes_per_block;
    }
    return s.threads_per_block;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << body;
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

const char* sweep_param_name(SweepParam p) {
    switch (p) {
        case SweepParam::THREADS_PER_BLOCK: return "threads_per_block";
        case SweepParam::REGS_PER_THREAD: return "regs_per_thread";
        case SweepParam::SCRATCH: return "scratch";
    }
    return "?";
}

std::optional<SweepParam> sweep_param_from_name(std::string_view name) {
    if (name == "threads_per_block") return SweepParam::THREADS_PER_BLOCK;
    if (name == "regs_per_thread") return SweepParam::REGS_PER_THREAD;
    if (name == "scratch") return SweepParam::SCRATCH;
    return std::nullopt;
}

std::vector<uint32_t> ParamRange::values() const {
    std::vector<uint32_t> v;
    for (uint64_t x = lo; x <= hi; x += step) v.push_back(static_cast<uint32_t>(x));
    return v;
}

SweepGrid parse_grid(std::string_view text) {
    SweepGrid g;
    size_t lineno = 0;
    for (const std::string& raw : split(text, '\n')) {
        ++lineno;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        auto toks = tokens(line);
        if (toks.empty()) continue;
        const std::string& kw = toks[0];
        if (kw == "grid") {
            if (toks.size() != 2) throw ParseError(lineno, "expected 'grid <name>'");
            g.name = toks[1];
        } else if (kw == "range") {
            if (toks.size() != 2) throw ParseError(lineno, "expected 'range <param>=<lo>:<hi>:<step>'");
            auto eq = toks[1].find('=');
            if (eq == std::string::npos) throw ParseError(lineno, "expected '=' in range");
            auto param = sweep_param_from_name(std::string_view(toks[1]).substr(0, eq));
            if (!param) throw ParseError(lineno, "unknown sweep parameter '" + toks[1].substr(0, eq) + "'");
            auto parts = split(std::string_view(toks[1]).substr(eq + 1), ':');
            if (parts.size() != 3) throw ParseError(lineno, "range needs <lo>:<hi>:<step>");
            ParamRange r{*param, parse_u32(parts[0], lineno, "lo"), parse_u32(parts[1], lineno, "hi"),
                         parse_u32(parts[2], lineno, "step")};
            if (r.step == 0) throw ParseError(lineno, "range step must be positive");
            if (r.lo > r.hi) throw ParseError(lineno, "empty range");
            for (const auto& other : g.ranges)
                if (other.param == r.param) throw ParseError(lineno, "parameter swept twice");
            g.ranges.push_back(r);
        } else if (kw == "work") {
            if (toks.size() != 2) throw ParseError(lineno, "expected 'work total_threads=N' or 'work blocks=N'");
            auto eq = toks[1].find('=');
            std::string key = toks[1].substr(0, eq);
            if (eq == std::string::npos) throw ParseError(lineno, "expected '=' in work");
            std::string_view val = std::string_view(toks[1]).substr(eq + 1);
            if (key == "total_threads") {
                g.total_threads = parse_u64(val, lineno, "total_threads");
                if (*g.total_threads == 0) throw ParseError(lineno, "total_threads must be positive");
            } else if (key == "blocks") {
                g.blocks = parse_u32(val, lineno, "blocks");
                if (*g.blocks == 0) throw ParseError(lineno, "blocks must be positive");
            } else {
                throw ParseError(lineno, "unknown work key '" + key + "'");
            }
        } else if (kw == "archs") {
            if (toks.size() != 2) throw ParseError(lineno, "expected 'archs a,b,...'");
            g.archs.clear();
            for (auto& a : split(toks[1], ',')) {
                if (!arch_preset(a)) throw ParseError(lineno, "unknown arch '" + a + "'");
                g.archs.push_back(a);
            }
        } else if (kw == "policies") {
            if (toks.size() != 2) throw ParseError(lineno, "expected 'policies p,q,...'");
            g.policies.clear();
            for (auto& p : split(toks[1], ',')) {
                auto k = policy_from_name(p);
                if (!k) throw ParseError(lineno, "unknown policy '" + p + "'");
                g.policies.push_back(*k);
            }
        } else if (kw == "seed") {
            if (toks.size() != 2) throw ParseError(lineno, "expected 'seed N'");
            g.seed = parse_u64(toks[1], lineno, "seed");
        } else {
            throw ParseError(lineno, "unknown directive '" + kw + "'");
        }
    }
    if (g.total_threads && g.blocks) throw ParseError(0, "work given both as total_threads and blocks");
    if (g.ranges.empty()) throw ParseError(0, "grid has no range line");
    return g;
}

std::string serialize_grid(const SweepGrid& g) {
    std::ostringstream os;
    os << "grid " << g.name << '\n';
    for (const auto& r : g.ranges)
        os << "range " << sweep_param_name(r.param) << '=' << r.lo << ':' << r.hi << ':' << r.step << '\n';
    if (g.total_threads) os << "work total_threads=" << *g.total_threads << '\n';
    if (g.blocks) os << "work blocks=" << *g.blocks << '\n';
    os << "archs";
    for (size_t i = 0; i < g.archs.size(); ++i) os << (i ? ',' : ' ') << g.archs[i];
    os << "\npolicies";
    for (size_t i = 0; i < g.policies.size(); ++i) os << (i ? ',' : ' ') << policy_name(g.policies[i]);
    os << "\nseed " << g.seed << '\n';
    return os.str();
}

SweepGrid load_grid_file(const std::string& path) { return parse_grid(read_file(path)); }

void save_grid_file(const SweepGrid& g, const std::string& path) { write_file(path, serialize_grid(g)); }

std::vector<ResourceSpecification> grid_points(const SweepGrid& g, const KernelSpec& k,
                                               std::vector<std::string>* warnings) {
    uint32_t max_regs = 0, max_scratch = 0;
    for (const auto& in : k.body) {
        max_regs = std::max(max_regs, in.live_regs_after);
        max_scratch = std::max(max_scratch, in.live_scratch_after);
        if (in.phase) {
            max_regs = std::max(max_regs, in.phase->live_regs);
            max_scratch = std::max(max_scratch, in.phase->scratch_bytes);
        }
    }
    std::vector<ResourceSpecification> specs{k.resource_spec};
    for (const auto& r : g.ranges) {
        std::vector<ResourceSpecification> next;
        for (const auto& s : specs)
            for (uint32_t v : r.values()) {
                ResourceSpecification t = s;
                field(t, r.param) = v;
                next.push_back(t);
            }
        specs = std::move(next);
    }
    std::vector<ResourceSpecification> out;
    for (auto s : specs) {
        if (g.total_threads) s.num_blocks = static_cast<uint32_t>((*g.total_threads + s.threads_per_block - 1) /
                                                                  s.threads_per_block);
        if (g.blocks) s.num_blocks = *g.blocks;
        std::string why;
        try {
            validate_resource_spec(s);
        } catch (const ValidationError& e) {
            why = e.what();
        }
        if (why.empty() && s.regs_per_thread < max_regs) why = "regs_per_thread below live registers";
        if (why.empty() && s.scratch_bytes_per_block < max_scratch) why = "scratch below live scratchpad";
        if (!why.empty()) {
            if (warnings)
                warnings->push_back("skipping tpb=" + std::to_string(s.threads_per_block) +
                                    " regs=" + std::to_string(s.regs_per_thread) +
                                    " scratch=" + std::to_string(s.scratch_bytes_per_block) + ": " + why);
            continue;
        }
        out.push_back(s);
    }
    return out;
}

std::vector<SweepRow> SweepResult::select(std::string_view arch, PolicyKind policy) const {
    std::vector<SweepRow> out;
    for (const auto& r : rows)
        if (r.arch == arch && r.policy == policy) out.push_back(r);
    std::stable_sort(out.begin(), out.end(), [](const SweepRow& a, const SweepRow& b) { return a.point < b.point; });
    return out;
}

SweepResult run_sweep(const KernelSpec& kernel, const SweepGrid& grid, const SweepOptions& opts) {
    SweepResult res;
    res.kernel = kernel.name;
    res.grid = grid.name;
    auto points = grid_points(grid, kernel, &res.warnings);

    std::vector<ArchConfig> archs;
    for (const auto& a : grid.archs) {
        auto cfg = arch_preset(a);
        if (!cfg) throw std::invalid_argument("unknown arch '" + a + "'");
        archs.push_back(*cfg);
    }
    for (size_t ai = 0; ai < archs.size(); ++ai)
        for (PolicyKind p : grid.policies)
            for (size_t pi = 0; pi < points.size(); ++pi) {
                SweepRow row;
                row.arch = archs[ai].name;
                row.policy = p;
                row.point = pi;
                row.spec = points[pi];
                res.rows.push_back(row);
            }

    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    size_t failure_index = std::numeric_limits<size_t>::max();
    std::mutex mu;
    const size_t per_arch = grid.policies.size() * points.size();

    auto worker = [&] {
        for (size_t i = next++; i < res.rows.size(); i = next++) {
            SweepRow& row = res.rows[i];
            KernelSpec k = kernel;
            k.resource_spec = row.spec;
            SimOptions so;
            so.seed = grid.seed;
            so.sms = opts.sms;
            so.cycle_cap = opts.cycle_cap;
            so.zorua = opts.zorua;
            so.check_invariants = opts.check_invariants;
            try {
                SimResult r = run(k, row.policy, archs[i / per_arch], so);
                row.cycles = r.cycles;
                row.hit_rate = r.hit_rate;
                row.mean_schedulable_warps = r.mean_schedulable_warps;
                row.blocks_in_flight_min = r.blocks_in_flight_min;
                row.blocks_in_flight_max = r.blocks_in_flight_max;
                row.guard_admissions = r.guard_admissions;
            } catch (const UnrunnableSpec&) {
                row.cycles.reset();
            } catch (...) {
                std::lock_guard lk(mu);
                if (i < failure_index) {
                    failure_index = i;
                    failure = std::current_exception();
                }
            }
        }
    };

    unsigned n = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<size_t>(n, std::max<size_t>(1, res.rows.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return res;
}

std::optional<double> performance_range(const std::vector<SweepRow>& rows) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    size_t finite = 0;
    for (const auto& r : rows) {
        if (!r.cycles) continue;
        ++finite;
        lo = std::min(lo, r.performance());
        hi = std::max(hi, r.performance());
    }
    if (finite < 2) return std::nullopt;
    return 1.0 - lo / hi;
}

std::vector<Cliff> detect_cliffs(const std::vector<SweepRow>& rows, double threshold) {
    std::vector<Cliff> out;
    for (size_t i = 1; i < rows.size(); ++i) {
        const auto& a = rows[i - 1];
        const auto& b = rows[i];
        if (!a.cycles) continue;
        if (!b.cycles) {
            out.push_back({i, std::numeric_limits<double>::infinity()});
            continue;
        }
        double slowdown = static_cast<double>(*b.cycles) / static_cast<double>(*a.cycles) - 1.0;
        if (slowdown > threshold) out.push_back({i, slowdown});
    }
    return out;
}

double porting_loss(const std::vector<SweepRow>& src, const std::vector<SweepRow>& dst) {
    if (src.size() != dst.size()) throw std::invalid_argument("porting_loss: grids differ in size");
    for (size_t i = 0; i < src.size(); ++i)
        if (src[i].point != dst[i].point) throw std::invalid_argument("porting_loss: grids differ in order");
    auto best = [](const std::vector<SweepRow>& rows) {
        double b = 0;
        for (const auto& r : rows) b = std::max(b, r.performance());
        return b;
    };
    double src_best = best(src), dst_best = best(dst);
    if (src_best == 0) throw std::invalid_argument("porting_loss: no runnable source point");
    double loss = 0;
    for (size_t i = 0; i < src.size(); ++i) {
        double s = src[i].performance() / src_best;
        if (s < 1.0 - kPortingCandidateBand) continue;
        double d = dst_best > 0 ? dst[i].performance() / dst_best : 0.0;
        loss = std::max(loss, 1.0 - d);
    }
    return loss;
}

std::string format_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string csv_header() {
    return "arch,policy,point,threads_per_block,regs_per_thread,scratch_bytes,blocks,cycles,performance,"
           "hit_rate_register,hit_rate_scratchpad,hit_rate_warp_slot,mean_schedulable_warps,"
           "blocks_in_flight_min,blocks_in_flight_max,guard_admissions";
}

void emit_csv(const SweepResult& r, std::ostream& os) {
    os << csv_header() << '\n';
    for (const auto& row : r.rows) {
        os << row.arch << ',' << policy_name(row.policy) << ',' << row.point << ',' << row.spec.threads_per_block << ','
           << row.spec.regs_per_thread << ',' << row.spec.scratch_bytes_per_block << ',' << row.spec.num_blocks << ',';
        if (row.cycles)
            os << *row.cycles << ',' << format_fixed(row.performance() * 1e6);
        else
            os << "INF," << format_fixed(0.0);
        for (double h : row.hit_rate) os << ',' << format_fixed(h);
        os << ',' << format_fixed(row.mean_schedulable_warps) << ',' << row.blocks_in_flight_min << ','
           << row.blocks_in_flight_max << ',' << row.guard_admissions << '\n';
    }
}

void emit_json(const SweepResult& r, std::ostream& os) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
        nlohmann::ordered_json j;
        j["arch"] = row.arch;
        j["policy"] = policy_name(row.policy);
        j["point"] = row.point;
        j["threads_per_block"] = row.spec.threads_per_block;
        j["regs_per_thread"] = row.spec.regs_per_thread;
        j["scratch_bytes"] = row.spec.scratch_bytes_per_block;
        j["blocks"] = row.spec.num_blocks;
        if (row.cycles)
            j["cycles"] = *row.cycles;
        else
            j["cycles"] = "INF";
        j["hit_rate"] = {{"register", row.hit_rate[0]}, {"scratchpad", row.hit_rate[1]}, {"warp_slot", row.hit_rate[2]}};
        j["mean_schedulable_warps"] = row.mean_schedulable_warps;
        j["blocks_in_flight_min"] = row.blocks_in_flight_min;
        j["blocks_in_flight_max"] = row.blocks_in_flight_max;
        j["guard_admissions"] = row.guard_admissions;
        rows.push_back(std::move(j));
    }
    nlohmann::ordered_json doc;
    doc["kernel"] = r.kernel;
    doc["grid"] = r.grid;
    doc["warnings"] = r.warnings;
    doc["rows"] = std::move(rows);
    os << doc.dump(2) << '\n';
}

void emit_csv(const SweepResult& r, const std::string& path) {
    std::ostringstream os;
    emit_csv(r, os);
    write_file(path, os.str());
}

void emit_json(const SweepResult& r, const std::string& path) {
    std::ostringstream os;
    emit_json(r, os);
    write_file(path, os.str());
}

std::string epoch_csv_header() {
    return "epoch,start_cycle,cycles,issue_cycles,c_idle,c_mem,c_other,instructions,"
           "swap_register,swap_scratchpad,swap_warp_slot,max_blocks_in_flight";
}

void emit_sim_csv(const SimResult& r, std::ostream& os) {
    os << epoch_csv_header() << '\n';
    for (size_t i = 0; i < r.epochs.size(); ++i) {
        const auto& e = r.epochs[i];
        os << i << ',' << e.start_cycle << ',' << e.cycles << ',' << e.issue_cycles << ',' << e.c_idle << ','
           << e.c_mem << ',' << e.c_other << ',' << e.instructions;
        for (uint64_t s : e.swap_accesses) os << ',' << s;
        os << ',' << e.max_blocks_in_flight << '\n';
    }
}

void emit_sim_json(const SimResult& r, std::string_view kernel, std::string_view arch, PolicyKind policy,
                   const ResourceSpecification& spec, std::ostream& os) {
    auto per_kind = [](const auto& a) {
        return nlohmann::ordered_json{{"register", a[0]}, {"scratchpad", a[1]}, {"warp_slot", a[2]}};
    };
    nlohmann::ordered_json doc;
    doc["kernel"] = kernel;
    doc["arch"] = arch;
    doc["policy"] = policy_name(policy);
    doc["threads_per_block"] = spec.threads_per_block;
    doc["regs_per_thread"] = spec.regs_per_thread;
    doc["scratch_bytes"] = spec.scratch_bytes_per_block;
    doc["blocks"] = spec.num_blocks;
    doc["cycles"] = r.cycles;
    doc["instructions"] = r.instructions;
    doc["issue_cycles"] = r.total_issue_cycles();
    doc["c_idle"] = r.total_c_idle();
    doc["c_mem"] = r.total_c_mem();
    doc["c_other"] = r.total_c_other();
    doc["accesses"] = per_kind(r.accesses);
    doc["swap_accesses"] = per_kind(r.swap_accesses);
    doc["hit_rate"] = per_kind(r.hit_rate);
    doc["mean_schedulable_warps"] = r.mean_schedulable_warps;
    doc["blocks_in_flight_min"] = r.blocks_in_flight_min;
    doc["blocks_in_flight_max"] = r.blocks_in_flight_max;
    doc["guard_admissions"] = r.guard_admissions;
    doc["blocks_finished"] = r.blocks_finished;
    nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"start_cycle", e.start_cycle},
                          {"cycles", e.cycles},
                          {"issue_cycles", e.issue_cycles},
                          {"c_idle", e.c_idle},
                          {"c_mem", e.c_mem},
                          {"c_other", e.c_other},
                          {"instructions", e.instructions},
                          {"swap_accesses", per_kind(e.swap_accesses)},
                          {"max_blocks_in_flight", e.max_blocks_in_flight}});
    }
    doc["epochs"] = std::move(epochs);
    os << doc.dump(2) << '\n';
}

SweepResult sweep_from_json(std::string_view text) {
    auto doc = nlohmann::json::parse(text);
    SweepResult r;
    r.kernel = doc.at("kernel").get<std::string>();
    r.grid = doc.at("grid").get<std::string>();
    r.warnings = doc.at("warnings").get<std::vector<std::string>>();
    for (const auto& j : doc.at("rows")) {
        SweepRow row;
        row.arch = j.at("arch").get<std::string>();
        auto p = policy_from_name(j.at("policy").get<std::string>());
        if (!p) throw std::invalid_argument("unknown policy in JSON");
        row.policy = *p;
        row.point = j.at("point").get<size_t>();
        row.spec.threads_per_block = j.at("threads_per_block").get<uint32_t>();
        row.spec.regs_per_thread = j.at("regs_per_thread").get<uint32_t>();
        row.spec.scratch_bytes_per_block = j.at("scratch_bytes").get<uint32_t>();
        row.spec.num_blocks = j.at("blocks").get<uint32_t>();
        if (j.at("cycles").is_number()) row.cycles = j.at("cycles").get<uint64_t>();
        const auto& h = j.at("hit_rate");
        row.hit_rate = {h.at("register").get<double>(), h.at("scratchpad").get<double>(),
                        h.at("warp_slot").get<double>()};
        row.mean_schedulable_warps = j.at("mean_schedulable_warps").get<double>();
        row.blocks_in_flight_min = j.at("blocks_in_flight_min").get<uint32_t>();
        row.blocks_in_flight_max = j.at("blocks_in_flight_max").get<uint32_t>();
        row.guard_admissions = j.at("guard_admissions").get<uint64_t>();
        r.rows.push_back(std::move(row));
    }
    return r;
}

}  // namespace smv

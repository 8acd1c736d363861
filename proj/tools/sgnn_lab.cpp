// sgnn_lab: oracle batteries and desk-scale experiments for stochastic graph
// neural networks over randomly failing links.
//
// Exit codes: 0 success, 1 assertion failure, 2 invalid configuration,
// 3 runtime failure (divergence guard, I/O).

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgnn/checks.hpp"
#include "sgnn/experiments.hpp"
#include "sgnn/sgnn_model.hpp"

namespace fs = std::filesystem;
using namespace sgnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAssert = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Stream tags of the verification batteries under --seed.
constexpr std::uint64_t kStreamExpectedSquare = 0x4C454D32;
constexpr std::uint64_t kStreamNonlinearity = 0x4C454D31;
constexpr std::uint64_t kStreamFilter = 0x46494C54;
constexpr std::uint64_t kStreamDistributed = 0x44495354;
constexpr std::uint64_t kStreamGrad = 0x47524144;

struct Options {
    std::uint64_t seed = 1;
    std::string out = "sgnn_out";
    std::string format = "csv";
    std::size_t jobs = 1;
    bool check = false;
    std::vector<double> p;
    std::vector<double> horizons;
    std::vector<std::string> kinds{"adjacency", "laplacian"};
    std::size_t max_edges = 12;
    std::vector<std::string> overrides;
};

std::size_t worker_count(std::size_t jobs) {
    return jobs == 0 ? std::max(1U, std::thread::hardware_concurrency()) : jobs;
}

void apply_overrides(ParamTable& t, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) t.apply(o);
}

std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    return out;
}

void write_config(const Options& o, const std::string& command, const nlohmann::ordered_json& params) {
    nlohmann::ordered_json j{{"subcommand", command}, {"seed", o.seed}, {"format", o.format}, {"params", params}};
    open_out(fs::path(o.out) / "config.json") << j.dump(2) << '\n';
}

/// Report of oracle rows as <stem>.csv or <stem>.json.
void write_checks(const Options& o, const std::string& stem, const std::vector<CheckRow>& rows) {
    const fs::path dir(o.out);
    if (o.format == "json") {
        open_out(dir / (stem + ".json")) << checks_to_json(rows).dump(2) << '\n';
    } else {
        auto out = open_out(dir / (stem + ".csv"));
        write_check_csv(rows, out);
    }
}

void write_rows(const Options& o, const std::string& stem, const std::vector<ResultRow>& rows) {
    const fs::path dir(o.out);
    if (o.format == "json") {
        open_out(dir / (stem + ".json")) << results_to_json(rows).dump(2) << '\n';
    } else {
        auto out = open_out(dir / (stem + ".csv"));
        write_results_csv(rows, out);
    }
}

void write_checkpoint(const fs::path& path, const FilterTensor& h, ShiftKind kind) {
    auto out = open_out(path);
    save_checkpoint(h, kind, out);
}

void write_trace(const fs::path& path, const TrainTrace& trace) {
    auto out = open_out(path);
    write_trace_csv(trace, out);
}

/// Per-check pass counts and worst margin; true when every row passes.
bool print_check_summary(const std::vector<CheckRow>& rows) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
    std::map<std::string, double> worst;
    for (const auto& r : rows) {
        auto& c = counts[r.check];
        ++c.second;
        if (r.pass) ++c.first;
        const auto it = worst.find(r.check);
        worst[r.check] = it == worst.end() ? r.value - r.limit : std::max(it->second, r.value - r.limit);
    }
    for (const auto& [name, c] : counts)
        std::cout << std::left << std::setw(26) << name << c.first << "/" << c.second
                  << " pass, worst value-limit " << std::scientific << std::setprecision(3) << worst[name]
                  << std::defaultfloat << '\n';
    for (const auto& r : rows)
        if (!r.pass) std::cout << "  FAIL " << r.check << " " << r.name << " value " << r.value << " limit " << r.limit << '\n';
    return all_pass(rows);
}

std::vector<double> distinct_p(const std::vector<ResultRow>& rows, std::string_view metric) {
    std::vector<double> ps;
    for (const auto& r : rows)
        if (r.metric == metric && std::find(ps.begin(), ps.end(), r.p) == ps.end()) ps.push_back(r.p);
    return ps;
}

void print_summary_table(const std::vector<ResultRow>& rows, std::string_view metric,
                         const std::vector<std::string>& methods) {
    std::cout << std::left << std::setw(8) << "p";
    for (const auto& m : methods) std::cout << std::setw(24) << m;
    std::cout << '\n' << std::fixed << std::setprecision(4);
    for (double p : distinct_p(rows, metric)) {
        std::cout << std::setw(8) << p;
        for (const auto& m : methods) {
            const Summary s = summarize(rows, p, m, metric);
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(4) << s.mean << " +- " << s.std;
            std::cout << std::setw(24) << cell.str();
        }
        std::cout << '\n';
    }
    std::cout << std::defaultfloat;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_lemma_check(const Options& o) {
    std::size_t samples = 100000;
    ParamTable t;
    t.add("samples", &samples, "draws per distribution for the nonlinearity check");
    apply_overrides(t, o.overrides);
    std::vector<ShiftKind> kinds;
    for (const auto& k : o.kinds) {
        try {
            kinds.push_back(parse_shift_kind(k));
        } catch (const Error& e) {
            throw InvalidConfig(e.what());
        }
    }
    auto params = t.to_json();
    params["kind"] = o.kinds;
    params["max_edges"] = o.max_edges;
    write_config(o, "lemma-check", params);

    auto rows = expected_square_battery(o.max_edges, kinds, Rng(o.seed, kStreamExpectedSquare));
    auto nl = nonlinearity_battery(samples, Rng(o.seed, kStreamNonlinearity));
    rows.insert(rows.end(), nl.begin(), nl.end());
    write_checks(o, "lemma_check", rows);
    return print_check_summary(rows) ? kExitOk : kExitAssert;
}

int cmd_filter_check(const Options& o) {
    std::size_t cases = 100;
    std::size_t cg_samples = 200;
    ParamTable t;
    t.add("cases", &cases, "random cases for the message-passing equivalence check");
    t.add("cg_samples", &cg_samples, "random points for each C_g estimate");
    apply_overrides(t, o.overrides);
    write_config(o, "filter-check", t.to_json());

    auto rows = filter_bound_battery(Rng(o.seed, kStreamFilter), cg_samples);
    auto dist = distributed_battery(cases, Rng(o.seed, kStreamDistributed));
    rows.insert(rows.end(), dist.begin(), dist.end());
    write_checks(o, "filter_check", rows);
    return print_check_summary(rows) ? kExitOk : kExitAssert;
}

int cmd_variance_sweep(const Options& o, VarianceSweepConfig& cfg, ParamTable& t) {
    apply_overrides(t, o.overrides);
    if (!o.p.empty()) cfg.p = o.p;
    write_config(o, "variance-sweep", t.to_json());

    const VarianceSweep sweep = run_variance_sweep(cfg, o.seed, worker_count(o.jobs));
    const fs::path dir(o.out);
    if (o.format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : sweep.rows) j.push_back(to_json(r));
        open_out(dir / "variance_sweep.json") << j.dump(2) << '\n';
    } else {
        auto out = open_out(dir / "variance_sweep.csv");
        out << kVarianceCsvHeader << '\n';
        for (const auto& r : sweep.rows) write_csv_row(r, out);
    }
    std::cout << std::left << std::setw(8) << "p" << std::setw(16) << "mc_variance" << std::setw(16) << "std_error"
              << "bound\n"
              << std::scientific << std::setprecision(4);
    for (const auto& r : sweep.rows)
        std::cout << std::setw(8) << std::defaultfloat << r.p << std::scientific << std::setw(16) << r.mc_variance
                  << std::setw(16) << r.mc_std_error << r.bound_first_order << '\n';
    std::cout << std::defaultfloat;
    if (!o.check) return kExitOk;
    return print_check_summary(variance_sweep_checks(sweep.rows)) ? kExitOk : kExitAssert;
}

int cmd_train_source(const Options& o, SourceLocConfig& cfg, ParamTable& t) {
    apply_overrides(t, o.overrides);
    cfg.seed = o.seed;
    if (o.p.size() > 1) throw InvalidConfig("--p takes one training probability here");
    if (!o.p.empty()) cfg.train_p = o.p.front();
    cfg.validate();
    write_config(o, "train-source", t.to_json());

    SourceDatasetProvider provider;
    if (const char* dir = std::getenv("SGNN_LAB_DATA_DIR"); dir && *dir) provider = cached_source_provider(dir);
    const auto runs = parallel_map(cfg.seeds, worker_count(o.jobs), [&](std::size_t i) {
        if (!provider) return run_source_seed(cfg, i);
        const SourceLocDataset ds = provider(cfg, i);
        return run_source_seed(cfg, i, &ds);
    });

    std::vector<ResultRow> rows;
    const fs::path dir(o.out);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& run = runs[i];
        rows.insert(rows.end(), run.rows.begin(), run.rows.end());
        const std::string seed = "seed" + std::to_string(cfg.seed + i);
        write_checkpoint(dir / "checkpoints" / ("gnn_" + seed + ".ckpt"), run.gnn, ShiftKind::NormalizedAdjacency);
        write_trace(dir / "traces" / ("gnn_" + seed + ".csv"), run.gnn_trace);
        for (std::size_t k = 0; k < run.sgnn.size(); ++k) {
            const std::string tag = "sgnn_" + seed + "_p" + fmt_p(run.sgnn[k].first);
            write_checkpoint(dir / "checkpoints" / (tag + ".ckpt"), run.sgnn[k].second, ShiftKind::NormalizedAdjacency);
            write_trace(dir / "traces" / (tag + ".csv"), run.sgnn_traces[k]);
        }
    }
    write_rows(o, "results", rows);
    std::cout << "test accuracy over " << cfg.seeds << " seeds (chance " << 1.0 / static_cast<double>(cfg.communities)
              << ")\n";
    print_summary_table(rows, "test_accuracy", {"sgnn", "gnn"});
    if (!o.check) return kExitOk;

    std::vector<CheckRow> checks;
    for (double p : distinct_p(rows, "test_accuracy")) {
        if (p == 1.0) continue;
        checks.push_back(check_le("sgnn_at_least_gnn", "p=" + fmt_p(p), summarize(rows, p, "gnn", "test_accuracy").mean,
                                  summarize(rows, p, "sgnn", "test_accuracy").mean));
    }
    return print_check_summary(checks) ? kExitOk : kExitAssert;
}

int cmd_train_flock(const Options& o, FlockingConfig& cfg, ParamTable& t) {
    apply_overrides(t, o.overrides);
    cfg.seed = o.seed;
    if (o.p.size() > 1) throw InvalidConfig("--p takes one training probability here");
    if (!o.p.empty()) cfg.train_p = o.p.front();
    cfg.validate();
    write_config(o, "train-flock", t.to_json());

    const auto runs = parallel_map(cfg.seeds, worker_count(o.jobs), [&](std::size_t i) { return run_flocking_seed(cfg, i); });
    std::vector<ResultRow> rows;
    const fs::path dir(o.out);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& run = runs[i];
        rows.insert(rows.end(), run.rows.begin(), run.rows.end());
        const std::string seed = "seed" + std::to_string(cfg.seed + i);
        const std::string sgnn_tag = "sgnn_" + seed + "_p" + fmt_p(cfg.train_p);
        write_checkpoint(dir / "checkpoints" / (sgnn_tag + ".ckpt"), run.sgnn, ShiftKind::NormalizedAdjacency);
        write_checkpoint(dir / "checkpoints" / ("gnn_" + seed + ".ckpt"), run.gnn, ShiftKind::NormalizedAdjacency);
        write_trace(dir / "traces" / (sgnn_tag + ".csv"), run.sgnn_trace);
        write_trace(dir / "traces" / ("gnn_" + seed + ".csv"), run.gnn_trace);
    }
    write_rows(o, "results", rows);
    std::cout << "closed-loop velocity variance cost over " << cfg.seeds << " seeds\n";
    print_summary_table(rows, "velocity_variance_cost", {"sgnn", "gnn", "zero", "expert"});
    if (!o.check) return kExitOk;

    const std::string metric = "velocity_variance_cost";
    std::vector<CheckRow> checks;
    for (double p : distinct_p(rows, metric)) {
        const double zero = summarize(rows, p, "zero", metric).mean;
        checks.push_back(check_le("sgnn_below_zero_policy", "p=" + fmt_p(p), summarize(rows, p, "sgnn", metric).mean, zero));
        checks.push_back(check_le("gnn_below_zero_policy", "p=" + fmt_p(p), summarize(rows, p, "gnn", metric).mean, zero));
        if (p == cfg.train_p)
            checks.push_back(check_le("sgnn_at_most_gnn", "p=" + fmt_p(p), summarize(rows, p, "sgnn", metric).mean,
                                      summarize(rows, p, "gnn", metric).mean));
    }
    return print_check_summary(checks) ? kExitOk : kExitAssert;
}

int cmd_convergence(const Options& o, ConvergenceConfig& cfg, ParamTable& t) {
    apply_overrides(t, o.overrides);
    cfg.task.seed = o.seed;
    if (!o.horizons.empty()) cfg.horizons = o.horizons;
    if (!o.p.empty()) cfg.p = o.p;
    cfg.validate();
    if (o.check && cfg.horizons.size() < 2) throw InvalidConfig("--assert needs at least two horizons");
    write_config(o, "convergence", t.to_json());

    SourceDatasetProvider provider;
    if (const char* dir = std::getenv("SGNN_LAB_DATA_DIR"); dir && *dir) provider = cached_source_provider(dir);
    std::vector<TrainTrace> traces;
    const auto rows = run_convergence(cfg, worker_count(o.jobs), &traces, provider);
    const fs::path dir(o.out);
    for (std::size_t r = 0; r < traces.size(); ++r) {
        const ConvergenceRunId id = convergence_run_id(cfg, r);
        write_trace(dir / "traces" /
                        ("sgnn_seed" + std::to_string(cfg.task.seed + id.seed_index) + "_p" + fmt_p(id.p) + "_T" +
                         std::to_string(id.horizon) + ".csv"),
                    traces[r]);
    }
    write_rows(o, "results", rows);

    std::cout << "running-min squared gradient norm over " << cfg.seeds << " seeds\n";
    std::vector<CheckRow> checks;
    for (double p : cfg.p) {
        std::vector<double> means;
        for (double h : cfg.horizons) {
            const std::string method = "sgnn_T" + std::to_string(static_cast<std::size_t>(h));
            const Summary s = summarize(rows, p, method, "min_grad_norm_sq");
            const Summary c = summarize(rows, p, method, "final_cost");
            means.push_back(s.mean);
            std::cout << "  p=" << std::setw(6) << std::left << p << "T=" << std::setw(8) << static_cast<std::size_t>(h)
                      << std::scientific << std::setprecision(4) << s.mean << " +- " << s.std << "  final cost "
                      << c.mean << std::defaultfloat << '\n';
        }
        if (means.size() < 2) continue;
        const double ratio = means.back() / means.front();
        std::cout << "  p=" << p << " ratio T=" << static_cast<std::size_t>(cfg.horizons.back()) << " / T="
                  << static_cast<std::size_t>(cfg.horizons.front()) << ": " << ratio << '\n';
        checks.push_back(check_le("min_grad_ratio", "p=" + fmt_p(p), ratio, 0.7));
    }
    if (!o.check) return kExitOk;
    return print_check_summary(checks) ? kExitOk : kExitAssert;
}

int cmd_grad_check(const Options& o) {
    std::size_t count = 20;
    ParamTable t;
    t.add("count", &count, "random configurations checked");
    apply_overrides(t, o.overrides);
    write_config(o, "grad-check", t.to_json());
    const auto rows = grad_check_battery(count, Rng(o.seed, kStreamGrad));
    write_checks(o, "grad_check", rows);
    return print_check_summary(rows) ? kExitOk : kExitAssert;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic graph neural networks: oracle checks and desk-scale experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    app.add_option("--seed", o.seed, "master seed; every output is a function of it")->capture_default_str();
    app.add_option("--out", o.out, "output directory")->capture_default_str();
    app.add_option("--format", o.format, "report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    app.add_option("--jobs", o.jobs, "worker threads for seeds and Monte-Carlo (0: all cores)")->capture_default_str();
    app.add_flag("--assert", o.check, "exit 1 when the subcommand's claim does not hold");

    VarianceSweepConfig sweep_cfg;
    SourceLocConfig source_cfg;
    FlockingConfig flock_cfg;
    ConvergenceConfig conv_cfg;
    ParamTable sweep_params = sweep_cfg.params();
    ParamTable source_params = source_cfg.params();
    ParamTable flock_params = flock_cfg.params();
    ParamTable conv_params = conv_cfg.params();

    auto add_overrides = [&](CLI::App* sub, const std::string& help) {
        sub->add_option("overrides", o.overrides, "key=value parameter overrides");
        sub->footer("Parameters (key=default):\n" + help);
    };

    auto* lemma = app.add_subcommand("lemma-check", "expected shift square vs enumeration; nonlinearity variance");
    lemma->add_option("--kind", o.kinds, "shift kinds: adjacency, laplacian, normalized_adjacency")
        ->delimiter(',')->allow_extra_args(false)
        ->capture_default_str();
    lemma->add_option("--max-edges", o.max_edges, "largest graph enumerated (at most 20)")->capture_default_str();
    add_overrides(lemma, "  samples=100000  draws per distribution for the nonlinearity check\n");

    auto* filter = app.add_subcommand("filter-check", "filter variance bound vs enumeration; node-local evaluation");
    add_overrides(filter, "  cases=100  random message-passing cases\n  cg_samples=200  random points per C_g estimate\n");

    auto* sweep = app.add_subcommand("variance-sweep", "Monte-Carlo SGNN output variance and its bound over p");
    sweep->add_option("--p", o.p, "p grid (comma-separated)")->delimiter(',')->allow_extra_args(false);
    add_overrides(sweep, sweep_params.help());

    auto* source = app.add_subcommand("train-source", "source localization: SGNN vs GNN accuracy under RES");
    source->add_option("--p", o.p, "training link probability of the SGNN");
    add_overrides(source, source_params.help());

    auto* flock = app.add_subcommand("train-flock", "flocking by imitation: closed-loop velocity variance under RES");
    flock->add_option("--p", o.p, "training link probability of the SGNN");
    add_overrides(flock, flock_params.help());

    auto* conv = app.add_subcommand("convergence", "running-min squared gradient norm of SGD at several horizons");
    conv->add_option("--T", o.horizons, "horizons (comma-separated)")->delimiter(',')->allow_extra_args(false);
    conv->add_option("--p", o.p, "training link probabilities (comma-separated)")->delimiter(',')->allow_extra_args(false);
    add_overrides(conv, conv_params.help());

    auto* grad = app.add_subcommand("grad-check", "backward pass vs central finite differences");
    add_overrides(grad, "  count=20  random configurations\n");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    const auto start = std::chrono::steady_clock::now();
    int code = kExitOk;
    try {
        if (*lemma) code = cmd_lemma_check(o);
        else if (*filter) code = cmd_filter_check(o);
        else if (*sweep) code = cmd_variance_sweep(o, sweep_cfg, sweep_params);
        else if (*source) code = cmd_train_source(o, source_cfg, source_params);
        else if (*flock) code = cmd_train_flock(o, flock_cfg, flock_params);
        else if (*conv) code = cmd_convergence(o, conv_cfg, conv_params);
        else if (*grad) code = cmd_grad_check(o);
    } catch (const InvalidConfig& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kExitConfig;
    } catch (const SizeGuard& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (code == kExitOk ? "ok" : "assertion failed") << " in " << std::fixed << std::setprecision(1) << secs
              << " s, outputs in " << o.out << '\n';
    return code;
}

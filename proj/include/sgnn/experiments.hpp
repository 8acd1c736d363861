#ifndef SGNN_EXPERIMENTS_HPP
#define SGNN_EXPERIMENTS_HPP

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sgnn/autograd_train.hpp"
#include "sgnn/errors.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/sgnn_model.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

// ---------------------------------------------------------------------------
// Parameter overrides

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::SGD;
    throw InvalidConfig("unknown optimizer '" + std::string(s) + "'");
}

inline std::string_view to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::Constant: return "constant";
        case ScheduleKind::Theorem2: return "theorem2";
        case ScheduleKind::InvSqrt: return "inv_sqrt";
    }
    return "unknown";
}

inline ScheduleKind parse_schedule(std::string_view s) {
    if (s == "constant") return ScheduleKind::Constant;
    if (s == "theorem2") return ScheduleKind::Theorem2;
    if (s == "inv_sqrt") return ScheduleKind::InvSqrt;
    throw InvalidConfig("unknown schedule '" + std::string(s) + "'");
}

/// Named, typed views onto config fields so that `key=value` strings can
/// update them and the current values can be listed.
class ParamTable {
public:
    using Target = std::variant<std::size_t*, double*, std::vector<double>*, Nonlinearity*,
                                OptimizerKind*, ScheduleKind*>;

    void add(std::string name, Target target, std::string help) {
        entries_.push_back({std::move(name), target, std::move(help)});
    }

    /// Apply "key=value"; unknown keys and malformed values throw InvalidConfig.
    void apply(std::string_view assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos || eq == 0)
            throw InvalidConfig("override '" + std::string(assignment) + "' is not key=value");
        set(assignment.substr(0, eq), assignment.substr(eq + 1));
    }

    void set(std::string_view key, std::string_view value) {
        for (auto& e : entries_) {
            if (e.name != key) continue;
            std::visit([&](auto* field) { assign(*field, key, value); }, e.target);
            return;
        }
        throw InvalidConfig("unknown parameter '" + std::string(key) + "'");
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& e : entries_) j[e.name] = std::visit([](auto* f) { return render(*f); }, e.target);
        return j;
    }

    /// One "name  default  help" line per parameter.
    [[nodiscard]] std::string help() const {
        std::ostringstream out;
        const auto current = to_json();
        for (const auto& e : entries_) out << "  " << e.name << "=" << current[e.name].dump() << "  " << e.help << '\n';
        return out.str();
    }

private:
    struct Entry {
        std::string name;
        Target target;
        std::string help;
    };

    static double parse_double(std::string_view key, std::string_view v) {
        double out = 0.0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out))
            throw InvalidConfig("parameter '" + std::string(key) + "': '" + std::string(v) + "' is not a number");
        return out;
    }

    template <class T>
    static T parse_unsigned(std::string_view key, std::string_view v) {
        T out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size())
            throw InvalidConfig("parameter '" + std::string(key) + "': '" + std::string(v) +
                                "' is not a non-negative integer");
        return out;
    }

    static void assign(std::size_t& f, std::string_view k, std::string_view v) { f = parse_unsigned<std::size_t>(k, v); }
    static void assign(double& f, std::string_view k, std::string_view v) { f = parse_double(k, v); }
    static void assign(std::vector<double>& f, std::string_view k, std::string_view v) {
        std::vector<double> out;
        std::size_t pos = 0;
        while (pos <= v.size()) {
            const auto comma = std::min(v.find(',', pos), v.size());
            out.push_back(parse_double(k, v.substr(pos, comma - pos)));
            pos = comma + 1;
        }
        f = std::move(out);
    }
    static void assign(Nonlinearity& f, std::string_view, std::string_view v) {
        try {
            f = parse_nonlinearity(v);
        } catch (const Error& e) {
            throw InvalidConfig(e.what());
        }
    }
    static void assign(OptimizerKind& f, std::string_view, std::string_view v) { f = parse_optimizer(v); }
    static void assign(ScheduleKind& f, std::string_view, std::string_view v) { f = parse_schedule(v); }

    static nlohmann::ordered_json render(std::size_t v) { return v; }
    static nlohmann::ordered_json render(double v) { return v; }
    static nlohmann::ordered_json render(const std::vector<double>& v) { return v; }
    static nlohmann::ordered_json render(Nonlinearity v) { return std::string(to_string(v)); }
    static nlohmann::ordered_json render(OptimizerKind v) { return std::string(to_string(v)); }
    static nlohmann::ordered_json render(ScheduleKind v) { return std::string(to_string(v)); }

    std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Shared plumbing

/// Run fn(i) for i in [0, n) on up to `jobs` threads. Results land in index
/// order, so output does not depend on scheduling. The first exception (by
/// index) is rethrown.
template <class Fn>
auto parallel_map(std::size_t n, std::size_t jobs, Fn&& fn) -> std::vector<decltype(fn(std::size_t{0}))> {
    using R = decltype(fn(std::size_t{0}));
    std::vector<std::optional<R>> out(n);
    std::vector<std::exception_ptr> errors(n);
    std::size_t next = 0;
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i = 0;
            {
                std::lock_guard lock(mu);
                if (next == n) return;
                i = next++;
            }
            try {
                out[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> result;
    result.reserve(n);
    for (auto& r : out) result.push_back(std::move(*r));
    return result;
}

/// One tidy result: (p, method, seed, metric, value).
struct ResultRow {
    double p = 1.0;
    std::string method;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
};

inline void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
    out << "p,method,seed,metric,value\n";
    out.precision(17);
    for (const auto& r : rows) out << r.p << ',' << r.method << ',' << r.seed << ',' << r.metric << ',' << r.value << '\n';
}

inline nlohmann::ordered_json results_to_json(const std::vector<ResultRow>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        j.push_back({{"p", r.p}, {"method", r.method}, {"seed", r.seed}, {"metric", r.metric}, {"value", r.value}});
    return j;
}

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
    std::size_t count = 0;
};

/// Mean and spread over seeds of the rows matching (p, method, metric).
inline Summary summarize(const std::vector<ResultRow>& rows, double p, std::string_view method,
                         std::string_view metric) {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.p == p && r.method == method && r.metric == metric) v.push_back(r.value);
    Summary s;
    s.count = v.size();
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

inline constexpr std::uint64_t kStreamExperiment = 0x45585052;

// ---------------------------------------------------------------------------
// Source localization

struct SourceLocConfig {
    std::size_t nodes = 20;
    std::size_t communities = 4;
    double p_intra = 0.8;
    double p_inter = 0.2;
    std::size_t train_size = 2000;
    std::size_t val_size = 400;
    std::size_t test_size = 400;
    std::size_t tau_max = 40;
    double noise_rel = 0.01;  // noise sigma as a fraction of ||delta|| = 1
    std::size_t filters = 32;
    std::size_t order = 10;
    Nonlinearity nonlinearity = Nonlinearity::ReLU;
    std::size_t iterations = 2000;
    std::size_t batch_size = 100;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    ScheduleKind schedule = ScheduleKind::Constant;
    double train_p = 0.7;
    std::vector<double> test_p{0.3, 0.5, 0.7, 0.85, 0.9, 0.95, 1.0};
    std::size_t matched = 0;  // 1: train a separate SGNN at every test p
    std::size_t seeds = 5;
    std::uint64_t seed = 1;

    ParamTable params() {
        ParamTable t;
        t.add("nodes", &nodes, "graph size N");
        t.add("communities", &communities, "number of SBM communities C (must divide N)");
        t.add("p_intra", &p_intra, "edge probability inside a community");
        t.add("p_inter", &p_inter, "edge probability across communities");
        t.add("train_size", &train_size, "training samples");
        t.add("val_size", &val_size, "validation samples");
        t.add("test_size", &test_size, "test samples");
        t.add("tau_max", &tau_max, "diffusion time drawn uniformly from 0..tau_max");
        t.add("noise_rel", &noise_rel, "noise std relative to ||delta||");
        t.add("filters", &filters, "parallel filters (output features)");
        t.add("order", &order, "filter order K");
        t.add("nonlinearity", &nonlinearity, "relu | abs | tanh | identity");
        t.add("iterations", &iterations, "training iterations T");
        t.add("batch_size", &batch_size, "mini-batch size");
        t.add("lr", &lr, "step size (initial step for inv_sqrt)");
        t.add("optimizer", &optimizer, "adam | sgd");
        t.add("schedule", &schedule, "constant | theorem2 | inv_sqrt");
        t.add("train_p", &train_p, "link probability used to train the SGNN");
        t.add("test_p", &test_p, "comma-separated test link probabilities");
        t.add("matched", &matched, "1 trains one SGNN per test p instead of one at train_p");
        t.add("seeds", &seeds, "independent graph/data/init draws");
        return t;
    }

    void validate() const {
        if (matched > 1) throw InvalidConfig("source localization: matched must be 0 or 1");
        if (nodes < 2 || communities < 2 || nodes % communities != 0)
            throw InvalidConfig("source localization: communities must be >= 2 and divide nodes");
        check_probability(p_intra, "p_intra");
        check_probability(p_inter, "p_inter");
        check_probability(train_p, "train_p");
        for (double p : test_p) check_probability(p, "test_p");
        if (train_size < 1 || test_size < 1) throw InvalidConfig("source localization: empty split");
        if (filters < 1 || seeds < 1 || iterations < 1 || batch_size < 1)
            throw InvalidConfig("source localization: filters, seeds, iterations and batch_size must be >= 1");
        if (!(noise_rel >= 0.0)) throw InvalidConfig("source localization: noise_rel must be >= 0");
        if (!(lr >= 0.0)) throw InvalidConfig("source localization: lr must be >= 0");
    }

    [[nodiscard]] SgnnConfig model(std::size_t readout_node) const {
        return {.layers = 1,
                .features = filters,
                .order = order,
                .nonlinearity = nonlinearity,
                .in_features = 1,
                .out_features = filters,
                .readout = Readout::NodeSelectLinear,
                .readout_outputs = communities,
                .readout_node = readout_node};
    }

    [[nodiscard]] TrainConfig training(double p, std::uint64_t train_seed) const {
        TrainConfig t;
        t.iterations = iterations;
        t.batch_size = batch_size;
        t.lr.kind = schedule;
        t.lr.alpha = lr;
        t.optimizer.kind = optimizer;
        t.p = p;
        t.seed = train_seed;
        t.loss = LossKind::CrossEntropy;
        return t;
    }
};

struct SourceLocDataset {
    std::shared_ptr<const ShiftOperator> base;  // normalized adjacency
    std::vector<std::size_t> sources;           // source node of each community
    std::size_t tau_max = 0;
    double noise_sigma = 0.0;
    std::vector<Example> train, val, test;
};

/// Lowest node index of each contiguous community.
inline std::vector<std::size_t> community_sources(std::size_t nodes, std::size_t communities) {
    std::vector<std::size_t> s(communities);
    for (std::size_t c = 0; c < communities; ++c) s[c] = c * (nodes / communities);
    return s;
}

/// x = S^tau delta_c + n with tau uniform on 0..tau_max. Each split holds
/// floor or ceil of size/C samples per label, in shuffled order.
inline SourceLocDataset gen_source_dataset(std::shared_ptr<const ShiftOperator> base,
                                           std::vector<std::size_t> sources, std::array<std::size_t, 3> sizes,
                                           std::size_t tau_max, double noise_sigma, const Rng& rng) {
    if (!base) throw InvalidInput("gen_source_dataset: missing graph");
    if (sources.empty()) throw InvalidConfig("gen_source_dataset: no sources");
    for (std::size_t s : sources)
        if (s >= base->n()) throw InvalidConfig("gen_source_dataset: source node outside the graph");
    if (!(noise_sigma >= 0.0)) throw InvalidConfig("gen_source_dataset: negative noise");

    const auto n = static_cast<Eigen::Index>(base->n());
    // diffused[c][tau] = S^tau delta_c
    std::vector<std::vector<Vector>> diffused(sources.size());
    for (std::size_t c = 0; c < sources.size(); ++c) {
        Vector x = Vector::Unit(n, static_cast<Eigen::Index>(sources[c]));
        diffused[c].reserve(tau_max + 1);
        for (std::size_t t = 0; t <= tau_max; ++t) {
            diffused[c].push_back(x);
            x = base->mat() * x;
        }
    }

    SourceLocDataset ds;
    ds.base = base;
    ds.sources = sources;
    ds.tau_max = tau_max;
    ds.noise_sigma = noise_sigma;
    std::vector<Example>* splits[] = {&ds.train, &ds.val, &ds.test};
    for (std::size_t s = 0; s < 3; ++s) {
        Rng r = rng.split(s);
        std::vector<int> labels(sizes[s]);
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % sources.size());
        for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[r.below(i)]);
        auto& out = *splits[s];
        out.reserve(labels.size());
        for (int label : labels) {
            const auto tau = static_cast<std::size_t>(r.below(tau_max + 1));
            Example e;
            e.x = diffused[static_cast<std::size_t>(label)][tau];
            if (noise_sigma > 0.0)
                for (auto& v : e.x.reshaped()) v += r.normal(0.0, noise_sigma);
            e.label = label;
            out.push_back(std::move(e));
        }
    }
    return ds;
}

/// Highest-degree node, lowest index on ties.
inline std::size_t hub_node(const ShiftOperator& g) {
    const auto d = g.degrees();
    return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

/// Classification accuracy with a fresh realization set per sample, drawn from rng.split(sample).
inline double accuracy_under_res(const FilterTensor& h, const std::shared_ptr<const ShiftOperator>& base, double p,
                                 std::span<const Example> data, const Rng& rng) {
    if (data.empty()) throw InvalidInput("accuracy_under_res: empty data");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const RealizationSet reals = sample_architecture(base, p, h.config(), rng.split(i));
        const Matrix logits = forward(h, reals, FeatureBatch{data[i].x}).front();
        Eigen::Index best = 0;
        logits.col(0).maxCoeff(&best);
        hits += static_cast<int>(best) == data[i].label ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Several models scored on the same realization draws.
inline std::vector<double> accuracy_under_res(const std::vector<const FilterTensor*>& models,
                                              const std::shared_ptr<const ShiftOperator>& base, double p,
                                              std::span<const Example> data, const Rng& rng) {
    std::vector<double> out;
    for (const FilterTensor* h : models) out.push_back(accuracy_under_res(*h, base, p, data, rng));
    return out;
}

/// Graph and data for run `index` of a source-localization experiment.
inline SourceLocDataset source_run_dataset(const SourceLocConfig& cfg, std::size_t index) {
    const Rng run = Rng(cfg.seed, kStreamExperiment).split(index);
    Rng graph_rng = run.split(0);
    auto adj = build_sbm(cfg.nodes, cfg.communities, cfg.p_intra, cfg.p_inter, graph_rng);
    auto base = std::make_shared<const ShiftOperator>(to_shift(adj, ShiftKind::NormalizedAdjacency));
    return gen_source_dataset(base, community_sources(cfg.nodes, cfg.communities),
                              {cfg.train_size, cfg.val_size, cfg.test_size}, cfg.tau_max, cfg.noise_rel,
                              run.split(1));
}

struct SourceRun {
    std::vector<ResultRow> rows;
    std::vector<std::pair<double, FilterTensor>> sgnn;  // (training p, model)
    std::vector<TrainTrace> sgnn_traces;                // aligned with sgnn
    FilterTensor gnn;
    TrainTrace gnn_trace;
};

/// Source of the graph and data for run `index`; the default generates them.
using SourceDatasetProvider = std::function<SourceLocDataset(const SourceLocConfig&, std::size_t)>;

/// One seed: train the SGNN at train_p (or at every test p when matched) and
/// the GNN at p = 1 from the same initialization and batch order, then test
/// under RES at each test p. `dataset` overrides the generated data (used for
/// the on-disk cache).
inline SourceRun run_source_seed(const SourceLocConfig& cfg, std::size_t index,
                                 const SourceLocDataset* dataset = nullptr) {
    cfg.validate();
    const Rng run = Rng(cfg.seed, kStreamExperiment).split(index);
    const SourceLocDataset ds = dataset ? *dataset : source_run_dataset(cfg, index);
    const SgnnConfig model = cfg.model(hub_node(*ds.base));
    Rng init_rng = run.split(2);
    const FilterTensor h0 = init_tensor(model, init_rng, 1.0 / std::sqrt(static_cast<double>(cfg.order + 1)));
    const std::uint64_t train_seed = run.split(3).next_u64();

    SourceRun out;
    out.gnn_trace = train(h0, ds.base, ds.train, cfg.training(1.0, train_seed));
    out.gnn = out.gnn_trace.final_tensor;
    auto sgnn_for = [&](double p) -> const FilterTensor& {
        for (const auto& [q, h] : out.sgnn)
            if (q == p) return h;
        // p = 1 training is the GNN itself
        out.sgnn_traces.push_back(p == 1.0 ? out.gnn_trace : train(h0, ds.base, ds.train, cfg.training(p, train_seed)));
        out.sgnn.emplace_back(p, out.sgnn_traces.back().final_tensor);
        return out.sgnn.back().second;
    };
    if (!cfg.matched) sgnn_for(cfg.train_p);

    const std::uint64_t seed_label = cfg.seed + index;
    const Rng eval = run.split(4);
    for (std::size_t j = 0; j < cfg.test_p.size(); ++j) {
        const double p = cfg.test_p[j];
        const FilterTensor& sgnn = sgnn_for(cfg.matched ? p : cfg.train_p);
        const auto acc = accuracy_under_res({&sgnn, &out.gnn}, ds.base, p, ds.test, eval.split(j));
        out.rows.push_back({p, "sgnn", seed_label, "test_accuracy", acc[0]});
        out.rows.push_back({p, "gnn", seed_label, "test_accuracy", acc[1]});
    }
    if (!ds.val.empty() && !cfg.matched) {
        const auto acc = accuracy_under_res({&sgnn_for(cfg.train_p), &out.gnn}, ds.base, cfg.train_p, ds.val, run.split(5));
        out.rows.push_back({cfg.train_p, "sgnn", seed_label, "val_accuracy", acc[0]});
        out.rows.push_back({cfg.train_p, "gnn", seed_label, "val_accuracy", acc[1]});
    }
    return out;
}

/// Accuracy table over the test-p grid for every seed.
inline std::vector<ResultRow> run_source_localization(const SourceLocConfig& cfg, std::size_t jobs = 1,
                                                      const SourceDatasetProvider& provider = {}) {
    cfg.validate();
    auto runs = parallel_map(cfg.seeds, jobs, [&](std::size_t i) {
        if (!provider) return run_source_seed(cfg, i).rows;
        const SourceLocDataset ds = provider(cfg, i);
        return run_source_seed(cfg, i, &ds).rows;
    });
    std::vector<ResultRow> rows;
    for (auto& r : runs) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
}

// Text cache of a generated data set: header line, sources, edge list, then
// one line per sample "split label x_0 ... x_{N-1}" with %.17g values.
inline void save_source_dataset(const SourceLocDataset& ds, std::ostream& out) {
    out.precision(17);
    out << "SGNNDATA 1 " << ds.base->n() << ' ' << ds.tau_max << ' ' << ds.noise_sigma << ' ' << ds.sources.size()
        << '\n';
    for (std::size_t s : ds.sources) out << s << ' ';
    out << '\n';
    // the normalized weights are recomputed from the adjacency on load
    out << ds.base->num_edges() << '\n';
    for (const auto& [i, j] : ds.base->edges()) out << i << ' ' << j << '\n';
    const std::vector<Example>* splits[] = {&ds.train, &ds.val, &ds.test};
    for (std::size_t s = 0; s < 3; ++s) {
        out << splits[s]->size() << '\n';
        for (const auto& e : *splits[s]) {
            out << e.label;
            for (double v : e.x.reshaped()) out << ' ' << v;
            out << '\n';
        }
    }
}

inline SourceLocDataset load_source_dataset(std::istream& in) {
    std::string magic;
    int version = 0;
    std::size_t n = 0, c = 0, m = 0;
    SourceLocDataset ds;
    if (!(in >> magic >> version >> n >> ds.tau_max >> ds.noise_sigma >> c) || magic != "SGNNDATA" || version != 1)
        throw InvalidInput("dataset cache: bad header");
    ds.sources.resize(c);
    for (auto& s : ds.sources)
        if (!(in >> s)) throw InvalidInput("dataset cache: truncated sources");
    if (!(in >> m)) throw InvalidInput("dataset cache: truncated edge count");
    std::vector<Edge> edges(m);
    for (auto& [i, j] : edges)
        if (!(in >> i >> j)) throw InvalidInput("dataset cache: truncated edge list");
    ds.base = std::make_shared<const ShiftOperator>(
        to_shift(ShiftOperator::from_edges(n, std::move(edges)), ShiftKind::NormalizedAdjacency));
    std::vector<Example>* splits[] = {&ds.train, &ds.val, &ds.test};
    for (auto* split : splits) {
        std::size_t count = 0;
        if (!(in >> count)) throw InvalidInput("dataset cache: truncated split");
        split->resize(count);
        for (auto& e : *split) {
            e.x = Matrix(static_cast<Eigen::Index>(n), 1);
            if (!(in >> e.label)) throw InvalidInput("dataset cache: truncated sample");
            for (auto& v : e.x.reshaped())
                if (!(in >> v)) throw InvalidInput("dataset cache: truncated sample");
        }
    }
    return ds;
}

/// Cache file name for run `index`, keyed on every field that shapes the data.
inline std::string source_cache_name(const SourceLocConfig& cfg, std::size_t index) {
    std::ostringstream key;
    key.precision(17);
    key << cfg.nodes << ' ' << cfg.communities << ' ' << cfg.p_intra << ' ' << cfg.p_inter << ' ' << cfg.train_size
        << ' ' << cfg.val_size << ' ' << cfg.test_size << ' ' << cfg.tau_max << ' ' << cfg.noise_rel << ' '
        << cfg.seed << ' ' << index;
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : key.str()) h = (h ^ ch) * 0x100000001b3ULL;
    std::ostringstream name;
    name << "source_" << std::hex << h << ".txt";
    return name.str();
}

/// Provider that reads run data from `dir` when present and writes it there
/// otherwise. Files are written to a temporary name and renamed into place.
inline SourceDatasetProvider cached_source_provider(std::filesystem::path dir) {
    return [dir = std::move(dir)](const SourceLocConfig& cfg, std::size_t index) {
        const auto path = dir / source_cache_name(cfg, index);
        if (std::ifstream in(path); in) return load_source_dataset(in);
        SourceLocDataset ds = source_run_dataset(cfg, index);
        std::filesystem::create_directories(dir);
        const auto tmp = std::filesystem::path(path.string() + ".tmp");
        {
            std::ofstream out(tmp);
            if (!out) throw InvalidInput("dataset cache: cannot write " + tmp.string());
            save_source_dataset(ds, out);
        }
        std::filesystem::rename(tmp, path);
        return ds;
    };
}

// ---------------------------------------------------------------------------
// Robot swarm flocking

struct SwarmState {
    Matrix z;  // N x 2 positions (m)
    Matrix v;  // N x 2 velocities (m/s)
    Matrix u;  // N x 2 accelerations (m/s^2)
    double dt = 0.05;

    [[nodiscard]] std::size_t agents() const { return static_cast<std::size_t>(z.rows()); }

    void validate() const {
        if (z.cols() != 2 || v.cols() != 2 || u.cols() != 2 || z.rows() != v.rows() || z.rows() != u.rows())
            throw InvalidInput("SwarmState: z, v and u must all be N x 2");
        if (!(dt > 0.0)) throw InvalidInput("SwarmState: dt must be positive");
        if (!z.allFinite() || !v.allFinite() || !u.allFinite()) throw InvalidInput("SwarmState: non-finite entries");
    }
};

struct SwarmParams {
    double comm_radius = 3.0;       // communication radius r (m)
    double potential_cutoff = 1.0;  // collision potential active for d < cutoff (m)
    double u_max = 10.0;            // per-axis acceleration limit (m/s^2)
    double dt = 0.05;               // Euler step (s)
    double velocity_guard = 1e3;    // abort once any |v| exceeds this (m/s)
};

inline constexpr double kCoincidentDistance = 1e-6;

/// Mean over agents of ||v_i - mean v||^2.
inline double velocity_variance(const Matrix& v) {
    if (v.rows() == 0) return 0.0;
    const Eigen::RowVectorXd mean = v.colwise().mean();
    return (v.rowwise() - mean).squaredNorm() / static_cast<double>(v.rows());
}

/// u*_i = -sum_j (v_i - v_j) - sum_j grad U(||z_i - z_j||), with
/// U(d) = 1/d^2 + log d^2 for d < cutoff, clipped to +-u_max per axis.
inline Matrix centralized_controller(const SwarmState& s, const SwarmParams& prm = {}) {
    s.validate();
    const auto n = s.z.rows();
    Matrix u(n, 2);
    const Eigen::RowVectorXd vsum = s.v.colwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::RowVector2d ui = -(static_cast<double>(n) * s.v.row(i) - vsum);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const Eigen::RowVector2d d = s.z.row(i) - s.z.row(j);
            const double r = d.norm();
            if (r < kCoincidentDistance) throw DegenerateInput("centralized_controller: coincident agents");
            if (r >= prm.potential_cutoff) continue;
            const double r2 = r * r;
            // -dU/dd * d/r = (2/r^4 - 2/r^2) * d
            ui += (2.0 / (r2 * r2) - 2.0 / r2) * d;
        }
        u.row(i) = ui.cwiseMax(-prm.u_max).cwiseMin(prm.u_max);
    }
    return u;
}

/// Six local features per agent over the links of `comm`:
/// [sum_j (v_i - v_j), sum_j d_ij / ||d_ij||^4, sum_j d_ij / ||d_ij||^2], d_ij = z_i - z_j.
inline Matrix swarm_features(const SwarmState& s, const ShiftOperator& comm) {
    s.validate();
    if (comm.n() != s.agents()) throw InvalidInput("swarm_features: graph size differs from agent count");
    Matrix x = Matrix::Zero(s.z.rows(), 6);
    for (const auto& [a, b] : comm.edges()) {
        const auto i = static_cast<Eigen::Index>(a);
        const auto j = static_cast<Eigen::Index>(b);
        const Eigen::RowVector2d dv = s.v.row(i) - s.v.row(j);
        const Eigen::RowVector2d d = s.z.row(i) - s.z.row(j);
        const double r2 = d.squaredNorm();
        if (std::sqrt(r2) < kCoincidentDistance) throw DegenerateInput("swarm_features: coincident neighbours");
        const Eigen::RowVector2d f4 = d / (r2 * r2);
        const Eigen::RowVector2d f2 = d / r2;
        x.block<1, 2>(i, 0) += dv;
        x.block<1, 2>(j, 0) -= dv;
        x.block<1, 2>(i, 2) += f4;
        x.block<1, 2>(j, 2) -= f4;
        x.block<1, 2>(i, 4) += f2;
        x.block<1, 2>(j, 4) -= f2;
    }
    return x;
}

/// Normalized adjacency of the disc graph; an edgeless graph stays a zero adjacency.
inline std::shared_ptr<const ShiftOperator> swarm_shift(const ShiftOperator& disc) {
    if (disc.num_edges() == 0) return std::make_shared<const ShiftOperator>(disc);
    return std::make_shared<const ShiftOperator>(to_shift(disc, ShiftKind::NormalizedAdjacency));
}

inline std::vector<Point2> positions(const Matrix& z) {
    std::vector<Point2> out(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = {z(i, 0), z(i, 1)};
    return out;
}

/// What a policy sees at one step.
struct SwarmObservation {
    const SwarmState& state;
    const ShiftOperator& comm;                    // disc graph on current positions
    std::shared_ptr<const ShiftOperator> shift;   // its normalized adjacency
    double p;                                     // link survival probability
    Rng rng;                                      // randomness for this step
};

using SwarmPolicy = std::function<Matrix(const SwarmObservation&)>;

inline SwarmPolicy expert_policy(SwarmParams prm = {}) {
    return [prm](const SwarmObservation& o) { return centralized_controller(o.state, prm); };
}

inline SwarmPolicy zero_policy() {
    return [](const SwarmObservation& o) { return Matrix::Zero(o.state.z.rows(), 2).eval(); };
}

/// SGNN policy: features on the disc graph, every filter on its own RES(p) draw, outputs clipped to u_max.
inline SwarmPolicy sgnn_policy(FilterTensor h, SwarmParams prm = {}) {
    return [h = std::move(h), prm](const SwarmObservation& o) {
        const Matrix x = swarm_features(o.state, o.comm);
        const RealizationSet reals = sample_architecture(o.shift, o.p, h.config(), o.rng);
        return forward_single(h, reals, x).cwiseMax(-prm.u_max).cwiseMin(prm.u_max).eval();
    };
}

/// One recorded step: features, the expert action and the shift the model would use.
struct SwarmSample {
    Matrix features;
    Matrix expert;
    std::shared_ptr<const ShiftOperator> shift;
};

struct SwarmRollout {
    std::vector<SwarmState> states;  // states[0] is the initial state
    double cost = 0.0;               // mean velocity variance over states[1..steps]
    std::vector<SwarmSample> samples;
};

/// Closed-loop explicit Euler rollout: z += v dt, v += u dt. With `record`,
/// each step also stores the features and the expert action for imitation.
inline SwarmRollout simulate_swarm(const SwarmPolicy& policy, const SwarmState& init, std::size_t steps, double p,
                                   const Rng& rng, const SwarmParams& prm = {}, bool record = false) {
    if (steps < 1) throw InvalidConfig("simulate_swarm: steps must be >= 1");
    check_probability(p, "simulate_swarm");
    init.validate();
    SwarmRollout out;
    out.states.reserve(steps + 1);
    out.states.push_back(init);
    SwarmState s = init;
    for (std::size_t t = 0; t < steps; ++t) {
        const ShiftOperator comm = build_disc_graph(positions(s.z), prm.comm_radius);
        const auto shift = swarm_shift(comm);
        const SwarmObservation obs{s, comm, shift, p, rng.split(t)};
        if (record) out.samples.push_back({swarm_features(s, comm), centralized_controller(s, prm), shift});
        s.u = policy(obs);
        if (s.u.rows() != s.z.rows() || s.u.cols() != 2) throw InvalidInput("simulate_swarm: policy output is not N x 2");
        s.z += s.v * s.dt;
        s.v += s.u * s.dt;
        if (!s.v.allFinite() || s.v.cwiseAbs().maxCoeff() > prm.velocity_guard)
            throw Divergence("simulate_swarm: velocity exceeded the guard at step " + std::to_string(t));
        out.cost += velocity_variance(s.v);
        out.states.push_back(s);
    }
    out.cost /= static_cast<double>(steps);
    return out;
}

/// Agents uniform in a disc of radius `spread` with pairwise distance >=
/// min_separation, velocities uniform in +-vel_max per axis.
inline SwarmState random_swarm(std::size_t agents, double spread, double min_separation, double vel_max, double dt,
                               Rng& rng) {
    if (agents < 1 || !(spread > 0.0) || !(min_separation >= 0.0) || !(vel_max >= 0.0))
        throw InvalidConfig("random_swarm: invalid parameters");
    SwarmState s;
    s.dt = dt;
    s.z = Matrix(static_cast<Eigen::Index>(agents), 2);
    s.v = Matrix(static_cast<Eigen::Index>(agents), 2);
    s.u = Matrix::Zero(static_cast<Eigen::Index>(agents), 2);
    for (Eigen::Index i = 0; i < s.z.rows(); ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw InvalidConfig("random_swarm: cannot place agents at this density");
            const double r = spread * std::sqrt(rng.uniform());
            const double a = 2.0 * std::numbers::pi * rng.uniform();
            const Eigen::RowVector2d z(r * std::cos(a), r * std::sin(a));
            bool ok = true;
            for (Eigen::Index j = 0; j < i && ok; ++j) ok = (s.z.row(j) - z).norm() >= min_separation;
            if (ok) {
                s.z.row(i) = z;
                break;
            }
        }
        s.v(i, 0) = rng.uniform(-vel_max, vel_max);
        s.v(i, 1) = rng.uniform(-vel_max, vel_max);
    }
    return s;
}

struct FlockingConfig {
    std::size_t agents = 12;
    double spread = 2.0;          // initial disc radius (m)
    double min_separation = 0.1;  // (m)
    double vel_max = 3.0;         // initial velocities uniform in +-vel_max (m/s)
    double comm_radius = 3.0;
    double potential_cutoff = 1.0;
    double u_max = 10.0;
    double dt = 0.05;
    std::size_t steps = 50;
    std::size_t train_trajectories = 20;
    std::size_t test_trajectories = 10;
    std::size_t filters = 32;
    std::size_t order = 3;
    Nonlinearity nonlinearity = Nonlinearity::Tanh;
    std::size_t epochs = 30;
    std::size_t batch_size = 20;
    double lr = 3e-4;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double train_p = 0.7;
    std::vector<double> test_p{0.5, 0.7, 0.9, 1.0};
    std::size_t seeds = 5;
    std::uint64_t seed = 1;

    ParamTable params() {
        ParamTable t;
        t.add("agents", &agents, "swarm size N");
        t.add("spread", &spread, "initial disc radius (m)");
        t.add("min_separation", &min_separation, "initial minimum pairwise distance (m)");
        t.add("vel_max", &vel_max, "initial velocity range +-vel_max (m/s)");
        t.add("comm_radius", &comm_radius, "communication radius (m)");
        t.add("potential_cutoff", &potential_cutoff, "collision potential range (m)");
        t.add("u_max", &u_max, "per-axis acceleration limit (m/s^2)");
        t.add("dt", &dt, "integration step (s)");
        t.add("steps", &steps, "steps per trajectory");
        t.add("train_trajectories", &train_trajectories, "expert rollouts for imitation");
        t.add("test_trajectories", &test_trajectories, "closed-loop test rollouts per test p");
        t.add("filters", &filters, "parallel filters (hidden features)");
        t.add("order", &order, "filter order K");
        t.add("nonlinearity", &nonlinearity, "relu | abs | tanh | identity");
        t.add("epochs", &epochs, "passes over the imitation data");
        t.add("batch_size", &batch_size, "mini-batch size");
        t.add("lr", &lr, "step size");
        t.add("optimizer", &optimizer, "adam | sgd");
        t.add("train_p", &train_p, "link probability used to train the SGNN");
        t.add("test_p", &test_p, "comma-separated test link probabilities");
        t.add("seeds", &seeds, "independent data/init draws");
        return t;
    }

    void validate() const {
        if (agents < 2) throw InvalidConfig("flocking: need at least two agents");
        if (!(spread > 0.0 && comm_radius > 0.0 && potential_cutoff > 0.0 && u_max > 0.0 && dt > 0.0))
            throw InvalidConfig("flocking: radii, u_max and dt must be positive");
        if (steps < 1 || train_trajectories < 1 || test_trajectories < 1 || filters < 1 || epochs < 1 ||
            batch_size < 1 || seeds < 1)
            throw InvalidConfig("flocking: counts must be >= 1");
        check_probability(train_p, "train_p");
        for (double p : test_p) check_probability(p, "test_p");
        if (!(lr >= 0.0)) throw InvalidConfig("flocking: lr must be >= 0");
    }

    [[nodiscard]] SwarmParams swarm() const { return {comm_radius, potential_cutoff, u_max, dt, 1e3}; }

    [[nodiscard]] SgnnConfig model() const {
        return {.layers = 1,
                .features = filters,
                .order = order,
                .nonlinearity = nonlinearity,
                .in_features = 6,
                .out_features = filters,
                .readout = Readout::NodeLinear,
                .readout_outputs = 2};
    }

    [[nodiscard]] std::size_t iterations() const {
        const std::size_t samples = train_trajectories * steps;
        return std::max<std::size_t>(1, epochs * samples / batch_size);
    }

    [[nodiscard]] TrainConfig training(double p, std::uint64_t train_seed) const {
        TrainConfig t;
        t.iterations = iterations();
        t.batch_size = batch_size;
        t.lr.alpha = lr;
        t.optimizer.kind = optimizer;
        t.p = p;
        t.seed = train_seed;
        t.loss = LossKind::MeanSquared;
        return t;
    }
};

/// Imitation data from expert rollouts: x = features, y = expert action, graph = shift at that step.
inline std::vector<Example> flocking_dataset(const FlockingConfig& cfg, const Rng& rng) {
    const SwarmParams prm = cfg.swarm();
    std::vector<Example> data;
    for (std::size_t t = 0; t < cfg.train_trajectories; ++t) {
        Rng init_rng = rng.split(2 * t);
        const SwarmState init = random_swarm(cfg.agents, cfg.spread, cfg.min_separation, cfg.vel_max, cfg.dt, init_rng);
        const SwarmRollout roll = simulate_swarm(expert_policy(prm), init, cfg.steps, 1.0, rng.split(2 * t + 1), prm, true);
        for (const auto& s : roll.samples) data.push_back({s.features, s.expert, -1, s.shift});
    }
    return data;
}

struct FlockingRun {
    std::vector<ResultRow> rows;
    FilterTensor sgnn;
    FilterTensor gnn;
    TrainTrace sgnn_trace;
    TrainTrace gnn_trace;
};

/// One seed: imitation-train the SGNN at train_p and the GNN at p = 1, then
/// roll both out in closed loop at each test p next to the zero and expert
/// policies, all from the same initial states and realization streams.
inline FlockingRun run_flocking_seed(const FlockingConfig& cfg, std::size_t index) {
    cfg.validate();
    const SwarmParams prm = cfg.swarm();
    const Rng run = Rng(cfg.seed, kStreamExperiment).split(index);
    const std::vector<Example> data = flocking_dataset(cfg, run.split(1));
    Rng init_rng = run.split(2);
    const FilterTensor h0 = init_tensor(cfg.model(), init_rng, 1.0 / std::sqrt(static_cast<double>(cfg.order + 1)));
    const std::uint64_t train_seed = run.split(3).next_u64();

    FlockingRun out;
    out.sgnn_trace = train(h0, nullptr, data, cfg.training(cfg.train_p, train_seed));
    out.gnn_trace = train(h0, nullptr, data, cfg.training(1.0, train_seed));
    out.sgnn = out.sgnn_trace.final_tensor;
    out.gnn = out.gnn_trace.final_tensor;

    std::vector<SwarmState> tests;
    const Rng test_rng = run.split(4);
    for (std::size_t k = 0; k < cfg.test_trajectories; ++k) {
        Rng r = test_rng.split(k);
        tests.push_back(random_swarm(cfg.agents, cfg.spread, cfg.min_separation, cfg.vel_max, cfg.dt, r));
    }
    const std::pair<const char*, SwarmPolicy> policies[] = {{"sgnn", sgnn_policy(out.sgnn, prm)},
                                                           {"gnn", sgnn_policy(out.gnn, prm)},
                                                           {"zero", zero_policy()},
                                                           {"expert", expert_policy(prm)}};
    const std::uint64_t seed_label = cfg.seed + index;
    const Rng eval = run.split(5);
    for (std::size_t j = 0; j < cfg.test_p.size(); ++j) {
        const double p = cfg.test_p[j];
        for (const auto& [name, policy] : policies) {
            double cost = 0.0;
            for (std::size_t k = 0; k < tests.size(); ++k)
                cost += simulate_swarm(policy, tests[k], cfg.steps, p, eval.split(j).split(k), prm).cost;
            out.rows.push_back({p, name, seed_label, "velocity_variance_cost", cost / static_cast<double>(tests.size())});
        }
    }
    return out;
}

/// Closed-loop cost table over the test-p grid for every seed.
inline std::vector<ResultRow> run_flocking(const FlockingConfig& cfg, std::size_t jobs = 1) {
    cfg.validate();
    auto runs = parallel_map(cfg.seeds, jobs, [&](std::size_t i) { return run_flocking_seed(cfg, i).rows; });
    std::vector<ResultRow> rows;
    for (auto& r : runs) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceConfig {
    SourceLocConfig task{};
    std::vector<double> horizons{400, 1600};
    ScheduleKind schedule = ScheduleKind::Theorem2;
    double lr = 1.0;  // Constant step or InvSqrt initial step; theorem2 derives its own
    std::vector<double> p{0.7};
    std::size_t batch_size = 100;
    std::size_t seeds = 5;

    ParamTable params() {
        ParamTable t = task.params();
        t.add("horizons", &horizons, "comma-separated run lengths T");
        t.add("conv_schedule", &schedule, "constant | theorem2 | inv_sqrt");
        t.add("conv_lr", &lr, "SGD step (initial step for inv_sqrt)");
        t.add("conv_p", &p, "comma-separated training link probabilities");
        t.add("conv_batch_size", &batch_size, "mini-batch size");
        t.add("conv_seeds", &seeds, "seeds averaged");
        return t;
    }

    void validate() const {
        task.validate();
        if (p.empty()) throw InvalidConfig("convergence: empty p grid");
        for (double q : p) check_probability(q, "conv_p");
        if (seeds < 1 || horizons.empty() || batch_size < 1) throw InvalidConfig("convergence: empty run");
        for (double t : horizons)
            if (!(t >= 1.0) || t != std::floor(t)) throw InvalidConfig("convergence: horizons must be positive integers");
    }

    [[nodiscard]] std::size_t runs() const { return p.size() * seeds * horizons.size(); }
};

/// Position of flat run r in the (p, seed, horizon) grid, horizon fastest.
struct ConvergenceRunId {
    double p;
    std::size_t seed_index;
    std::size_t horizon;
};

inline ConvergenceRunId convergence_run_id(const ConvergenceConfig& cfg, std::size_t r) {
    const std::size_t h = r % cfg.horizons.size();
    const std::size_t i = (r / cfg.horizons.size()) % cfg.seeds;
    const std::size_t j = r / (cfg.horizons.size() * cfg.seeds);
    return {cfg.p[j], i, static_cast<std::size_t>(cfg.horizons[h])};
}

/// Per training p, seed and horizon T: SGD on the source task for T
/// iterations, recording the final running minimum of ||grad||^2 and the last
/// cost. Seed i uses the same graph, data and initialization at every p and T.
inline std::vector<ResultRow> run_convergence(const ConvergenceConfig& cfg, std::size_t jobs = 1,
                                              std::vector<TrainTrace>* traces = nullptr,
                                              const SourceDatasetProvider& provider = {}) {
    cfg.validate();
    auto traced = parallel_map(cfg.runs(), jobs, [&](std::size_t r) {
        const ConvergenceRunId id = convergence_run_id(cfg, r);
        const Rng run = Rng(cfg.task.seed, kStreamExperiment).split(id.seed_index);
        const SourceLocDataset ds =
            provider ? provider(cfg.task, id.seed_index) : source_run_dataset(cfg.task, id.seed_index);
        Rng init_rng = run.split(2);
        const FilterTensor h0 = init_tensor(cfg.task.model(hub_node(*ds.base)), init_rng,
                                            1.0 / std::sqrt(static_cast<double>(cfg.task.order + 1)));
        TrainConfig tc = cfg.task.training(id.p, run.split(3).next_u64());
        tc.iterations = id.horizon;
        tc.batch_size = cfg.batch_size;
        tc.optimizer.kind = OptimizerKind::SGD;
        tc.lr.kind = cfg.schedule;
        tc.lr.alpha = cfg.lr;
        return train(h0, ds.base, ds.train, tc);
    });
    std::vector<ResultRow> rows;
    for (std::size_t r = 0; r < traced.size(); ++r) {
        const ConvergenceRunId id = convergence_run_id(cfg, r);
        const std::string method = "sgnn_T" + std::to_string(id.horizon);
        const std::uint64_t seed = cfg.task.seed + id.seed_index;
        const auto& tr = traced[r];
        rows.push_back({id.p, method, seed, "min_grad_norm_sq", convergence_metric(tr.grad_norm_sq).back()});
        rows.push_back({id.p, method, seed, "final_cost", tr.cost.back()});
        rows.push_back({id.p, method, seed, "step_size", tr.lr.front()});
    }
    if (traces) *traces = std::move(traced);
    return rows;
}

}  // namespace sgnn

#endif  // SGNN_EXPERIMENTS_HPP

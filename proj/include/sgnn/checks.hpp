#ifndef SGNN_CHECKS_HPP
#define SGNN_CHECKS_HPP

// Oracle batteries shared by the command-line tool and the acceptance runner.
// Every check yields rows of (check, case, value, limit, pass).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgnn/autograd_train.hpp"
#include "sgnn/experiments.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/spectral.hpp"
#include "sgnn/stochastic_filter.hpp"
#include "sgnn/variance_analysis.hpp"
#include "sgnn/verification.hpp"

namespace sgnn {

struct CheckRow {
    std::string check;
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool pass = false;
};

inline CheckRow check_le(std::string check, std::string name, double value, double limit) {
    return {std::move(check), std::move(name), value, limit, value <= limit};
}

inline bool all_pass(const std::vector<CheckRow>& rows) {
    return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
}

inline double worst_margin(const std::vector<CheckRow>& rows) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows) worst = std::max(worst, r.value - r.limit);
    return worst;
}

inline void write_check_csv(const std::vector<CheckRow>& rows, std::ostream& out) {
    out << "check,case,value,limit,pass\n";
    out.precision(17);
    for (const auto& r : rows)
        out << r.check << ',' << r.name << ',' << r.value << ',' << r.limit << ',' << (r.pass ? 1 : 0) << '\n';
}

inline nlohmann::ordered_json checks_to_json(const std::vector<CheckRow>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        j.push_back({{"check", r.check}, {"case", r.name}, {"value", r.value}, {"limit", r.limit}, {"pass", r.pass}});
    return j;
}

inline std::string fmt_p(double p) {
    std::ostringstream s;
    s << p;
    return s.str();
}

// ---------------------------------------------------------------------------
// Expected square of a RES shift against 2^M enumeration

/// Random simple graph on `n` nodes with exactly `m` edges.
inline ShiftOperator random_graph(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<Edge> all;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) all.emplace_back(i, j);
    if (m > all.size()) throw InvalidConfig("random_graph: too many edges");
    for (std::size_t i = 0; i < m; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    all.resize(m);
    return ShiftOperator::from_edges(n, std::move(all));
}

/// K3, P4, star-5, K4 and random graphs, all with at most `max_edges` edges.
inline std::vector<std::pair<std::string, ShiftOperator>> square_check_graphs(std::size_t max_edges, const Rng& rng) {
    std::vector<std::pair<std::string, ShiftOperator>> g{{"K3", verify::complete_graph(3)},
                                                         {"P4", verify::path_graph(4)},
                                                         {"star5", verify::star_graph(5)},
                                                         {"K4", verify::complete_graph(4)}};
    const std::size_t sizes[][2] = {{5, 4}, {5, 7}, {6, 9}, {6, 12}, {7, 10}, {7, 12}};
    for (std::size_t i = 0; i < std::size(sizes); ++i) {
        Rng r = rng.split(i);
        g.emplace_back("random" + std::to_string(i) + "_n" + std::to_string(sizes[i][0]) + "_m" +
                           std::to_string(sizes[i][1]),
                       random_graph(sizes[i][0], sizes[i][1], r));
    }
    std::erase_if(g, [&](const auto& e) { return e.second.num_edges() > max_edges; });
    return g;
}

inline std::vector<CheckRow> expected_square_battery(std::size_t max_edges, const std::vector<ShiftKind>& kinds,
                                            const Rng& rng, double tol = 1e-12) {
    if (max_edges > 20) throw SizeGuard("expected_square_battery: enumeration limited to 20 edges");
    std::vector<CheckRow> rows;
    for (const auto& [name, adj] : square_check_graphs(max_edges, rng)) {
        for (ShiftKind kind : kinds) {
            const ShiftOperator s = to_shift(adj, kind);
            for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
                const double err = max_abs_diff(expected_shift_square(s, p), verify::enumerate_expected_square(s, p));
                rows.push_back(check_le("expected_square", name + "/" + std::string(to_string(kind)) + "/p=" + fmt_p(p),
                                        err, tol));
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Nonlinearity variance

using Sampler = std::function<double(Rng&)>;

/// Twenty input distributions: symmetric, skewed, discrete, heavy-tailed, shifted.
inline std::vector<std::pair<std::string, Sampler>> nonlinearity_distributions() {
    auto laplace = [](Rng& r) {
        const double u = r.uniform() - 0.5;
        return (u < 0 ? 1.0 : -1.0) * std::log(1.0 - 2.0 * std::abs(u));
    };
    return {
        {"normal(0,1)", [](Rng& r) { return r.normal(); }},
        {"normal(1,1)", [](Rng& r) { return r.normal(1.0, 1.0); }},
        {"normal(-1,2)", [](Rng& r) { return r.normal(-1.0, 2.0); }},
        {"normal(3,0.5)", [](Rng& r) { return r.normal(3.0, 0.5); }},
        {"normal(-3,1)", [](Rng& r) { return r.normal(-3.0, 1.0); }},
        {"uniform(-1,1)", [](Rng& r) { return r.uniform(-1.0, 1.0); }},
        {"uniform(0,2)", [](Rng& r) { return r.uniform(0.0, 2.0); }},
        {"uniform(-3,1)", [](Rng& r) { return r.uniform(-3.0, 1.0); }},
        {"uniform(-0.2,5)", [](Rng& r) { return r.uniform(-0.2, 5.0); }},
        {"rademacher", [](Rng& r) { return r.bernoulli(0.5) ? 1.0 : -1.0; }},
        {"bernoulli(0.3)", [](Rng& r) { return r.bernoulli(0.3) ? 1.0 : 0.0; }},
        {"two_point(-2,0.5)", [](Rng& r) { return r.bernoulli(0.5) ? -2.0 : 0.5; }},
        {"exponential(1)", [](Rng& r) { return -std::log(1.0 - r.uniform()); }},
        {"neg_exponential(1)", [](Rng& r) { return std::log(1.0 - r.uniform()); }},
        {"laplace(0,1)", laplace},
        {"laplace(0.5,1)", [laplace](Rng& r) { return 0.5 + laplace(r); }},
        {"mixture(+-2)", [](Rng& r) { return r.normal(r.bernoulli(0.5) ? 2.0 : -2.0, 0.5); }},
        {"mixture(0,4)", [](Rng& r) { return r.bernoulli(0.8) ? r.normal(0.0, 0.3) : r.normal(4.0, 1.0); }},
        {"lognormal", [](Rng& r) { return std::exp(r.normal(0.0, 0.5)); }},
        {"student_like", [](Rng& r) { return r.normal() / std::sqrt(0.05 + r.uniform()); }},
    };
}

/// var[sigma(x)] <= var[x] + 3 se for ReLU and Abs, plus the half-normal case.
inline std::vector<CheckRow> nonlinearity_battery(std::size_t samples, const Rng& rng) {
    std::vector<CheckRow> rows;
    const auto dists = nonlinearity_distributions();
    const Nonlinearity kinds[] = {Nonlinearity::ReLU, Nonlinearity::Abs};
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t d = 0; d < dists.size(); ++d) {
            Rng r = rng.split(k * dists.size() + d);
            const auto v = check_nonlinearity_variance(kinds[k], dists[d].second, samples, r);
            rows.push_back(check_le("nonlinearity_variance",
                                    std::string(to_string(kinds[k])) + "/" + dists[d].first, v.var_out,
                                    v.var_in + 3.0 * v.se_in));
        }
    }
    Rng r = rng.split(1000);
    const auto v = check_nonlinearity_variance(Nonlinearity::ReLU, [](Rng& g) { return g.normal(); }, samples, r);
    rows.push_back(check_le("half_normal", "relu/normal(0,1)", std::abs(v.var_out - (0.5 - 0.5 / std::numbers::pi)),
                            3.0 * v.se_out));
    return rows;
}

// ---------------------------------------------------------------------------
// First-order filter variance bound on small instances

/// Graphs with at most six edges for exact variance enumeration.
inline std::vector<std::pair<std::string, ShiftOperator>> filter_check_graphs(const Rng& rng) {
    std::vector<std::pair<std::string, ShiftOperator>> g{{"K2", verify::complete_graph(2)},
                                                         {"K3", verify::complete_graph(3)},
                                                         {"P4", verify::path_graph(4)},
                                                         {"star4", verify::star_graph(4)},
                                                         {"K4", verify::complete_graph(4)}};
    for (std::size_t i = 0; i < 5; ++i) {
        Rng r = rng.split(i);
        g.emplace_back("random" + std::to_string(i), random_graph(5, 3 + i % 4, r));
    }
    return g;
}

inline std::vector<CheckRow> filter_bound_battery(const Rng& rng, std::size_t cg_samples = 200) {
    std::vector<CheckRow> rows;
    std::size_t case_id = 0;
    for (const auto& [name, adj] : filter_check_graphs(rng.split(0))) {
        for (ShiftKind kind : {ShiftKind::Adjacency, ShiftKind::Laplacian}) {
            const ShiftOperator s = to_shift(adj, kind);
            const FrequencyDomain dom = default_domain(s.mat());
            for (std::size_t order : {1U, 2U}) {
                Rng r = rng.split(1 + case_id++);
                FilterCoeffs h;
                for (std::size_t k = 0; k <= order; ++k) h.taps.push_back(r.uniform(-1.0, 1.0));
                Vector x(static_cast<Eigen::Index>(s.n()));
                for (auto& v : x) v = r.uniform(-1.0, 1.0);
                const AssumptionConstants c = filter_constants(h, dom, cg_samples, r);
                const std::string tag = name + "/" + std::string(to_string(kind)) + "/K=" + std::to_string(order);
                for (double p : {0.9, 0.95, 0.99})
                    rows.push_back(check_le("prop1_bound", tag + "/p=" + fmt_p(p), exact_filter_variance(h, s, p, x),
                                            prop1_bound(h, s, p, x, c)));
                for (double p : {0.0, 1.0})
                    rows.push_back(check_le("zero_variance", tag + "/p=" + fmt_p(p), exact_filter_variance(h, s, p, x), 0.0));
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// SGNN variance sweep

struct VarianceSweepConfig {
    std::size_t nodes = 10;
    std::size_t communities = 2;
    double p_intra = 0.8;
    double p_inter = 0.2;
    ShiftKind kind = ShiftKind::NormalizedAdjacency;
    std::size_t layers = 2;
    std::size_t features = 2;
    std::size_t order = 2;
    Nonlinearity nonlinearity = Nonlinearity::Tanh;
    double init_scale = 0.5;
    std::size_t samples = 20000;
    std::size_t cg_samples = 200;
    std::vector<double> p{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0};

    ParamTable params() {
        ParamTable t;
        t.add("nodes", &nodes, "graph size N");
        t.add("communities", &communities, "SBM communities");
        t.add("p_intra", &p_intra, "edge probability inside a community");
        t.add("p_inter", &p_inter, "edge probability across communities");
        t.add("layers", &layers, "SGNN layers L");
        t.add("features", &features, "hidden features F");
        t.add("order", &order, "filter order K");
        t.add("nonlinearity", &nonlinearity, "relu | abs | tanh | identity");
        t.add("init_scale", &init_scale, "taps uniform in +-init_scale");
        t.add("samples", &samples, "realization sets per p");
        t.add("cg_samples", &cg_samples, "random points for the C_g estimate");
        t.add("p", &p, "comma-separated link probabilities");
        return t;
    }
};

struct VarianceSweep {
    std::vector<VarianceReport> rows;
    std::shared_ptr<const ShiftOperator> base;
    FilterTensor model;
    Vector input;
};

/// Monte-Carlo SGNN output variance next to the architecture bound at every p.
inline VarianceSweep run_variance_sweep(const VarianceSweepConfig& cfg, std::uint64_t seed, std::size_t jobs = 1) {
    if (cfg.samples < 2) throw InvalidConfig("variance sweep: need at least two samples");
    for (double p : cfg.p) check_probability(p, "variance sweep p");
    const Rng root(seed, kStreamExperiment);
    Rng graph_rng = root.split(0);
    VarianceSweep out;
    out.base = std::make_shared<const ShiftOperator>(
        to_shift(build_sbm(cfg.nodes, cfg.communities, cfg.p_intra, cfg.p_inter, graph_rng), cfg.kind));
    const SgnnConfig model{.layers = cfg.layers, .features = cfg.features, .order = cfg.order,
                           .nonlinearity = cfg.nonlinearity};
    Rng init = root.split(1);
    out.model = init_tensor(model, init, cfg.init_scale);
    Rng xr = root.split(2);
    out.input = Vector(static_cast<Eigen::Index>(cfg.nodes));
    for (auto& v : out.input) v = xr.uniform(-1.0, 1.0);
    const AssumptionConstants c = tensor_constants(out.model, default_domain(out.base->mat()), cfg.cg_samples, root.split(3));
    out.rows = parallel_map(cfg.p.size(), jobs, [&](std::size_t i) {
        return sgnn_variance_report(out.model, out.base, cfg.p[i], out.input, c, cfg.samples, root.split(4).split(i));
    });
    return out;
}

/// Bound check per row: mc_variance <= bound + 3 se, with `floor` absorbing
/// rounding in the sample mean at p in {0, 1}.
inline std::vector<CheckRow> variance_sweep_checks(const std::vector<VarianceReport>& rows, double floor = 1e-12) {
    std::vector<CheckRow> out;
    for (const auto& r : rows)
        out.push_back(check_le("thm1_bound", "p=" + fmt_p(r.p), r.mc_variance,
                               r.bound_first_order + 3.0 * r.mc_std_error + floor));
    return out;
}

// ---------------------------------------------------------------------------
// Backward pass against finite differences

/// True when some pre-activation sits within `eps` of a kink, where finite
/// differences are unreliable.
inline bool near_kink(const FilterTensor& h, const RealizationSet& reals, const FeatureBatch& x, double eps = 1e-4) {
    if (h.config().nonlinearity == Nonlinearity::Tanh || h.config().nonlinearity == Nonlinearity::Identity) return false;
    ForwardCache cache;
    forward(h, reals, x, &cache);
    for (const auto& layer : cache.layers)
        for (const auto& u : layer.pre)
            if (u.size() > 0 && u.cwiseAbs().minCoeff() < eps) return true;
    return false;
}

/// `count` random (graph, architecture, head, loss, realization) draws; each row
/// is the max relative error between backward and fourth-order central
/// differences with step 1e-4.
inline std::vector<CheckRow> grad_check_battery(std::size_t count, const Rng& rng, double tol = 1e-5,
                                                double step = 1e-4) {
    std::vector<CheckRow> rows;
    const Nonlinearity kinds[] = {Nonlinearity::Tanh, Nonlinearity::ReLU, Nonlinearity::Abs};
    const ShiftKind shifts[] = {ShiftKind::NormalizedAdjacency, ShiftKind::Laplacian, ShiftKind::Adjacency};
    for (std::size_t attempt = 0; rows.size() < count; ++attempt) {
        if (attempt > 50 * count) throw Error("grad_check_battery: too many draws near a kink");
        Rng r = rng.split(attempt);
        const std::size_t n = 5 + r.below(5);
        const ShiftOperator adj = random_graph(n, n - 1 + r.below(n), r);
        auto base = std::make_shared<const ShiftOperator>(to_shift(adj, shifts[r.below(3)]));
        SgnnConfig cfg{.layers = 1 + r.below(3), .features = 1 + r.below(3), .order = 1 + r.below(3),
                       .nonlinearity = kinds[attempt % 3], .in_features = 1 + r.below(2), .out_features = 1 + r.below(3)};
        const auto head = r.below(4);
        LossKind loss = LossKind::MeanSquared;
        if (head == 1) {
            cfg.readout = Readout::NodeMeanLinear;
            cfg.readout_outputs = 3;
            loss = LossKind::CrossEntropy;
        } else if (head == 2) {
            cfg.readout = Readout::NodeSelectLinear;
            cfg.readout_outputs = 3;
            cfg.readout_node = r.below(base->n());
            loss = LossKind::CrossEntropy;
        } else if (head == 3) {
            cfg.readout = Readout::NodeLinear;
            cfg.readout_outputs = 2;
        }
        // tap k scaled by rho^-k keeps every filter response O(1) on the spectrum
        FilterTensor h = init_tensor(cfg, r, 1.0);
        const double rho = std::max(1.0, eig_sym(base->mat()).values.cwiseAbs().maxCoeff());
        for (std::size_t f = 0; f < cfg.filter_count(); ++f)
            for (std::size_t k = 0; k <= cfg.order; ++k)
                h.data()[f * (cfg.order + 1) + k] /= std::pow(rho, static_cast<double>(k));
        const RealizationSet reals = sample_architecture(base, 0.5 + 0.5 * r.uniform(), cfg, r.split(1));
        const std::size_t outputs = cfg.readout == Readout::None ? cfg.out_features : cfg.readout_outputs;
        std::vector<Example> data(3);
        for (std::size_t b = 0; b < data.size(); ++b) {
            data[b].x = Matrix(static_cast<Eigen::Index>(base->n()), static_cast<Eigen::Index>(cfg.in_features));
            for (auto& v : data[b].x.reshaped()) v = r.uniform(-1.0, 1.0);
            data[b].y = Matrix(static_cast<Eigen::Index>(base->n()), static_cast<Eigen::Index>(outputs));
            for (auto& v : data[b].y.reshaped()) v = r.uniform(-1.0, 1.0);
            data[b].label = static_cast<int>(r.below(outputs));
        }
        std::vector<std::size_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (near_kink(h, reals, stack_inputs(data, idx), 1e-2)) continue;
        const auto cg = cost_and_gradient(h, reals, data, idx, loss);
        const auto fd = verify::finite_difference_gradient(
            [&](const FilterTensor& t) { return batch_cost(t, reals, data, idx, loss); }, h, step, true);
        const std::string name = "L" + std::to_string(cfg.layers) + "F" + std::to_string(cfg.features) + "K" +
                                 std::to_string(cfg.order) + "/" + std::string(to_string(cfg.nonlinearity)) + "/" +
                                 std::string(to_string(cfg.readout)) + "/" + std::string(to_string(base->kind())) +
                                 "/draw" + std::to_string(attempt);
        rows.push_back(check_le("backward_vs_fd", name, verify::max_relative_error(cg.grad.data(), fd), tol));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Node-local message passing against the matrix form

inline std::vector<CheckRow> distributed_battery(std::size_t cases, const Rng& rng, double tol = 1e-12) {
    std::vector<CheckRow> rows;
    const ShiftKind shifts[] = {ShiftKind::Adjacency, ShiftKind::Laplacian, ShiftKind::NormalizedAdjacency};
    for (std::size_t c = 0; c < cases; ++c) {
        Rng r = rng.split(c);
        const std::size_t n = 4 + r.below(12);
        auto adj = random_graph(n, 1 + r.below(n * (n - 1) / 2), r);
        auto base = std::make_shared<const ShiftOperator>(to_shift(adj, shifts[c % 3]));
        const double p = r.uniform();
        FilterCoeffs h;
        for (std::size_t k = 0, order = r.below(6); k <= order; ++k) h.taps.push_back(r.uniform(-1.0, 1.0));
        std::vector<ShiftRealization> reals;
        for (std::size_t k = 0; k < h.order(); ++k) reals.push_back(sample_res(base, p, r));
        Vector x(static_cast<Eigen::Index>(n));
        for (auto& v : x) v = r.uniform(-1.0, 1.0);
        const double err = max_abs_diff(apply_distributed(h, reals, x), apply_filter(h, reals, x));
        rows.push_back(check_le("distributed_equivalence",
                                "case" + std::to_string(c) + "/n" + std::to_string(n) + "/" +
                                    std::string(to_string(base->kind())) + "/K" + std::to_string(h.order()),
                                err, tol));
    }
    return rows;
}

}  // namespace sgnn

#endif  // SGNN_CHECKS_HPP

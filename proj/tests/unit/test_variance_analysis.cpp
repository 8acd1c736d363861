#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sgnn/variance_analysis.hpp"
#include "sgnn/verification.hpp"

using namespace sgnn;

namespace {

std::shared_ptr<const ShiftOperator> shared(ShiftOperator s) { return std::make_shared<const ShiftOperator>(std::move(s)); }

FilterCoeffs random_filter(std::size_t order, Rng& rng) {
    FilterCoeffs h;
    for (std::size_t k = 0; k <= order; ++k) h.taps.push_back(rng.uniform(-1.0, 1.0));
    return h;
}

Vector random_signal(Eigen::Index n, Rng& rng) {
    Vector x(n);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    return x;
}

/// Small graphs with at most six edges.
std::vector<ShiftOperator> small_battery(Rng& rng) {
    std::vector<ShiftOperator> out{verify::complete_graph(2), verify::complete_graph(3), verify::path_graph(4),
                                   verify::star_graph(4), verify::complete_graph(4)};
    for (int t = 0; t < 5; ++t) {
        std::vector<Edge> e;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = i + 1; j < 5; ++j)
                if (e.size() < 6 && rng.bernoulli(0.5)) e.emplace_back(i, j);
        if (e.empty()) e.emplace_back(0, 1);
        out.push_back(ShiftOperator::from_edges(5, e));
    }
    return out;
}

}  // namespace

TEST(McVariance, DeterministicEvaluatorsHaveZeroVariance) {
    const McEstimate c = mc_variance([](Rng&) { return Vector::Constant(4, 2.5); }, 100, Rng(1));
    EXPECT_EQ(c.variance, 0.0);
    auto base = shared(verify::complete_graph(3));
    const McEstimate full = mc_variance(
        [&](Rng& r) {
            return apply_filter({0.0, 1.0}, std::vector<ShiftRealization>{sample_res(base, 1.0, r)}, Vector::Ones(3));
        },
        100, Rng(2));
    EXPECT_EQ(full.variance, 0.0);
    EXPECT_THROW(mc_variance([](Rng&) { return Vector::Zero(1); }, 1, Rng(0)), InvalidInput);
}

TEST(McVariance, BernoulliOutputOnTwoNodes) {
    auto k2 = shared(verify::complete_graph(2));
    const Vector x = Vector::Unit(2, 0);
    const McEstimate mc = mc_variance(
        [&](Rng& r) { return apply_filter({0.0, 1.0}, std::vector<ShiftRealization>{sample_res(k2, 0.5, r)}, x); },
        20000, Rng(3));
    EXPECT_LE(std::abs(mc.variance - 0.25), 3.0 * mc.std_error);
}

TEST(ExactFilterVariance, SmallCases) {
    const ShiftOperator k2 = verify::complete_graph(2);
    const Vector x = Vector::Unit(2, 0);
    // node 0 always sees x_1 = 0, node 1 sees Bernoulli(0.5) * 1
    EXPECT_DOUBLE_EQ(exact_filter_variance({0.0, 1.0}, k2, 0.5, x), 0.25);
    EXPECT_EQ(exact_filter_variance({0.3, 1.0, -1.0}, k2, 0.0, x), 0.0);
    EXPECT_EQ(exact_filter_variance({0.3, 1.0, -1.0}, k2, 1.0, x), 0.0);

    Rng rng(4);
    const ShiftOperator g = verify::star_graph(3);
    const FilterCoeffs h = random_filter(2, rng);
    const Vector y = random_signal(4, rng);
    EXPECT_NEAR(exact_filter_variance(h, g, 0.3, 2.0 * y), 4.0 * exact_filter_variance(h, g, 0.3, y), 1e-12);
    EXPECT_THROW(exact_filter_variance(random_filter(4, rng), verify::complete_graph(4), 0.5, Vector::Ones(4)),
                 SizeGuard);
}

TEST(ExactFilterVariance, AgreesWithIndependentEnumeration) {
    Rng rng(5);
    for (const ShiftOperator& a : small_battery(rng)) {
        for (ShiftKind kind : {ShiftKind::Adjacency, ShiftKind::Laplacian}) {
            const ShiftOperator s = kind == ShiftKind::Adjacency ? a : to_shift(a, kind);
            const FilterCoeffs h = random_filter(2, rng);
            const Vector x = random_signal(static_cast<Eigen::Index>(s.n()), rng);
            const double p = rng.uniform();
            EXPECT_NEAR(exact_filter_variance(h, s, p, x), verify::enumerate_filter_variance(h.taps, s, p, x), 1e-10);
        }
    }
}

TEST(ExactFilterVariance, MonteCarloWithinThreeStandardErrors) {
    Rng rng(6);
    auto base = shared(to_shift(verify::star_graph(4), ShiftKind::Laplacian));
    const FilterCoeffs h{0.2, 0.5, -0.3};
    const Vector x = random_signal(5, rng);
    for (double p : {0.3, 0.8}) {
        const McEstimate mc = mc_variance(
            [&](Rng& r) {
                std::vector<ShiftRealization> reals{sample_res(base, p, r), sample_res(base, p, r)};
                return apply_filter(h, reals, x);
            },
            20000, Rng(7));
        EXPECT_LE(std::abs(mc.variance - exact_filter_variance(h, *base, p, x)), 3.0 * mc.std_error);
    }
}

TEST(FilterVarianceBound, EndpointsSymmetryAndTwoNodeValue) {
    const ShiftOperator k2 = verify::complete_graph(2);
    const Vector x = Vector::Unit(2, 0);
    Rng rng(8);
    const AssumptionConstants c = filter_constants({0.0, 1.0}, {-1.0, 1.0}, 100, rng);
    EXPECT_DOUBLE_EQ(c.c_g, 1.05);
    EXPECT_EQ(prop1_bound({0.0, 1.0}, k2, 0.0, x, c), 0.0);
    EXPECT_EQ(prop1_bound({0.0, 1.0}, k2, 1.0, x, c), 0.0);
    EXPECT_DOUBLE_EQ(prop1_bound({0.0, 1.0}, k2, 0.3, x, c), prop1_bound({0.0, 1.0}, k2, 0.7, x, c));
    const double bound = prop1_bound({0.0, 1.0}, k2, 0.5, x, c);
    EXPECT_NEAR(bound, 0.25 * 2.0 * 1.05 * 1.05, 1e-15);
    EXPECT_GE(bound, exact_filter_variance({0.0, 1.0}, k2, 0.5, x));
    EXPECT_EQ(shift_alpha(ShiftKind::Laplacian), 2.0);
    EXPECT_EQ(shift_alpha(ShiftKind::Adjacency), 1.0);
}

TEST(FilterVarianceBound, HoldsInFirstOrderRegimeOnBattery) {
    Rng rng(9);
    for (const ShiftOperator& a : small_battery(rng)) {
        for (ShiftKind kind : {ShiftKind::Adjacency, ShiftKind::Laplacian}) {
            const ShiftOperator s = kind == ShiftKind::Adjacency ? a : to_shift(a, kind);
            const FrequencyDomain dom = default_domain(s.mat());
            for (std::size_t order : {1U, 2U}) {
                const FilterCoeffs h = random_filter(order, rng);
                const AssumptionConstants c = filter_constants(h, dom, 200, rng);
                const Vector x = random_signal(static_cast<Eigen::Index>(s.n()), rng);
                for (double p : {0.9, 0.95, 0.99}) EXPECT_LE(exact_filter_variance(h, s, p, x), prop1_bound(h, s, p, x, c));
                EXPECT_EQ(exact_filter_variance(h, s, 0.0, x), 0.0);
                EXPECT_EQ(exact_filter_variance(h, s, 1.0, x), 0.0);
            }
        }
    }
}

TEST(FilterVarianceBound, SecondOrderSlackFitAtHalf) {
    Rng rng(10);
    for (const ShiftOperator& s : small_battery(rng)) {
        const FilterCoeffs h = random_filter(2, rng);
        const AssumptionConstants c = filter_constants(h, default_domain(s.mat()), 200, rng);
        const Vector x = random_signal(static_cast<Eigen::Index>(s.n()), rng);
        const double c2 = std::max(0.0, exact_filter_variance(h, s, 0.5, x) - prop1_bound(h, s, 0.5, x, c)) / (4.0 * 0.0625);
        for (double p = 0.05; p < 1.0; p += 0.05) {
            const double q = p * (1.0 - p);
            EXPECT_LE(exact_filter_variance(h, s, p, x), prop1_bound(h, s, p, x, c) + 4.0 * q * q * c2 + 1e-12);
        }
    }
}

TEST(Thm1Bound, FormulaInstantiation) {
    const ShiftOperator k3 = verify::complete_graph(3);
    AssumptionConstants c{.c_u = 2.0, .c_g = 1.5, .c_sigma = 1.0, .domain = {-2.0, 2.0}};
    const Vector x = Vector::Ones(3);
    const SgnnConfig one{.layers = 1, .features = 1, .order = 2};
    // L = 1, F = 1: 2 alpha M * F^-1 * C_U^0 * K C_g^2
    EXPECT_DOUBLE_EQ(thm1_constant(one, k3, c), 2.0 * 3.0 * 2.0 * 1.5 * 1.5);
    const SgnnConfig two{.layers = 2, .features = 3, .order = 2};
    // L = 2: sum over l of F^1 C_sigma^{2l-2} C_U^2 = 2 * 3 * 4
    EXPECT_DOUBLE_EQ(thm1_constant(two, k3, c), 2.0 * 3.0 * (2.0 * 3.0 * 4.0) * 2.0 * 1.5 * 1.5);
    EXPECT_EQ(thm1_bound(two, k3, 0.0, x, c), 0.0);
    EXPECT_DOUBLE_EQ(thm1_bound(two, k3, 0.9, x, c), 0.09 * thm1_constant(two, k3, c) * 3.0);
}

TEST(Thm1Bound, DominatesMonteCarloVariance) {
    Rng rng(11);
    auto base = shared(build_sbm(10, 2, 0.6, 0.2, rng));
    const SgnnConfig cfg{.layers = 2, .features = 2, .order = 2, .nonlinearity = Nonlinearity::ReLU};
    const FilterTensor h = init_tensor(cfg, rng, 0.5);
    const AssumptionConstants c = tensor_constants(h, default_domain(base->mat()), 200, rng);
    const Vector x = random_signal(10, rng);
    for (double p : {0.9, 0.95, 0.99}) {
        const VarianceReport r = sgnn_variance_report(h, base, p, x, c, 4000, Rng(12));
        EXPECT_LE(r.mc_variance, r.bound_first_order + 3.0 * r.mc_std_error);
    }
}

TEST(NonlinearityVariance, LemmaCases) {
    Rng rng(13);
    const auto coin = check_nonlinearity_variance(
        Nonlinearity::Abs, [](Rng& r) { return r.bernoulli(0.5) ? 1.0 : -1.0; }, 10000, rng);
    EXPECT_EQ(coin.var_out, 0.0);
    EXPECT_NEAR(coin.var_in, 1.0, 0.05);

    const auto positive = check_nonlinearity_variance(
        Nonlinearity::ReLU, [](Rng& r) { return r.uniform(0.0, 3.0); }, 10000, rng);
    EXPECT_EQ(positive.var_out, positive.var_in);

    const auto normal = check_nonlinearity_variance(Nonlinearity::ReLU, [](Rng& r) { return r.normal(); }, 100000, rng);
    const double half_normal = 0.5 - 0.5 / std::numbers::pi;
    EXPECT_LE(std::abs(normal.var_out - half_normal), 3.0 * normal.se_out);
    EXPECT_LE(normal.var_out, normal.var_in);
    EXPECT_THROW(check_nonlinearity_variance(Nonlinearity::ReLU, [](Rng& r) { return r.normal(); }, 10, rng),
                 InvalidInput);
}

TEST(VarianceReport, JsonAndCsv) {
    VarianceReport r{.p = 0.9, .mc_variance = 0.1, .mc_std_error = 0.01, .bound_first_order = 2.0, .n_samples = 50,
                     .alpha = 2.0, .edges = 7, .order = 3, .c_g = 1.5, .c_u = 1.2, .c_sigma = 1.0, .layers = 2,
                     .features = 4};
    const auto j = to_json(r);
    EXPECT_EQ(j["constants"]["M"], 7);
    EXPECT_EQ(j["constants"]["alpha"], 2.0);
    EXPECT_EQ(j["n_samples"], 50);
    std::stringstream out;
    write_csv_row(r, out);
    EXPECT_EQ(out.str(), "0.90000000000000002,0.10000000000000001,0.01,2,50,2,7,3,1.5,1.2,1,2,4\n");
}

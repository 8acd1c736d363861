#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "sgnn/autograd_train.hpp"
#include "sgnn/verification.hpp"

using namespace sgnn;

namespace {

std::shared_ptr<const ShiftOperator> shared(ShiftOperator s) { return std::make_shared<const ShiftOperator>(std::move(s)); }

std::vector<Example> regression_data(std::size_t n, std::size_t count, std::size_t fin, std::size_t fout, Rng& rng) {
    std::vector<Example> data(count);
    for (auto& e : data) {
        e.x = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(fin));
        e.y = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(fout));
        for (auto& v : e.x.reshaped()) v = rng.uniform(-1.0, 1.0);
        for (auto& v : e.y.reshaped()) v = rng.uniform(-1.0, 1.0);
    }
    return data;
}

std::vector<std::size_t> all(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

bool near_kink(const FilterTensor& h, const RealizationSet& reals, std::span<const Example> data) {
    ForwardCache cache;
    forward(h, reals, stack_inputs(data, all(data.size())), &cache);
    for (const auto& layer : cache.layers)
        for (const auto& u : layer.pre)
            if (u.cwiseAbs().minCoeff() < 1e-4) return true;
    return false;
}

}  // namespace

TEST(Loss, ReferenceValues) {
    Matrix x(2, 1);
    x << 1.0, 0.0;
    EXPECT_EQ(loss_mse(x, x), 0.0);
    EXPECT_EQ(loss_mse(x, Matrix::Zero(2, 1)), 0.5);
    EXPECT_THROW(loss_mse(x, Matrix::Zero(3, 1)), InvalidInput);
    EXPECT_NEAR(loss_cross_entropy(Vector::Constant(4, 2.5), 3), std::log(4.0), 1e-15);
    Vector big(2);
    big << 1000.0, 0.0;
    EXPECT_NEAR(loss_cross_entropy(big, 1), 1000.0, 1e-9);
    EXPECT_THROW(loss_cross_entropy(big, 2), InvalidInput);
}

TEST(Backward, ZeroInputGivesZeroTapGradient) {
    Rng rng(1);
    auto base = shared(build_sbm(6, 2, 0.9, 0.4, rng));
    const SgnnConfig cfg{.layers = 2, .features = 2, .order = 2, .nonlinearity = Nonlinearity::Tanh};
    const FilterTensor h = init_tensor(cfg, rng, 0.5);
    std::vector<Example> data(3, Example{Matrix::Zero(6, 1), Matrix::Zero(6, 1)});
    const auto cg = cost_and_gradient(h, sample_architecture(base, 0.5, cfg, rng), data, all(3), LossKind::MeanSquared);
    EXPECT_EQ(cg.cost, 0.0);
    EXPECT_EQ(squared_norm(cg.grad), 0.0);
}

TEST(Backward, SingleTapClosedForm) {
    auto base = shared(verify::complete_graph(2));
    const SgnnConfig cfg{.layers = 1, .features = 1, .order = 0, .nonlinearity = Nonlinearity::ReLU};
    FilterTensor h(cfg);
    h.tap(0, 0, 0, 0) = 1.5;
    Example e;
    e.x = Matrix(2, 1);
    e.x << 1.0, 2.0;
    e.y = Matrix(2, 1);
    e.y << 0.0, 1.0;
    const std::vector<Example> data{e};
    // C = mean((1.5 x - y)^2), dC/dh = mean(2 (1.5 x - y) x) = (2*1.5*1 + 2*2*2) / 2
    const auto cg = cost_and_gradient(h, sample_architecture(base, 1.0, cfg, Rng(0)), data, all(1), LossKind::MeanSquared);
    EXPECT_DOUBLE_EQ(cg.cost, (1.5 * 1.5 + 2.0 * 2.0) / 2.0);
    EXPECT_DOUBLE_EQ(cg.grad.data()[0], 5.5);
}

TEST(Backward, MatchesFiniteDifferences) {
    Rng rng(2024);
    const Nonlinearity kinds[] = {Nonlinearity::ReLU, Nonlinearity::Abs, Nonlinearity::Tanh};
    int checked = 0;
    for (int attempt = 0; checked < 20 && attempt < 400; ++attempt) {
        const Nonlinearity nl = kinds[attempt % 3];
        auto base = shared(to_shift(build_sbm(8, 2, 0.8, 0.3, rng), ShiftKind::NormalizedAdjacency));
        const SgnnConfig cfg{.layers = 2, .features = 2, .order = 2, .nonlinearity = nl};
        const FilterTensor h = init_tensor(cfg, rng, 1.0);
        const RealizationSet reals = sample_architecture(base, 0.7, cfg, rng.split(static_cast<std::uint64_t>(attempt)));
        const auto data = regression_data(8, 3, 1, 1, rng);
        if (nl != Nonlinearity::Tanh && near_kink(h, reals, data)) continue;
        const auto idx = all(data.size());
        const auto cg = cost_and_gradient(h, reals, data, idx, LossKind::MeanSquared);
        const auto fd = verify::finite_difference_gradient(
            [&](const FilterTensor& t) { return batch_cost(t, reals, data, idx, LossKind::MeanSquared); }, h, 1e-5);
        EXPECT_LE(verify::max_relative_error(cg.grad.data(), fd), 1e-5) << "attempt " << attempt;
        ++checked;
    }
    EXPECT_EQ(checked, 20);
}

TEST(Backward, HeadsMatchFiniteDifferences) {
    Rng rng(77);
    auto base = shared(to_shift(build_sbm(8, 2, 0.8, 0.3, rng), ShiftKind::NormalizedAdjacency));
    {
        const SgnnConfig cfg{.layers = 2, .features = 3, .order = 2, .nonlinearity = Nonlinearity::Tanh,
                             .out_features = 3, .readout = Readout::NodeMeanLinear, .readout_outputs = 4};
        const FilterTensor h = init_tensor(cfg, rng, 0.8);
        const RealizationSet reals = sample_architecture(base, 0.6, cfg, rng);
        auto data = regression_data(8, 5, 1, 1, rng);
        for (std::size_t i = 0; i < data.size(); ++i) data[i].label = static_cast<int>(i % 4);
        const auto idx = all(data.size());
        const auto cg = cost_and_gradient(h, reals, data, idx, LossKind::CrossEntropy);
        const auto fd = verify::finite_difference_gradient(
            [&](const FilterTensor& t) { return batch_cost(t, reals, data, idx, LossKind::CrossEntropy); }, h, 1e-5);
        EXPECT_LE(verify::max_relative_error(cg.grad.data(), fd), 1e-5);
    }
    {
        const SgnnConfig cfg{.layers = 2, .features = 3, .order = 2, .nonlinearity = Nonlinearity::ReLU,
                             .out_features = 2, .readout = Readout::NodeSelectLinear, .readout_outputs = 3,
                             .readout_node = 6};
        const FilterTensor h = init_tensor(cfg, rng, 0.8);
        const RealizationSet reals = sample_architecture(base, 0.7, cfg, rng);
        auto data = regression_data(8, 6, 1, 1, rng);
        for (std::size_t i = 0; i < data.size(); ++i) data[i].label = static_cast<int>(i % 3);
        const auto idx = all(data.size());
        const auto cg = cost_and_gradient(h, reals, data, idx, LossKind::CrossEntropy);
        const auto fd = verify::finite_difference_gradient(
            [&](const FilterTensor& t) { return batch_cost(t, reals, data, idx, LossKind::CrossEntropy); }, h, 1e-5);
        EXPECT_LE(verify::max_relative_error(cg.grad.data(), fd), 1e-5);
    }
    {
        const SgnnConfig cfg{.layers = 1, .features = 4, .order = 3, .nonlinearity = Nonlinearity::Tanh,
                             .in_features = 3, .out_features = 4, .readout = Readout::NodeLinear, .readout_outputs = 2};
        const FilterTensor h = init_tensor(cfg, rng, 0.8);
        const RealizationSet reals = sample_architecture(base, 0.6, cfg, rng);
        const auto data = regression_data(8, 4, 3, 2, rng);
        const auto idx = all(data.size());
        const auto cg = cost_and_gradient(h, reals, data, idx, LossKind::MeanSquared);
        const auto fd = verify::finite_difference_gradient(
            [&](const FilterTensor& t) { return batch_cost(t, reals, data, idx, LossKind::MeanSquared); }, h, 1e-5);
        EXPECT_LE(verify::max_relative_error(cg.grad.data(), fd), 1e-5);
    }
}

TEST(SampledCost, PerExampleGraphsAverageIndividualCosts) {
    Rng rng(91);
    auto data = regression_data(6, 3, 2, 1, rng);
    for (auto& e : data) e.graph = shared(to_shift(build_sbm(6, 2, 0.9, 0.3, rng), ShiftKind::Laplacian));
    const SgnnConfig cfg{.layers = 1, .features = 1, .order = 2, .nonlinearity = Nonlinearity::Tanh,
                         .in_features = 2, .out_features = 1};
    const FilterTensor h = init_tensor(cfg, rng, 0.5);
    const Rng draw(5);
    const auto idx = all(3);
    const CostGradient mixed = sampled_cost_and_gradient(h, nullptr, 0.6, data, idx, LossKind::MeanSquared, draw);
    double cost = 0.0;
    std::vector<double> grad(h.size(), 0.0);
    for (std::size_t b = 0; b < 3; ++b) {
        const std::size_t one[] = {b};
        const auto cg = cost_and_gradient(h, sample_architecture(data[b].graph, 0.6, cfg, draw.split(b)), data, one,
                                          LossKind::MeanSquared);
        cost += cg.cost / 3.0;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cg.grad.data()[i] / 3.0;
    }
    EXPECT_NEAR(mixed.cost, cost, 1e-15);
    EXPECT_LE(verify::max_relative_error(mixed.grad.data(), grad), 1e-14);
    const auto fd = verify::finite_difference_gradient(
        [&](const FilterTensor& t) {
            return sampled_cost_and_gradient(t, nullptr, 0.6, data, idx, LossKind::MeanSquared, draw).cost;
        },
        h, 1e-5);
    EXPECT_LE(verify::max_relative_error(mixed.grad.data(), fd), 1e-5);

    data[1].graph.reset();
    EXPECT_THROW(sampled_cost_and_gradient(h, nullptr, 0.6, data, idx, LossKind::MeanSquared, draw), InvalidInput);
}

TEST(Theorem2Step, Formula) {
    EXPECT_DOUBLE_EQ(theorem2_step(2.0, 1, 1.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(theorem2_step(2.0, 4, 1.0, 2.0), 0.5);
    EXPECT_NEAR(theorem2_step(1.0, 100, 2.0, 1.0), 0.1, 1e-15);
    EXPECT_THROW(theorem2_step(0.0, 1, 1.0, 1.0), InvalidConfig);
    EXPECT_THROW(theorem2_step(1.0, 0, 1.0, 1.0), InvalidConfig);
    EXPECT_THROW(theorem2_step(1.0, 1, -1.0, 1.0), InvalidConfig);
}

TEST(ConvergenceMetric, RunningMinimum) {
    const std::vector<double> dec{5.0, 4.0, 1.0};
    EXPECT_EQ(convergence_metric(dec), dec);
    const std::vector<double> flat{2.0, 2.0};
    EXPECT_EQ(convergence_metric(flat), flat);
    const std::vector<double> noisy{3.0, 5.0, 1.0, 2.0};
    EXPECT_EQ(convergence_metric(noisy), (std::vector<double>{3.0, 3.0, 1.0, 1.0}));
    EXPECT_THROW(convergence_metric(std::vector<double>{}), InvalidInput);
}

class TrainingTest : public ::testing::Test {
protected:
    void SetUp() override {
        Rng rng(31);
        base = shared(to_shift(build_sbm(8, 2, 0.8, 0.3, rng), ShiftKind::NormalizedAdjacency));
        data = regression_data(8, 40, 1, 1, rng);
        cfg = SgnnConfig{.layers = 2, .features = 2, .order = 2, .nonlinearity = Nonlinearity::Tanh};
        h0 = init_tensor(cfg, rng, 0.5);
    }

    std::shared_ptr<const ShiftOperator> base;
    std::vector<Example> data;
    SgnnConfig cfg;
    FilterTensor h0;
};

TEST_F(TrainingTest, FixedSeedIsBitReproducible) {
    TrainConfig tc{.iterations = 30, .batch_size = 8, .p = 0.6, .seed = 5};
    tc.optimizer.kind = OptimizerKind::Adam;
    const TrainTrace a = train(h0, base, data, tc);
    const TrainTrace b = train(h0, base, data, tc);
    EXPECT_EQ(a.cost, b.cost);
    EXPECT_EQ(a.grad_norm_sq, b.grad_norm_sq);
    EXPECT_EQ(a.final_tensor, b.final_tensor);
    EXPECT_EQ(a.cost.size(), 30U);
    EXPECT_FALSE(a.final_tensor == h0);
}

TEST_F(TrainingTest, LoopOrganizationsProduceIdenticalIterates) {
    TrainConfig tc{.iterations = 25, .batch_size = 6, .p = 0.5, .seed = 9};
    const TrainTrace a = train(h0, base, data, tc);
    tc.organization = LoopOrganization::CostFirst;
    const TrainTrace b = train(h0, base, data, tc);
    EXPECT_EQ(a.cost, b.cost);
    EXPECT_EQ(a.final_tensor, b.final_tensor);
}

TEST_F(TrainingTest, ZeroStepLeavesTensorUnchanged) {
    for (OptimizerKind kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
        TrainConfig tc{.iterations = 10, .batch_size = 40, .p = 1.0, .seed = 1};
        tc.lr.alpha = 0.0;
        tc.optimizer.kind = kind;
        const TrainTrace t = train(h0, base, data, tc);
        EXPECT_EQ(t.final_tensor, h0);
        for (double c : t.cost) EXPECT_DOUBLE_EQ(c, t.cost.front());
    }
}

TEST_F(TrainingTest, DivergenceGuardAborts) {
    SgnnConfig linear = cfg;
    linear.nonlinearity = Nonlinearity::Identity;
    Rng rng(2);
    TrainConfig tc{.iterations = 200, .batch_size = 8, .p = 1.0, .seed = 2};
    tc.lr.alpha = 1e6;
    EXPECT_THROW(train(init_tensor(linear, rng, 0.5), base, data, tc), Divergence);
}

TEST_F(TrainingTest, Theorem2ScheduleIsConstantAndScalesWithT) {
    TrainConfig tc{.iterations = 10, .batch_size = 8, .p = 0.7, .seed = 3};
    tc.lr.kind = ScheduleKind::Theorem2;
    tc.bound_samples = 5;
    const LearningRate r10 = resolve_schedule(h0, base, data, tc);
    tc.iterations = 40;
    const LearningRate r40 = resolve_schedule(h0, base, data, tc);
    EXPECT_NEAR(r40.alpha, 0.5 * r10.alpha, 1e-15);
    const TrainTrace t = train(h0, base, data, tc);
    for (double lr : t.lr) EXPECT_EQ(lr, r40.alpha);
}

TEST(Train, RecoversGeneratingTap) {
    // y = |h* x| with nonnegative x: the cost is quadratic in h with minimum at h*.
    Rng rng(41);
    auto base = shared(verify::path_graph(4));
    const SgnnConfig cfg{.layers = 1, .features = 1, .order = 0, .nonlinearity = Nonlinearity::Abs};
    std::vector<Example> data(20);
    for (auto& e : data) {
        e.x = Matrix(4, 1);
        for (auto& v : e.x.reshaped()) v = rng.uniform(0.1, 1.0);
        e.y = 0.8 * e.x;
    }
    FilterTensor h(cfg);
    h.tap(0, 0, 0, 0) = 0.2;
    TrainConfig tc{.iterations = 400, .batch_size = 20, .p = 1.0, .seed = 4};
    tc.lr.alpha = 0.5;
    const TrainTrace t = train(h, base, data, tc);
    EXPECT_LE(t.cost.back(), 1e-6);
    EXPECT_NEAR(t.final_tensor.data()[0], 0.8, 1e-3);
}

TEST(EstimateGradBound, ZeroModelAndReproducibility) {
    Rng rng(5);
    auto base = shared(build_sbm(6, 2, 0.9, 0.4, rng));
    const SgnnConfig cfg{.layers = 2, .features = 2, .order = 2};
    std::vector<Example> zero(4, Example{Matrix::Zero(6, 1), Matrix::Zero(6, 1)});
    for (auto& e : zero) e.x.setOnes();
    EXPECT_EQ(estimate_grad_bound(FilterTensor(cfg), base, zero, 0.5, 10, Rng(1), LossKind::MeanSquared), 0.0);

    const FilterTensor h = init_tensor(cfg, rng, 0.5);
    const auto data = regression_data(6, 4, 1, 1, rng);
    EXPECT_EQ(estimate_grad_bound(h, base, data, 0.5, 10, Rng(7), LossKind::MeanSquared),
              estimate_grad_bound(h, base, data, 0.5, 10, Rng(7), LossKind::MeanSquared));
}

TEST(EstimateGradBound, CoversLaterSamples) {
    Rng rng(6);
    auto base = shared(to_shift(build_sbm(8, 2, 0.8, 0.3, rng), ShiftKind::NormalizedAdjacency));
    const SgnnConfig cfg{.layers = 2, .features = 2, .order = 2, .nonlinearity = Nonlinearity::Tanh};
    const FilterTensor h = init_tensor(cfg, rng, 0.7);
    const auto data = regression_data(8, 6, 1, 1, rng);
    const double bound = estimate_grad_bound(h, base, data, 0.5, 50, Rng(8), LossKind::MeanSquared);
    const auto idx = all(data.size());
    int covered = 0;
    for (int t = 0; t < 1000; ++t) {
        const auto reals = sample_architecture(base, 0.5, cfg, Rng(9).split(static_cast<std::uint64_t>(t)));
        covered += std::sqrt(squared_norm(cost_and_gradient(h, reals, data, idx, LossKind::MeanSquared).grad)) <= bound;
    }
    EXPECT_GE(covered, 950);
}

TEST(TraceCsv, ColumnsAndDeterministicWallTime) {
    TrainTrace t;
    t.cost = {1.5};
    t.grad_norm_sq = {0.25};
    t.lr = {0.1};
    t.wall_ms = {12.0};
    std::stringstream a;
    write_trace_csv(t, a);
    EXPECT_EQ(a.str(), "iter,cost,grad_norm_sq,lr,wall_ms\n0,1.5,0.25,0.10000000000000001,0\n");
    std::stringstream b;
    write_trace_csv(t, b, true);
    EXPECT_NE(b.str().find(",12\n"), std::string::npos);
}

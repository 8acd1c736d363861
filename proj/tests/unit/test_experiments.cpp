#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "sgnn/experiments.hpp"
#include "sgnn/verification.hpp"

using namespace sgnn;

namespace {

std::shared_ptr<const ShiftOperator> sbm_shift(std::uint64_t seed) {
    Rng rng(seed);
    return std::make_shared<const ShiftOperator>(
        to_shift(build_sbm(12, 3, 0.8, 0.2, rng), ShiftKind::NormalizedAdjacency));
}

SwarmState two_agents(Eigen::RowVector2d z1, Eigen::RowVector2d z2, Eigen::RowVector2d v1, Eigen::RowVector2d v2) {
    SwarmState s;
    s.z = Matrix(2, 2);
    s.v = Matrix(2, 2);
    s.z << z1, z2;
    s.v << v1, v2;
    s.u = Matrix::Zero(2, 2);
    return s;
}

}  // namespace

TEST(ParamTable, AppliesAndRejects) {
    SourceLocConfig cfg;
    ParamTable t = cfg.params();
    t.apply("nodes=30");
    t.apply("lr=0.25");
    t.apply("test_p=0.5,1");
    t.apply("nonlinearity=tanh");
    t.apply("schedule=inv_sqrt");
    EXPECT_EQ(cfg.nodes, 30U);
    EXPECT_EQ(cfg.lr, 0.25);
    EXPECT_EQ(cfg.test_p, (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(cfg.nonlinearity, Nonlinearity::Tanh);
    EXPECT_EQ(cfg.schedule, ScheduleKind::InvSqrt);
    EXPECT_THROW(t.apply("bogus=1"), InvalidConfig);
    EXPECT_THROW(t.apply("nodes=-3"), InvalidConfig);
    EXPECT_THROW(t.apply("nodes=3x"), InvalidConfig);
    EXPECT_THROW(t.apply("lr=fast"), InvalidConfig);
    EXPECT_THROW(t.apply("test_p=0.5,"), InvalidConfig);
    EXPECT_THROW(t.apply("nonlinearity=sigmoid"), InvalidConfig);
    EXPECT_THROW(t.apply("novalue"), InvalidConfig);
    const auto j = t.to_json();
    EXPECT_EQ(j["nodes"], 30);
    EXPECT_EQ(j["optimizer"], "adam");
    EXPECT_NE(t.help().find("tau_max="), std::string::npos);
}

TEST(ParallelMap, OrderIsIndependentOfJobs) {
    auto square = [](std::size_t i) { return i * i; };
    EXPECT_EQ(parallel_map(17, 1, square), parallel_map(17, 4, square));
    EXPECT_EQ(parallel_map(3, 8, square), (std::vector<std::size_t>{0, 1, 4}));
    EXPECT_THROW(parallel_map(5, 2,
                              [](std::size_t i) -> int {
                                  if (i == 3) throw InvalidInput("boom");
                                  return 0;
                              }),
                 InvalidInput);
}

TEST(SourceDataset, NoiselessDiffusionAndSupport) {
    auto base = sbm_shift(1);
    const auto sources = community_sources(12, 3);
    EXPECT_EQ(sources, (std::vector<std::size_t>{0, 4, 8}));

    const auto d0 = gen_source_dataset(base, sources, {30, 0, 0}, 0, 0.0, Rng(2));
    for (const auto& e : d0.train)
        EXPECT_EQ(e.x.col(0), Vector::Unit(12, static_cast<Eigen::Index>(sources[e.label])));

    const auto d1 = gen_source_dataset(base, sources, {60, 0, 0}, 1, 0.0, Rng(3));
    std::size_t diffused = 0;
    for (const auto& e : d1.train) {
        const Vector delta = Vector::Unit(12, static_cast<Eigen::Index>(sources[e.label]));
        if (e.x.col(0) == delta) continue;
        ++diffused;
        EXPECT_EQ(e.x.col(0), base->mat() * delta);
        for (Eigen::Index i = 0; i < 12; ++i)
            EXPECT_EQ(e.x(i, 0) != 0.0, base->mat()(i, static_cast<Eigen::Index>(sources[e.label])) != 0.0);
    }
    EXPECT_GT(diffused, 0U);
}

TEST(SourceDataset, BalancedDeterministicAndCached) {
    auto base = sbm_shift(4);
    const auto sources = community_sources(12, 3);
    const auto a = gen_source_dataset(base, sources, {100, 31, 17}, 6, 0.01, Rng(9));
    const auto b = gen_source_dataset(base, sources, {100, 31, 17}, 6, 0.01, Rng(9));
    for (const auto* split : {&a.train, &a.val, &a.test}) {
        std::vector<std::size_t> counts(3, 0);
        for (const auto& e : *split) {
            ASSERT_GE(e.label, 0);
            ASSERT_LT(e.label, 3);
            ++counts[static_cast<std::size_t>(e.label)];
        }
        EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()),
                  1U);
    }
    ASSERT_EQ(a.train.size(), b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].x, b.train[i].x);
        EXPECT_EQ(a.train[i].label, b.train[i].label);
    }

    std::stringstream buf;
    save_source_dataset(a, buf);
    const auto back = load_source_dataset(buf);
    EXPECT_EQ(back.base->mat(), a.base->mat());
    EXPECT_EQ(back.sources, a.sources);
    ASSERT_EQ(back.test.size(), a.test.size());
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        EXPECT_EQ(back.test[i].x, a.test[i].x);
        EXPECT_EQ(back.test[i].label, a.test[i].label);
    }
    std::stringstream bad("SGNNDATA 7");
    EXPECT_THROW(load_source_dataset(bad), InvalidInput);
}

TEST(SourceAccuracy, ChanceFloorAndDeterministicAtFullProbability) {
    auto base = sbm_shift(5);
    const auto ds = gen_source_dataset(base, community_sources(12, 3), {0, 0, 90}, 5, 0.01, Rng(1));
    SourceLocConfig cfg;
    cfg.communities = 3;
    cfg.filters = 4;
    cfg.order = 3;
    // all-zero taps with a bias favouring one class: the balanced floor 1/C
    FilterTensor constant(cfg.model(hub_node(*base)));
    constant.head_bias(1) = 1.0;
    EXPECT_DOUBLE_EQ(accuracy_under_res(constant, base, 0.5, ds.test, Rng(3)), 1.0 / 3.0);

    Rng init(2);
    const FilterTensor h = init_tensor(cfg.model(hub_node(*base)), init, 0.5);
    EXPECT_EQ(accuracy_under_res(h, base, 1.0, ds.test, Rng(3)), accuracy_under_res(h, base, 1.0, ds.test, Rng(4)));
}

TEST(SourceLocalization, SmallRunIsReproducibleAndSharesTheBaseline) {
    SourceLocConfig cfg;
    cfg.nodes = 12;
    cfg.communities = 3;
    cfg.train_size = 60;
    cfg.val_size = 12;
    cfg.test_size = 30;
    cfg.tau_max = 4;
    cfg.filters = 3;
    cfg.order = 2;
    cfg.iterations = 20;
    cfg.batch_size = 10;
    cfg.seeds = 2;
    cfg.test_p = {0.5, 1.0};
    const auto rows = run_source_localization(cfg, 1);
    EXPECT_EQ(rows.size(), 2U * (2U * 2U + 2U));
    const auto again = run_source_localization(cfg, 2);
    ASSERT_EQ(rows.size(), again.size());
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].value, again[i].value);

    // matched training at p = 1 reuses the GNN, so the two agree exactly there
    cfg.matched = 1;
    const auto matched = run_source_localization(cfg, 1);
    for (std::size_t i = 0; i < matched.size(); ++i) {
        if (matched[i].p != 1.0 || matched[i].method != "sgnn") continue;
        EXPECT_EQ(matched[i + 1].method, "gnn");
        EXPECT_EQ(matched[i].value, matched[i + 1].value);
    }
    cfg.matched = 2;
    EXPECT_THROW(cfg.validate(), InvalidConfig);
}

TEST(SourceLocalization, CachedProviderMatchesGeneratedRun) {
    SourceLocConfig cfg;
    cfg.nodes = 12;
    cfg.communities = 3;
    cfg.train_size = 30;
    cfg.val_size = 6;
    cfg.test_size = 15;
    cfg.tau_max = 3;
    cfg.filters = 2;
    cfg.order = 2;
    cfg.iterations = 10;
    cfg.batch_size = 5;
    cfg.seeds = 2;
    cfg.test_p = {0.5};
    const auto dir = std::filesystem::temp_directory_path() / "sgnn_cache_test";
    std::filesystem::remove_all(dir);
    const auto provider = cached_source_provider(dir);
    const auto plain = run_source_localization(cfg, 1);
    const auto first = run_source_localization(cfg, 1, provider);  // writes the cache
    const auto second = run_source_localization(cfg, 1, provider);  // reads it back
    ASSERT_EQ(plain.size(), first.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
        EXPECT_EQ(plain[i].value, first[i].value);
        EXPECT_EQ(plain[i].value, second[i].value);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / source_cache_name(cfg, 1)));
    EXPECT_NE(source_cache_name(cfg, 0), source_cache_name(cfg, 1));
    std::filesystem::remove_all(dir);
}

TEST(Convergence, GridLayoutAndSharedInitialization) {
    ConvergenceConfig cfg;
    cfg.task.nodes = 12;
    cfg.task.communities = 3;
    cfg.task.train_size = 60;
    cfg.task.val_size = 0;
    cfg.task.test_size = 3;
    cfg.task.tau_max = 4;
    cfg.task.filters = 3;
    cfg.task.order = 2;
    cfg.horizons = {5, 15};
    cfg.p = {0.5, 1.0};
    cfg.seeds = 2;
    cfg.batch_size = 10;
    cfg.schedule = ScheduleKind::Constant;
    cfg.lr = 0.1;
    std::vector<TrainTrace> traces;
    const auto rows = run_convergence(cfg, 2, &traces);
    ASSERT_EQ(traces.size(), 8U);
    ASSERT_EQ(rows.size(), 8U * 3U);
    const auto id = convergence_run_id(cfg, 7);
    EXPECT_EQ(id.p, 1.0);
    EXPECT_EQ(id.seed_index, 1U);
    EXPECT_EQ(id.horizon, 15U);
    // the horizons of one (p, seed) share data and initialization, so the
    // shorter trace is a prefix of the longer one
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(traces[0].cost[t], traces[1].cost[t]);
    EXPECT_EQ(traces[1].cost.size(), 15U);
    EXPECT_EQ(rows[0].p, 0.5);
    EXPECT_EQ(rows[0].method, "sgnn_T5");
    EXPECT_EQ(rows[0].metric, "min_grad_norm_sq");
    EXPECT_EQ(rows[0].value, convergence_metric(traces[0].grad_norm_sq).back());
    const auto again = run_convergence(cfg, 1);
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].value, again[i].value);
    cfg.p = {};
    EXPECT_THROW(run_convergence(cfg), InvalidConfig);
    cfg.p = {0.5};
    cfg.horizons = {2.5};
    EXPECT_THROW(run_convergence(cfg), InvalidConfig);
}

TEST(Controller, VelocityTermMatchesDirectSum) {
    SwarmState far = two_agents({0, 0}, {5, 0}, {1, 0}, {0, 0});
    const Matrix u = centralized_controller(far);
    EXPECT_EQ(u.row(0), Eigen::RowVector2d(-1, 0));
    EXPECT_EQ(u.row(1), Eigen::RowVector2d(1, 0));

    SwarmState same = two_agents({0, 0}, {5, 0}, {1, 2}, {1, 2});
    EXPECT_EQ(centralized_controller(same), Matrix::Zero(2, 2));
}

TEST(Controller, PotentialRepelsSymmetricallyAndClips) {
    SwarmState close = two_agents({0, 0}, {0.5, 0}, {0, 0}, {0, 0});
    const Matrix u = centralized_controller(close);
    // d = 0.5: (2/d^4 - 2/d^2) * d = (32 - 8) * 0.5 = 12 along -x for agent 0, clipped to 10
    EXPECT_EQ(u(0, 0), -10.0);
    EXPECT_EQ(u(1, 0), 10.0);
    EXPECT_EQ(u(0, 1), 0.0);
    SwarmParams loose;
    loose.u_max = 100.0;
    const Matrix raw = centralized_controller(close, loose);
    EXPECT_DOUBLE_EQ(raw(0, 0), -12.0);
    EXPECT_DOUBLE_EQ(raw(1, 0), 12.0);
    EXPECT_THROW(centralized_controller(two_agents({1, 1}, {1, 1}, {0, 0}, {0, 0})), DegenerateInput);
}

TEST(SwarmFeatures, LocalInvariants) {
    Rng rng(4);
    SwarmState s = random_swarm(6, 2.0, 0.1, 3.0, 0.05, rng);
    const ShiftOperator comm = build_disc_graph(positions(s.z), 1.5);
    const Matrix x = swarm_features(s, comm);
    const auto deg = comm.degrees();
    for (std::size_t i = 0; i < deg.size(); ++i) {
        if (deg[i] != 0) continue;
        EXPECT_EQ(x.row(static_cast<Eigen::Index>(i)), Eigen::RowVectorXd::Zero(6));
    }

    SwarmState shifted = s;
    shifted.z.rowwise() += Eigen::RowVector2d(7.5, -3.0);
    EXPECT_LE(max_abs_diff(swarm_features(shifted, comm), x), 1e-9);

    SwarmState pair = two_agents({0, 0}, {0.5, 0}, {1, 1}, {1, 1});
    const Matrix px = swarm_features(pair, verify::complete_graph(2));
    EXPECT_EQ(px.block(0, 0, 2, 2), Matrix::Zero(2, 2));
    EXPECT_DOUBLE_EQ(px(0, 2), -0.5 / 0.0625);
    EXPECT_DOUBLE_EQ(px(1, 4), 0.5 / 0.25);
    EXPECT_THROW(swarm_features(two_agents({0, 0}, {0, 0}, {0, 0}, {1, 0}), verify::complete_graph(2)),
                 DegenerateInput);
}

TEST(RandomSwarm, RespectsGeometry) {
    Rng rng(8);
    const SwarmState s = random_swarm(20, 2.0, 0.1, 3.0, 0.05, rng);
    for (Eigen::Index i = 0; i < 20; ++i) {
        EXPECT_LE(s.z.row(i).norm(), 2.0);
        for (Eigen::Index j = 0; j < i; ++j) EXPECT_GE((s.z.row(i) - s.z.row(j)).norm(), 0.1);
    }
    EXPECT_LE(s.v.cwiseAbs().maxCoeff(), 3.0);
    Rng again(8);
    EXPECT_EQ(random_swarm(20, 2.0, 0.1, 3.0, 0.05, again).z, s.z);
}

TEST(SimulateSwarm, ZeroPolicyKeepsInitialVariance) {
    Rng rng(5);
    const SwarmState init = random_swarm(8, 2.0, 0.1, 3.0, 0.05, rng);
    const SwarmRollout r = simulate_swarm(zero_policy(), init, 30, 0.7, Rng(1));
    EXPECT_NEAR(r.cost, velocity_variance(init.v), 1e-12);
    EXPECT_EQ(r.states.back().v, init.v);
    EXPECT_EQ(r.states.size(), 31U);
}

TEST(SimulateSwarm, ExpertReachesConsensusAndStaysBounded) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const SwarmState init = random_swarm(12, 2.0, 0.1, 3.0, 0.05, rng);
        const SwarmRollout r = simulate_swarm(expert_policy(), init, 100, 1.0, Rng(1));
        EXPECT_LT(velocity_variance(r.states.back().v), velocity_variance(init.v));
        const double vmax = init.v.rowwise().norm().maxCoeff();
        for (const auto& s : r.states) EXPECT_LT(s.v.rowwise().norm().maxCoeff(), 10.0 * vmax);
    }
}

TEST(SimulateSwarm, GuardsAndShapes) {
    Rng rng(6);
    const SwarmState init = random_swarm(5, 2.0, 0.1, 3.0, 0.05, rng);
    const SwarmPolicy wild = [](const SwarmObservation& o) { return Matrix::Constant(o.state.z.rows(), 2, 1e6).eval(); };
    EXPECT_THROW(simulate_swarm(wild, init, 10, 1.0, Rng(0)), Divergence);
    const SwarmPolicy wrong = [](const SwarmObservation&) { return Matrix::Zero(1, 2).eval(); };
    EXPECT_THROW(simulate_swarm(wrong, init, 10, 1.0, Rng(0)), InvalidInput);
    EXPECT_THROW(simulate_swarm(zero_policy(), init, 0, 1.0, Rng(0)), InvalidConfig);
}

TEST(Flocking, DatasetAndSmallRunAreReproducible) {
    FlockingConfig cfg;
    cfg.agents = 5;
    cfg.steps = 6;
    cfg.train_trajectories = 2;
    cfg.test_trajectories = 2;
    cfg.filters = 3;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seeds = 1;
    cfg.test_p = {0.7, 1.0};
    const auto data = flocking_dataset(cfg, Rng(1));
    ASSERT_EQ(data.size(), 12U);
    for (const auto& e : data) {
        EXPECT_EQ(e.x.rows(), 5);
        EXPECT_EQ(e.x.cols(), 6);
        EXPECT_EQ(e.y.cols(), 2);
        ASSERT_TRUE(e.graph);
        EXPECT_EQ(e.graph->n(), 5U);
    }
    const auto a = run_flocking_seed(cfg, 0);
    const auto b = run_flocking_seed(cfg, 0);
    EXPECT_EQ(a.sgnn, b.sgnn);
    ASSERT_EQ(a.rows.size(), 2U * 4U);
    for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].value, b.rows[i].value);
    // the zero policy cost does not depend on p
    EXPECT_EQ(summarize(a.rows, 0.7, "zero", "velocity_variance_cost").mean,
              summarize(a.rows, 1.0, "zero", "velocity_variance_cost").mean);
}

TEST(Results, CsvAndSummary) {
    const std::vector<ResultRow> rows{{0.5, "sgnn", 1, "acc", 0.5}, {0.5, "sgnn", 2, "acc", 0.7},
                                      {0.5, "gnn", 1, "acc", 0.1}};
    const Summary s = summarize(rows, 0.5, "sgnn", "acc");
    EXPECT_EQ(s.count, 2U);
    EXPECT_DOUBLE_EQ(s.mean, 0.6);
    EXPECT_NEAR(s.std, std::sqrt(0.02), 1e-15);
    std::stringstream out;
    write_results_csv(rows, out);
    EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "p,method,seed,metric,value");
    EXPECT_EQ(results_to_json(rows)[2]["method"], "gnn");
}

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace linsarsa;
using linsarsa::testing::random_features;
using linsarsa::testing::random_mdp;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

SarsaConfig gordon_config(std::uint64_t steps, std::uint64_t seed) {
    SarsaConfig c;
    c.steps = steps;
    c.seed = seed;
    c.op = PolicyOperator::eps_softmax(0.1, 0.1);
    c.schedule = LearningRateSchedule::constant(0.05);
    c.record_stride = 10;
    return c;
}

}  // namespace

TEST(Project, Examples) {
    EXPECT_EQ(project(vec({3, 4}), 10.0), vec({3, 4}));
    const Vector p = project(vec({3, 4}), 1.0);
    EXPECT_NEAR(p(0), 0.6, 1e-15);
    EXPECT_NEAR(p(1), 0.8, 1e-15);
    EXPECT_EQ(project(vec({3e300, 4}), kInf), vec({3e300, 4}));
    EXPECT_EQ(project(vec({0, 0}), 1.0), vec({0, 0}));
}

TEST(Project, NonExpansiveAndInsideBall) {
    Rng rng(21);
    for (int i = 0; i < 1000; ++i) {
        const double r = rng.uniform(0.1, 5.0);
        Vector u(4), v(4);
        for (Eigen::Index k = 0; k < 4; ++k) {
            u(k) = rng.uniform(-10, 10);
            v(k) = rng.uniform(-10, 10);
        }
        const Vector pu = project(u, r), pv = project(v, r);
        EXPECT_LE(pu.norm(), r * (1 + 1e-12));
        EXPECT_LE((pu - pv).norm(), (u - v).norm() * (1 + 1e-12));
        EXPECT_LT((project(pu, r) - pu).norm(), 1e-12);
    }
}

TEST(Schedule, Values) {
    EXPECT_EQ(LearningRateSchedule::constant(0.3).at(12345), 0.3);
    const auto p = LearningRateSchedule::polynomial(2.0, 100.0, 0.5);
    EXPECT_NEAR(p.at(0), 0.2, 1e-15);
    EXPECT_NEAR(p.at(300), 0.1, 1e-15);
    EXPECT_THROW(LearningRateSchedule::polynomial(1.0, 0.0, 0.5), ValidationError);
    EXPECT_THROW(LearningRateSchedule::polynomial(1.0, 1.0, 1.5), ValidationError);
    EXPECT_THROW(LearningRateSchedule::constant(-0.1), ValidationError);
}

TEST(SarsaStep, TerminalUpdateOnGordonUpperPair) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    SarsaState st{Vector::Zero(3), gordon::kUpper, 0};
    Rng rng(1);
    const Behavior b(PolicyOperator::eps_softmax(0.1, 1.0));
    const StepResult r = sarsa_step(st, mdp, x, b, 0.01, Variant::Sarsa, kInf, rng);
    EXPECT_TRUE(r.terminal);
    EXPECT_DOUBLE_EQ(r.delta, -2.0);
    EXPECT_NEAR((st.w - vec({0, 0, -0.02})).norm(), 0.0, 1e-15);
    EXPECT_EQ(st.s, gordon::kStart);
    EXPECT_EQ(r.s_next, gordon::kStart);
}

TEST(SarsaStep, TerminalDropsBootstrap) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    SarsaState st{vec({5, 5, 0.5}), gordon::kLower, 0};
    Rng rng(2);
    const Behavior b(PolicyOperator::eps_greedy(0.1));
    const StepResult r = sarsa_step(st, mdp, x, b, 0.1, Variant::Sarsa, kInf, rng);
    EXPECT_TRUE(r.terminal);
    EXPECT_DOUBLE_EQ(r.delta, -1.0 - 0.5);
    EXPECT_NEAR(st.w(2), 0.5 - 0.15, 1e-15);
}

TEST(SarsaStep, NonTerminalBootstrapsOnNextPair) {
    const auto [mdp, x] = build_gordon_mdp(1.0, 0.9);
    SarsaState st{vec({0.5, 0.25, -1}), gordon::kStart, 0};
    Rng rng(3);
    const Behavior b(PolicyOperator::eps_softmax(0.1, 1.0));
    const StepResult r = sarsa_step(st, mdp, x, b, 0.1, Variant::Sarsa, kInf, rng);
    EXPECT_FALSE(r.terminal);
    EXPECT_EQ(r.s_next, gordon::kUpper);
    EXPECT_NEAR(r.delta, 0.0 + 0.9 * -1.0 - 0.5, 1e-15);
    EXPECT_NEAR(st.w(0), 0.5 + 0.1 * r.delta, 1e-15);
}

TEST(SarsaStep, ExpectedVariantAveragesOverPolicy) {
    Rng gen(4);
    const Mdp mdp = random_mdp(gen, 3, 2, 0.8);
    const FeatureMap x = random_features(gen, mdp, 2);
    const Vector w = vec({0.7, -0.4});
    const PolicyOperator op = PolicyOperator::eps_softmax(0.2, 0.5);
    const PolicyTable pi = improve(op, mdp, x, w);
    const Vector q = x.values(w);
    for (int i = 0; i < 20; ++i) {
        SarsaState st{w, 1, 1};
        Rng rng(4, static_cast<std::uint64_t>(i));
        const StepResult r = sarsa_step(st, mdp, x, Behavior(op), 0.0, Variant::ExpectedSarsa, kInf, rng);
        double expected = 0.0;
        for (std::size_t a = 0; a < 2; ++a) expected += pi(r.s_next, a) * q(static_cast<Eigen::Index>(*mdp.pair_index(r.s_next, a)));
        EXPECT_NEAR(r.delta, mdp.reward(1, 1) + 0.8 * expected - q(3), 1e-12);
        EXPECT_EQ(st.w, w);
    }
}

TEST(SarsaStep, BlowUpIsReported) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    SarsaState st{vec({1e308, 1e308, 1e308}), gordon::kUpper, 0};
    Rng rng(5);
    EXPECT_THROW(sarsa_step(st, mdp, x, Behavior(PolicyOperator::eps_greedy(0.1)), 1e10, Variant::Sarsa, kInf, rng),
                 NumericalError);
}

TEST(Run, ZeroStepsGivesInitialRecord) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    const auto records = run(gordon_config(0, 1), mdp, x);
    ASSERT_EQ(records.size(), 1u);
    EXPECT_EQ(records[0].step, 0u);
    EXPECT_EQ(records[0].w, Vector::Zero(3));
    EXPECT_EQ(records[0].s, -1);
    EXPECT_EQ(records[0].s_next, static_cast<long>(gordon::kStart));
}

TEST(Run, RecordsEveryStride) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    const auto records = run(gordon_config(95, 1), mdp, x);
    ASSERT_EQ(records.size(), 10u);
    for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].step, 10 * i);
}

TEST(Run, DeterministicPerSeed) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    const auto a = run(gordon_config(5000, 7), mdp, x);
    const auto b = run(gordon_config(5000, 7), mdp, x);
    const auto c = run(gordon_config(5000, 8), mdp, x);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].w, b[i].w);
        EXPECT_EQ(a[i].s, b[i].s);
        EXPECT_EQ(a[i].a_next, b[i].a_next);
    }
    EXPECT_NE(a.back().w, c.back().w);
}

TEST(Run, ProjectionKeepsIterateInBall) {
    const auto [mdp, x] = build_gordon_mdp(4.0);
    SarsaConfig c = gordon_config(20000, 3);
    c.projection_radius = 0.5;
    c.record_stride = 1;
    c.schedule = LearningRateSchedule::constant(0.5);
    double largest = 0.0;
    run(
        c, mdp, x, [&](const TrajectoryRecord& r) { largest = std::max(largest, r.w.norm()); },
        [](std::uint64_t, const Vector&, const StepResult&) {});
    EXPECT_LE(largest, 0.5 * (1 + 1e-12));
    EXPECT_GT(largest, 0.49);
}

TEST(Run, FrozenPolicyIgnoresWeights) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    PolicyTable up = PolicyTable::uniform(mdp);
    up.probs(gordon::kStart, 0) = 1.0;
    up.probs(gordon::kStart, 1) = 0.0;
    SarsaConfig c = gordon_config(1000, 4);
    c.frozen_policy = up;
    c.record_stride = 1;
    for (const auto& r : run(c, mdp, x))
        if (r.s_next == static_cast<long>(gordon::kStart)) EXPECT_EQ(r.a_next, 0);
}

TEST(Run, ConfigValidation) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    SarsaConfig c = gordon_config(10, 1);
    c.initial_weight = vec({1, 1});
    EXPECT_THROW(run(c, mdp, x), ValidationError);
    c.initial_weight = vec({3, 0, 0});
    c.projection_radius = 1.0;
    EXPECT_THROW(run(c, mdp, x), ValidationError);
    c = gordon_config(10, 1);
    c.record_stride = 0;
    EXPECT_THROW(run(c, mdp, x), ValidationError);
}

TEST(RngTest, StreamsAndRanges) {
    Rng a(1), b(1), c(1, 1);
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Rng(1).next_u64(), c.next_u64());
    Rng r(9);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 100000, 0.5, 0.005);
    const std::vector<double> w{0.0, 0.3, 0.0, 0.7};
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < 100000; ++i) ++counts[r.categorical(w)];
    EXPECT_EQ(counts[0], 0);
    EXPECT_EQ(counts[2], 0);
    EXPECT_NEAR(counts[1] / 100000.0, 0.3, 0.01);
}

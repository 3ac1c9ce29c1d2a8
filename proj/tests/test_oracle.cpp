#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace linsarsa;
using linsarsa::testing::power_stationary;
using linsarsa::testing::random_features;
using linsarsa::testing::random_mdp;
using linsarsa::testing::random_policy;
using linsarsa::testing::tabular_features;

namespace {

Matrix mat2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

ThetaSampling sampling(double radius, std::size_t n, std::uint64_t seed) {
    ThetaSampling s;
    s.radius = radius;
    s.n_samples = n;
    s.seed = seed;
    return s;
}

}  // namespace

TEST(Stationary, Examples) {
    const Vector d1 = stationary_distribution(mat2(0.5, 0.5, 0.5, 0.5));
    EXPECT_NEAR(d1(0), 0.5, 1e-14);
    EXPECT_NEAR(d1(1), 0.5, 1e-14);
    const Vector d2 = stationary_distribution(mat2(0.9, 0.1, 0.5, 0.5));
    EXPECT_NEAR(d2(0), 5.0 / 6.0, 1e-14);
    EXPECT_NEAR(d2(1), 1.0 / 6.0, 1e-14);
    EXPECT_THROW(stationary_distribution(Matrix::Identity(3, 3)), ErgodicityError);
    EXPECT_THROW(stationary_distribution(mat2(0, 1, 1, 0)), ErgodicityError);
    EXPECT_THROW(stationary_distribution(mat2(0.5, 0.6, 0.5, 0.5)), ValidationError);
}

TEST(Stationary, PeriodicAllowedWhenOnlyIrreducibilityIsRequired) {
    const Vector d = stationary_distribution(mat2(0, 1, 1, 0), ChainRequirement::Irreducible);
    EXPECT_NEAR(d(0), 0.5, 1e-14);
    EXPECT_THROW(stationary_distribution(Matrix::Identity(2, 2), ChainRequirement::Irreducible), ErgodicityError);
}

TEST(Stationary, MatchesPowerIteration) {
    Rng rng(31);
    for (int i = 0; i < 30; ++i) {
        const Mdp mdp = random_mdp(rng, 2 + i % 4, 1 + i % 3, 0.9);
        const Matrix p = state_action_transition(mdp, random_policy(rng, mdp));
        EXPECT_LT((stationary_distribution(p) - power_stationary(p)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Stationary, MatchesSimulatedVisitFrequencies) {
    Rng rng(32);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9);
    const PolicyTable pi = random_policy(rng, mdp);
    const Matrix p = state_action_transition(mdp, pi);
    const Vector d = stationary_distribution(p);
    const Vector var = linsarsa::testing::visit_frequency_variance(p, d);
    const std::size_t steps = 1'000'000;
    std::vector<double> counts(6, 0.0);
    std::size_t y = 0;
    Rng sim(33);
    for (std::size_t t = 0; t < steps; ++t) {
        counts[y] += 1.0;
        Vector r = p.row(static_cast<Eigen::Index>(y)).transpose();
        y = sim.categorical(std::span<const double>(r.data(), 6));
    }
    for (Eigen::Index j = 0; j < 6; ++j) {
        const double se = std::sqrt(var(j) / static_cast<double>(steps));
        EXPECT_LE(std::abs(counts[static_cast<std::size_t>(j)] / steps - d(j)), 3.0 * se) << "pair " << j;
    }
}

TEST(PolicyMatricesTest, ZeroRewardGivesZeroB) {
    Rng rng(34);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9).with_rewards(Matrix::Zero(3, 2));
    const PolicyMatrices m = policy_matrices(mdp, random_features(rng, mdp, 2), PolicyTable::uniform(mdp));
    EXPECT_EQ(m.b_pi, Vector::Zero(2));
    EXPECT_EQ(td_fixed_point(m), Vector::Zero(2));
}

TEST(PolicyMatricesTest, TabularFixedPointIsActionValue) {
    Rng rng(35);
    for (int i = 0; i < 10; ++i) {
        const Mdp mdp = random_mdp(rng, 2 + i % 3, 2, 0.9);
        const PolicyTable pi = random_policy(rng, mdp);
        const FeatureMap x = tabular_features(mdp);
        const PolicyMatrices m = policy_matrices(mdp, x, pi);
        const Matrix n = Matrix::Identity(m.P_pi.rows(), m.P_pi.cols());
        EXPECT_LT((m.A_pi - Matrix(m.d_pi.asDiagonal()) * (0.9 * m.P_bootstrap - n)).norm(), 1e-14);
        EXPECT_LT((td_fixed_point(m) - exact_action_values(mdp, pi)).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(PolicyMatricesTest, SymmetricPartNegativeDefinite) {
    Rng rng(36);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9);
    const PolicyMatrices m = policy_matrices(mdp, random_features(rng, mdp, 3), PolicyTable::uniform(mdp));
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.A_pi + m.A_pi.transpose());
    EXPECT_LT(es.eigenvalues().maxCoeff(), 0.0);
}

TEST(PolicyMatricesTest, GordonRestartChain) {
    const auto [mdp, x] = build_gordon_mdp(1.0);
    const PolicyMatrices m = policy_matrices(mdp, x, PolicyTable::uniform(mdp));
    EXPECT_NEAR(m.d_pi.sum(), 1.0, 1e-14);
    EXPECT_NEAR(m.d_pi(gordon::kPairUp), 0.25, 1e-12);
    EXPECT_NEAR(m.d_pi(gordon::kPairUpper), 0.25, 1e-12);
}

TEST(Projection, IdempotentAndSelfAdjoint) {
    Rng rng(37);
    for (int i = 0; i < 10; ++i) {
        const Mdp mdp = random_mdp(rng, 4, 2, 0.9);
        const FeatureMap x = random_features(rng, mdp, 3);
        const PolicyMatrices m = policy_matrices(mdp, x, random_policy(rng, mdp));
        const Matrix pr = projection_operator(m, x);
        const Matrix d = m.d_pi.asDiagonal();
        EXPECT_LT((pr * pr - pr).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((d * pr - pr.transpose() * d).cwiseAbs().maxCoeff(), 1e-9);
        Vector w(3);
        w << 1, -2, 0.5;
        const Vector q = x.values(w);
        EXPECT_LT((pr * q - q).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Projection, TabularIsIdentity) {
    Rng rng(38);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9);
    const FeatureMap x = tabular_features(mdp);
    const PolicyMatrices m = policy_matrices(mdp, x, random_policy(rng, mdp));
    EXPECT_LT((projection_operator(m, x) - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Projection, WeightedLeastSquares) {
    Rng rng(39);
    const Mdp mdp = random_mdp(rng, 4, 2, 0.9);
    const FeatureMap x = random_features(rng, mdp, 3);
    const PolicyMatrices m = policy_matrices(mdp, x, random_policy(rng, mdp));
    Vector q(8);
    for (Eigen::Index i = 0; i < 8; ++i) q(i) = rng.uniform(-3, 3);
    const Vector sq = m.d_pi.cwiseSqrt();
    const Vector w = (sq.asDiagonal() * x.matrix()).colPivHouseholderQr().solve(Vector(sq.asDiagonal() * q));
    EXPECT_LT((projection_operator(m, x) * q - x.values(w)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(HOperator, TabularUniformIsBellman) {
    Rng rng(40);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9);
    const FeatureMap x = tabular_features(mdp);
    const PolicyOperator op = PolicyOperator::eps_greedy(1.0);
    Vector q(6);
    for (Eigen::Index i = 0; i < 6; ++i) q(i) = rng.uniform(-2, 2);
    const Vector expected = bellman_operator(mdp, bootstrap_transition(mdp, PolicyTable::uniform(mdp)), q);
    EXPECT_LT((h_operator(q, mdp, x, op) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HOperator, ZeroIsFixedWithoutReward) {
    Rng rng(41);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9).with_rewards(Matrix::Zero(3, 2));
    const FeatureMap x = random_features(rng, mdp, 2);
    EXPECT_EQ(h_operator(Vector::Zero(6), mdp, x, PolicyOperator::eps_softmax(0.1, 1.0)), Vector::Zero(6));
}

TEST(FixedPoint, ZeroRewardConvergesImmediately) {
    Rng rng(42);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9).with_rewards(Matrix::Zero(3, 2));
    const FeatureMap x = random_features(rng, mdp, 2);
    const auto res = find_fixed_point(mdp, x, PolicyOperator::eps_softmax(0.1, 1.0), 10.0);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.iterations, 1u);
    EXPECT_EQ(res.w, Vector::Zero(2));
    EXPECT_EQ(error_function(Vector::Zero(2), mdp, x, PolicyOperator::eps_softmax(0.1, 1.0), 10.0), 0.0);
}

TEST(FixedPoint, GordonSmallRewardConverges) {
    const auto [mdp, x] = build_gordon_mdp(0.1, 0.99);
    const PolicyOperator op = PolicyOperator::eps_softmax(0.1, 0.01);
    const auto res = find_fixed_point(mdp, x, op, kInf, 0.5);
    ASSERT_TRUE(res.converged);
    EXPECT_LT(res.error, 1e-10);
    const Vector q = x.values(res.w);
    EXPECT_LT((h_operator(q, mdp, x, op) - q).cwiseAbs().maxCoeff(), 1e-8);
    Vector v = Vector::Zero(3);
    v(0) = 1.0;
    EXPECT_GT(error_function(res.w + v, mdp, x, op, kInf), 0.0);
}

TEST(FixedPoint, GordonLargeRewardIsReported) {
    const auto [mdp, x] = build_gordon_mdp(4.0, 0.99);
    const auto res = find_fixed_point(mdp, x, PolicyOperator::eps_softmax(0.1, 0.01), kInf, 0.5, 1e-10, 2000);
    if (res.converged) {
        EXPECT_LT(res.error, 1e-9);
    } else {
        EXPECT_FALSE(res.contraction.empty());
        EXPECT_GT(res.error, 0.0);
    }
}

TEST(FixedPoint, ErrorAndHResidualAgree) {
    const auto [mdp, x] = build_gordon_mdp(0.1, 0.99);
    const PolicyOperator op = PolicyOperator::eps_softmax(0.1, 0.5);
    const auto res = find_fixed_point(mdp, x, op, kInf);
    ASSERT_TRUE(res.converged);
    Rng rng(43);
    for (int i = 0; i < 50; ++i) {
        const Vector w = res.w + sample_ball(rng, 3, i % 2 ? 1e-3 : 1.0);
        const double e = error_function(w, mdp, x, op, kInf);
        const Vector q = x.values(w);
        const double h = (h_operator(q, mdp, x, op) - q).cwiseAbs().maxCoeff();
        EXPECT_GT(e, 1e-16);
        EXPECT_GT(h, 1e-7);
    }
    const Vector q = x.values(res.w);
    EXPECT_LT(error_function(res.w, mdp, x, op, kInf), 1e-16);
    EXPECT_LT((h_operator(q, mdp, x, op) - q).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(FixedPoint, ArgumentChecks) {
    const auto [mdp, x] = build_gordon_mdp(0.1, 0.99);
    const PolicyOperator op = PolicyOperator::eps_softmax(0.1, 0.5);
    EXPECT_THROW(find_fixed_point(mdp, x, op, kInf, 0.0), ValidationError);
    EXPECT_THROW(find_fixed_point(mdp, x, op, kInf, 0.5, 0.0), ValidationError);
}

TEST(Eta, TabularIsMinimumVisitProbability) {
    Rng rng(44);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9);
    const FeatureMap x = tabular_features(mdp);
    const PolicyOperator op = PolicyOperator::eps_softmax(0.2, 1.0);
    const ThetaSampling s = sampling(2.0, 20, 1);
    double smallest = kInf;
    for (const auto& theta : theta_points(s, 6))
        smallest = std::min(smallest, policy_matrices(mdp, x, improve(op, mdp, x, theta)).d_pi.minCoeff());
    const EtaEstimate e = eta_estimate(mdp, x, op, s);
    EXPECT_NEAR(e.eta, 0.1 * smallest, 1e-12);
    EXPECT_TRUE(e.applicable);
    EXPECT_EQ(e.samples, 21u);
}

TEST(Eta, UniformOperatorAndUndiscounted) {
    Rng rng(45);
    const Mdp mdp = random_mdp(rng, 3, 2, 0.9);
    const FeatureMap x = random_features(rng, mdp, 2);
    const PolicyMatrices m = policy_matrices(mdp, x, PolicyTable::uniform(mdp));
    const Matrix gram = x.matrix().transpose() * m.d_pi.asDiagonal() * x.matrix();
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    EXPECT_NEAR(eta_estimate(mdp, x, PolicyOperator::eps_greedy(1.0), sampling(3.0, 10, 2)).eta,
                0.1 * es.eigenvalues()(0), 1e-12);
    const auto [gordon_mdp, gx] = build_gordon_mdp(1.0);
    const EtaEstimate e = eta_estimate(gordon_mdp, gx, PolicyOperator::eps_softmax(0.1, 1.0), sampling(1.0, 5, 3));
    EXPECT_EQ(e.eta, 0.0);
    EXPECT_FALSE(e.applicable);
}

TEST(Lw, ZeroRewardAndConstantPolicy) {
    Rng rng(46);
    const Mdp base = random_mdp(rng, 3, 2, 0.9);
    const FeatureMap x = random_features(rng, base, 2);
    const Mdp quiet = base.with_rewards(Matrix::Zero(3, 2));
    EXPECT_EQ(lw_estimate(quiet, x, PolicyOperator::eps_softmax(0.1, 1.0), 5.0, sampling(5.0, 20, 1)).value, 0.0);
    EXPECT_LT(lw_estimate(base, x, PolicyOperator::eps_softmax(1.0, 1.0), 5.0, sampling(5.0, 20, 1)).value, 1e-9);
}

TEST(Lw, ScalesWithReward) {
    const PolicyOperator op = PolicyOperator::eps_softmax(0.1, 0.01);
    const auto [big, xb] = build_gordon_mdp(1.0, 0.99);
    const auto [small, xs] = build_gordon_mdp(0.1, 0.99);
    const double c = 10.0;
    const double lb = lw_estimate(big, xb, op, c, sampling(c, 200, 5)).value;
    const double ls = lw_estimate(small, xs, op, c, sampling(c, 200, 5)).value;
    ASSERT_GT(lb, 0.0);
    EXPECT_GE(ls / lb, 0.08);
    EXPECT_LE(ls / lb, 0.12);
}

TEST(RegionRadiusTest, Examples) {
    EXPECT_EQ(region_radius(0.0, 0.1, 10.0).r_star, 0.0);
    const RegionRadius r = region_radius(0.5, 0.1, 10.0);
    EXPECT_TRUE(r.applicable);
    EXPECT_NEAR(r.r_star, 6.0 * std::sqrt(2.0) * 0.5 * 41.0 / (0.1 * 0.5), 1e-9);
    EXPECT_NEAR(r.r_star, 3478.97, 0.01);
    EXPECT_NEAR(r.informativeness, r.r_star / 20.0, 1e-12);
    const RegionRadius inf = region_radius(0.5, 0.1, kInf);
    EXPECT_NEAR(inf.informativeness, 12.0 * std::sqrt(2.0) * 0.5 / (0.1 * 0.5), 1e-9);
    EXPECT_NEAR(region_radius(0.5, 0.1, 1e9).informativeness, inf.informativeness, 1e-6);
    EXPECT_FALSE(region_radius(1.0, 0.1, 10.0).applicable);
    EXPECT_FALSE(region_radius(0.5, 0.0, 10.0).applicable);
}

TEST(PseudoContraction, GordonSmallStep) {
    const auto [mdp, x] = build_gordon_mdp(1.0, 0.99);
    const PseudoContractionReport rep =
        pseudo_contraction_check(mdp, x, PolicyOperator::eps_softmax(0.1, 0.01), 0.001, sampling(10.0, 1000, 7), 5.0);
    EXPECT_EQ(rep.checked, 1001u);
    EXPECT_TRUE(rep.passed) << "max ratio " << rep.max_ratio << " kappa " << rep.kappa;
    EXPECT_LE(rep.max_ratio, rep.kappa + 1e-9);
}

TEST(PseudoContraction, DefaultStepIsHalfBar) {
    const auto [mdp, x] = build_gordon_mdp(1.0, 0.9);
    const PseudoContractionReport rep =
        pseudo_contraction_check(mdp, x, PolicyOperator::eps_softmax(0.1, 1.0), 0.0, sampling(5.0, 50, 8), 1.0);
    EXPECT_NEAR(rep.alpha, 0.5 * rep.alpha_bar, 1e-15);
    EXPECT_TRUE(rep.alpha_below_bar);
    EXPECT_TRUE(rep.passed);
    EXPECT_GT(rep.kappa, 0.0);
    EXPECT_LT(rep.kappa, 1.0);
    const auto [undiscounted, ux] = build_gordon_mdp(1.0);
    EXPECT_THROW(pseudo_contraction_check(undiscounted, ux, PolicyOperator::eps_softmax(0.1, 1.0), 0.0,
                                          sampling(5.0, 5, 8), 1.0),
                 ValidationError);
}

TEST(Mixing, Examples) {
    EXPECT_EQ(mixing_time(mat2(0.9, 0.1, 0.1, 0.9), 0.01), 21u);
    EXPECT_EQ(mixing_time(mat2(0.5, 0.5, 0.5, 0.5), 0.5), 1u);
    EXPECT_EQ(mixing_time(mat2(0.5, 0.5, 0.5, 0.5), 1e-9), 1u);
    EXPECT_EQ(mixing_time(mat2(0.5, 0.5, 0.5, 0.5), 1.0), 0u);
    EXPECT_THROW(mixing_time(mat2(0, 1, 1, 0), 0.1), ErgodicityError);
    EXPECT_THROW(mixing_time(mat2(0.5, 0.5, 0.5, 0.5), 0.0), ValidationError);
}

TEST(RateCaseTest, Examples) {
    const RateCase a = rate_case(0.5, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(a.power, 0.25);
    EXPECT_DOUBLE_EQ(a.log_power, 1.0);
    const RateCase b = rate_case(1.0, 3.0, 1.0);
    EXPECT_DOUBLE_EQ(b.power, 0.5);
    EXPECT_DOUBLE_EQ(b.log_power, 1.5);
    const RateCase c = rate_case(1.0, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(c.power, 1.0 / 6.0);
    EXPECT_DOUBLE_EQ(c.log_power, 1.0);
    const RateCase d = rate_case(1.0, 2.0, 2.0);
    EXPECT_DOUBLE_EQ(d.power, 0.5);
    EXPECT_DOUBLE_EQ(d.log_power, 1.0);
    EXPECT_THROW(rate_case(0.0, 1.0, 1.0), ValidationError);
}

TEST(Analyze, GordonReportsPeriodicChain) {
    const auto [mdp, x] = build_gordon_mdp(0.1, 0.99);
    AnalysisOptions opt;
    opt.c_gamma = 10.0;
    opt.n_samples = 16;
    const AnalysisReport rep = analyze(mdp, x, PolicyOperator::eps_softmax(0.1, 1.0), opt);
    const io::Json j = to_json(rep);
    EXPECT_TRUE(j.contains("fixed_point"));
    bool periodic_caveat = false;
    for (const auto& c : rep.caveats)
        if (c.find("periodic") != std::string::npos) periodic_caveat = true;
    EXPECT_TRUE(periodic_caveat);
}

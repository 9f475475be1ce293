#include "priorprobe/config.hpp"
#include "priorprobe/oracle.hpp"
#include "test_util.hpp"

#include <fstream>

using namespace priorprobe;
using namespace priorprobe::oracle;
using priorprobe::testing::code_of;

namespace {

json expected(const std::string& name) {
    std::ifstream in(std::string(PRIORPROBE_CONFIG_DIR) + "/../tests/oracle/expected/" + name + ".json");
    return json::parse(in);
}

DiscreteConfig from_file(const std::string& name) {
    const auto cfg = load_run_config(priorprobe::testing::config_path(name + ".json"));
    return DiscreteConfig{cfg.space, cfg.participants.at(0).model, cfg.gatekeeper, cfg.face_proposals};
}

/// A random config with every entry well above the classify floor.
DiscreteConfig random_config(RngStream& rng) {
    const std::size_t nf = 2 + rng.below(6), ne = 2 + rng.below(4);
    auto row = [&](std::size_t n) {
        std::vector<double> w(n);
        for (auto& x : w) x = 0.05 + rng.uniform();
        return normalize(w);
    };
    std::vector<Categorical> lik, gate;
    for (std::size_t e = 0; e < ne; ++e) lik.push_back(row(nf));
    for (std::size_t f = 0; f < nf; ++f) gate.push_back(row(ne));
    return DiscreteConfig{StimulusSpace::default_discrete(nf), ParticipantModel(row(ne), DiscreteLikelihood{lik}),
                          Gatekeeper(TableGatekeeper{gate}), std::nullopt};
}

} // namespace

TEST(JointStateIndex, Bijective) {
    const JointStateIndex idx(5, 3);
    EXPECT_EQ(idx.size(), 15u);
    std::vector<int> seen(15, 0);
    for (std::size_t f = 0; f < 5; ++f)
        for (std::size_t e = 0; e < 3; ++e) {
            const auto k = idx.flat(f, e);
            ++seen[k];
            EXPECT_EQ(idx.stimulus(k), f);
            EXPECT_EQ(idx.category(k), e);
        }
    for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(TransitionMatrix, CanonicalIsRowStochastic) {
    const auto t = build_transition_matrix(DiscreteConfig::canonical_2x2());
    ASSERT_EQ(t.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(t.row_sum(i), 1.0, 1e-12);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_GE(t(i, j), 0.0);
    }
}

TEST(TransitionMatrix, RandomConfigsAreRowStochastic) {
    RngStream rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto t = build_transition_matrix(random_config(rng));
        for (std::size_t r = 0; r < t.size(); ++r) EXPECT_NEAR(t.row_sum(r), 1.0, 1e-12);
    }
}

TEST(Stationary, CanonicalMatchesHandJoint) {
    const auto pi = stationary_distribution(build_transition_matrix(DiscreteConfig::canonical_2x2()));
    const double z = 0.684;
    const double hand[] = {0.504 / z, 0.042 / z, 0.012 / z, 0.126 / z};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(pi[i], hand[i], 1e-10);
}

TEST(Stationary, UniformEverythingIsUniform) {
    const DiscreteConfig c{StimulusSpace::default_discrete(3),
                           ParticipantModel(Categorical::uniform(2),
                                            DiscreteLikelihood{{Categorical::uniform(3), Categorical::uniform(3)}}),
                           Gatekeeper(TableGatekeeper{std::vector<Categorical>(3, Categorical::uniform(2))}),
                           std::nullopt};
    const auto r = analytic_recovery_check(c);
    for (double p : r.stationary_joint) EXPECT_NEAR(p, 1.0 / 6.0, 1e-12);
    EXPECT_NEAR(r.reweighted_marginal[0], 0.5, 1e-12);
}

TEST(Stationary, DoublyStochasticIsUniform) {
    Matrix t(3);
    const double rows[3][3] = {{0.2, 0.5, 0.3}, {0.3, 0.2, 0.5}, {0.5, 0.3, 0.2}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t(i, j) = rows[i][j];
    for (double p : stationary_distribution(t)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
}

TEST(Stationary, ReducibleIsNotConverged) {
    Matrix t(3);
    for (int i = 0; i < 3; ++i) t(i, i) = 1.0;
    EXPECT_EQ(code_of([&] { stationary_distribution(t); }), ErrorCode::NotConverged);
}

TEST(Stationary, IterationBudgetExhausted) {
    Matrix t(2);
    t(0, 0) = 0.999999;
    t(0, 1) = 0.000001;
    t(1, 0) = 0.5;
    t(1, 1) = 0.5;
    EXPECT_EQ(code_of([&] { stationary_distribution(t, 1e-12, 10); }), ErrorCode::NotConverged);
}

TEST(Stationary, RejectsNonStochastic) {
    Matrix t(2);
    t(0, 0) = 0.5;
    t(1, 1) = 1.0;
    EXPECT_EQ(code_of([&] { stationary_distribution(t); }), ErrorCode::InvalidValue);
}

TEST(Recovery, CanonicalMarginalIsTruePrior) {
    const auto r = analytic_recovery_check(DiscreteConfig::canonical_2x2());
    EXPECT_NEAR(r.reweighted_marginal[0], 0.7, 1e-10);
    EXPECT_NEAR(r.reweighted_marginal[1], 0.3, 1e-10);
    EXPECT_LE(r.joint_gap, 1e-10);
}

TEST(Recovery, MatchesIndependentOracle) {
    for (const std::string name : {"canonical_2x2", "inconsistent_2x2", "discrete_3x8"}) {
        const auto want = expected(name);
        const auto r = analytic_recovery_check(from_file(name));
        const auto joint = want["stationary_joint"].get<std::vector<double>>();
        const auto marg = want["reweighted_marginal"].get<std::vector<double>>();
        ASSERT_EQ(joint.size(), r.stationary_joint.size()) << name;
        for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(r.stationary_joint[i], joint[i], 1e-10) << name;
        for (std::size_t e = 0; e < marg.size(); ++e) EXPECT_NEAR(r.reweighted_marginal[e], marg[e], 1e-10) << name;
    }
}

TEST(Recovery, InconsistentFaceProposalsLeaveAGap) {
    const auto r = analytic_recovery_check(from_file("inconsistent_2x2"));
    EXPECT_NEAR(r.reweighted_marginal[0], 0.6742420316144078, 1e-10);
    EXPECT_NEAR(r.marginal_gap, 0.0257579683855923, 1e-10);
    EXPECT_GT(r.joint_gap, 0.01);
}

TEST(Recovery, RandomConsistentConfigsRecoverPrior) {
    RngStream rng(42);
    for (int i = 0; i < 30; ++i) {
        const auto r = analytic_recovery_check(random_config(rng));
        EXPECT_LE(r.joint_gap, 1e-10);
        EXPECT_LE(r.marginal_gap, 1e-10);
    }
}

TEST(Recovery, ContinuousIsNotDiscrete) {
    DiscreteConfig c = DiscreteConfig::canonical_2x2();
    c.space = StimulusSpace::default_continuous();
    EXPECT_EQ(code_of([&] { build_transition_matrix(c); }), ErrorCode::NotDiscrete);
}

TEST(Recovery, ReportJson) {
    const auto j = report_json(analytic_recovery_check(DiscreteConfig::canonical_2x2()), CategorySet({"A", "B"}));
    EXPECT_EQ(j["schema"], "priorprobe.oracle_report/1");
    EXPECT_EQ(j["stationary_joint"].size(), 4u);
    EXPECT_LE(j["marginal_gap"].get<double>(), 1e-10);
}

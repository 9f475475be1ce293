#include "priorprobe/chain.hpp"
#include "priorprobe/config.hpp"
#include "priorprobe/oracle.hpp"
#include "test_util.hpp"

using namespace priorprobe;
using priorprobe::testing::code_of;

namespace {

struct Fixture {
    StimulusSpace space = StimulusSpace::default_discrete(2);
    Gatekeeper gatekeeper = Gatekeeper(TableGatekeeper{{Categorical({0.9, 0.1}), Categorical({0.3, 0.7})}});
    ParticipantModel participant = ParticipantModel(
        Categorical({0.7, 0.3}), DiscreteLikelihood{{Categorical({0.8, 0.2}), Categorical({0.4, 0.6})}});
    ChainEnv env() const { return ChainEnv{&gatekeeper, &space, {}}; }
};

/// Seven emotion-like categories over eight stimuli.
struct SevenCategories {
    StimulusSpace space = StimulusSpace::default_discrete(8);
    Gatekeeper gatekeeper;
    SevenCategories() {
        std::vector<Categorical> rows;
        for (std::size_t f = 0; f < 8; ++f) {
            std::vector<double> w(7);
            for (std::size_t e = 0; e < 7; ++e) w[e] = 1.0 + double((f + e) % 7);
            rows.push_back(normalize(w));
        }
        gatekeeper = Gatekeeper(TableGatekeeper{rows});
    }
    ChainEnv env() const { return ChainEnv{&gatekeeper, &space, {}}; }
};

} // namespace

TEST(InitChain, StartsWithCategorizationTrialAgainstAnotherCategory) {
    SevenCategories c;
    for (CategoryIndex start = 0; start < 7; ++start) {
        ChainState s = init_chain(start, start, c.env(), RngStream(100 + start));
        EXPECT_EQ(s.current_e, start);
        EXPECT_EQ(s.phase, Phase::CategoryNext);
        EXPECT_TRUE(s.samples.empty());
        const auto& t = next_trial(s, c.env());
        ASSERT_EQ(t.kind(), TrialKind::Category);
        EXPECT_EQ(t.category().current, start);
        EXPECT_NE(t.category().proposal, start);
    }
}

TEST(InitChain, FirstProposalIsUniformOverOthers) {
    SevenCategories c;
    std::vector<int> hist(7, 0);
    const int n = 7000;
    for (int i = 0; i < n; ++i) {
        ChainState s = init_chain(0, 3, c.env(), RngStream(i));
        ++hist[next_trial(s, c.env()).category().proposal];
    }
    EXPECT_EQ(hist[3], 0);
    for (int e = 0; e < 7; ++e)
        if (e != 3) EXPECT_NEAR(hist[e], n / 6.0, 4 * std::sqrt(n / 6.0));
}

TEST(InitChain, SevenStartsAreDistinct) {
    SevenCategories c;
    std::vector<ChainState> chains;
    for (CategoryIndex e = 0; e < 7; ++e) chains.push_back(init_chain(e, e, c.env(), RngStream(1).derive(e)));
    for (std::size_t a = 0; a < 7; ++a)
        for (std::size_t b = a + 1; b < 7; ++b) EXPECT_NE(chains[a].current_e, chains[b].current_e);
}

TEST(InitChain, Deterministic) {
    Fixture fx;
    EXPECT_EQ(init_chain(0, 1, fx.env(), RngStream(5)), init_chain(0, 1, fx.env(), RngStream(5)));
    EXPECT_EQ(code_of([&] { init_chain(0, 2, fx.env(), RngStream(5)); }), ErrorCode::InvalidValue);
}

TEST(NextTrial, PointMassGatekeeperAlwaysAutoAccepts) {
    const auto space = StimulusSpace::default_discrete(2);
    const Gatekeeper g(TableGatekeeper{{Categorical({1.0, 0.0}), Categorical({1.0, 0.0})}});
    const ChainEnv env{&g, &space, {}};
    ChainState s = init_chain(0, 0, env, RngStream(3));
    s.first_category_trial = false;
    for (int i = 0; i < 1000; ++i) {
        s.phase = Phase::CategoryNext;
        const auto t = next_trial(s, env);
        EXPECT_EQ(t.kind(), TrialKind::AutoAccept);
        apply_choice(s, t, std::nullopt);
    }
    EXPECT_EQ(s.counters.auto_accepts, 1000u);
    EXPECT_EQ(s.trials_done, 0u);
}

TEST(NextTrial, AutoAcceptRateFollowsGatekeeper) {
    const auto space = StimulusSpace::default_discrete(2);
    const Gatekeeper g(TableGatekeeper{{Categorical({0.4, 0.6}), Categorical({0.4, 0.6})}});
    const ChainEnv env{&g, &space, {}};
    ChainState s = init_chain(0, 0, env, RngStream(11));
    s.first_category_trial = false;
    int autos = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto& t = next_trial(s, env);
        autos += t.kind() == TrialKind::AutoAccept;
        s.in_flight.reset();
    }
    EXPECT_NEAR(autos / double(n), 0.40, 0.005);
}

TEST(NextTrial, FaceOptionsShareNuisanceSeed) {
    SevenCategories c;
    ChainState s = init_chain(0, 2, c.env(), RngStream(4));
    s.phase = Phase::FaceNext;
    for (int i = 0; i < 50; ++i) {
        const auto& t = next_trial(s, c.env());
        ASSERT_EQ(t.kind(), TrialKind::Face);
        EXPECT_EQ(t.face().current.nuisance_seed, t.face().proposal.nuisance_seed);
        EXPECT_EQ(t.face().category, 2u);
        s.in_flight.reset();
    }
}

TEST(NextTrial, Idempotent) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(9));
    const TrialDescriptor first = next_trial(s, fx.env());
    const RngStream after = s.rng;
    EXPECT_EQ(next_trial(s, fx.env()), first);
    EXPECT_EQ(s.rng, after);
}

TEST(NextTrial, ProposalIgnoresOuterStimulus) {
    SevenCategories c;
    ChainState a = init_chain(0, 4, c.env(), RngStream(21));
    ChainState b = a;
    a.current_f = Stimulus::discrete(0);
    b.current_f = Stimulus::discrete(7);
    a.phase = b.phase = Phase::FaceNext;
    for (int i = 0; i < 200; ++i) {
        const auto ta = next_trial(a, c.env());
        const auto tb = next_trial(b, c.env());
        EXPECT_EQ(ta.face().proposal, tb.face().proposal);
        a.in_flight.reset();
        b.in_flight.reset();
    }
}

TEST(ApplyChoice, CategoryProposalAccepted) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(9));
    const TrialDescriptor t = next_trial(s, fx.env());
    ASSERT_EQ(t.kind(), TrialKind::Category);
    const auto& cat = t.category();
    apply_choice(s, t, Choice{1, 4});
    EXPECT_EQ(s.current_e, 1u);
    ASSERT_EQ(s.samples.size(), 1u);
    EXPECT_EQ(s.samples[0].e, 1u);
    EXPECT_EQ(s.samples[0].gatekeeper_prob, fx.gatekeeper.classify(cat.stimulus)[1]);
    EXPECT_EQ(s.phase, Phase::FaceNext);
    EXPECT_EQ(s.trials_done, 1u);
}

TEST(ApplyChoice, FaceKeepCurrentFlipsPhaseOnly) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(9));
    s.phase = Phase::FaceNext;
    const Stimulus before = s.current_f;
    const TrialDescriptor t = next_trial(s, fx.env());
    apply_choice(s, t, Choice{0, std::nullopt});
    EXPECT_TRUE(same_point(s.current_f, before));
    EXPECT_EQ(s.phase, Phase::CategoryNext);
    EXPECT_TRUE(s.samples.empty());
}

TEST(ApplyChoice, StaleTrial) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(9));
    const TrialDescriptor t = next_trial(s, fx.env());
    apply_choice(s, t, Choice{0, 3});
    const ChainState snapshot = s;
    EXPECT_EQ(code_of([&] { apply_choice(s, t, Choice{0, 3}); }), ErrorCode::StaleTrial);
    EXPECT_EQ(s, snapshot);
}

TEST(ApplyChoice, HumanTrialNeedsChoice) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(9));
    const TrialDescriptor t = next_trial(s, fx.env());
    EXPECT_EQ(code_of([&] { apply_choice(s, t, std::nullopt); }), ErrorCode::InvalidValue);
    EXPECT_EQ(code_of([&] { apply_choice(s, t, Choice{2, 3}); }), ErrorCode::InvalidValue);
}

TEST(RunChain, CountsHumanTrialsOnly) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(12));
    RngStream responder(13);
    run_chain(s, fx.env(), fx.participant, responder, 1000);
    EXPECT_EQ(s.trials_done, 1000u);
    const auto& c = s.counters;
    EXPECT_EQ(c.face_trials + c.category_trials, 1000u);
    EXPECT_EQ(s.samples.size(), c.category_trials + c.auto_accepts);
    EXPECT_GE(s.samples.size(), 500u);
    for (std::size_t i = 0; i < s.samples.size(); ++i) EXPECT_EQ(s.samples[i].iteration, i);
}

TEST(RunChain, TwoTrialsAreOneOfEach) {
    // The first categorization trial always faces the participant, and a face trial follows it.
    Fixture fx;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ChainState s = init_chain(0, 0, fx.env(), RngStream(seed));
        RngStream responder(seed + 1000);
        run_chain(s, fx.env(), fx.participant, responder, 2);
        EXPECT_EQ(s.counters.category_trials, 1u);
        EXPECT_EQ(s.counters.face_trials, 1u);
    }
}

TEST(RunChain, SameSeedSameSamples) {
    Fixture fx;
    auto run = [&] {
        ChainState s = init_chain(3, 1, fx.env(), RngStream(77));
        RngStream responder(78);
        run_chain(s, fx.env(), fx.participant, responder, 300);
        return s;
    };
    EXPECT_EQ(run(), run());
    ChainState s = init_chain(0, 0, fx.env(), RngStream(1));
    RngStream r(2);
    EXPECT_EQ(code_of([&] { run_chain(s, fx.env(), fx.participant, r, 0); }), ErrorCode::InvalidValue);
}

TEST(RunChain, ContinuousSpace) {
    const auto space = StimulusSpace::default_continuous();
    const Gatekeeper g(SoftmaxGatekeeper::from_gaussians({{2.0, 0.0}, {-2.0, 0.0}, {0.0, 2.0}}, 0.5));
    const ParticipantModel m(Categorical({0.5, 0.3, 0.2}),
                             GaussianLikelihood{{{2.0, 0.0}, {-2.0, 0.0}, {0.0, 2.0}}, {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}});
    const ChainEnv env{&g, &space, {50, 0.5}};
    ChainState s = init_chain(0, 2, env, RngStream(4));
    RngStream responder(5);
    run_chain(s, env, m, responder, 200);
    for (const auto& smp : s.samples) {
        EXPECT_TRUE(space.contains(smp.f));
        EXPECT_GE(smp.gatekeeper_prob, kClassifyFloor);
        EXPECT_EQ(smp.gatekeeper_prob, g.classify(smp.f)[smp.e]);
    }
}

TEST(DetailedBalance, CategorySubChain) {
    const auto cfg = load_run_config(priorprobe::testing::config_path("discrete_3x8.json"));
    const oracle::DiscreteConfig dc{cfg.space, cfg.participants[0].model, cfg.gatekeeper, std::nullopt};
    for (std::size_t f = 0; f < 8; ++f) {
        const auto k = oracle::category_kernel(dc, f);
        const auto post = posterior(dc.participant, Stimulus::discrete(f));
        const auto g = dc.gatekeeper.classify(Stimulus::discrete(f));
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b)
                EXPECT_NEAR(post[a] * g[a] * k(a, b), post[b] * g[b] * k(b, a), 1e-12);
    }
}

TEST(DetailedBalance, FaceSubChain) {
    const auto cfg = load_run_config(priorprobe::testing::config_path("discrete_3x8.json"));
    const oracle::DiscreteConfig dc{cfg.space, cfg.participants[0].model, cfg.gatekeeper, std::nullopt};
    for (CategoryIndex e = 0; e < 3; ++e) {
        const auto k = oracle::face_kernel(dc, e);
        const auto q = oracle::face_proposal(dc, e);
        auto pi = [&](std::size_t f) { return likelihood_at(dc.participant, Stimulus::discrete(f), e) * q[f]; };
        for (std::size_t a = 0; a < 8; ++a)
            for (std::size_t b = 0; b < 8; ++b) EXPECT_NEAR(pi(a) * k(a, b), pi(b) * k(b, a), 1e-12);
    }
}

TEST(Replay, LogReproducesFinalState) {
    Fixture fx;
    ChainState s = init_chain(2, 1, fx.env(), RngStream(31));
    const ChainState initial = s;
    RngStream responder(32);
    std::vector<json> log;
    run_chain(s, fx.env(), fx.participant, responder, 400,
              [&](const TrialDescriptor& t, const std::optional<Choice>& c, const ChainState& after) {
                  log.push_back(json::parse(trial_log_record(t, c, after).dump()));
              });
    ChainState replayed = initial;
    replay_chain(replayed, fx.env(), log);
    EXPECT_EQ(replayed, s);
    EXPECT_EQ(json(replayed).dump(), json(s).dump());
}

TEST(Replay, TamperedLogIsRejected) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(31));
    const ChainState initial = s;
    RngStream responder(32);
    std::vector<json> log;
    run_chain(s, fx.env(), fx.participant, responder, 20,
              [&](const TrialDescriptor& t, const std::optional<Choice>& c, const ChainState& after) {
                  log.push_back(trial_log_record(t, c, after));
              });
    log[5]["options"]["proposal_first"] = !log[5]["options"]["proposal_first"].get<bool>();
    ChainState replayed = initial;
    EXPECT_EQ(code_of([&] { replay_chain(replayed, fx.env(), log); }), ErrorCode::MalformedLog);
}

TEST(Json, ChainStateRoundTrip) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(31));
    RngStream responder(32);
    run_chain(s, fx.env(), fx.participant, responder, 30);
    next_trial(s, fx.env());
    const ChainState back = json::parse(json(s).dump()).get<ChainState>();
    EXPECT_EQ(back, s);
}

TEST(LogRecord, CarriesRequiredFields) {
    Fixture fx;
    ChainState s = init_chain(0, 0, fx.env(), RngStream(31));
    const TrialDescriptor t = next_trial(s, fx.env());
    apply_choice(s, t, Choice{1, 5});
    const json rec = trial_log_record(t, Choice{1, 5}, s);
    for (const char* k : {"chain_id", "iteration", "kind", "options", "choice", "confidence", "sample", "seed_state"})
        EXPECT_TRUE(rec.contains(k)) << k;
    EXPECT_EQ(rec["kind"], "category");
    EXPECT_EQ(rec["confidence"], 5);
    EXPECT_EQ(rec["sample"]["e"], 1);
}

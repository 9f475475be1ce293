#include "priorprobe/config.hpp"
#include "priorprobe/gatekeeper.hpp"
#include "test_util.hpp"

#include <httplib.h>

#include <thread>

using namespace priorprobe;
using priorprobe::testing::code_of;

namespace {

Gatekeeper two_row_table() { return Gatekeeper(TableGatekeeper{{Categorical({0.9, 0.1}), Categorical({0.3, 0.7})}}); }

/// Local HTTP classifier that answers every request with `reply`.
class MockClassifier {
public:
    explicit MockClassifier(std::string reply, int status = 200) : reply_(std::move(reply)), status_(status) {
        server_.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
            last_request = req.body;
            res.status = status_;
            res.set_content(reply_, "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockClassifier() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/classify"; }

    std::string last_request;

private:
    httplib::Server server_;
    std::string reply_;
    int status_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace

TEST(ApplyFloor, LeavesValidRowsAlone) {
    const Categorical p({0.9, 0.1});
    EXPECT_EQ(apply_floor(p), p);
}

TEST(ApplyFloor, RaisesZerosAndKeepsSum) {
    const auto p = apply_floor(Categorical({1.0, 0.0, 0.0}));
    EXPECT_EQ(p[1], kClassifyFloor);
    EXPECT_EQ(p[2], kClassifyFloor);
    EXPECT_NEAR(p[0], 1.0 - 2 * kClassifyFloor, 1e-15);
}

TEST(ApplyFloor, NeverBelowFloor) {
    RngStream rng(12);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> w(2 + rng.below(8));
        for (auto& x : w) x = rng.uniform() < 0.3 ? rng.uniform() * 1e-7 : rng.uniform();
        const auto p = apply_floor(normalize(w));
        for (double x : p.probs()) EXPECT_GE(x, kClassifyFloor);
    }
}

TEST(Classify, TableLookup) {
    const auto g = two_row_table();
    EXPECT_EQ(g.classify(Stimulus::discrete(0)), Categorical({0.9, 0.1}));
    EXPECT_EQ(g.n_categories(), 2u);
    EXPECT_EQ(code_of([&] { g.classify(Stimulus::discrete(2)); }), ErrorCode::OutOfBounds);
}

TEST(Classify, ZeroSoftmaxIsUniform) {
    const Gatekeeper g(SoftmaxGatekeeper{{{0, 0}, {0, 0}, {0, 0}}, {0, 0, 0}});
    const auto p = g.classify(Stimulus::vector({1.3, -2.0}));
    for (double x : p.probs()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Classify, SoftmaxHandArithmetic) {
    const Gatekeeper g(SoftmaxGatekeeper{{{1, 0}, {0, 0}}, {0, 0}});
    const auto p = g.classify(Stimulus::vector({std::log(3.0), 0.0}));
    EXPECT_NEAR(p[0], 0.75, 1e-15);
    EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(Classify, SoftmaxSurvivesLargeScores) {
    const Gatekeeper g(SoftmaxGatekeeper{{{1000}, {0}}, {0, 0}});
    const auto p = g.classify(Stimulus::vector({5.0}));
    EXPECT_EQ(p[1], kClassifyFloor);
    EXPECT_EQ(code_of([&] { g.classify(Stimulus::vector({1.0, 2.0})); }), ErrorCode::OutOfBounds);
}

TEST(Classify, FromGaussiansIsUniformPriorPosterior) {
    const std::vector<std::vector<double>> means{{1.0, 0.0}, {-1.0, 0.5}};
    const double var = 0.8;
    const Gatekeeper g(SoftmaxGatekeeper::from_gaussians(means, var));
    const std::vector<double> x{0.3, 0.2};
    std::vector<double> dens;
    for (const auto& mu : means) {
        double d2 = 0;
        for (int i = 0; i < 2; ++i) d2 += (x[i] - mu[i]) * (x[i] - mu[i]);
        dens.push_back(std::exp(-d2 / (2 * var)));
    }
    const auto expect = normalize(dens);
    const auto p = g.classify(Stimulus::vector(x));
    EXPECT_NEAR(p[0], expect[0], 1e-12);
    EXPECT_NEAR(p[1], expect[1], 1e-12);
}

TEST(ProposeStimulus, DiscreteColumnLaw) {
    const auto g = two_row_table();
    const auto space = StimulusSpace::default_discrete(2);
    RngStream rng(2024);
    int first = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) first += propose_stimulus(g, 0, space, {}, rng).id() == 0;
    EXPECT_NEAR(first / double(n), 0.75, 0.005);
}

TEST(ProposeStimulus, PointMassColumn) {
    // Every other stimulus keeps floor mass only, about 3e-6 of the column in total.
    const Gatekeeper g(TableGatekeeper{{Categorical({0.0, 1.0}), Categorical({1.0, 0.0}), Categorical({0.0, 1.0}),
                                        Categorical({0.0, 1.0})}});
    const auto space = StimulusSpace::default_discrete(4);
    RngStream rng(3);
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += propose_stimulus(g, 0, space, {}, rng).id() == 1;
    EXPECT_EQ(hits, 10000);
}

TEST(ProposeStimulus, DiscreteEmpiricalTv) {
    const auto cfg = load_run_config(priorprobe::testing::config_path("discrete_3x8.json"));
    RngStream rng(99);
    for (CategoryIndex e = 0; e < 3; ++e) {
        const auto column = discrete_proposal_column(cfg.gatekeeper, e, cfg.space);
        std::vector<double> freq(8, 0.0);
        const int n = 100000;
        for (int i = 0; i < n; ++i) freq[propose_stimulus(cfg.gatekeeper, e, cfg.space, {}, rng).id()] += 1.0 / n;
        EXPECT_LE(total_variation(freq, column.span()), 0.01) << "category " << e;
    }
}

TEST(ProposeStimulus, ContinuousUniformGatekeeperChiSquare) {
    const Gatekeeper g(SoftmaxGatekeeper{{{0, 0}, {0, 0}}, {0, 0}});
    const auto space = StimulusSpace::default_continuous();
    RngStream rng(17);
    std::vector<double> cells(16, 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto f = propose_stimulus(g, 1, space, {}, rng);
        const int cx = std::min(3, int((f.coords()[0] + 3.0) / 1.5));
        const int cy = std::min(3, int((f.coords()[1] + 3.0) / 1.5));
        cells[cy * 4 + cx] += 1.0;
    }
    double chi2 = 0.0;
    const double expect = n / 16.0;
    for (double c : cells) chi2 += (c - expect) * (c - expect) / expect;
    // 0.999 quantile of chi-square with 15 degrees of freedom.
    EXPECT_LT(chi2, 37.697);
}

TEST(ProposeStimulus, ContinuousConcentratesOnCategory) {
    const Gatekeeper g(SoftmaxGatekeeper::from_gaussians({{2.0, 0.0}, {-2.0, 0.0}}, 0.25));
    const auto space = StimulusSpace::default_continuous();
    RngStream rng(5);
    double mean_x = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const auto f = propose_stimulus(g, 0, space, {}, rng);
        EXPECT_TRUE(space.contains(f));
        mean_x += f.coords()[0] / 2000.0;
    }
    EXPECT_GT(mean_x, 1.5);
}

TEST(ProposeStimulus, SameStreamSameDraw) {
    const Gatekeeper g(SoftmaxGatekeeper::from_gaussians({{2.0, 0.0}, {-2.0, 0.0}}, 0.5));
    const auto space = StimulusSpace::default_continuous();
    RngStream a(8), b(8);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(propose_stimulus(g, 1, space, {}, a), propose_stimulus(g, 1, space, {}, b));
}

TEST(ProposerBudget, Validates) {
    EXPECT_EQ(code_of([] { ProposerBudget{0, 0.5}.validate(); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(code_of([] { ProposerBudget{10, 0.0}.validate(); }), ErrorCode::InvalidConfig);
}

TEST(ExternalClassify, EchoesReply) {
    MockClassifier mock(R"({"probs": [0.25, 0.75]})");
    const auto p = external_classify({mock.url(), 2.0}, Stimulus::vector({0.5, -1.0}, 42), 2);
    EXPECT_EQ(p, Categorical({0.25, 0.75}));
    const auto sent = nlohmann::json::parse(mock.last_request);
    EXPECT_EQ(sent.at("stimulus"), nlohmann::json({0.5, -1.0}));
    EXPECT_EQ(sent.at("nuisance_seed"), 42);
}

TEST(ExternalClassify, ThroughGatekeeperApplyFloor) {
    MockClassifier mock(R"({"probs": [1.0, 0.0]})");
    const Gatekeeper g(ExternalGatekeeper{{mock.url(), 2.0}, 2});
    const auto p = g.classify(Stimulus::vector({0.0, 0.0}));
    EXPECT_EQ(p[1], kClassifyFloor);
}

TEST(ExternalClassify, NotNormalized) {
    MockClassifier mock(R"({"probs": [0.5, 0.6]})");
    EXPECT_EQ(code_of([&] { external_classify({mock.url(), 2.0}, Stimulus::vector({0.0}), 2); }),
              ErrorCode::NotNormalized);
}

TEST(ExternalClassify, MalformedReplies) {
    {
        MockClassifier mock("not json");
        EXPECT_EQ(code_of([&] { external_classify({mock.url(), 2.0}, Stimulus::vector({0.0}), 2); }),
                  ErrorCode::MalformedReply);
    }
    {
        MockClassifier mock(R"({"probs": [0.2, 0.3, 0.5]})");
        EXPECT_EQ(code_of([&] { external_classify({mock.url(), 2.0}, Stimulus::vector({0.0}), 2); }),
                  ErrorCode::MalformedReply);
    }
}

TEST(ExternalClassify, ServerErrorIsUnavailable) {
    MockClassifier mock("{}", 503);
    EXPECT_EQ(code_of([&] { external_classify({mock.url(), 2.0}, Stimulus::vector({0.0}), 2); }),
              ErrorCode::ExternalUnavailable);
}

TEST(ExternalClassify, Unreachable) {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    const std::string url = "http://127.0.0.1:" + std::to_string(port) + "/classify";
    EXPECT_EQ(code_of([&] { external_classify({url, 1.0}, Stimulus::vector({0.0}), 2); }),
              ErrorCode::ExternalUnavailable);
}

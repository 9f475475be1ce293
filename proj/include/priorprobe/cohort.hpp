#pragma once

#include "priorprobe/config.hpp"
#include "priorprobe/eval.hpp"
#include "priorprobe/recovery.hpp"
#include "priorprobe/session.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <mutex>
#include <cstdio>
#include <map>
#include <memory>
#include <thread>
#include <vector>

// Desk-scale version of the full experiment: simulated participants go
// through the elicitation sessions, then their recovered priors are fused
// with the network and scored on held-out choices.

namespace priorprobe {

struct ParticipantRun {
    std::size_t index = 0;
    std::string label;
    std::string log;  // trial log as JSON lines
    std::vector<ChainState> chains;
    PriorEstimate estimate;
};

inline ParticipantRun simulate_participant(const std::shared_ptr<const RunConfig>& cfg, std::size_t p) {
    const auto& spec = cfg->participants.at(p);
    ParticipantRun run;
    run.index = p;
    run.label = spec.label;
    SessionEngine engine(cfg, participant_session_seed(cfg->seed, p));
    engine.set_log_sink([&run](const json& rec) {
        run.log += rec.dump();
        run.log += '\n';
    });
    RngStream responder = participant_responder(cfg->seed, p);
    run_simulated_session(engine, spec.model, responder);
    run.chains = engine.chains();
    run.estimate = engine.prior(cfg->burn_in_fraction);
    return run;
}

/// Runs every configured participant and hands each finished run to `consume`,
/// one call at a time, so logs need not all be held at once. Results are
/// independent of `threads`; completion order is not.
inline void simulate_cohort(const std::shared_ptr<const RunConfig>& cfg, unsigned threads,
                            const std::function<void(ParticipantRun&&)>& consume) {
    const std::size_t n = cfg->participants.size();
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mutex;
    auto worker = [&] {
        for (std::size_t p; (p = next++) < n;) {
            try {
                ParticipantRun run = simulate_participant(cfg, p);
                std::lock_guard lock(mutex);
                if (!failure) consume(std::move(run));
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const unsigned k = std::max(1u, std::min<unsigned>(threads ? threads : 1, unsigned(n)));
    std::vector<std::thread> pool;
    for (unsigned i = 0; i + 1 < k; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// Runs every configured participant; results are independent of `threads`.
inline std::vector<ParticipantRun> simulate_cohort(const std::shared_ptr<const RunConfig>& cfg,
                                                   unsigned threads = std::thread::hardware_concurrency()) {
    std::vector<ParticipantRun> out(cfg->participants.size());
    simulate_cohort(cfg, threads, [&out](ParticipantRun&& run) { out[run.index] = std::move(run); });
    return out;
}

/// Candidate stimuli for the ambiguous set: all stimuli of a discrete space,
/// or `n_ambiguous` accepted draws from the candidate disc.
inline std::vector<Stimulus> ambiguous_stimuli(const RunConfig& cfg, RngStream& rng) {
    const auto& ev = cfg.eval;
    if (cfg.space.is_discrete()) {
        auto all = cfg.space.enumerate();
        return select_ambiguous(cfg.gatekeeper, all, ev.ambiguous_threshold);
    }
    std::vector<Stimulus> out;
    const std::size_t max_draws = 10'000 * std::max<std::size_t>(ev.n_ambiguous, 1);
    for (std::size_t draw = 0; draw < max_draws && out.size() < ev.n_ambiguous; ++draw) {
        Stimulus f = cfg.space.sample_uniform(rng);
        if (ev.candidate_radius > 0.0) {
            // Uniform in an origin-centred ball.
            std::vector<double> x(f.coords().size());
            double norm = 0.0;
            for (double& v : x) {
                v = rng.normal();
                norm += v * v;
            }
            const double r = ev.candidate_radius * std::pow(rng.uniform(), 1.0 / double(x.size())) / std::sqrt(norm);
            for (double& v : x) v *= r;
            f = Stimulus::vector(std::move(x));
            if (!cfg.space.contains(f)) continue;
        }
        std::vector<Stimulus> one{f};
        if (!select_ambiguous(cfg.gatekeeper, one, ev.ambiguous_threshold).empty()) out.push_back(f);
    }
    if (out.size() < ev.n_ambiguous)
        throw Error(ErrorCode::Empty, "could not find enough ambiguous stimuli; widen candidate_radius or threshold");
    return out;
}

/// Ground-truth (f, e) pairs from the reference population under a uniform
/// prior, restricted to confident network outputs.
inline std::vector<LabeledTrial> labeled_set(const RunConfig& cfg, RngStream& rng) {
    if (!cfg.reference_likelihood)
        throw Error(ErrorCode::InvalidConfig, "labeled set needs a reference likelihood");
    const std::size_t n_cat = cfg.categories.size();
    std::vector<LabeledTrial> out;
    const std::size_t max_draws = 10'000 * std::max<std::size_t>(cfg.eval.n_labeled, 1);
    for (std::size_t draw = 0; draw < max_draws && out.size() < cfg.eval.n_labeled; ++draw) {
        const CategoryIndex e = CategoryIndex(rng.below(n_cat));
        Stimulus f;
        if (const auto* d = std::get_if<DiscreteLikelihood>(&*cfg.reference_likelihood)) {
            f = Stimulus::discrete(sample_categorical(d->rows[e], rng));
        } else {
            const auto& g = std::get<GaussianLikelihood>(*cfg.reference_likelihood);
            std::vector<double> x(g.means[e].size());
            for (std::size_t k = 0; k < x.size(); ++k) x[k] = g.means[e][k] + std::sqrt(g.variances[e][k]) * rng.normal();
            f = Stimulus::vector(std::move(x));
            if (!cfg.space.contains(f)) continue;
        }
        const Categorical net = cfg.gatekeeper.classify(f);
        if (net[net.argmax()] >= cfg.eval.confident_threshold) out.push_back({f, e, std::nullopt});
    }
    if (out.size() < cfg.eval.n_labeled) throw Error(ErrorCode::Empty, "could not fill the labeled set");
    return out;
}

/// One recorded categorization per stimulus: the category is drawn from the
/// participant's posterior, confidence follows the chosen category's mass.
inline std::vector<LabeledTrial> participant_choices(const ParticipantModel& m, std::span<const Stimulus> stimuli,
                                                     RngStream& rng) {
    std::vector<LabeledTrial> out;
    for (const auto& f : stimuli) {
        const Categorical post = posterior(m, f);
        const CategoryIndex e = sample_categorical(post, rng);
        out.push_back({f, e, confidence_from_mass(post[e])});
    }
    return out;
}

struct ParticipantEval {
    std::string label;
    std::map<std::string, double> accuracy;     // ambiguous set, per predictor
    std::map<std::string, double> correlation;  // confidence correlation, per predictor
    double labeled_network = 0.0;
    double labeled_informed = 0.0;
    double labeled_delta = 0.0;
    double labeled_prior_only = 0.0;
    double labeled_prior_only_expected = 0.0;
    std::size_t ties = 0;
};

struct CohortEval {
    std::vector<ParticipantEval> participants;
    std::map<std::string, double> mean_accuracy;
    std::map<std::string, double> mean_correlation;    // mean of per-participant r
    std::map<std::string, double> pooled_correlation;  // r over all trials
    double mean_labeled_delta = 0.0;
    double max_abs_labeled_delta = 0.0;
    double mean_labeled_network = 0.0;
    double mean_labeled_informed = 0.0;
    double mean_labeled_prior_only = 0.0;
    double mean_labeled_prior_only_expected = 0.0;
    std::size_t n_ambiguous = 0;
    std::size_t n_labeled = 0;
};

/// Scores every predictor for every participant. `recovered[p]` is the
/// recovered prior of cfg.participants[p].
inline CohortEval evaluate_cohort(const RunConfig& cfg, std::span<const LabeledPrior> recovered,
                                  const std::optional<Categorical>& ecological = std::nullopt) {
    if (recovered.empty()) throw Error(ErrorCode::Empty, "no recovered priors");
    if (recovered.size() != cfg.participants.size())
        throw Error(ErrorCode::InvalidValue, "one recovered prior per participant required");
    for (const auto& r : recovered)
        if (r.labels != cfg.categories.labels())
            throw Error(ErrorCode::MismatchedCategories, "recovered prior labels differ from the config");

    RngStream root = RngStream(cfg.seed).derive("eval");
    RngStream stim_rng = root.derive("ambiguous");
    RngStream label_rng = root.derive("labeled");
    const auto stimuli = ambiguous_stimuli(cfg, stim_rng);
    const auto labeled = labeled_set(cfg, label_rng);
    const Categorical avg = average_prior(recovered);

    CohortEval out;
    out.n_ambiguous = stimuli.size();
    out.n_labeled = labeled.size();
    std::map<std::string, std::vector<double>> pooled_x;
    std::vector<double> pooled_conf;

    for (std::size_t p = 0; p < recovered.size(); ++p) {
        RngStream choice_rng = root.derive("choices").derive(p);
        const auto trials = participant_choices(cfg.participants[p].model, stimuli, choice_rng);

        std::vector<PredictorSpec> specs{
            PredictorSpec::network_only(),
            PredictorSpec::prior_only(PriorSource::Individual, recovered[p].probs),
            PredictorSpec::prior_times_network(PriorSource::Individual, recovered[p].probs),
            PredictorSpec::prior_only(PriorSource::Average, avg),
            PredictorSpec::prior_times_network(PriorSource::Average, avg),
        };
        if (ecological) {
            specs.push_back(PredictorSpec::prior_only(PriorSource::Ecological, *ecological));
            specs.push_back(PredictorSpec::prior_times_network(PriorSource::Ecological, *ecological));
        }

        ParticipantEval pe;
        pe.label = cfg.participants[p].label;
        for (const auto& s : specs) {
            const auto acc = accuracy(s, cfg.gatekeeper, trials);
            pe.accuracy[s.name()] = acc.accuracy;
            pe.ties += acc.ties;
            if (s.variant == PredictorVariant::PriorOnly) continue;  // constant predictor: no variance
            try {
                pe.correlation[s.name()] = confidence_correlation(s, cfg.gatekeeper, trials);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateVariance) throw;
            }
            for (const auto& t : trials) pooled_x[s.name()].push_back(predict(s, cfg.gatekeeper, t.f)[t.target]);
        }
        for (const auto& t : trials) pooled_conf.push_back(double(*t.confidence));

        const auto informed = PredictorSpec::prior_times_network(PriorSource::Individual, recovered[p].probs);
        const auto sens = sensitivity_check(informed, cfg.gatekeeper, labeled);
        pe.labeled_network = sens.network_accuracy;
        pe.labeled_informed = sens.accuracy;
        pe.labeled_delta = sens.delta;
        pe.labeled_prior_only =
            accuracy(PredictorSpec::prior_only(PriorSource::Individual, recovered[p].probs), cfg.gatekeeper, labeled)
                .accuracy;
        pe.labeled_prior_only_expected = constant_predictor_accuracy(recovered[p].probs, labeled);
        out.participants.push_back(std::move(pe));
    }

    const double n = double(out.participants.size());
    std::map<std::string, std::size_t> corr_counts;
    for (const auto& pe : out.participants) {
        for (const auto& [k, v] : pe.accuracy) out.mean_accuracy[k] += v / n;
        for (const auto& [k, v] : pe.correlation) {
            out.mean_correlation[k] += v;
            ++corr_counts[k];
        }
        out.mean_labeled_delta += pe.labeled_delta / n;
        out.max_abs_labeled_delta = std::max(out.max_abs_labeled_delta, std::abs(pe.labeled_delta));
        out.mean_labeled_network += pe.labeled_network / n;
        out.mean_labeled_informed += pe.labeled_informed / n;
        out.mean_labeled_prior_only += pe.labeled_prior_only / n;
        out.mean_labeled_prior_only_expected += pe.labeled_prior_only_expected / n;
    }
    for (auto& [k, v] : out.mean_correlation) v /= double(corr_counts[k]);
    for (const auto& [k, xs] : pooled_x) {
        try {
            out.pooled_correlation[k] = pearson(xs, pooled_conf);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateVariance) throw;
        }
    }
    return out;
}

inline json cohort_eval_json(const CohortEval& ev) {
    json rows = json::array();
    for (const auto& p : ev.participants)
        rows.push_back(json{{"participant", p.label},
                            {"accuracy", p.accuracy},
                            {"correlation", p.correlation},
                            {"sensitivity",
                             {{"network", p.labeled_network},
                              {"individual_prior_x_network", p.labeled_informed},
                              {"delta", p.labeled_delta},
                              {"individual_prior", p.labeled_prior_only},
                              {"individual_prior_expected", p.labeled_prior_only_expected}}},
                            {"ties", p.ties}});
    return json{{"schema", "priorprobe.eval_report/1"},
                {"n_ambiguous", ev.n_ambiguous},
                {"n_labeled", ev.n_labeled},
                {"participants", std::move(rows)},
                {"summary",
                 {{"mean_accuracy", ev.mean_accuracy},
                  {"mean_correlation", ev.mean_correlation},
                  {"pooled_correlation", ev.pooled_correlation},
                  {"mean_labeled_delta", ev.mean_labeled_delta},
                  {"max_abs_labeled_delta", ev.max_abs_labeled_delta},
                  {"mean_labeled_network", ev.mean_labeled_network},
                  {"mean_labeled_informed", ev.mean_labeled_informed},
                  {"mean_labeled_prior_only", ev.mean_labeled_prior_only},
                  {"mean_labeled_prior_only_expected", ev.mean_labeled_prior_only_expected}}}};
}

/// Fixed-width text table: one row per participant plus the mean.
inline std::string cohort_eval_table(const CohortEval& ev) {
    std::vector<std::string> cols;
    for (const auto& [k, v] : ev.mean_accuracy) cols.push_back(k);
    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-12s", "participant");
    out += buf;
    for (const auto& c : cols) {
        std::snprintf(buf, sizeof buf, " %28s", c.c_str());
        out += buf;
    }
    out += "   labeled_delta\n";
    auto row = [&](const std::string& name, const std::map<std::string, double>& acc, double delta) {
        std::snprintf(buf, sizeof buf, "%-12s", name.c_str());
        out += buf;
        for (const auto& c : cols) {
            auto it = acc.find(c);
            std::snprintf(buf, sizeof buf, " %28.3f", it == acc.end() ? 0.0 : it->second);
            out += buf;
        }
        std::snprintf(buf, sizeof buf, "   %+13.4f\n", delta);
        out += buf;
    };
    for (const auto& p : ev.participants) row(p.label, p.accuracy, p.labeled_delta);
    row("mean", ev.mean_accuracy, ev.mean_labeled_delta);
    return out;
}

} // namespace priorprobe

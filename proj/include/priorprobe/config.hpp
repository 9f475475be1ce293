#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/gatekeeper.hpp"
#include "priorprobe/json_io.hpp"
#include "priorprobe/participant.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <optional>
#include <string>
#include <vector>

namespace priorprobe {

enum class Schedule { RoundRobin, Blocked };

struct ParticipantSpec {
    std::string label;
    ParticipantModel model;
};

struct EvalSpec {
    double ambiguous_threshold = 0.25;
    std::size_t n_ambiguous = 200;
    double confident_threshold = 0.6;
    std::size_t n_labeled = 500;
    /// Ambiguous candidates are drawn uniformly from this disc around the
    /// origin; 0 means the whole space.
    double candidate_radius = 0.0;
    std::vector<std::string> count_files;
};

/// Everything a command needs, parsed from one JSON config file.
struct RunConfig {
    CategorySet categories;
    StimulusSpace space;
    Gatekeeper gatekeeper;
    std::optional<std::vector<Categorical>> face_proposals;  // oracle-only override
    std::vector<ParticipantSpec> participants;
    /// Likelihood of the reference population the gatekeeper was fitted to;
    /// generates the labeled evaluation set.
    std::optional<ParticipantModel::Likelihood> reference_likelihood;
    std::size_t chains_per_participant = 7;
    std::size_t trial_budget = 1000;  // human-facing trials per participant, all chains
    Schedule schedule = Schedule::RoundRobin;
    ProposerBudget proposer;
    double burn_in_fraction = 0.1;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    EvalSpec eval;
    double oracle_tolerance = 1e-10;
    json source;  // the parsed document, for snapshots
};

namespace detail {

inline std::vector<std::vector<double>> circle_means(std::size_t n, double radius, std::size_t dim) {
    if (dim < 2) throw Error(ErrorCode::InvalidConfig, "gaussian_circle needs dim >= 2");
    std::vector<std::vector<double>> means;
    for (std::size_t e = 0; e < n; ++e) {
        const double a = 2.0 * M_PI * double(e) / double(n);
        std::vector<double> mu(dim, 0.0);
        mu[0] = radius * std::cos(a);
        mu[1] = radius * std::sin(a);
        means.push_back(std::move(mu));
    }
    return means;
}

/// Category e sits at radius along axis e, so every pair of categories shares a boundary.
inline std::vector<std::vector<double>> axis_means(std::size_t n, double radius, std::size_t dim) {
    if (dim < n) throw Error(ErrorCode::InvalidConfig, "gaussian_axes needs dim >= category count");
    std::vector<std::vector<double>> means(n, std::vector<double>(dim, 0.0));
    for (std::size_t e = 0; e < n; ++e) means[e][e] = radius;
    return means;
}

inline std::vector<std::vector<double>> layout_means(const std::string& kind, std::size_t n, double radius,
                                                     std::size_t dim) {
    return kind == "gaussian_axes" ? axis_means(n, radius, dim) : circle_means(n, radius, dim);
}

inline StimulusSpace parse_space(const json& j) {
    const std::string kind = j.value("kind", "continuous");
    if (kind == "discrete") {
        if (j.contains("points")) return StimulusSpace(DiscreteSpace{j.at("points").get<std::vector<std::vector<double>>>()});
        return StimulusSpace::default_discrete(j.value("count", std::size_t{8}));
    }
    if (kind == "continuous") {
        if (j.contains("bounds")) {
            std::vector<Interval> b;
            for (const auto& iv : j.at("bounds")) b.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
            return StimulusSpace(ContinuousSpace{std::move(b)});
        }
        return StimulusSpace::continuous(j.value("dim", std::size_t{2}), kDisplayFrame);
    }
    throw Error(ErrorCode::InvalidConfig, "unknown space kind '" + kind + "'");
}

inline std::vector<Categorical> parse_rows(const json& j) {
    std::vector<Categorical> rows;
    for (const auto& r : j) rows.push_back(Categorical(r.get<std::vector<double>>()));
    return rows;
}

inline Gatekeeper parse_gatekeeper(const json& j, std::size_t n_categories, const StimulusSpace& space) {
    const std::string kind = j.at("kind").get<std::string>();
    Gatekeeper g;
    if (kind == "table") {
        g = Gatekeeper(TableGatekeeper{parse_rows(j.at("rows"))});
    } else if (kind == "softmax") {
        g = Gatekeeper(SoftmaxGatekeeper{j.at("weights").get<std::vector<std::vector<double>>>(),
                                         j.at("biases").get<std::vector<double>>()});
    } else if (kind == "gaussian") {
        g = Gatekeeper(SoftmaxGatekeeper::from_gaussians(j.at("means").get<std::vector<std::vector<double>>>(),
                                                         j.at("variance").get<double>()));
    } else if (kind == "gaussian_circle" || kind == "gaussian_axes") {
        const double sd = j.at("sd").get<double>();
        g = Gatekeeper(SoftmaxGatekeeper::from_gaussians(
            layout_means(kind, n_categories, j.at("radius").get<double>(), space.dim()), sd * sd));
    } else if (kind == "external") {
        g = Gatekeeper(ExternalGatekeeper{{j.at("url").get<std::string>(), j.value("timeout_s", 10.0)}, n_categories});
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown gatekeeper kind '" + kind + "'");
    }
    if (g.n_categories() != n_categories)
        throw Error(ErrorCode::InvalidConfig, "gatekeeper category count does not match the category set");
    if (auto* t = std::get_if<TableGatekeeper>(&g.kind()); t && (!space.is_discrete() || t->rows.size() != space.count()))
        throw Error(ErrorCode::InvalidConfig, "table gatekeeper needs one row per discrete stimulus");
    return g;
}

/// Likelihood from JSON. `rng` drives per-participant jitter when requested.
inline ParticipantModel::Likelihood parse_likelihood(const json& j, std::size_t n_categories,
                                                     const StimulusSpace& space, RngStream* rng) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "table") {
        auto rows = parse_rows(j.at("rows"));
        if (space.is_discrete())
            for (const auto& r : rows)
                if (r.size() != space.count())
                    throw Error(ErrorCode::InvalidConfig, "likelihood row length must equal the stimulus count");
        return DiscreteLikelihood{std::move(rows)};
    }
    if (kind == "gaussian") {
        GaussianLikelihood g{j.at("means").get<std::vector<std::vector<double>>>(),
                             j.at("variances").get<std::vector<std::vector<double>>>()};
        return g;
    }
    if (kind == "gaussian_circle" || kind == "gaussian_axes") {
        const double sd = j.at("sd").get<double>();
        const double jitter = j.value("jitter", 0.0);
        GaussianLikelihood g;
        g.means = layout_means(kind, n_categories, j.at("radius").get<double>(), space.dim());
        for (auto& mu : g.means) {
            if (jitter > 0.0 && rng)
                for (double& x : mu) x += jitter * rng->normal();
            g.variances.push_back(std::vector<double>(mu.size(), sd * sd));
        }
        return g;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown likelihood kind '" + kind + "'");
}

inline Categorical parse_prior(const json& j, const CategorySet& categories) {
    if (j.is_array()) {
        auto p = Categorical(j.get<std::vector<double>>());
        if (p.size() != categories.size()) throw Error(ErrorCode::InvalidConfig, "prior length mismatch");
        return p;
    }
    std::vector<double> p(categories.size(), 0.0);
    for (const auto& [name, v] : j.items()) p[categories.index(name)] = v.get<double>();
    return Categorical(std::move(p));
}

} // namespace detail

inline RunConfig parse_run_config(const json& j) {
    try {
        RunConfig c;
        c.source = j;
        c.categories = CategorySet(j.at("categories").get<std::vector<std::string>>());
        const std::size_t n = c.categories.size();
        c.space = j.contains("space") ? detail::parse_space(j.at("space")) : StimulusSpace::default_continuous();
        c.gatekeeper = detail::parse_gatekeeper(j.at("gatekeeper"), n, c.space);
        if (j.contains("face_proposals")) c.face_proposals = detail::parse_rows(j.at("face_proposals"));
        c.seed = j.at("seed").get<std::uint64_t>();
        c.chains_per_participant = j.value("chains_per_participant", c.chains_per_participant);
        c.trial_budget = j.value("trial_budget", c.trial_budget);
        const std::string schedule = j.value("schedule", "round_robin");
        if (schedule == "round_robin") c.schedule = Schedule::RoundRobin;
        else if (schedule == "blocked") c.schedule = Schedule::Blocked;
        else throw Error(ErrorCode::InvalidConfig, "unknown schedule '" + schedule + "'");
        if (j.contains("proposer")) {
            c.proposer.inner_steps = j.at("proposer").value("inner_steps", c.proposer.inner_steps);
            c.proposer.step_scale = j.at("proposer").value("step_scale", c.proposer.step_scale);
        }
        c.proposer.validate();
        c.burn_in_fraction = j.value("burn_in_fraction", c.burn_in_fraction);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.oracle_tolerance = j.value("oracle_tolerance", c.oracle_tolerance);

        const RngStream root(c.seed);
        if (j.contains("participants")) {
            std::size_t p = 0;
            for (const auto& pj : j.at("participants")) {
                RngStream rng = root.derive("participant-model").derive(p++);
                auto lik = detail::parse_likelihood(pj.at("likelihood"), n, c.space, &rng);
                c.participants.push_back({pj.at("label").get<std::string>(),
                                          ParticipantModel(detail::parse_prior(pj.at("prior"), c.categories), lik)});
            }
        }
        if (j.contains("cohort")) {
            const auto& cj = j.at("cohort");
            const std::size_t count = cj.at("count").get<std::size_t>();
            const double alpha = cj.value("dirichlet_alpha", 0.5);
            const std::string prefix = cj.value("label_prefix", "p");
            const std::size_t offset = c.participants.size();
            for (std::size_t p = 0; p < count; ++p) {
                RngStream rng = root.derive("cohort").derive(p);
                Categorical prior = sample_dirichlet(n, alpha, rng);
                auto lik = detail::parse_likelihood(cj.at("likelihood"), n, c.space, &rng);
                char label[32];
                std::snprintf(label, sizeof label, "%s%02zu", prefix.c_str(), offset + p);
                c.participants.push_back({label, ParticipantModel(std::move(prior), std::move(lik))});
            }
        }
        if (j.contains("reference_likelihood"))
            c.reference_likelihood = detail::parse_likelihood(j.at("reference_likelihood"), n, c.space, nullptr);
        else if (j.contains("cohort"))
            c.reference_likelihood = detail::parse_likelihood(j.at("cohort").at("likelihood"), n, c.space, nullptr);

        if (j.contains("eval")) {
            const auto& ej = j.at("eval");
            c.eval.ambiguous_threshold = ej.value("ambiguous_threshold", c.eval.ambiguous_threshold);
            c.eval.n_ambiguous = ej.value("n_ambiguous", c.eval.n_ambiguous);
            c.eval.confident_threshold = ej.value("confident_threshold", c.eval.confident_threshold);
            c.eval.n_labeled = ej.value("n_labeled", c.eval.n_labeled);
            c.eval.candidate_radius = ej.value("candidate_radius", c.eval.candidate_radius);
            c.eval.count_files = ej.value("count_files", std::vector<std::string>{});
        }

        if (c.chains_per_participant < 1) throw Error(ErrorCode::InvalidConfig, "need at least one chain");
        if (c.trial_budget < 1) throw Error(ErrorCode::InvalidConfig, "trial budget must be >= 1");
        if (!(c.burn_in_fraction >= 0.0 && c.burn_in_fraction < 1.0))
            throw Error(ErrorCode::InvalidConfig, "burn_in_fraction must be in [0, 1)");
        if (c.face_proposals && c.face_proposals->size() != n)
            throw Error(ErrorCode::InvalidConfig, "face_proposals needs one row per category");
        for (const auto& p : c.participants) {
            if (p.model.n_categories() != n)
                throw Error(ErrorCode::InvalidConfig, "participant '" + p.label + "' has the wrong category count");
            if (c.space.is_discrete() != std::holds_alternative<DiscreteLikelihood>(p.model.likelihood()))
                throw Error(ErrorCode::InvalidConfig, "participant '" + p.label + "' likelihood does not fit the space");
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, e.what());
    }
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(read_json_file(path)); }

} // namespace priorprobe

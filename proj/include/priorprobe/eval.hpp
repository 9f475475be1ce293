#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/gatekeeper.hpp"
#include "priorprobe/json_io.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace priorprobe {

enum class PredictorVariant { NetworkOnly, PriorOnly, PriorTimesNetwork };
enum class PriorSource { None, Individual, Average, Ecological };

/// One of the fusion models: the network alone, a prior alone, or their
/// normalized product.
struct PredictorSpec {
    PredictorVariant variant = PredictorVariant::NetworkOnly;
    PriorSource source = PriorSource::None;
    std::optional<Categorical> prior;

    static PredictorSpec network_only() { return {}; }
    static PredictorSpec prior_only(PriorSource source, Categorical prior) {
        return {PredictorVariant::PriorOnly, source, std::move(prior)};
    }
    static PredictorSpec prior_times_network(PriorSource source, Categorical prior) {
        return {PredictorVariant::PriorTimesNetwork, source, std::move(prior)};
    }

    std::string name() const {
        static const char* sources[] = {"", "individual", "average", "ecological"};
        switch (variant) {
        case PredictorVariant::NetworkOnly: return "network";
        case PredictorVariant::PriorOnly: return std::string(sources[int(source)]) + "_prior";
        case PredictorVariant::PriorTimesNetwork: return std::string(sources[int(source)]) + "_prior_x_network";
        }
        return "?";
    }
};

inline Categorical predict(const PredictorSpec& spec, const Gatekeeper& g, const Stimulus& f) {
    if (spec.variant != PredictorVariant::NetworkOnly && !spec.prior)
        throw Error(ErrorCode::InvalidValue, "predictor needs a prior");
    switch (spec.variant) {
    case PredictorVariant::NetworkOnly: return g.classify(f);
    case PredictorVariant::PriorOnly: return *spec.prior;
    case PredictorVariant::PriorTimesNetwork: {
        const Categorical net = g.classify(f);
        if (net.size() != spec.prior->size())
            throw Error(ErrorCode::MismatchedCategories, "prior and network disagree on categories");
        std::vector<double> w(net.size());
        for (std::size_t e = 0; e < w.size(); ++e) w[e] = (*spec.prior)[e] * net[e];
        return normalize(w);
    }
    }
    throw Error(ErrorCode::InvalidValue, "unknown predictor");
}

/// Stimuli whose largest network probability is below `threshold`.
inline std::vector<Stimulus> select_ambiguous(const Gatekeeper& g, std::span<const Stimulus> stimuli, double threshold) {
    const double chance = 1.0 / double(g.n_categories());
    if (!(threshold > chance && threshold <= 1.0))
        throw Error(ErrorCode::InvalidValue, "threshold must lie in (1/|E|, 1]");
    std::vector<Stimulus> out;
    for (const auto& f : stimuli) {
        const Categorical p = g.classify(f);
        if (p[p.argmax()] < threshold) out.push_back(f);
    }
    return out;
}

/// A stimulus with its target category (a participant's choice or a
/// ground-truth label) and, for human choices, the reported confidence.
struct LabeledTrial {
    Stimulus f;
    CategoryIndex target = 0;
    std::optional<int> confidence;
};

struct AccuracyResult {
    double accuracy = 0.0;
    std::size_t ties = 0;  // argmax ties, broken to the lowest index
    std::size_t n = 0;
};

inline AccuracyResult accuracy(const PredictorSpec& spec, const Gatekeeper& g, std::span<const LabeledTrial> trials) {
    if (trials.empty()) throw Error(ErrorCode::Empty, "accuracy over no trials");
    AccuracyResult r;
    std::size_t hits = 0;
    for (const auto& t : trials) {
        const Categorical p = predict(spec, g, t.f);
        if (p.argmax_tied()) ++r.ties;
        if (p.argmax() == t.target) ++hits;
    }
    r.n = trials.size();
    r.accuracy = double(hits) / double(trials.size());
    return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::InvalidValue, "pearson needs paired samples");
    if (x.size() < 3) throw Error(ErrorCode::DegenerateVariance, "pearson needs at least 3 pairs");
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw Error(ErrorCode::DegenerateVariance, "zero variance");
    return sxy / std::sqrt(sxx * syy);
}

/// Pearson r between the probability the predictor gives each trial's target
/// and the confidence reported on that trial.
inline double confidence_correlation(const PredictorSpec& spec, const Gatekeeper& g,
                                     std::span<const LabeledTrial> trials) {
    std::vector<double> assigned, confidence;
    for (const auto& t : trials) {
        if (!t.confidence) throw Error(ErrorCode::InvalidValue, "trial without a confidence rating");
        assigned.push_back(predict(spec, g, t.f)[t.target]);
        confidence.push_back(double(*t.confidence));
    }
    return pearson(assigned, confidence);
}

struct SensitivityResult {
    double accuracy = 0.0;
    double network_accuracy = 0.0;
    double delta = 0.0;  // accuracy - network_accuracy
};

/// Accuracy on a low-ambiguity ground-truth set, against the network alone.
inline SensitivityResult sensitivity_check(const PredictorSpec& spec, const Gatekeeper& g,
                                           std::span<const LabeledTrial> labeled) {
    if (labeled.empty()) throw Error(ErrorCode::Empty, "empty labeled set");
    SensitivityResult r;
    r.accuracy = accuracy(spec, g, labeled).accuracy;
    r.network_accuracy = accuracy(PredictorSpec::network_only(), g, labeled).accuracy;
    r.delta = r.accuracy - r.network_accuracy;
    return r;
}

/// Expected accuracy of a constant predictor: the share of labels equal to
/// the prior's argmax.
inline double constant_predictor_accuracy(const Categorical& prior, std::span<const LabeledTrial> labeled) {
    if (labeled.empty()) throw Error(ErrorCode::Empty, "empty labeled set");
    const CategoryIndex top = prior.argmax();
    std::size_t hits = 0;
    for (const auto& t : labeled) hits += t.target == top ? 1 : 0;
    return double(hits) / double(labeled.size());
}

/// Sums {"labels": [...], "counts": [...]} documents per label and normalizes,
/// which weights each source by its sample size.
inline Categorical ecological_prior(std::span<const json> count_files, const CategorySet& categories) {
    if (count_files.empty()) throw Error(ErrorCode::Empty, "no count files");
    std::vector<double> total(categories.size(), 0.0);
    for (const auto& doc : count_files) {
        std::vector<std::string> labels;
        std::vector<double> counts;
        try {
            labels = doc.at("labels").get<std::vector<std::string>>();
            counts = doc.at("counts").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidValue, std::string("count file: ") + e.what());
        }
        if (labels.size() != counts.size())
            throw Error(ErrorCode::InvalidValue, "count file labels and counts differ in length");
        std::vector<bool> seen(categories.size(), false);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!categories.contains(labels[i]))
                throw Error(ErrorCode::MismatchedCategories, "count file has unknown label '" + labels[i] + "'");
            if (!(counts[i] >= 0.0) || !std::isfinite(counts[i]))
                throw Error(ErrorCode::InvalidValue, "counts must be finite and non-negative");
            const CategoryIndex e = categories.index(labels[i]);
            seen[e] = true;
            total[e] += counts[i];
        }
        for (std::size_t e = 0; e < seen.size(); ++e)
            if (!seen[e]) throw Error(ErrorCode::MissingCategory, "count file lacks '" + categories.label(e) + "'");
    }
    return normalize(total);
}

struct LabeledPrior {
    std::vector<std::string> labels;
    Categorical probs;
};

/// Element-wise mean of priors over the same labels.
inline Categorical average_prior(std::span<const LabeledPrior> priors) {
    if (priors.empty()) throw Error(ErrorCode::Empty, "no priors to average");
    const auto& labels = priors.front().labels;
    std::vector<double> mean(labels.size(), 0.0);
    for (const auto& p : priors) {
        if (p.labels != labels || p.probs.size() != labels.size())
            throw Error(ErrorCode::MismatchedCategories, "priors are over different category sets");
        for (std::size_t e = 0; e < mean.size(); ++e) mean[e] += p.probs[e];
    }
    for (double& m : mean) m /= double(priors.size());
    return normalize(mean);
}

} // namespace priorprobe

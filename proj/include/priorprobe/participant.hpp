#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <variant>
#include <vector>

namespace priorprobe {

/// P(f|e) as one categorical row over a discrete stimulus table per category.
struct DiscreteLikelihood {
    std::vector<Categorical> rows;  // [category] -> distribution over stimuli
};

/// P(f|e) as an axis-aligned normal per category.
struct GaussianLikelihood {
    std::vector<std::vector<double>> means;      // [category][dim]
    std::vector<std::vector<double>> variances;  // [category][dim]
};

/// A simulated responder: prior P(e) and category representations P(f|e).
class ParticipantModel {
public:
    using Likelihood = std::variant<DiscreteLikelihood, GaussianLikelihood>;

    ParticipantModel() = default;

    ParticipantModel(Categorical prior, Likelihood likelihood)
        : prior_(std::move(prior)), likelihood_(std::move(likelihood)) {
        const std::size_t n = prior_.size();
        if (auto* d = std::get_if<DiscreteLikelihood>(&likelihood_)) {
            if (d->rows.size() != n)
                throw Error(ErrorCode::InvalidConfig, "one likelihood row per category required");
            for (const auto& r : d->rows)
                if (r.size() != d->rows.front().size())
                    throw Error(ErrorCode::InvalidConfig, "likelihood rows differ in length");
        } else {
            const auto& g = std::get<GaussianLikelihood>(likelihood_);
            if (g.means.size() != n || g.variances.size() != n)
                throw Error(ErrorCode::InvalidConfig, "one mean and variance vector per category required");
            for (std::size_t e = 0; e < n; ++e) {
                if (g.means[e].size() != g.means.front().size() || g.variances[e].size() != g.means[e].size())
                    throw Error(ErrorCode::InvalidConfig, "gaussian likelihood dimensions disagree");
                for (double v : g.variances[e])
                    if (!(v > 0.0)) throw Error(ErrorCode::InvalidConfig, "variances must be positive");
            }
        }
    }

    const Categorical& prior() const noexcept { return prior_; }
    const Likelihood& likelihood() const noexcept { return likelihood_; }
    std::size_t n_categories() const noexcept { return prior_.size(); }

private:
    Categorical prior_;
    Likelihood likelihood_;
};

/// Mass (discrete) or density (continuous) of f under category e.
inline double likelihood_at(const ParticipantModel& m, const Stimulus& f, CategoryIndex e) {
    if (e >= m.n_categories()) throw Error(ErrorCode::InvalidValue, "category index out of range");
    if (const auto* d = std::get_if<DiscreteLikelihood>(&m.likelihood())) {
        if (!f.is_discrete() || f.id() >= d->rows[e].size())
            throw Error(ErrorCode::OutOfBounds, "stimulus not in the likelihood table");
        return d->rows[e][f.id()];
    }
    const auto& g = std::get<GaussianLikelihood>(m.likelihood());
    if (f.is_discrete() || f.coords().size() != g.means[e].size())
        throw Error(ErrorCode::OutOfBounds, "stimulus dimension does not match the likelihood");
    const auto& x = f.coords();
    double log_density = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double v = g.variances[e][d];
        const double z = x[d] - g.means[e][d];
        log_density += -0.5 * std::log(2.0 * M_PI * v) - 0.5 * z * z / v;
    }
    return std::exp(log_density);
}

/// P(e|f) proportional to P(e) P(f|e). Falls back to uniform (with a warning)
/// when every product underflows.
inline Categorical posterior(const ParticipantModel& m, const Stimulus& f) {
    const std::size_t n = m.n_categories();
    std::vector<double> w(n);
    for (std::size_t e = 0; e < n; ++e) w[e] = m.prior()[e] * likelihood_at(m, f, e);
    try {
        return normalize(w);
    } catch (const Error& err) {
        if (err.code() != ErrorCode::AllZero) throw;
        std::clog << "priorprobe: posterior underflow, using uniform\n";
        return Categorical::uniform(n);
    }
}

struct Choice {
    int picked = 0;  // 0 = current option, 1 = proposal
    std::optional<int> confidence;  // 1..7, categorization trials only

    bool picked_proposal() const noexcept { return picked == 1; }
    friend bool operator==(const Choice&, const Choice&) = default;
};

/// 1 + round(6 p): 1 at p = 0, 7 at p = 1.
inline int confidence_from_mass(double p) { return 1 + int(std::lround(6.0 * std::clamp(p, 0.0, 1.0))); }

inline Choice choose_face(const ParticipantModel& m, CategoryIndex e, const Stimulus& f_current,
                          const Stimulus& f_proposal, RngStream& rng) {
    const double a = barker_accept_prob(likelihood_at(m, f_current, e), likelihood_at(m, f_proposal, e));
    return Choice{rng.uniform() < a ? 1 : 0, std::nullopt};
}

inline Choice choose_category(const ParticipantModel& m, const Stimulus& f, CategoryIndex e_current,
                              CategoryIndex e_proposal, RngStream& rng) {
    if (e_current == e_proposal) throw Error(ErrorCode::SameCategory, "categorization options must differ");
    const Categorical post = posterior(m, f);
    const double a = barker_accept_prob(post[e_current], post[e_proposal]);
    const int picked = rng.uniform() < a ? 1 : 0;
    const double mass = post[picked == 1 ? e_proposal : e_current];
    return Choice{picked, confidence_from_mass(mass)};
}

} // namespace priorprobe

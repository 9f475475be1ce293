#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <string>
#include <variant>
#include <vector>

namespace priorprobe {

/// Every classify output has all entries at or above this value, which bounds
/// reweighting weights 1/G_e(e|f) by 1e6.
inline constexpr double kClassifyFloor = 1e-6;

/// Raises entries below `floor` to `floor` and rescales the rest so the total
/// stays 1. Entries already at or above the floor keep their relative sizes;
/// a row with no entry below the floor is returned unchanged.
inline Categorical apply_floor(const Categorical& p, double floor = kClassifyFloor) {
    const std::size_t n = p.size();
    if (double(n) * floor > 1.0)
        throw Error(ErrorCode::InvalidValue, "floor too large for the number of categories");
    std::vector<bool> pinned(n, false);
    for (;;) {
        std::size_t n_pinned = 0;
        double free_mass = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (pinned[i]) ++n_pinned;
            else free_mass += p[i];
        }
        if (n_pinned == 0) {
            bool any_low = false;
            for (std::size_t i = 0; i < n; ++i)
                if (p[i] < floor) { pinned[i] = true; any_low = true; }
            if (!any_low) return p;
            continue;
        }
        const double target = 1.0 - double(n_pinned) * floor;
        std::vector<double> q(n);
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (pinned[i]) { q[i] = floor; continue; }
            q[i] = free_mass > 0.0 ? p[i] * target / free_mass : floor;
            if (q[i] < floor) { pinned[i] = true; changed = true; }
        }
        if (!changed) return Categorical(std::move(q));
    }
}

struct TableGatekeeper {
    std::vector<Categorical> rows;  // one per discrete stimulus
};

/// Scores w_e . f + b_e through a softmax.
struct SoftmaxGatekeeper {
    std::vector<std::vector<double>> weights;  // [category][dim]
    std::vector<double> biases;

    /// Posterior under a uniform prior for isotropic Gaussian categories with
    /// the given means and shared variance.
    static SoftmaxGatekeeper from_gaussians(const std::vector<std::vector<double>>& means, double variance) {
        SoftmaxGatekeeper g;
        for (const auto& mu : means) {
            std::vector<double> w(mu.size());
            double sq = 0.0;
            for (std::size_t d = 0; d < mu.size(); ++d) {
                w[d] = mu[d] / variance;
                sq += mu[d] * mu[d];
            }
            g.weights.push_back(std::move(w));
            g.biases.push_back(-sq / (2.0 * variance));
        }
        return g;
    }
};

struct ExternalEndpoint {
    std::string url;  // e.g. http://127.0.0.1:9000/classify
    double timeout_s = 10.0;
};

struct ExternalGatekeeper {
    ExternalEndpoint endpoint;
    std::size_t n_categories = 0;
};

namespace detail {

inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme = url.find("://");
    const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline nlohmann::json stimulus_payload(const Stimulus& f) {
    nlohmann::json coords = nlohmann::json::array();
    if (f.is_discrete()) coords.push_back(double(f.id()));
    else
        for (double x : f.coords()) coords.push_back(x);
    return coords;
}

} // namespace detail

/// Posts {"stimulus": [...], "nuisance_seed": n} and validates the
/// {"probs": [...]} reply. Replies are checked, not silently repaired.
inline Categorical external_classify(const ExternalEndpoint& endpoint, const Stimulus& f, std::size_t n_categories) {
    const auto [host, path] = detail::split_url(endpoint.url);
    httplib::Client client(host);
    const auto seconds = std::chrono::duration<double>(endpoint.timeout_s);
    const auto micro = std::chrono::duration_cast<std::chrono::microseconds>(seconds);
    client.set_connection_timeout(micro);
    client.set_read_timeout(micro);
    client.set_write_timeout(micro);

    nlohmann::json request{{"stimulus", detail::stimulus_payload(f)}, {"nuisance_seed", f.nuisance_seed}};
    auto res = client.Post(path, request.dump(), "application/json");
    if (!res)
        throw Error(ErrorCode::ExternalUnavailable,
                    endpoint.url + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error(ErrorCode::ExternalUnavailable, endpoint.url + ": HTTP " + std::to_string(res->status));

    std::vector<double> probs;
    try {
        const auto reply = nlohmann::json::parse(res->body);
        probs = reply.at("probs").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedReply, e.what());
    }
    if (probs.size() != n_categories)
        throw Error(ErrorCode::MalformedReply, "expected " + std::to_string(n_categories) + " probabilities, got " +
                                                   std::to_string(probs.size()));
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0) throw Error(ErrorCode::MalformedReply, "negative or non-finite probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw Error(ErrorCode::NotNormalized, "reply sums to " + std::to_string(sum));
    return apply_floor(Categorical(std::move(probs), 1e-6));
}

class Gatekeeper {
public:
    using Kind = std::variant<TableGatekeeper, SoftmaxGatekeeper, ExternalGatekeeper>;

    Gatekeeper() = default;

    Gatekeeper(TableGatekeeper t) : kind_(std::move(t)) {
        const auto& rows = std::get<TableGatekeeper>(kind_).rows;
        if (rows.empty()) throw Error(ErrorCode::InvalidConfig, "table gatekeeper has no rows");
        for (const auto& r : rows)
            if (r.size() != rows.front().size())
                throw Error(ErrorCode::InvalidConfig, "table gatekeeper rows differ in length");
    }

    Gatekeeper(SoftmaxGatekeeper s) : kind_(std::move(s)) {
        const auto& g = std::get<SoftmaxGatekeeper>(kind_);
        if (g.weights.empty() || g.weights.size() != g.biases.size())
            throw Error(ErrorCode::InvalidConfig, "softmax gatekeeper needs one weight vector and bias per category");
        for (const auto& w : g.weights)
            if (w.size() != g.weights.front().size())
                throw Error(ErrorCode::InvalidConfig, "softmax weight vectors differ in length");
    }

    Gatekeeper(ExternalGatekeeper e) : kind_(std::move(e)) {
        if (std::get<ExternalGatekeeper>(kind_).n_categories == 0)
            throw Error(ErrorCode::InvalidConfig, "external gatekeeper needs a category count");
    }

    const Kind& kind() const noexcept { return kind_; }

    std::size_t n_categories() const {
        return std::visit(
            [](const auto& g) -> std::size_t {
                using T = std::decay_t<decltype(g)>;
                if constexpr (std::is_same_v<T, TableGatekeeper>) return g.rows.front().size();
                else if constexpr (std::is_same_v<T, SoftmaxGatekeeper>) return g.weights.size();
                else return g.n_categories;
            },
            kind_);
    }

    /// G_e(.|f), floored at kClassifyFloor.
    Categorical classify(const Stimulus& f) const {
        return std::visit(
            [&f](const auto& g) -> Categorical {
                using T = std::decay_t<decltype(g)>;
                if constexpr (std::is_same_v<T, TableGatekeeper>) {
                    if (!f.is_discrete() || f.id() >= g.rows.size())
                        throw Error(ErrorCode::OutOfBounds, "stimulus not in the gatekeeper table");
                    return apply_floor(g.rows[f.id()]);
                } else if constexpr (std::is_same_v<T, SoftmaxGatekeeper>) {
                    if (f.is_discrete() || f.coords().size() != g.weights.front().size())
                        throw Error(ErrorCode::OutOfBounds, "stimulus dimension does not match the softmax weights");
                    const auto& x = f.coords();
                    std::vector<double> s(g.weights.size());
                    double best = -std::numeric_limits<double>::infinity();
                    for (std::size_t e = 0; e < s.size(); ++e) {
                        double v = g.biases[e];
                        for (std::size_t d = 0; d < x.size(); ++d) v += g.weights[e][d] * x[d];
                        s[e] = v;
                        best = std::max(best, v);
                    }
                    for (double& v : s) v = std::exp(v - best);
                    return apply_floor(normalize(s));
                } else {
                    return external_classify(g.endpoint, f, g.n_categories);
                }
            },
            kind_);
    }

private:
    Kind kind_;
};

inline Categorical classify(const Gatekeeper& g, const Stimulus& f) { return g.classify(f); }

struct ProposerBudget {
    std::size_t inner_steps = 200;
    double step_scale = 0.5;

    void validate() const {
        if (inner_steps < 1) throw Error(ErrorCode::InvalidConfig, "inner_steps must be >= 1");
        if (!(step_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "step_scale must be positive");
    }
};

/// Face proposal column for a discrete space: normalize_f G_e(e|f).
inline Categorical discrete_proposal_column(const Gatekeeper& g, CategoryIndex e, const StimulusSpace& space) {
    const std::size_t n = space.count();
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = g.classify(Stimulus::discrete(i))[e];
    return normalize(w);
}

/// Draws a stimulus from G_f(.|e), proportional to G_e(e|.). Exact for discrete
/// spaces. For continuous spaces it is the end state of a fresh random-walk
/// Metropolis chain from a uniform start, so the draw never depends on the
/// caller's current stimulus.
inline Stimulus propose_stimulus(const Gatekeeper& g, CategoryIndex e, const StimulusSpace& space,
                                 const ProposerBudget& budget, RngStream& rng) {
    if (e >= g.n_categories()) throw Error(ErrorCode::InvalidValue, "category index out of range");
    if (space.is_discrete())
        return Stimulus::discrete(sample_categorical(discrete_proposal_column(g, e, space), rng));

    budget.validate();
    Stimulus current = space.sample_uniform(rng);
    double current_p = g.classify(current)[e];
    const auto& bounds = space.bounds();
    std::vector<double> next(bounds.size());
    for (std::size_t step = 0; step < budget.inner_steps; ++step) {
        bool inside = true;
        const auto& x = current.coords();
        for (std::size_t d = 0; d < x.size(); ++d) {
            next[d] = x[d] + budget.step_scale * rng.normal();
            if (next[d] < bounds[d].lo || next[d] > bounds[d].hi) inside = false;
        }
        const double u = rng.uniform();
        if (!inside) continue;
        Stimulus candidate = Stimulus::vector(next);
        const double p = g.classify(candidate)[e];
        if (u * current_p < p) {
            current = std::move(candidate);
            current_p = p;
        }
    }
    return current;
}

} // namespace priorprobe

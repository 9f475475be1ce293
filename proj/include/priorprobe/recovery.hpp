#pragma once

#include "priorprobe/chain.hpp"
#include "priorprobe/core.hpp"
#include "priorprobe/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace priorprobe {

struct ChainEstimate {
    std::size_t chain_id = 0;
    std::size_t retained = 0;
    std::optional<Categorical> probs;  // empty when the chain kept no samples
};

/// Reweighted estimate of the prior P(e) with diagnostics.
struct PriorEstimate {
    Categorical probs;
    std::vector<double> ess;  // per category
    std::vector<ChainEstimate> per_chain;
    double burn_in_fraction = 0.0;
    std::size_t burn_in = 0;        // samples dropped in total
    std::size_t total_samples = 0;  // samples used
    double max_pairwise_tv = 0.0;
    double max_raw_weight = 0.0;  // max 1/G_e(e|f) over used samples
};

namespace detail {

/// Integrated autocorrelation time of a 0/1 series by Geyer's initial
/// positive sequence. Returns 1 for constant or very short series.
inline double autocorrelation_time(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 4) return 1.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= double(n);
    auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
        return s / double(n);
    };
    const double c0 = autocov(0);
    if (c0 <= 0.0) return 1.0;
    double tau = -1.0;
    for (std::size_t k = 0; 2 * k + 1 < n / 2; ++k) {
        const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    return std::max(1.0, tau);
}

inline PriorEstimate estimate_from_chains(const std::vector<std::pair<std::size_t, std::vector<SampleRecord>>>& chains,
                                          std::size_t n_categories) {
    std::size_t total = 0;
    double g_ref = 1.0;
    double max_raw = 0.0;
    for (const auto& [id, samples] : chains) {
        for (const auto& s : samples) {
            if (s.e >= n_categories) throw Error(ErrorCode::InvalidValue, "sample category out of range");
            if (!(s.gatekeeper_prob > 0.0) || s.gatekeeper_prob > 1.0)
                throw Error(ErrorCode::InvalidValue, "gatekeeper probability outside (0, 1]");
            g_ref = std::min(g_ref, s.gatekeeper_prob);
            max_raw = std::max(max_raw, 1.0 / s.gatekeeper_prob);
            ++total;
        }
    }
    if (total == 0) throw Error(ErrorCode::Empty, "no samples left after burn-in");

    // Weights g_ref / g are proportional to 1/g and lie in (0, 1]; a constant
    // gatekeeper gives every sample weight exactly 1.
    auto weight_sums = [&](const std::vector<SampleRecord>& samples) {
        std::vector<double> w(n_categories, 0.0);
        for (const auto& s : samples) w[s.e] += g_ref / s.gatekeeper_prob;
        return w;
    };

    PriorEstimate est;
    std::vector<double> pooled(n_categories, 0.0);
    std::vector<double> sq(n_categories, 0.0);
    std::vector<double> counts(n_categories, 0.0);
    for (const auto& [id, samples] : chains) {
        ChainEstimate ce{id, samples.size(), std::nullopt};
        if (!samples.empty()) ce.probs = normalize(weight_sums(samples));
        est.per_chain.push_back(std::move(ce));
        for (const auto& s : samples) {
            const double w = g_ref / s.gatekeeper_prob;
            pooled[s.e] += w;
            sq[s.e] += w * w;
            counts[s.e] += 1.0;
        }
    }
    est.probs = normalize(pooled);
    est.total_samples = total;
    est.max_raw_weight = max_raw;

    est.ess.assign(n_categories, 0.0);
    for (std::size_t e = 0; e < n_categories; ++e) {
        if (counts[e] == 0.0) continue;
        double tau_sum = 0.0;
        double len_sum = 0.0;
        for (const auto& [id, samples] : chains) {
            if (samples.empty()) continue;
            std::vector<double> ind(samples.size());
            for (std::size_t t = 0; t < samples.size(); ++t) ind[t] = samples[t].e == e ? 1.0 : 0.0;
            tau_sum += autocorrelation_time(ind) * double(samples.size());
            len_sum += double(samples.size());
        }
        const double tau = tau_sum / len_sum;
        const double kish = pooled[e] * pooled[e] / sq[e];
        est.ess[e] = std::min(kish / tau, counts[e]);
    }

    for (std::size_t a = 0; a < est.per_chain.size(); ++a)
        for (std::size_t b = a + 1; b < est.per_chain.size(); ++b)
            if (est.per_chain[a].probs && est.per_chain[b].probs)
                est.max_pairwise_tv =
                    std::max(est.max_pairwise_tv, total_variation(*est.per_chain[a].probs, *est.per_chain[b].probs));
    return est;
}

} // namespace detail

/// Drops the first `burn_in` samples of the sequence, then weights each
/// remaining sample by 1/G_e(e|f). Per-chain estimates group by chain_id.
inline PriorEstimate reweight(std::span<const SampleRecord> samples, std::size_t burn_in, std::size_t n_categories) {
    if (burn_in >= samples.size()) throw Error(ErrorCode::Empty, "burn-in removes every sample");
    std::map<std::size_t, std::vector<SampleRecord>> by_chain;
    for (std::size_t i = burn_in; i < samples.size(); ++i) by_chain[samples[i].chain_id].push_back(samples[i]);
    std::vector<std::pair<std::size_t, std::vector<SampleRecord>>> chains(by_chain.begin(), by_chain.end());
    PriorEstimate est = detail::estimate_from_chains(chains, n_categories);
    est.burn_in = burn_in;
    est.burn_in_fraction = double(burn_in) / double(samples.size());
    return est;
}

/// Samples a chain keeps after dropping floor(fraction * n) from its start.
inline std::size_t burn_in_count(std::size_t n, double fraction) {
    return std::size_t(std::floor(fraction * double(n)));
}

inline PriorEstimate pool(std::span<const ChainState> chains, double burn_in_fraction, std::size_t n_categories) {
    if (chains.empty()) throw Error(ErrorCode::Empty, "no chains to pool");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
        throw Error(ErrorCode::InvalidValue, "burn-in fraction must be in [0, 1)");
    std::vector<std::pair<std::size_t, std::vector<SampleRecord>>> retained;
    std::size_t dropped = 0;
    for (const auto& c : chains) {
        const std::size_t drop = burn_in_count(c.samples.size(), burn_in_fraction);
        dropped += drop;
        retained.emplace_back(c.chain_id, std::vector<SampleRecord>(c.samples.begin() + std::ptrdiff_t(drop),
                                                                    c.samples.end()));
    }
    PriorEstimate est = detail::estimate_from_chains(retained, n_categories);
    est.burn_in = dropped;
    est.burn_in_fraction = burn_in_fraction;
    return est;
}

struct AcceptanceStats {
    double face_acceptance = 0.0;
    double category_acceptance = 0.0;
    double auto_accept_rate = 0.0;  // auto-accepts / all categorization events
};

inline AcceptanceStats acceptance_stats(const ChainState& chain) {
    const auto& c = chain.counters;
    AcceptanceStats out;
    if (c.face_trials) out.face_acceptance = double(c.face_accepts) / double(c.face_trials);
    if (c.category_trials) out.category_acceptance = double(c.category_accepts) / double(c.category_trials);
    if (c.category_trials + c.auto_accepts)
        out.auto_accept_rate = double(c.auto_accepts) / double(c.category_trials + c.auto_accepts);
    return out;
}

inline json prior_estimate_json(const PriorEstimate& est, const CategorySet& categories) {
    json per_chain = json::array();
    for (const auto& c : est.per_chain)
        per_chain.push_back(json{{"chain_id", c.chain_id},
                                 {"retained", c.retained},
                                 {"probs", c.probs ? json(*c.probs) : json(nullptr)}});
    return json{{"schema", "priorprobe.prior/1"},
                {"labels", categories.labels()},
                {"probs", est.probs},
                {"ess", est.ess},
                {"per_chain", std::move(per_chain)},
                {"diagnostics",
                 {{"burn_in_fraction", est.burn_in_fraction},
                  {"burn_in", est.burn_in},
                  {"total_samples", est.total_samples},
                  {"max_pairwise_tv", est.max_pairwise_tv},
                  {"max_raw_weight", est.max_raw_weight}}}};
}

} // namespace priorprobe

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace priorprobe {

enum class ErrorCode {
    AllZero,
    InvalidValue,
    NotDiscrete,
    OutOfBounds,
    ExternalUnavailable,
    MalformedReply,
    NotNormalized,
    SameCategory,
    StaleTrial,
    Empty,
    NotConverged,
    MismatchedCategories,
    MissingCategory,
    DegenerateVariance,
    InvalidConfig,
    UnknownSession,
    StaleToken,
    MissingConfidence,
    MalformedLog,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::NotDiscrete: return "NotDiscrete";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ExternalUnavailable: return "ExternalUnavailable";
    case ErrorCode::MalformedReply: return "MalformedReply";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::SameCategory: return "SameCategory";
    case ErrorCode::StaleTrial: return "StaleTrial";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::MismatchedCategories: return "MismatchedCategories";
    case ErrorCode::MissingCategory: return "MissingCategory";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::StaleToken: return "StaleToken";
    case ErrorCode::MissingConfidence: return "MissingConfidence";
    case ErrorCode::MalformedLog: return "MalformedLog";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Floor applied to probabilities before they are used as divisors.
inline constexpr double kDivisionFloor = 1e-9;

/// Tolerance on the sum of a Categorical.
inline constexpr double kSumTolerance = 1e-9;

using CategoryIndex = std::size_t;

/// Ordered, unique category labels with a name -> index lookup.
class CategorySet {
public:
    CategorySet() = default;

    explicit CategorySet(std::vector<std::string> labels) : labels_(std::move(labels)) {
        if (labels_.empty())
            throw Error(ErrorCode::InvalidConfig, "category set must not be empty");
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (!index_.emplace(labels_[i], i).second)
                throw Error(ErrorCode::InvalidConfig, "duplicate category label '" + labels_[i] + "'");
        }
    }

    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::string& label(CategoryIndex i) const { return labels_.at(i); }

    CategoryIndex index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw Error(ErrorCode::MissingCategory, "unknown category '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    friend bool operator==(const CategorySet& a, const CategorySet& b) { return a.labels_ == b.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, CategoryIndex> index_;
};

/// A probability vector: non-negative entries summing to one.
class Categorical {
public:
    Categorical() = default;

    /// Validates without renormalizing.
    explicit Categorical(std::vector<double> probs, double tolerance = kSumTolerance) : probs_(std::move(probs)) {
        if (probs_.empty())
            throw Error(ErrorCode::InvalidValue, "empty categorical");
        double sum = 0.0;
        for (double p : probs_) {
            if (!std::isfinite(p) || p < 0.0)
                throw Error(ErrorCode::InvalidValue, "categorical entries must be finite and non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > tolerance)
            throw Error(ErrorCode::InvalidValue, "categorical entries sum to " + std::to_string(sum));
    }

    static Categorical uniform(std::size_t n) { return Categorical(std::vector<double>(n, 1.0 / double(n))); }

    static Categorical point_mass(std::size_t n, std::size_t at) {
        std::vector<double> p(n, 0.0);
        p.at(at) = 1.0;
        return Categorical(std::move(p));
    }

    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    const std::vector<double>& probs() const noexcept { return probs_; }
    std::span<const double> span() const noexcept { return probs_; }

    /// Index of the largest entry; ties go to the lowest index.
    std::size_t argmax() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs_.size(); ++i)
            if (probs_[i] > probs_[best]) best = i;
        return best;
    }

    /// True when another entry equals the maximum.
    bool argmax_tied() const {
        const std::size_t best = argmax();
        for (std::size_t i = 0; i < probs_.size(); ++i)
            if (i != best && probs_[i] == probs_[best]) return true;
        return false;
    }

    friend bool operator==(const Categorical& a, const Categorical& b) { return a.probs_ == b.probs_; }

private:
    std::vector<double> probs_;
};

inline Categorical normalize(std::span<const double> weights) {
    if (weights.empty())
        throw Error(ErrorCode::InvalidValue, "cannot normalize an empty vector");
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0)
            throw Error(ErrorCode::InvalidValue, "weights must be finite and non-negative");
        sum += w;
    }
    if (sum <= 0.0)
        throw Error(ErrorCode::AllZero, "every weight is zero");
    std::vector<double> out(weights.begin(), weights.end());
    // A vector already normalized up to summation rounding is returned as is,
    // which makes normalize idempotent bit for bit.
    const double rounding = 4.0 * double(weights.size()) * 0x1.0p-52;
    if (std::abs(sum - 1.0) <= rounding) return Categorical(std::move(out));
    for (double& w : out) w /= sum;
    return Categorical(std::move(out));
}

inline Categorical normalize(const std::vector<double>& weights) {
    return normalize(std::span<const double>(weights));
}

/// Probability of moving to the proposal under probability matching:
/// p_proposal / (p_current + p_proposal), and 0.5 when both are zero.
inline double barker_accept_prob(double p_current, double p_proposal) {
    if (!std::isfinite(p_current) || !std::isfinite(p_proposal) || p_current < 0.0 || p_proposal < 0.0)
        throw Error(ErrorCode::InvalidValue, "barker inputs must be finite and non-negative");
    const double total = p_current + p_proposal;
    if (total == 0.0) return 0.5;
    return p_proposal / total;
}

/// Half the L1 distance.
inline double total_variation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw Error(ErrorCode::MismatchedCategories, "total variation over different supports");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

inline double total_variation(const Categorical& a, const Categorical& b) { return total_variation(a.span(), b.span()); }

namespace detail {

inline constexpr std::uint64_t splitmix_finalize(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix_finalize(a ^ splitmix_finalize(b + 0x9e3779b97f4a7c15ULL));
}

inline std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// Counter-based generator: the n-th output is a pure function of (seed, n),
/// so a stream is fully described by its seed and counter.
class RngStream {
public:
    RngStream() = default;
    explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        return detail::splitmix_finalize(seed_ + 0x9e3779b97f4a7c15ULL * (++counter_));
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw Error(ErrorCode::InvalidValue, "below(0)");
        // Lemire's nearly-divisionless method with rejection.
        std::uint64_t x = next_u64();
        __uint128_t m = __uint128_t(x) * n;
        auto low = std::uint64_t(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = next_u64();
                m = __uint128_t(x) * n;
                low = std::uint64_t(m);
            }
        }
        return std::uint64_t(m >> 64);
    }

    bool coin() noexcept { return (next_u64() >> 63) != 0; }

    /// Standard normal by Box-Muller (consumes two draws).
    double normal() noexcept {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw Error(ErrorCode::InvalidValue, "gamma shape must be positive");
        if (shape < 1.0) {
            double u = uniform();
            if (u <= 0.0) u = 0x1.0p-53;
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Independent child stream keyed by `key`; does not advance this stream.
    RngStream derive(std::uint64_t key) const noexcept { return RngStream(detail::hash_combine(seed_, key)); }
    RngStream derive(std::string_view key) const noexcept { return derive(detail::hash_string(key)); }

    friend bool operator==(const RngStream&, const RngStream&) = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

inline CategoryIndex sample_categorical(const Categorical& dist, RngStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    const auto& p = dist.probs();
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    // u landed in the rounding gap above the partial sum; take the last positive entry.
    for (std::size_t i = p.size(); i-- > 0;)
        if (p[i] > 0.0) return i;
    return p.size() - 1;
}

inline Categorical sample_dirichlet(std::size_t n, double alpha, RngStream& rng) {
    std::vector<double> g(n);
    for (auto& x : g) x = rng.gamma(alpha);
    return normalize(g);
}

} // namespace priorprobe

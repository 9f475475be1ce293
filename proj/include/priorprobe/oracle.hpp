#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/gatekeeper.hpp"
#include "priorprobe/json_io.hpp"
#include "priorprobe/participant.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <optional>
#include <vector>

// Exact analysis of the block chain on a discrete (stimulus, category) grid.

namespace priorprobe::oracle {

/// Flat index e * n_stimuli + f over joint states.
class JointStateIndex {
public:
    JointStateIndex(std::size_t n_stimuli, std::size_t n_categories) : n_f_(n_stimuli), n_e_(n_categories) {}

    std::size_t size() const noexcept { return n_f_ * n_e_; }
    std::size_t n_stimuli() const noexcept { return n_f_; }
    std::size_t n_categories() const noexcept { return n_e_; }
    std::size_t flat(std::size_t f, CategoryIndex e) const noexcept { return e * n_f_ + f; }
    std::size_t stimulus(std::size_t flat) const noexcept { return flat % n_f_; }
    CategoryIndex category(std::size_t flat) const noexcept { return flat / n_f_; }

private:
    std::size_t n_f_;
    std::size_t n_e_;
};

/// Dense row-major square matrix.
class Matrix {
public:
    Matrix() = default;
    explicit Matrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

    std::size_t size() const noexcept { return n_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }

    double row_sum(std::size_t i) const {
        double s = 0.0;
        for (std::size_t j = 0; j < n_; ++j) s += (*this)(i, j);
        return s;
    }

    /// Row vector times matrix.
    std::vector<double> left_multiply(const std::vector<double>& v) const {
        std::vector<double> out(n_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
            const double vi = v[i];
            if (vi == 0.0) continue;
            const double* row = &data_[i * n_];
            for (std::size_t j = 0; j < n_; ++j) out[j] += vi * row[j];
        }
        return out;
    }

private:
    std::size_t n_ = 0;
    std::vector<double> data_;
};

using TransitionMatrix = Matrix;

/// A discrete configuration. `face_proposals`, when set, replaces the
/// gatekeeper-derived face proposal column for each category, which breaks
/// the G_f proportional to G_e consistency on purpose.
struct DiscreteConfig {
    StimulusSpace space = StimulusSpace::default_discrete(2);
    ParticipantModel participant;
    Gatekeeper gatekeeper;
    std::optional<std::vector<Categorical>> face_proposals;

    /// P(e) = [0.7, 0.3]; P(f|A) = [0.8, 0.2], P(f|B) = [0.4, 0.6];
    /// G_e(.|f1) = [0.9, 0.1], G_e(.|f2) = [0.3, 0.7].
    static DiscreteConfig canonical_2x2() {
        DiscreteConfig c;
        c.space = StimulusSpace::default_discrete(2);
        c.participant = ParticipantModel(
            Categorical({0.7, 0.3}),
            DiscreteLikelihood{{Categorical({0.8, 0.2}), Categorical({0.4, 0.6})}});
        c.gatekeeper = Gatekeeper(TableGatekeeper{{Categorical({0.9, 0.1}), Categorical({0.3, 0.7})}});
        return c;
    }

    std::size_t n_stimuli() const { return space.count(); }
    std::size_t n_categories() const { return participant.n_categories(); }
};

inline void require_discrete(const DiscreteConfig& c) {
    if (!c.space.is_discrete()) throw Error(ErrorCode::NotDiscrete, "oracle needs a discrete stimulus space");
    if (c.gatekeeper.n_categories() != c.n_categories())
        throw Error(ErrorCode::MismatchedCategories, "gatekeeper and participant disagree on categories");
}

/// Face proposal distribution G_f(.|e) over stimuli.
inline Categorical face_proposal(const DiscreteConfig& c, CategoryIndex e) {
    if (c.face_proposals) return c.face_proposals->at(e);
    return discrete_proposal_column(c.gatekeeper, e, c.space);
}

/// Face block kernel for fixed e: independent proposals from G_f(.|e),
/// Barker acceptance on P(f|e).
inline Matrix face_kernel(const DiscreteConfig& c, CategoryIndex e) {
    require_discrete(c);
    const std::size_t n = c.n_stimuli();
    const Categorical q = face_proposal(c, e);
    std::vector<double> lik(n);
    for (std::size_t f = 0; f < n; ++f) lik[f] = likelihood_at(c.participant, Stimulus::discrete(f), e);
    Matrix k(n);
    for (std::size_t f = 0; f < n; ++f) {
        double off = 0.0;
        for (std::size_t g = 0; g < n; ++g) {
            if (g == f) continue;
            k(f, g) = q[g] * barker_accept_prob(lik[f], lik[g]);
            off += k(f, g);
        }
        k(f, f) = 1.0 - off;
    }
    return k;
}

/// Category block kernel for fixed f: proposals from G_e(.|f), Barker
/// acceptance on P(e|f); self-proposals (auto-accepts) and rejections stay.
inline Matrix category_kernel(const DiscreteConfig& c, std::size_t f) {
    require_discrete(c);
    const std::size_t n = c.n_categories();
    const Stimulus s = Stimulus::discrete(f);
    const Categorical g = c.gatekeeper.classify(s);
    const Categorical post = posterior(c.participant, s);
    Matrix k(n);
    for (std::size_t e = 0; e < n; ++e) {
        double off = 0.0;
        for (std::size_t e2 = 0; e2 < n; ++e2) {
            if (e2 == e) continue;
            k(e, e2) = g[e2] * barker_accept_prob(post[e], post[e2]);
            off += k(e, e2);
        }
        k(e, e) = 1.0 - off;
    }
    return k;
}

/// One full block step, face move then category move:
/// T[(f,e) -> (f',e')] = K_face(f -> f' | e) * K_cat(e -> e' | f').
inline TransitionMatrix build_transition_matrix(const DiscreteConfig& c) {
    require_discrete(c);
    const JointStateIndex idx(c.n_stimuli(), c.n_categories());
    std::vector<Matrix> face, cat;
    for (std::size_t e = 0; e < idx.n_categories(); ++e) face.push_back(face_kernel(c, e));
    for (std::size_t f = 0; f < idx.n_stimuli(); ++f) cat.push_back(category_kernel(c, f));
    TransitionMatrix t(idx.size());
    for (std::size_t from = 0; from < idx.size(); ++from) {
        const std::size_t f = idx.stimulus(from);
        const CategoryIndex e = idx.category(from);
        for (std::size_t f2 = 0; f2 < idx.n_stimuli(); ++f2)
            for (std::size_t e2 = 0; e2 < idx.n_categories(); ++e2)
                t(from, idx.flat(f2, e2)) = face[e](f, f2) * cat[f2](e, e2);
    }
    return t;
}

namespace detail {

inline bool strongly_connected(const Matrix& t) {
    const std::size_t n = t.size();
    auto reaches_all = [&](bool forward) {
        std::vector<bool> seen(n, false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < n; ++j) {
                const double w = forward ? t(i, j) : t(j, i);
                if (w > 0.0 && !seen[j]) {
                    seen[j] = true;
                    stack.push_back(j);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    };
    return n > 0 && reaches_all(true) && reaches_all(false);
}

} // namespace detail

/// Left fixed point by power iteration from the uniform vector, to an L1
/// residual of `tolerance`.
inline std::vector<double> stationary_distribution(const TransitionMatrix& t, double tolerance = 1e-12,
                                                   std::size_t max_iterations = 1'000'000) {
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(t.row_sum(i) - 1.0) > 1e-12)
            throw Error(ErrorCode::InvalidValue, "transition matrix is not row-stochastic");
    if (!detail::strongly_connected(t))
        throw Error(ErrorCode::NotConverged, "transition matrix is reducible; stationary distribution is not unique");
    std::vector<double> pi(n, 1.0 / double(n));
    for (std::size_t it = 0; it < max_iterations; ++it) {
        std::vector<double> next = t.left_multiply(pi);
        double s = 0.0;
        for (double v : next) s += v;
        for (double& v : next) v /= s;
        double residual = 0.0;
        for (std::size_t i = 0; i < n; ++i) residual += std::abs(next[i] - pi[i]);
        pi = std::move(next);
        if (residual <= tolerance) return pi;
    }
    throw Error(ErrorCode::NotConverged, "power iteration did not reach the residual tolerance");
}

/// normalize over (f, e) of P(e) P(f|e) G_e(e|f).
inline std::vector<double> closed_form_joint(const DiscreteConfig& c) {
    require_discrete(c);
    const JointStateIndex idx(c.n_stimuli(), c.n_categories());
    std::vector<double> w(idx.size());
    for (std::size_t f = 0; f < idx.n_stimuli(); ++f) {
        const Stimulus s = Stimulus::discrete(f);
        const Categorical g = c.gatekeeper.classify(s);
        for (std::size_t e = 0; e < idx.n_categories(); ++e)
            w[idx.flat(f, e)] = c.participant.prior()[e] * likelihood_at(c.participant, s, e) * g[e];
    }
    return normalize(w).probs();
}

/// Marginal over e of joint(f, e) / G_e(e|f), normalized.
inline Categorical reweighted_marginal(const DiscreteConfig& c, const std::vector<double>& joint) {
    const JointStateIndex idx(c.n_stimuli(), c.n_categories());
    std::vector<double> m(idx.n_categories(), 0.0);
    for (std::size_t f = 0; f < idx.n_stimuli(); ++f) {
        const Categorical g = c.gatekeeper.classify(Stimulus::discrete(f));
        for (std::size_t e = 0; e < idx.n_categories(); ++e) m[e] += joint[idx.flat(f, e)] / g[e];
    }
    return normalize(m);
}

struct RecoveryReport {
    std::vector<double> stationary_joint;
    std::vector<double> closed_form_joint;
    Categorical reweighted_marginal;
    Categorical true_prior;
    double joint_gap = 0.0;     // max |stationary - closed form|
    double marginal_gap = 0.0;  // max |reweighted marginal - true prior|
    double marginal_tv = 0.0;
};

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline RecoveryReport analytic_recovery_check(const DiscreteConfig& c) {
    RecoveryReport r;
    r.stationary_joint = stationary_distribution(build_transition_matrix(c));
    r.closed_form_joint = closed_form_joint(c);
    r.reweighted_marginal = reweighted_marginal(c, r.stationary_joint);
    r.true_prior = c.participant.prior();
    r.joint_gap = max_abs_diff(r.stationary_joint, r.closed_form_joint);
    r.marginal_gap = max_abs_diff(r.reweighted_marginal.span(), r.true_prior.span());
    r.marginal_tv = total_variation(r.reweighted_marginal, r.true_prior);
    return r;
}

inline json report_json(const RecoveryReport& r, const CategorySet& categories) {
    return json{{"schema", "priorprobe.oracle_report/1"},
                {"labels", categories.labels()},
                {"stationary_joint", r.stationary_joint},
                {"closed_form_joint", r.closed_form_joint},
                {"reweighted_marginal", r.reweighted_marginal},
                {"true_prior", r.true_prior},
                {"joint_gap", r.joint_gap},
                {"marginal_gap", r.marginal_gap},
                {"marginal_tv", r.marginal_tv}};
}

} // namespace priorprobe::oracle

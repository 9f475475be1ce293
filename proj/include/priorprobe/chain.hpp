#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/gatekeeper.hpp"
#include "priorprobe/json_io.hpp"
#include "priorprobe/participant.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace priorprobe {

enum class Phase { FaceNext, CategoryNext };

enum class TrialKind { Face, Category, AutoAccept };

inline std::string_view to_string(TrialKind k) {
    switch (k) {
    case TrialKind::Face: return "face";
    case TrialKind::Category: return "category";
    case TrialKind::AutoAccept: return "auto_accept";
    }
    return "?";
}

/// One accepted (f, e) state, with the gatekeeper probability G_e(e|f) needed
/// to reweight it.
struct SampleRecord {
    std::size_t chain_id = 0;
    std::size_t iteration = 0;
    Stimulus f;
    CategoryIndex e = 0;
    double gatekeeper_prob = 1.0;
    bool auto_accepted = false;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Face trial: pick the stimulus that better represents `category`. Both
/// options carry the same nuisance seed.
struct FaceTrial {
    CategoryIndex category = 0;
    Stimulus current;
    Stimulus proposal;
    friend bool operator==(const FaceTrial&, const FaceTrial&) = default;
};

/// Categorization trial: pick the category that better describes `stimulus`.
/// A proposal equal to the current category is an auto-accept.
struct CategoryTrial {
    Stimulus stimulus;
    CategoryIndex current = 0;
    CategoryIndex proposal = 0;
    double gatekeeper_current = 1.0;   // G_e(current|f)
    double gatekeeper_proposal = 1.0;  // G_e(proposal|f)
    friend bool operator==(const CategoryTrial&, const CategoryTrial&) = default;
};

struct TrialDescriptor {
    std::size_t chain_id = 0;
    std::size_t step = 0;
    std::variant<FaceTrial, CategoryTrial> body;
    bool proposal_first = false;  // presentation order, left/right

    TrialKind kind() const {
        if (std::holds_alternative<FaceTrial>(body)) return TrialKind::Face;
        const auto& c = std::get<CategoryTrial>(body);
        return c.current == c.proposal ? TrialKind::AutoAccept : TrialKind::Category;
    }
    bool human_facing() const { return kind() != TrialKind::AutoAccept; }
    const FaceTrial& face() const { return std::get<FaceTrial>(body); }
    const CategoryTrial& category() const { return std::get<CategoryTrial>(body); }

    friend bool operator==(const TrialDescriptor&, const TrialDescriptor&) = default;
};

struct ChainCounters {
    std::size_t face_trials = 0;
    std::size_t face_accepts = 0;
    std::size_t category_trials = 0;
    std::size_t category_accepts = 0;
    std::size_t auto_accepts = 0;
    friend bool operator==(const ChainCounters&, const ChainCounters&) = default;
};

struct ChainState {
    std::size_t chain_id = 0;
    Stimulus current_f;
    CategoryIndex current_e = 0;
    Phase phase = Phase::CategoryNext;
    std::size_t trials_done = 0;  // human-facing trials only
    std::size_t step = 0;         // every resolved event, auto-accepts included
    bool first_category_trial = true;
    std::vector<SampleRecord> samples;
    RngStream rng;
    ChainCounters counters;
    std::optional<TrialDescriptor> in_flight;

    friend bool operator==(const ChainState&, const ChainState&) = default;
};

/// What a chain needs to generate trials.
struct ChainEnv {
    const Gatekeeper* gatekeeper = nullptr;
    const StimulusSpace* space = nullptr;
    ProposerBudget budget;
};

inline ChainState init_chain(std::size_t chain_id, CategoryIndex start_category, const ChainEnv& env, RngStream rng) {
    if (start_category >= env.gatekeeper->n_categories())
        throw Error(ErrorCode::InvalidValue, "start category out of range");
    ChainState s;
    s.chain_id = chain_id;
    s.current_e = start_category;
    s.rng = rng;
    const std::uint64_t seed = s.rng.next_u64();
    s.current_f = propose_stimulus(*env.gatekeeper, start_category, *env.space, env.budget, s.rng).with_seed(seed);
    s.phase = Phase::CategoryNext;
    return s;
}

/// Produces the chain's next event and holds it as the in-flight trial.
/// Calling again before apply_choice returns the same trial.
inline const TrialDescriptor& next_trial(ChainState& s, const ChainEnv& env) {
    if (s.in_flight) return *s.in_flight;
    TrialDescriptor t;
    t.chain_id = s.chain_id;
    t.step = s.step;
    if (s.phase == Phase::FaceNext) {
        const std::uint64_t seed = s.rng.next_u64();
        FaceTrial face;
        face.category = s.current_e;
        face.current = s.current_f.with_seed(seed);
        face.proposal = propose_stimulus(*env.gatekeeper, s.current_e, *env.space, env.budget, s.rng).with_seed(seed);
        t.body = std::move(face);
    } else {
        const Categorical g = env.gatekeeper->classify(s.current_f);
        const std::size_t n = g.size();
        CategoryIndex proposal = s.current_e;
        if (s.first_category_trial && n > 1) {
            // First trial: the other option is uniform over the remaining categories.
            proposal = CategoryIndex(s.rng.below(n - 1));
            if (proposal >= s.current_e) ++proposal;
        } else {
            proposal = sample_categorical(g, s.rng);
        }
        t.body = CategoryTrial{s.current_f, s.current_e, proposal, g[s.current_e], g[proposal]};
    }
    t.proposal_first = s.rng.coin();
    s.in_flight = std::move(t);
    return *s.in_flight;
}

/// Applies a decision for the in-flight trial. Auto-accepts take no choice.
inline void apply_choice(ChainState& s, const TrialDescriptor& t, const std::optional<Choice>& choice) {
    if (!s.in_flight || !(*s.in_flight == t))
        throw Error(ErrorCode::StaleTrial, "trial " + std::to_string(t.step) + " is not in flight on chain " +
                                               std::to_string(s.chain_id));
    const TrialKind kind = t.kind();
    if (kind != TrialKind::AutoAccept && !choice)
        throw Error(ErrorCode::InvalidValue, "human-facing trial needs a choice");
    if (choice && choice->picked != 0 && choice->picked != 1)
        throw Error(ErrorCode::InvalidValue, "choice must be 0 (current) or 1 (proposal)");

    if (kind == TrialKind::Face) {
        const auto& face = t.face();
        ++s.counters.face_trials;
        if (choice->picked_proposal()) {
            ++s.counters.face_accepts;
            s.current_f = face.proposal;
        } else {
            s.current_f = face.current;
        }
        ++s.trials_done;
        s.phase = Phase::CategoryNext;
    } else {
        const auto& cat = t.category();
        double g = cat.gatekeeper_current;
        if (kind == TrialKind::AutoAccept) {
            ++s.counters.auto_accepts;
        } else {
            ++s.counters.category_trials;
            ++s.trials_done;
            if (choice->picked_proposal()) {
                ++s.counters.category_accepts;
                s.current_e = cat.proposal;
                g = cat.gatekeeper_proposal;
            }
        }
        s.samples.push_back(SampleRecord{s.chain_id, s.samples.size(), s.current_f, s.current_e, g,
                                         kind == TrialKind::AutoAccept});
        s.first_category_trial = false;
        s.phase = Phase::FaceNext;
    }
    ++s.step;
    s.in_flight.reset();
}

/// Probability-matching response of a simulated participant.
inline Choice simulate_choice(const ParticipantModel& m, const TrialDescriptor& t, RngStream& rng) {
    if (t.kind() == TrialKind::Face) {
        const auto& face = t.face();
        return choose_face(m, face.category, face.current, face.proposal, rng);
    }
    const auto& cat = t.category();
    return choose_category(m, cat.stimulus, cat.current, cat.proposal, rng);
}

using TrialObserver = std::function<void(const TrialDescriptor&, const std::optional<Choice>&, const ChainState&)>;

/// Resolves one event: auto-accepts are applied directly, human-facing
/// trials are answered by the simulated participant.
inline void advance_one(ChainState& s, const ChainEnv& env, const ParticipantModel& m, RngStream& responder,
                        const TrialObserver& observer = {}) {
    const TrialDescriptor t = next_trial(s, env);
    std::optional<Choice> choice;
    if (t.human_facing()) choice = simulate_choice(m, t, responder);
    apply_choice(s, t, choice);
    if (observer) observer(t, choice, s);
}

/// Runs until `n_trials` more human-facing trials have been answered.
inline void run_chain(ChainState& s, const ChainEnv& env, const ParticipantModel& m, RngStream& responder,
                      std::size_t n_trials, const TrialObserver& observer = {}) {
    if (n_trials < 1) throw Error(ErrorCode::InvalidValue, "n_trials must be >= 1");
    const std::size_t target = s.trials_done + n_trials;
    while (s.trials_done < target) advance_one(s, env, m, responder, observer);
}

/// Runs until the chain holds `n_samples` samples (one per block iteration).
inline void run_blocks(ChainState& s, const ChainEnv& env, const ParticipantModel& m, RngStream& responder,
                       std::size_t n_samples, const TrialObserver& observer = {}) {
    while (s.samples.size() < n_samples) advance_one(s, env, m, responder, observer);
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const SampleRecord& r) {
    j = json{{"chain_id", r.chain_id}, {"iteration", r.iteration}, {"f", r.f},
             {"e", r.e}, {"gatekeeper_prob", r.gatekeeper_prob}, {"auto_accepted", r.auto_accepted}};
}

inline void from_json(const json& j, SampleRecord& r) {
    r.chain_id = j.at("chain_id").get<std::size_t>();
    r.iteration = j.at("iteration").get<std::size_t>();
    r.f = j.at("f").get<Stimulus>();
    r.e = j.at("e").get<CategoryIndex>();
    r.gatekeeper_prob = j.at("gatekeeper_prob").get<double>();
    r.auto_accepted = j.at("auto_accepted").get<bool>();
}

inline void to_json(json& j, const TrialDescriptor& t) {
    j = json{{"chain_id", t.chain_id}, {"step", t.step}, {"kind", to_string(t.kind())},
             {"proposal_first", t.proposal_first}};
    if (t.kind() == TrialKind::Face) {
        const auto& f = t.face();
        j["category"] = f.category;
        j["current"] = f.current;
        j["proposal"] = f.proposal;
    } else {
        const auto& c = t.category();
        j["stimulus"] = c.stimulus;
        j["current"] = c.current;
        j["proposal"] = c.proposal;
        j["gatekeeper_probs"] = {c.gatekeeper_current, c.gatekeeper_proposal};
    }
}

inline void from_json(const json& j, TrialDescriptor& t) {
    t.chain_id = j.at("chain_id").get<std::size_t>();
    t.step = j.at("step").get<std::size_t>();
    t.proposal_first = j.at("proposal_first").get<bool>();
    if (j.at("kind").get<std::string>() == "face") {
        t.body = FaceTrial{j.at("category").get<CategoryIndex>(), j.at("current").get<Stimulus>(),
                           j.at("proposal").get<Stimulus>()};
    } else {
        const auto g = j.at("gatekeeper_probs").get<std::vector<double>>();
        if (g.size() != 2) throw Error(ErrorCode::MalformedLog, "gatekeeper_probs needs two entries");
        t.body = CategoryTrial{j.at("stimulus").get<Stimulus>(), j.at("current").get<CategoryIndex>(),
                               j.at("proposal").get<CategoryIndex>(), g[0], g[1]};
    }
}

inline void to_json(json& j, const ChainCounters& c) {
    j = json{{"face_trials", c.face_trials}, {"face_accepts", c.face_accepts},
             {"category_trials", c.category_trials}, {"category_accepts", c.category_accepts},
             {"auto_accepts", c.auto_accepts}};
}

inline void from_json(const json& j, ChainCounters& c) {
    c.face_trials = j.at("face_trials");
    c.face_accepts = j.at("face_accepts");
    c.category_trials = j.at("category_trials");
    c.category_accepts = j.at("category_accepts");
    c.auto_accepts = j.at("auto_accepts");
}

inline void to_json(json& j, const ChainState& s) {
    j = json{{"chain_id", s.chain_id},
             {"current_f", s.current_f},
             {"current_e", s.current_e},
             {"phase", s.phase == Phase::FaceNext ? "face_next" : "category_next"},
             {"trials_done", s.trials_done},
             {"step", s.step},
             {"first_category_trial", s.first_category_trial},
             {"samples", s.samples},
             {"rng", s.rng},
             {"counters", s.counters},
             {"in_flight", s.in_flight ? json(*s.in_flight) : json(nullptr)}};
}

inline void from_json(const json& j, ChainState& s) {
    s.chain_id = j.at("chain_id");
    s.current_f = j.at("current_f").get<Stimulus>();
    s.current_e = j.at("current_e");
    s.phase = j.at("phase").get<std::string>() == "face_next" ? Phase::FaceNext : Phase::CategoryNext;
    s.trials_done = j.at("trials_done");
    s.step = j.at("step");
    s.first_category_trial = j.at("first_category_trial");
    s.samples = j.at("samples").get<std::vector<SampleRecord>>();
    s.rng = j.at("rng").get<RngStream>();
    s.counters = j.at("counters").get<ChainCounters>();
    if (j.at("in_flight").is_null()) s.in_flight.reset();
    else s.in_flight = j.at("in_flight").get<TrialDescriptor>();
}

/// One line of the append-only trial log.
inline json trial_log_record(const TrialDescriptor& t, const std::optional<Choice>& choice, const ChainState& after) {
    json options = t;
    options.erase("chain_id");
    options.erase("step");
    options.erase("kind");
    json rec{{"chain_id", t.chain_id},
             {"iteration", t.step},
             {"kind", to_string(t.kind())},
             {"options", std::move(options)},
             {"choice", choice ? json(choice->picked) : json(nullptr)},
             {"confidence", choice && choice->confidence ? json(*choice->confidence) : json(nullptr)},
             {"sample", nullptr},
             {"seed_state", after.rng}};
    if (t.kind() != TrialKind::Face && !after.samples.empty()) {
        const auto& s = after.samples.back();
        rec["sample"] = json{{"f", s.f}, {"e", s.e}, {"gatekeeper_prob", s.gatekeeper_prob},
                             {"iteration", s.iteration}, {"auto_accepted", s.auto_accepted}};
    }
    return rec;
}

inline TrialDescriptor trial_from_log_record(const json& rec) {
    json t = rec.at("options");
    t["chain_id"] = rec.at("chain_id");
    t["step"] = rec.at("iteration");
    t["kind"] = rec.at("kind");
    return t.get<TrialDescriptor>();
}

inline std::optional<Choice> choice_from_log_record(const json& rec) {
    if (rec.at("choice").is_null()) return std::nullopt;
    Choice c{rec.at("choice").get<int>(), std::nullopt};
    if (!rec.at("confidence").is_null()) c.confidence = rec.at("confidence").get<int>();
    return c;
}

/// Re-executes a chain from its initial state using logged choices. Every
/// regenerated trial and RNG state must match the log.
inline void replay_chain(ChainState& s, const ChainEnv& env, const std::vector<json>& records) {
    for (const auto& rec : records) {
        if (rec.at("chain_id").get<std::size_t>() != s.chain_id) continue;
        const TrialDescriptor& t = next_trial(s, env);
        if (!(json(t) == json(trial_from_log_record(rec))))
            throw Error(ErrorCode::MalformedLog, "log diverges from replay at chain " + std::to_string(s.chain_id) +
                                                     " step " + std::to_string(t.step));
        const TrialDescriptor copy = t;
        apply_choice(s, copy, choice_from_log_record(rec));
        if (!(json(s.rng) == rec.at("seed_state")))
            throw Error(ErrorCode::MalformedLog, "rng state diverges from the log at step " + std::to_string(copy.step));
    }
}

} // namespace priorprobe

#pragma once

#include "priorprobe/chain.hpp"
#include "priorprobe/config.hpp"
#include "priorprobe/recovery.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace priorprobe {

/// Runs a participant's chains under one trial budget, switching chains
/// according to the schedule. Auto-accepts are resolved internally, so the
/// only external input is the answer to each human-facing trial.
class SessionEngine {
public:
    using LogSink = std::function<void(const json&)>;

    SessionEngine(std::shared_ptr<const RunConfig> config, std::uint64_t seed)
        : config_(std::move(config)), seed_(seed) {
        env_ = ChainEnv{&config_->gatekeeper, &config_->space, config_->proposer};
        const RngStream root(seed_);
        const std::size_t n_cat = config_->categories.size();
        for (std::size_t c = 0; c < config_->chains_per_participant; ++c)
            chains_.push_back(init_chain(c, c % n_cat, env_, root.derive("chain").derive(c)));
        quotas_.assign(chains_.size(), 0);
        served_.assign(chains_.size(), 0);
        for (std::size_t c = 0; c < chains_.size(); ++c)
            quotas_[c] = config_->trial_budget / chains_.size() + (c < config_->trial_budget % chains_.size() ? 1 : 0);
    }

    void set_log_sink(LogSink sink) { sink_ = std::move(sink); }

    const RunConfig& config() const noexcept { return *config_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<ChainState>& chains() const noexcept { return chains_; }
    std::size_t trials_done() const noexcept { return trials_done_; }
    std::size_t trial_budget() const noexcept { return config_->trial_budget; }
    bool done() const noexcept { return trials_done_ >= config_->trial_budget; }
    std::size_t active_chain() const noexcept { return cursor_; }

    /// The in-flight human-facing trial, or nullopt once the budget is spent.
    /// Auto-accepts met on the way are applied and logged.
    std::optional<TrialDescriptor> current_trial() {
        if (done()) return std::nullopt;
        for (;;) {
            ChainState& chain = chains_[cursor_];
            const TrialDescriptor& t = next_trial(chain, env_);
            if (t.human_facing()) return t;
            const TrialDescriptor copy = t;
            apply_choice(chain, copy, std::nullopt);
            emit(copy, std::nullopt, chain);
        }
    }

    /// Answers the in-flight trial.
    void submit(const TrialDescriptor& trial, const Choice& choice) {
        if (done()) throw Error(ErrorCode::StaleTrial, "session budget already spent");
        ChainState& chain = chains_[cursor_];
        apply_choice(chain, trial, choice);
        ++trials_done_;
        ++served_[cursor_];
        emit(trial, choice, chain);
        advance_cursor();
    }

    PriorEstimate prior(double burn_in_fraction) const {
        return pool(chains_, burn_in_fraction, config_->categories.size());
    }

    json state_json() const {
        return json{{"seed", seed_}, {"trials_done", trials_done_}, {"cursor", cursor_}, {"chains", chains_}};
    }

    /// Re-executes logged responses. Records the engine regenerates (auto-accepts
    /// included) must equal the log line for line.
    void replay(const std::vector<json>& records) {
        std::vector<json> regenerated;
        LogSink saved = std::exchange(sink_, [&regenerated](const json& r) { regenerated.push_back(r); });
        try {
            for (const auto& rec : records) {
                if (rec.at("kind").get<std::string>() == "auto_accept") continue;
                auto t = current_trial();
                if (!t) throw Error(ErrorCode::MalformedLog, "log continues past the trial budget");
                if (!(json(*t) == json(trial_from_log_record(rec))))
                    throw Error(ErrorCode::MalformedLog, "logged trial does not match the replayed trial");
                auto choice = choice_from_log_record(rec);
                if (!choice) throw Error(ErrorCode::MalformedLog, "human trial without a choice");
                submit(*t, *choice);
            }
        } catch (...) {
            sink_ = std::move(saved);
            throw;
        }
        sink_ = std::move(saved);
        // Trailing auto-accepts logged before a crash are regenerated lazily.
        std::size_t i = 0;
        for (; i < regenerated.size() && i < records.size(); ++i)
            if (!(strip_session_fields(regenerated[i]) == strip_session_fields(records[i])))
                throw Error(ErrorCode::MalformedLog, "log line " + std::to_string(i) + " does not match replay");
        for (std::size_t k = i; k < records.size(); ++k)
            if (records[k].at("kind").get<std::string>() != "auto_accept")
                throw Error(ErrorCode::MalformedLog, "unreplayed log lines remain");
        pending_auto_ = records.size() - i;
    }

private:
    static json strip_session_fields(json j) {
        j.erase("session_trial");
        return j;
    }

    void emit(const TrialDescriptor& t, const std::optional<Choice>& choice, const ChainState& after) {
        if (pending_auto_ > 0 && !t.human_facing()) {
            // Already on disk from before the restart.
            --pending_auto_;
            return;
        }
        pending_auto_ = 0;
        if (!sink_) return;
        json rec = trial_log_record(t, choice, after);
        rec["session_trial"] = trials_done_;
        sink_(rec);
    }

    void advance_cursor() {
        const std::size_t n = chains_.size();
        if (config_->schedule == Schedule::RoundRobin) {
            cursor_ = (cursor_ + 1) % n;
            return;
        }
        if (served_[cursor_] >= quotas_[cursor_] && cursor_ + 1 < n) ++cursor_;
    }

    std::shared_ptr<const RunConfig> config_;
    std::uint64_t seed_ = 0;
    ChainEnv env_;
    std::vector<ChainState> chains_;
    std::vector<std::size_t> quotas_;
    std::vector<std::size_t> served_;
    std::size_t cursor_ = 0;
    std::size_t trials_done_ = 0;
    std::size_t pending_auto_ = 0;
    LogSink sink_;
};

/// Seed for a participant's session in a simulated cohort.
inline std::uint64_t participant_session_seed(std::uint64_t config_seed, std::size_t participant) {
    return RngStream(config_seed).derive("session").derive(participant).seed();
}

/// Seed of the simulated participant's response stream.
inline RngStream participant_responder(std::uint64_t config_seed, std::size_t participant) {
    return RngStream(config_seed).derive("responder").derive(participant);
}

/// Drives a session to completion with simulated responses.
inline void run_simulated_session(SessionEngine& engine, const ParticipantModel& m, RngStream& responder) {
    while (auto t = engine.current_trial()) engine.submit(*t, simulate_choice(m, *t, responder));
}

} // namespace priorprobe

#pragma once

#include "priorprobe/config.hpp"
#include "priorprobe/recovery.hpp"
#include "priorprobe/session.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>

namespace priorprobe {

inline constexpr const char* kTrialSchema = "priorprobe.trial/1";

namespace detail {

inline std::string hex128(std::uint64_t hi, std::uint64_t lo) {
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", (unsigned long long)hi, (unsigned long long)lo);
    return buf;
}

inline std::string random_hex128() {
    std::random_device rd;
    auto word = [&rd] { return (std::uint64_t(rd()) << 32) ^ std::uint64_t(rd()); };
    const std::uint64_t hi = word();
    return hex128(hi, word());
}

inline std::uint64_t parse_hex64(std::string_view s) { return std::stoull(std::string(s), nullptr, 16); }

} // namespace detail

/// Sessions with file persistence: a manifest per session plus the
/// append-only trial log. Every session is rebuilt on startup by replaying
/// its log, so a restart resumes at the identical in-flight trial.
class SessionStore {
public:
    SessionStore(std::shared_ptr<const RunConfig> config, std::filesystem::path data_dir)
        : config_(std::move(config)), dir_(std::move(data_dir)) {
        std::filesystem::create_directories(dir_ / "sessions");
        for (const auto& entry : std::filesystem::directory_iterator(dir_ / "sessions"))
            if (std::filesystem::exists(entry.path() / "manifest.json")) load(entry.path());
    }

    json create(const json& request) {
        const std::string label = request.value("participant_label", "");
        auto s = std::make_shared<Session>();
        s->id = detail::random_hex128();
        s->label = label;
        s->secret = detail::random_hex128();
        {
            std::unique_lock lock(sessions_mutex_);
            std::size_t ordinal = 0;
            for (const auto& [id, other] : sessions_) ordinal += other->label == label ? 1 : 0;
            s->seed = request.contains("seed")
                          ? request.at("seed").get<std::uint64_t>()
                          : RngStream(config_->seed).derive(label).derive(ordinal).seed();
        }
        s->config_snapshot = config_->source;
        s->engine = std::make_unique<SessionEngine>(config_, s->seed);
        s->dir = dir_ / "sessions" / s->id;
        std::filesystem::create_directories(s->dir);
        write_manifest(*s);
        open_log(*s);
        {
            std::unique_lock lock(sessions_mutex_);
            sessions_[s->id] = s;
        }
        return json{{"schema", "priorprobe.session/1"},
                    {"session_id", s->id},
                    {"participant_label", s->label},
                    {"chains", s->engine->chains().size()},
                    {"trial_budget", s->engine->trial_budget()}};
    }

    /// The in-flight trial; repeated calls return the same payload.
    json next_trial(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex);
        return trial_payload(*s);
    }

    json submit(const std::string& id, const json& request) {
        auto s = find(id);
        std::lock_guard lock(s->mutex);
        std::string token;
        int picked = -1;
        std::optional<int> confidence;
        try {
            token = request.at("trial_token").get<std::string>();
            picked = request.at("choice").get<int>();
            if (request.contains("confidence") && !request.at("confidence").is_null())
                confidence = request.at("confidence").get<int>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidValue, std::string("response body: ") + e.what());
        }
        auto trial = s->engine->current_trial();
        if (!trial || token != token_for(*s)) throw Error(ErrorCode::StaleToken, "trial token is not in flight");
        if (picked != 0 && picked != 1) throw Error(ErrorCode::InvalidValue, "choice must be 0 or 1");
        if (trial->kind() == TrialKind::Category) {
            if (!confidence) throw Error(ErrorCode::MissingConfidence, "categorization trials need a confidence");
            if (*confidence < 1 || *confidence > 7)
                throw Error(ErrorCode::MissingConfidence, "confidence must be in 1..7");
        } else if (confidence) {
            throw Error(ErrorCode::InvalidValue, "face trials take no confidence");
        }
        s->engine->submit(*trial, Choice{picked, confidence});
        return json{{"schema", "priorprobe.ack/1"}, {"status", "ok"}, {"progress", progress(*s)}};
    }

    json prior(const std::string& id, std::optional<double> burn_in_fraction) {
        auto s = find(id);
        std::lock_guard lock(s->mutex);
        const double f = burn_in_fraction.value_or(config_->burn_in_fraction);
        return prior_estimate_json(s->engine->prior(f), config_->categories);
    }

    json export_log(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex);
        return json{{"schema", "priorprobe.export/1"}, {"manifest", manifest_json(*s)}, {"log", read_log(s->dir)}};
    }

    /// Engine state plus the in-flight token, for restart checks.
    json state(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex);
        json j = s->engine->state_json();
        j["trial_token"] = s->engine->done() ? json(nullptr) : json(token_for(*s));
        return j;
    }

    std::vector<std::string> session_ids() const {
        std::shared_lock lock(sessions_mutex_);
        std::vector<std::string> ids;
        for (const auto& [id, s] : sessions_) ids.push_back(id);
        return ids;
    }

    const RunConfig& config() const noexcept { return *config_; }

private:
    struct Session {
        std::string id;
        std::string label;
        std::string secret;
        std::uint64_t seed = 0;
        json config_snapshot;
        std::unique_ptr<SessionEngine> engine;
        std::filesystem::path dir;
        std::ofstream log;
        std::mutex mutex;
    };

    std::shared_ptr<Session> find(const std::string& id) const {
        std::shared_lock lock(sessions_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
        return it->second;
    }

    static json manifest_json(const Session& s) {
        return json{{"schema", "priorprobe.manifest/1"}, {"session_id", s.id}, {"participant_label", s.label},
                    {"seed", s.seed}, {"secret", s.secret}, {"config", s.config_snapshot}};
    }

    static void write_manifest(const Session& s) {
        const auto tmp = s.dir / "manifest.json.tmp";
        write_text_file(tmp.string(), manifest_json(s).dump(2));
        std::filesystem::rename(tmp, s.dir / "manifest.json");
    }

    static void open_log(Session& s) {
        s.log.open(s.dir / "log.jsonl", std::ios::app | std::ios::binary);
        if (!s.log) throw Error(ErrorCode::InvalidConfig, "cannot open log in " + s.dir.string());
        Session* raw = &s;
        s.engine->set_log_sink([raw](const json& rec) {
            raw->log << rec.dump() << '\n';
            raw->log.flush();
            if (!raw->log) throw Error(ErrorCode::InvalidConfig, "log write failed");
        });
    }

    /// Complete log lines; a torn final line (crash mid-write, never acked)
    /// is cut from the file.
    static std::vector<json> read_log(const std::filesystem::path& dir, bool repair = false) {
        std::vector<json> out;
        const auto path = dir / "log.jsonl";
        std::ifstream in(path, std::ios::binary);
        if (!in) return out;
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t pos = 0, good_end = 0;
        while (pos < text.size()) {
            const auto nl = text.find('\n', pos);
            if (nl == std::string::npos) break;
            out.push_back(json::parse(text.substr(pos, nl - pos)));
            pos = nl + 1;
            good_end = pos;
        }
        if (repair && good_end < text.size()) std::filesystem::resize_file(path, good_end);
        return out;
    }

    void load(const std::filesystem::path& dir) {
        const json m = read_json_file((dir / "manifest.json").string());
        auto s = std::make_shared<Session>();
        s->id = m.at("session_id").get<std::string>();
        s->label = m.at("participant_label").get<std::string>();
        s->secret = m.at("secret").get<std::string>();
        s->seed = m.at("seed").get<std::uint64_t>();
        s->config_snapshot = m.at("config");
        s->dir = dir;
        auto cfg = std::make_shared<const RunConfig>(parse_run_config(s->config_snapshot));
        s->engine = std::make_unique<SessionEngine>(cfg, s->seed);
        s->engine->replay(read_log(dir, true));
        open_log(*s);
        sessions_[s->id] = s;
    }

    std::string token_for(const Session& s) const {
        const std::uint64_t secret = detail::parse_hex64(s.secret.substr(0, 16)) ^ detail::parse_hex64(s.secret.substr(16));
        const std::uint64_t step = s.engine->trials_done();
        return detail::hex128(detail::hash_combine(secret, 2 * step), detail::hash_combine(secret, 2 * step + 1));
    }

    static json progress(const Session& s) {
        return json{{"done", s.engine->trials_done()}, {"total", s.engine->trial_budget()}};
    }

    json trial_payload(Session& s) {
        auto trial = s.engine->current_trial();
        if (!trial) {
            std::size_t samples = 0;
            for (const auto& c : s.engine->chains()) samples += c.samples.size();
            return json{{"schema", kTrialSchema},
                        {"status", "done"},
                        {"session_id", s.id},
                        {"progress", progress(s)},
                        {"summary", {{"trials_done", s.engine->trials_done()}, {"samples", samples}}}};
        }
        const auto& cfg = s.engine->config();
        json payload{{"schema", kTrialSchema},
                     {"status", "trial"},
                     {"session_id", s.id},
                     {"trial_token", token_for(s)},
                     {"kind", to_string(trial->kind())},
                     {"progress", progress(s)}};
        json current, proposal;
        if (trial->kind() == TrialKind::Face) {
            const auto& f = trial->face();
            payload["category"] = cfg.categories.label(f.category);
            payload["prompt"] = "Which image better represents '" + cfg.categories.label(f.category) + "'?";
            current = json{{"value", 0}, {"stimulus", f.current}, {"svg", render_svg(cfg.space, f.current)}};
            proposal = json{{"value", 1}, {"stimulus", f.proposal}, {"svg", render_svg(cfg.space, f.proposal)}};
        } else {
            const auto& c = trial->category();
            payload["stimulus"] = c.stimulus;
            payload["stimulus_svg"] = render_svg(cfg.space, c.stimulus);
            payload["prompt"] = "Which category better describes this image?";
            current = json{{"value", 0}, {"category", c.current}, {"label", cfg.categories.label(c.current)}};
            proposal = json{{"value", 1}, {"category", c.proposal}, {"label", cfg.categories.label(c.proposal)}};
        }
        payload["options"] = trial->proposal_first ? json::array({proposal, current}) : json::array({current, proposal});
        return payload;
    }

    std::shared_ptr<const RunConfig> config_;
    std::filesystem::path dir_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

inline int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::StaleToken: return 409;
    case ErrorCode::Empty: return 422;
    case ErrorCode::MissingConfidence:
    case ErrorCode::InvalidValue:
    case ErrorCode::InvalidConfig: return 400;
    default: return 500;
    }
}

/// HTTP + JSON front end over a SessionStore.
class Service {
public:
    explicit Service(SessionStore& store) : store_(store) {
        server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
        server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
        server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.create(req.body.empty() ? json::object() : parse_body(req)); });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/trial)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.next_trial(req.matches[1]); });
        });
        server_.Post(R"(/sessions/([0-9a-f]+)/response)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.submit(req.matches[1], parse_body(req)); });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/prior)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                std::optional<double> burn;
                if (req.has_param("burn_in_fraction")) burn = std::stod(req.get_param_value("burn_in_fraction"));
                return store_.prior(req.matches[1], burn);
            });
        });
        server_.Get(R"(/sessions/([0-9a-f]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return store_.export_log(req.matches[1]); });
        });
    }

    bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

private:
    static json parse_body(const httplib::Request& req) {
        try {
            return json::parse(req.body);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidValue, std::string("request body: ") + e.what());
        }
    }

    template <typename F>
    static void handle(httplib::Response& res, F&& f) {
        try {
            res.set_content(f().dump(), "application/json");
        } catch (const Error& e) {
            res.status = http_status(e.code());
            res.set_content(json{{"schema", "priorprobe.error/1"}, {"error", std::string(to_string(e.code()))},
                                 {"message", e.what()}}
                                .dump(),
                            "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(json{{"schema", "priorprobe.error/1"}, {"error", "Internal"}, {"message", e.what()}}.dump(),
                            "application/json");
        }
    }

    SessionStore& store_;
    httplib::Server server_;
};

} // namespace priorprobe

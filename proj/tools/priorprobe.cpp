// priorprobe: simulate cohorts, check the exact oracle, recover priors from
// trial logs, evaluate fused predictors, and serve human sessions.

#include "priorprobe/priorprobe.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace priorprobe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTolerance = 3;

constexpr const char* kLogSchema = "priorprobe.trial_log/1";

std::shared_ptr<const RunConfig> load_config(const std::string& path, const std::string& output_override) {
    RunConfig cfg = load_run_config(path);
    if (!output_override.empty()) cfg.output_dir = output_override;
    return std::make_shared<const RunConfig>(std::move(cfg));
}

void write_sidecar(const fs::path& dir, const std::string& command) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_text_file((dir / "run_meta.json").string(), json{{"command", command}, {"timestamp", stamp}}.dump(2) + "\n");
}

int cmd_simulate(const std::string& config_path, const std::string& out_override, unsigned threads) {
    auto cfg = load_config(config_path, out_override);
    if (cfg->participants.empty()) throw Error(ErrorCode::InvalidConfig, "config has no participants");
    const fs::path out(cfg->output_dir);
    fs::create_directories(out);
    std::vector<json> rows(cfg->participants.size());
    simulate_cohort(cfg, threads, [&](ParticipantRun&& run) {
        const fs::path dir = out / run.label;
        fs::create_directories(dir);
        const std::string header = json{{"schema", kLogSchema},
                                        {"participant", run.label},
                                        {"labels", cfg->categories.labels()},
                                        {"burn_in_fraction", cfg->burn_in_fraction}}
                                       .dump() +
                                   "\n";
        write_text_file((dir / "trial_log.jsonl").string(), header + run.log);
        write_text_file((dir / "prior.json").string(), prior_estimate_json(run.estimate, cfg->categories).dump(2) + "\n");
        const auto& truth = cfg->participants[run.index].model.prior();
        rows[run.index] = json{{"participant", run.label},
                               {"true_prior", truth},
                               {"recovered_prior", run.estimate.probs},
                               {"tv", total_variation(truth, run.estimate.probs)}};
    });
    json cohort = json::array();
    for (const auto& row : rows) {
        std::cout << row.at("participant").get<std::string>()
                  << "  TV(recovered, true) = " << row.at("tv").get<double>() << "\n";
        cohort.push_back(row);
    }
    write_text_file((out / "cohort.json").string(),
                    json{{"schema", "priorprobe.cohort/1"}, {"labels", cfg->categories.labels()},
                         {"participants", cohort}}
                            .dump(2) +
                        "\n");
    write_sidecar(out, "simulate");
    return kExitOk;
}

int cmd_oracle_check(const std::string& config_path, double tolerance_override, bool report_only) {
    auto cfg = load_config(config_path, "");
    if (!cfg->space.is_discrete()) throw Error(ErrorCode::NotDiscrete, "oracle-check needs a discrete space");
    if (cfg->participants.empty()) throw Error(ErrorCode::InvalidConfig, "config has no participants");
    const double tol = tolerance_override > 0.0 ? tolerance_override : cfg->oracle_tolerance;
    bool ok = true;
    json reports = json::array();
    for (const auto& p : cfg->participants) {
        oracle::DiscreteConfig dc{cfg->space, p.model, cfg->gatekeeper, cfg->face_proposals};
        const auto r = oracle::analytic_recovery_check(dc);
        json j = oracle::report_json(r, cfg->categories);
        j["participant"] = p.label;
        j["tolerance"] = tol;
        j["within_tolerance"] = r.marginal_gap <= tol;
        ok = ok && r.marginal_gap <= tol;
        reports.push_back(std::move(j));
    }
    std::cout << json{{"schema", "priorprobe.oracle_check/1"}, {"reports", reports}}.dump(2) << "\n";
    if (!ok && !report_only) return kExitTolerance;
    return kExitOk;
}

/// Reads a trial log: an optional header line, then one record per line.
/// Every line must be complete JSON terminated by a newline.
struct LoadedLog {
    std::vector<std::string> labels;
    double burn_in_fraction = 0.1;
    std::vector<json> records;
};

LoadedLog read_trial_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MalformedLog, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    LoadedLog log;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        ++line_no;
        if (nl == std::string::npos)
            throw Error(ErrorCode::MalformedLog, "line " + std::to_string(line_no) + " is truncated");
        json j;
        try {
            j = json::parse(text.substr(pos, nl - pos));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedLog, "line " + std::to_string(line_no) + ": " + e.what());
        }
        pos = nl + 1;
        if (j.contains("schema")) {
            log.labels = j.value("labels", std::vector<std::string>{});
            log.burn_in_fraction = j.value("burn_in_fraction", log.burn_in_fraction);
            continue;
        }
        log.records.push_back(std::move(j));
    }
    return log;
}

int cmd_recover(const std::string& log_path, std::optional<double> burn_in, const std::string& out_path) {
    const LoadedLog log = read_trial_log(log_path);
    std::map<std::size_t, std::vector<SampleRecord>> by_chain;
    std::size_t max_e = 0;
    try {
        for (const auto& rec : log.records) {
            const std::size_t chain = rec.at("chain_id").get<std::size_t>();
            by_chain[chain];
            if (rec.at("sample").is_null()) continue;
            const auto& s = rec.at("sample");
            SampleRecord r{chain, s.at("iteration").get<std::size_t>(), s.at("f").get<Stimulus>(),
                           s.at("e").get<CategoryIndex>(), s.at("gatekeeper_prob").get<double>(),
                           s.at("auto_accepted").get<bool>()};
            max_e = std::max(max_e, r.e);
            by_chain[chain].push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedLog, e.what());
    }
    if (by_chain.empty()) throw Error(ErrorCode::Empty, "log has no records");

    std::vector<std::string> labels = log.labels;
    if (labels.empty())
        for (std::size_t e = 0; e <= max_e; ++e) labels.push_back(std::to_string(e));
    const CategorySet categories(labels);

    std::vector<ChainState> chains;
    for (auto& [id, samples] : by_chain) {
        ChainState c;
        c.chain_id = id;
        c.samples = std::move(samples);
        chains.push_back(std::move(c));
    }
    const PriorEstimate est = pool(chains, burn_in.value_or(log.burn_in_fraction), categories.size());
    const std::string text = prior_estimate_json(est, categories).dump(2) + "\n";
    if (out_path.empty()) std::cout << text;
    else write_text_file(out_path, text);
    return kExitOk;
}

LabeledPrior read_prior_file(const fs::path& path) {
    const json j = read_json_file(path.string());
    return {j.at("labels").get<std::vector<std::string>>(), j.at("probs").get<Categorical>()};
}

int cmd_eval(const std::string& priors_dir, const std::string& config_path, const std::string& out_override) {
    auto cfg = load_config(config_path, out_override);
    if (!fs::is_directory(priors_dir)) throw Error(ErrorCode::Empty, "priors directory " + priors_dir + " not found");
    std::vector<LabeledPrior> priors;
    for (const auto& p : cfg->participants) {
        const fs::path file = fs::path(priors_dir) / p.label / "prior.json";
        if (!fs::exists(file)) throw Error(ErrorCode::Empty, "missing recovered prior " + file.string());
        priors.push_back(read_prior_file(file));
    }
    if (priors.empty()) throw Error(ErrorCode::Empty, "no participants to evaluate");

    std::optional<Categorical> eco;
    if (!cfg->eval.count_files.empty()) {
        std::vector<json> docs;
        const fs::path base = fs::path(config_path).parent_path();
        for (const auto& f : cfg->eval.count_files) {
            const fs::path path = fs::path(f).is_absolute() ? fs::path(f) : base / f;
            docs.push_back(read_json_file(path.string()));
        }
        eco = ecological_prior(docs, cfg->categories);
    }
    const CohortEval ev = evaluate_cohort(*cfg, priors, eco);
    const fs::path out(out_override.empty() ? priors_dir : cfg->output_dir);
    fs::create_directories(out);
    write_text_file((out / "eval_report.json").string(), cohort_eval_json(ev).dump(2) + "\n");
    std::cout << cohort_eval_table(ev);
    std::cout << "pooled confidence correlation:";
    for (const auto& [k, v] : ev.pooled_correlation) std::cout << "  " << k << "=" << v;
    std::cout << "\n";
    return kExitOk;
}

volatile std::sig_atomic_t g_stop_requested = 0;

extern "C" void on_signal(int) { g_stop_requested = 1; }

int cmd_serve(const std::string& config_path, int port, std::string data_dir, const std::string& host) {
    auto cfg = load_config(config_path, "");
    if (data_dir.empty()) data_dir = cfg->output_dir;
    SessionStore store(cfg, data_dir);
    Service service(store);
    if (!service.bind(host, port)) {
        std::cerr << "priorprobe: cannot bind " << host << ":" << port << "\n";
        return kExitData;
    }
    std::signal(SIGTERM, on_signal);
    std::signal(SIGINT, on_signal);
    std::atomic<bool> finished{false};
    std::thread watcher([&] {
        while (!finished && !g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(50));
        service.stop();
    });
    std::cout << "priorprobe: serving on " << host << ":" << port << " (data in " << data_dir << ")" << std::endl;
    service.listen_after_bind();
    finished = true;
    watcher.join();
    std::cout << "priorprobe: stopped" << std::endl;
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"priorprobe: elicit individual category priors by block Metropolis-Hastings with people"};
    app.require_subcommand(1);

    std::string config_path, out_dir, log_path, priors_dir, data_dir, host = "127.0.0.1";
    unsigned threads = std::thread::hardware_concurrency();
    double tolerance = 0.0;
    bool report_only = false;
    std::optional<double> burn_in;
    int port = 8080;
    if (const char* p = std::getenv("PRIORPROBE_PORT")) port = std::atoi(p);
    if (const char* d = std::getenv("PRIORPROBE_DATA_DIR")) data_dir = d;

    auto* simulate = app.add_subcommand("simulate", "simulate a cohort and recover each participant's prior");
    simulate->add_option("-c,--config", config_path, "run config (JSON)")->required();
    simulate->add_option("-o,--output-dir", out_dir, "override output_dir");
    simulate->add_option("-j,--threads", threads, "worker threads");

    auto* oracle_cmd = app.add_subcommand("oracle-check", "exact stationary analysis of a discrete config");
    oracle_cmd->add_option("-c,--config", config_path, "run config (JSON)")->required();
    oracle_cmd->add_option("--tolerance", tolerance, "max allowed |reweighted marginal - true prior|");
    oracle_cmd->add_flag("--report-only", report_only, "exit 0 even when a gap exceeds the tolerance");

    auto* recover = app.add_subcommand("recover", "recover a prior from a trial log");
    recover->add_option("-l,--log", log_path, "trial log (JSONL)")->required();
    recover->add_option("-b,--burn-in", burn_in, "burn-in fraction per chain");
    recover->add_option("-o,--out", out_dir, "write the estimate here instead of stdout");

    auto* eval_cmd = app.add_subcommand("eval", "score fused predictors on a cohort's recovered priors");
    eval_cmd->add_option("-p,--priors-dir", priors_dir, "directory with <participant>/prior.json")->required();
    eval_cmd->add_option("-c,--config", config_path, "run config (JSON)")->required();
    eval_cmd->add_option("-o,--output-dir", out_dir, "where to write eval_report.json");

    auto* serve = app.add_subcommand("serve", "run the HTTP session service");
    serve->add_option("-c,--config", config_path, "run config (JSON)")->required();
    serve->add_option("-p,--port", port, "TCP port (env PRIORPROBE_PORT)");
    serve->add_option("-d,--data-dir", data_dir, "session storage (env PRIORPROBE_DATA_DIR)");
    serve->add_option("--host", host, "bind address");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*simulate) return cmd_simulate(config_path, out_dir, threads);
        if (*oracle_cmd) return cmd_oracle_check(config_path, tolerance, report_only);
        if (*recover) return cmd_recover(log_path, burn_in, out_dir);
        if (*eval_cmd) return cmd_eval(priors_dir, config_path, out_dir);
        if (*serve) return cmd_serve(config_path, port, data_dir, host);
    } catch (const Error& e) {
        std::cerr << "priorprobe: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "priorprobe: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

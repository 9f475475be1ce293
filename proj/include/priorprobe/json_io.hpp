#pragma once

#include "priorprobe/core.hpp"
#include "priorprobe/stimulus_space.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace priorprobe {

using json = nlohmann::json;

inline void to_json(json& j, const Stimulus& f) {
    if (f.is_discrete()) j = json{{"id", f.id()}, {"nuisance_seed", f.nuisance_seed}};
    else j = json{{"coords", f.coords()}, {"nuisance_seed", f.nuisance_seed}};
}

inline void from_json(const json& j, Stimulus& f) {
    const std::uint64_t seed = j.value("nuisance_seed", std::uint64_t{0});
    if (j.contains("id")) f = Stimulus::discrete(j.at("id").get<std::size_t>(), seed);
    else f = Stimulus::vector(j.at("coords").get<std::vector<double>>(), seed);
}

inline void to_json(json& j, const Categorical& c) { j = c.probs(); }

inline void from_json(const json& j, Categorical& c) { c = Categorical(j.get<std::vector<double>>()); }

inline void to_json(json& j, const RngStream& r) { j = json{{"seed", r.seed()}, {"counter", r.counter()}}; }

inline void from_json(const json& j, RngStream& r) {
    r = RngStream(j.at("seed").get<std::uint64_t>(), j.at("counter").get<std::uint64_t>());
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write " + path);
    out << text;
}

} // namespace priorprobe

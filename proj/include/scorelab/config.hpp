#ifndef SCORELAB_CONFIG_HPP
#define SCORELAB_CONFIG_HPP

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorelab/gmm.hpp"
#include "scorelab/io.hpp"

namespace scorelab {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration: a JSON document with one canonical schema.  The
// document round-trips losslessly; typed accessors pull out validated views.

inline json default_config(const std::string& kind) {
    json j;
    j["kind"] = kind;
    j["seed"] = 0;
    j["out"] = "results";
    j["mixture"] = {{"weights", {0.5, 0.5}},
                    {"variances", {0.5, 0.25}},
                    {"norms", {0.0, 0.0}},
                    {"cosines", {{1.0, 0.0}, {0.0, 1.0}}}};
    j["sizes"] = {{"n", 100}, {"p", 2000}, {"m", 1000}};
    j["t"] = 0.01;
    j["chi_p"] = 60.0;
    j["chi_m"] = 30.0;
    j["training"] = {{"eta_factor", 5e-5},
                     {"runs", 20},
                     {"noise_draws", 100},
                     {"taus", {{"min", 1e-3}, {"max", 1e6}, {"points", 200}}}};
    j["solver"] = {{"grid", {{"min", 1e-6}, {"max", 60.0}, {"points", 400}}},
                   {"n_eps", 60},
                   {"tol", 1e-12},
                   {"max_iter", 200},
                   {"rho_floor", 1e-6}};
    j["windows"] = {{"t_grid", {{"min", 1e-4}, {"max", 1e-2}, {"points", 7}}},
                    {"chi_m_grid", json::array()}};
    j["speciation"] = {{"sizes", {{{"n", 2000}, {"p", 4000}}}},
                       {"m", 2000},
                       {"t_tilde", {{"min", 0.1}, {"max", 0.8}, {"points", 15}}},
                       {"n_runs", 10},
                       {"a", nullptr}};
    j["memgap"] = {{"descriptors", "descriptors.csv"},
                   {"b_grid", {0.25, 0.5, 0.75}},
                   {"thresholds", {1.2}}};
    j["sample"] = {{"rows", 100}};
    return j;
}

inline json load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    json j;
    f >> j;
    return j;
}

inline void save_json(const json& j, const std::string& path) {
    ensure_parent_dir(path);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

// Apply a dotted-path override "a.b.c=value"; the value is parsed as JSON when
// possible and falls back to a raw string.
inline void apply_override(json& j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must look like key.path=value: " + kv);
    const std::string path = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json* cur = &j;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw std::invalid_argument("empty path segment in " + kv);
        parts.push_back(part);
    }
    if (parts.empty()) throw std::invalid_argument("empty override path in " + kv);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &((*cur)[parts[i]]);
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded())
        (*cur)[parts.back()] = value;
    else
        (*cur)[parts.back()] = parsed;
}

inline std::vector<double> as_vector(const json& j) {
    return j.get<std::vector<double>>();
}

inline MixtureSpec mixture_from_config(const json& j, int dim) {
    const auto& m = j.at("mixture");
    auto weights = as_vector(m.at("weights"));
    auto variances = as_vector(m.at("variances"));
    auto norms = as_vector(m.at("norms"));
    const auto& cj = m.at("cosines");
    const int C = static_cast<int>(weights.size());
    Eigen::MatrixXd cosines = Eigen::MatrixXd::Identity(C, C);
    for (int a = 0; a < C; ++a)
        for (int b = 0; b < C; ++b) cosines(a, b) = cj.at(a).at(b).get<double>();
    return make_spec(dim, weights, variances, norms, cosines);
}

inline std::vector<double> grid_from_config(const json& g) {
    return log_spaced(g.at("min").get<double>(), g.at("max").get<double>(),
                      g.at("points").get<int>());
}

// Collect every violated precondition rather than stopping at the first.
inline std::vector<std::string> validate_config(const json& j) {
    std::vector<std::string> errs;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) errs.push_back(msg);
    };
    static const std::set<std::string> kinds = {"spectrum", "edges",    "windows",
                                               "train",    "theory-curves", "speciation",
                                               "memgap",   "validate", "sample"};
    try {
        need(kinds.count(j.at("kind").get<std::string>()) > 0,
             "kind must be one of the documented subcommands");
    } catch (...) {
        errs.push_back("missing or non-string kind");
    }
    try {
        const auto& s = j.at("sizes");
        need(s.at("n").get<int>() >= 1, "sizes.n must be >= 1");
        need(s.at("p").get<int>() >= 1, "sizes.p must be >= 1");
        need(s.at("m").get<int>() >= 1, "sizes.m must be >= 1");
    } catch (const std::exception&) {
        errs.push_back("missing or malformed sizes block");
    }
    try {
        need(j.at("t").get<double>() >= 0.0, "t must be >= 0");
    } catch (...) {
        errs.push_back("missing or non-numeric t");
    }
    try {
        const int dim = j.at("sizes").at("n").get<int>();
        mixture_from_config(j, std::max(1, dim));
    } catch (const std::exception& e) {
        errs.push_back(std::string("mixture block invalid: ") + e.what());
    }
    try {
        need(j.at("chi_p").get<double>() > 0.0, "chi_p must be positive");
        need(j.at("chi_m").get<double>() > 0.0, "chi_m must be positive");
    } catch (...) {
        errs.push_back("missing or non-numeric chi_p/chi_m");
    }
    try {
        const auto& s = j.at("solver");
        need(s.at("tol").get<double>() > 0.0, "solver.tol must be positive");
        need(s.at("max_iter").get<int>() >= 1, "solver.max_iter must be >= 1");
        need(s.at("n_eps").get<int>() >= 2, "solver.n_eps must be >= 2");
        grid_from_config(s.at("grid"));
    } catch (const std::exception&) {
        errs.push_back("missing or malformed solver block");
    }
    return errs;
}

// ---------------------------------------------------------------------------
// Manifest: config echo, seeds, wall time, produced files.

inline void write_manifest(const std::string& out_dir, const json& config,
                           double wall_seconds, const std::vector<std::string>& outputs,
                           const std::vector<std::string>& diagnostics = {}) {
    json m;
    m["config"] = config;
    m["wall_seconds"] = wall_seconds;
    m["outputs"] = outputs;
    m["diagnostics"] = diagnostics;
    m["schema"] = "scorelab-manifest-v1";
    save_json(m, out_dir + "/manifest.json");
}

// ---------------------------------------------------------------------------
// Per-cell checkpointing for long sweeps: completed cell keys are appended to
// a log file; on restart previously finished cells are skipped.

struct Checkpoint {
    std::string path;
    std::set<std::string> done;

    explicit Checkpoint(std::string p) : path(std::move(p)) {
        std::ifstream f(path);
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) done.insert(line);
    }
    bool contains(const std::string& key) const { return done.count(key) > 0; }
    void mark(const std::string& key) {
        done.insert(key);
        ensure_parent_dir(path);
        std::ofstream f(path, std::ios::app);
        f << key << "\n";
    }
};

} // namespace scorelab

#endif // SCORELAB_CONFIG_HPP

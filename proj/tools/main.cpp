// Experiment driver: spectra, spectral edges, timescale windows, training
// dynamics, semi-analytical curves, speciation sweeps, memorization-gap
// tables, a quick self-validation suite, and dataset sampling.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scorelab/config.hpp"
#include "scorelab/covariance.hpp"
#include "scorelab/dynamics.hpp"
#include "scorelab/gep.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/memgap.hpp"
#include "scorelab/speciation.hpp"
#include "scorelab/spectral.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

using namespace scorelab;

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

LmOptions solver_options(const json& cfg) {
    LmOptions opt;
    opt.tol = cfg.at("solver").at("tol").get<double>();
    opt.max_iter = cfg.at("solver").at("max_iter").get<int>();
    return opt;
}

SpectralParams spectral_params(const json& cfg, double t, double chi_m) {
    const int dim = cfg.at("sizes").at("n").get<int>();
    auto spec = mixture_from_config(cfg, dim);
    if (spec.centroid_gram.cwiseAbs().maxCoeff() > 0.0)
        throw std::runtime_error("the spectral solver covers centered mixtures only; "
                                 "set mixture.norms to zero");
    auto clock = make_clock(spec, t);
    auto co = coeffs_scalar(spec, clock, Activation{ActivationKind::Tanh}, default_rule());
    return make_spectral_params(spec, clock, co, cfg.at("chi_p").get<double>(), chi_m);
}

json edge_json(const EdgeSummary& e) {
    json j;
    auto put = [&](const char* k, const std::optional<double>& v) {
        if (v)
            j[k] = *v;
        else
            j[k] = nullptr;
    };
    put("lambda_gen", e.lambda_gen);
    put("lambda_mem1", e.lambda_mem1);
    put("lambda_mem2", e.lambda_mem2);
    put("tau_gen", e.tau_gen);
    put("tau_mem1", e.tau_mem1);
    put("tau_mem2", e.tau_mem2);
    put("w_g", e.w_g);
    put("w_m", e.w_m);
    j["merged"] = e.merged;
    j["diagnostics"] = e.diagnostics;
    json roots = json::array();
    for (const auto& r : e.roots)
        roots.push_back({{"lambda", r.lambda},
                         {"g_psi", r.g_psi},
                         {"g_omega", r.g_omega},
                         {"omega", r.omega},
                         {"converged", r.converged}});
    j["roots"] = roots;
    return j;
}

int run_spectrum(const json& cfg, const std::string& out, bool with_edges) {
    Timer timer;
    const double t = cfg.at("t").get<double>();
    auto p = spectral_params(cfg, t, cfg.at("chi_m").get<double>());
    auto grid = grid_from_config(cfg.at("solver").at("grid"));
    auto eps = default_eps_schedule(cfg.at("solver").at("n_eps").get<int>());
    const double floor = cfg.at("solver").at("rho_floor").get<double>();
    auto sol = solve_grid(p, grid, eps, floor, solver_options(cfg));
    std::vector<std::string> outputs;
    write_solution_csv(sol, out + "/spectrum.csv");
    outputs.push_back("spectrum.csv");
    json side = {{"continuous_mass", sol.continuous_mass},
                 {"delta_weight", sol.delta_weight},
                 {"delta_location", p.varsigma_bar()},
                 {"n_bulks", sol.bulks.size()}};
    if (with_edges) {
        auto e = solve_edges(p, sol, solver_options(cfg));
        save_json(edge_json(e), out + "/edges.json");
        outputs.push_back("edges.json");
    }
    save_json(side, out + "/spectrum_summary.json");
    outputs.push_back("spectrum_summary.json");
    write_manifest(out, cfg, timer.seconds(), outputs, sol.diagnostics);
    std::cout << (with_edges ? "edges" : "spectrum") << ": wrote " << outputs.size()
              << " files to " << out << "\n";
    return 0;
}

int run_windows(const json& cfg, const std::string& out) {
    Timer timer;
    auto eps = default_eps_schedule(cfg.at("solver").at("n_eps").get<int>());
    auto grid = grid_from_config(cfg.at("solver").at("grid"));
    const double floor = cfg.at("solver").at("rho_floor").get<double>();
    const auto opt = solver_options(cfg);
    struct Cell {
        double t, chi_m;
    };
    std::vector<Cell> cells;
    const auto& w = cfg.at("windows");
    std::vector<double> chi_ms;
    if (w.at("chi_m_grid").is_array() && !w.at("chi_m_grid").empty())
        chi_ms = as_vector(w.at("chi_m_grid"));
    else
        chi_ms = {cfg.at("chi_m").get<double>()};
    for (double t : grid_from_config(w.at("t_grid")))
        for (double cm : chi_ms) cells.push_back({t, cm});
    Checkpoint ck(out + "/windows.checkpoint");
    std::vector<std::string> diags;
    for (const auto& cell : cells) {
        const std::string key =
            "t=" + format_double(cell.t) + ";chi_m=" + format_double(cell.chi_m);
        const std::string cell_path =
            out + "/cells/windows_" + std::to_string(std::hash<std::string>{}(key)) +
            ".json";
        if (ck.contains(key) && std::filesystem::exists(cell_path)) continue;
        auto p = spectral_params(cfg, cell.t, cell.chi_m);
        auto sol = solve_grid(p, grid, eps, floor, opt);
        auto e = solve_edges(p, sol, opt);
        json j = edge_json(e);
        j["t"] = cell.t;
        j["chi_m"] = cell.chi_m;
        save_json(j, cell_path);
        ck.mark(key);
        for (const auto& d : e.diagnostics) diags.push_back(key + ": " + d);
    }
    // Merge cells into one table.
    CsvWriter csv(out + "/windows.csv",
                  {"t", "chi_m", "lambda_gen", "lambda_mem1", "lambda_mem2", "tau_gen",
                   "tau_mem1", "tau_mem2", "w_g", "w_m", "merged"});
    auto cell_str = [](const json& j, const char* k) {
        return j.at(k).is_null() ? std::string("nan") : format_double(j.at(k).get<double>());
    };
    for (const auto& cell : cells) {
        const std::string key =
            "t=" + format_double(cell.t) + ";chi_m=" + format_double(cell.chi_m);
        const std::string cell_path =
            out + "/cells/windows_" + std::to_string(std::hash<std::string>{}(key)) +
            ".json";
        auto j = load_config(cell_path);
        csv.row({format_double(j.at("t").get<double>()),
                 format_double(j.at("chi_m").get<double>()), cell_str(j, "lambda_gen"),
                 cell_str(j, "lambda_mem1"), cell_str(j, "lambda_mem2"),
                 cell_str(j, "tau_gen"), cell_str(j, "tau_mem1"), cell_str(j, "tau_mem2"),
                 cell_str(j, "w_g"), cell_str(j, "w_m"),
                 j.at("merged").get<bool>() ? "1" : "0"});
    }
    write_manifest(out, cfg, timer.seconds(), {"windows.csv"}, diags);
    std::cout << "windows: " << cells.size() << " cells -> " << out << "/windows.csv\n";
    return 0;
}

// Shared semi-analytical pipeline for one realization.
ErrorCurves theory_curves_once(const json& cfg, std::uint64_t seed) {
    const int N = cfg.at("sizes").at("n").get<int>();
    const int P = cfg.at("sizes").at("p").get<int>();
    const int M = cfg.at("sizes").at("m").get<int>();
    auto spec = mixture_from_config(cfg, N);
    auto clock = make_clock(spec, cfg.at("t").get<double>());
    const Activation act{ActivationKind::Tanh};
    auto model = make_rf_model(P, N, act, child_seed(seed, 0, "w"));
    auto centroids = realize_centroids(spec, child_seed(seed, 0, "centroids"));
    auto ds = sample_dataset(spec, centroids, M, child_seed(seed, 0, "data"));
    auto co = coeffs_vector(model.W, spec, centroids, clock, act, default_rule());
    auto Ug = gep_U(ds, model.W, spec, centroids, clock, co, child_seed(seed, 0, "noise"));
    auto Vg = gep_V(model.W, spec, clock, co);
    auto eig = eigh(Ug.U);
    std::vector<Eigen::MatrixXd> Upc, Vpc;
    for (int c = 0; c < spec.n_classes; ++c) {
        Upc.push_back(population_U_class(model.W, co, c, N));
        Vpc.push_back(gep_V_class(model.W, clock, co, c, N));
    }
    SemiAnalyticInputs in{&eig, &Vg.V, &Upc, &Vpc};
    return semi_analytic_curves(in, spec, clock,
                                grid_from_config(cfg.at("training").at("taus")));
}

json times_json(const ErrorCurves& curves) {
    json times = json::array();
    for (const auto& tm : curves.times) {
        json t = {{"tau_g", tm.tau_g}, {"flagged", tm.flagged}};
        t["tau_m"] = tm.tau_m ? json(*tm.tau_m) : json(nullptr);
        times.push_back(t);
    }
    return times;
}

int run_theory(const json& cfg, const std::string& out) {
    Timer timer;
    auto curves = theory_curves_once(cfg, cfg.at("seed").get<std::uint64_t>());
    curves.write_csv(out + "/theory_curves.csv");
    save_json({{"times", times_json(curves)}}, out + "/theory_times.json");
    write_manifest(out, cfg, timer.seconds(), {"theory_curves.csv", "theory_times.json"});
    std::cout << "theory-curves: wrote " << out << "/theory_curves.csv\n";
    return 0;
}

// Training dynamics averaged over runs: per run, Monte Carlo covariance
// estimates are diagonalized once and the exact discrete-GD readout is
// evaluated on the whole tau grid.
int run_train(const json& cfg, const std::string& out) {
    Timer timer;
    const int N = cfg.at("sizes").at("n").get<int>();
    const int P = cfg.at("sizes").at("p").get<int>();
    const int M = cfg.at("sizes").at("m").get<int>();
    const double t = cfg.at("t").get<double>();
    const auto& tr = cfg.at("training");
    const double eta_factor = tr.at("eta_factor").get<double>();
    const int runs = tr.at("runs").get<int>();
    const int noise_draws = tr.at("noise_draws").get<int>();
    auto taus = grid_from_config(tr.at("taus"));
    auto spec = mixture_from_config(cfg, N);
    auto clock = make_clock(spec, t);
    const Activation act{ActivationKind::Tanh};
    const double eta = eta_factor * N / clock.delta;
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();

    const int C = spec.n_classes;
    const int T = static_cast<int>(taus.size());
    std::vector<double> e_train(T, 0.0), e_test(T, 0.0);
    std::vector<std::vector<double>> e_test_c(C, std::vector<double>(T, 0.0));
    Checkpoint ck(out + "/train.checkpoint");
    for (int r = 0; r < runs; ++r) {
        const std::string key = "run=" + std::to_string(r);
        const std::string cell_path = out + "/cells/train_run" + std::to_string(r) + ".json";
        json cell;
        if (ck.contains(key) && std::filesystem::exists(cell_path)) {
            cell = load_config(cell_path);
        } else {
            const std::uint64_t rs = child_seed(seed, r, "train-run");
            auto model = make_rf_model(P, N, act, child_seed(rs, 0, "w"));
            auto centroids = realize_centroids(spec, child_seed(rs, 0, "centroids"));
            auto ds = sample_dataset(spec, centroids, M, child_seed(rs, 0, "data"));
            auto Ue = empirical_U(ds, model.W, clock, act, spec.weights, noise_draws,
                                  child_seed(rs, 0, "noise"));
            auto Ve = empirical_V(ds, model.W, clock, act, spec.weights, noise_draws,
                                  child_seed(rs, 0, "noise"));
            auto co = coeffs_vector(model.W, spec, centroids, clock, act, default_rule());
            auto eig = eigh(Ue.U);
            CurveEngine engine(eig, Ve.V, N);
            auto train_t = engine.train_target();
            std::vector<CurveTarget> test_t(C);
            for (int c = 0; c < C; ++c)
                test_t[c] = engine.target(population_U_class(model.W, co, c, N),
                                          gep_V_class(model.W, clock, co, c, N));
            json jt = json::array(), jtest = json::array(),
                 jc = json::array();
            std::vector<std::vector<double>> cls(C);
            std::vector<double> etr, ete;
            for (int i = 0; i < T; ++i) {
                const long k = std::llround(taus[i] / eta_factor);
                const Eigen::VectorXd cw = gd_weights(eig.values, k, eta, clock, N);
                etr.push_back(engine.eval(train_t, cw));
                double mix = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double e = engine.eval(test_t[c], cw);
                    cls[c].push_back(e);
                    mix += spec.weights(c) * e;
                }
                ete.push_back(mix);
            }
            cell = {{"e_train", etr}, {"e_test", ete}, {"e_test_c", cls}};
            save_json(cell, cell_path);
            ck.mark(key);
        }
        for (int i = 0; i < T; ++i) {
            e_train[i] += cell.at("e_train").at(i).get<double>() / runs;
            e_test[i] += cell.at("e_test").at(i).get<double>() / runs;
            for (int c = 0; c < C; ++c)
                e_test_c[c][i] += cell.at("e_test_c").at(c).at(i).get<double>() / runs;
        }
    }
    ErrorCurves curves;
    curves.taus = taus;
    curves.e_train = e_train;
    curves.e_test = e_test;
    curves.e_test_c = e_test_c;
    curves.e_score_c.assign(C, std::vector<double>(T));
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < T; ++i)
            curves.e_score_c[c][i] =
                1.0 / clock.gamma2(c) + (e_test_c[c][i] - 1.0) / clock.delta;
    for (int c = 0; c < C; ++c)
        curves.times.push_back(extract_times(taus, curves.e_test_c[c]));
    curves.write_csv(out + "/train_curves.csv");
    save_json({{"times", times_json(curves)}, {"runs", runs}}, out + "/train_times.json");
    write_manifest(out, cfg, timer.seconds(), {"train_curves.csv", "train_times.json"});
    std::cout << "train: averaged " << runs << " runs -> " << out << "/train_curves.csv\n";
    return 0;
}

int run_speciation(const json& cfg, const std::string& out) {
    Timer timer;
    const auto& sp = cfg.at("speciation");
    SpeciationConfig base;
    base.m = sp.at("m").get<int>();
    base.n_runs = sp.at("n_runs").get<int>();
    base.seed = cfg.at("seed").get<std::uint64_t>();
    base.weights = Eigen::Map<const Eigen::VectorXd>(
        as_vector(cfg.at("mixture").at("weights")).data(),
        static_cast<Eigen::Index>(cfg.at("mixture").at("weights").size()));
    base.variances = Eigen::Map<const Eigen::VectorXd>(
        as_vector(cfg.at("mixture").at("variances")).data(),
        static_cast<Eigen::Index>(cfg.at("mixture").at("variances").size()));
    if (!sp.at("a").is_null()) base.a = sp.at("a").get<double>();
    {
        const auto& tg = sp.at("t_tilde");
        const int n = tg.at("points").get<int>();
        const double lo = tg.at("min").get<double>(), hi = tg.at("max").get<double>();
        base.t_tilde.resize(n);
        for (int i = 0; i < n; ++i) base.t_tilde[i] = lo + (hi - lo) * i / (n - 1);
    }
    std::vector<std::string> outputs;
    json summary = json::array();
    Checkpoint ck(out + "/speciation.checkpoint");
    for (const auto& size : sp.at("sizes")) {
        SpeciationConfig c = base;
        c.n = size.at("n").get<int>();
        c.p = size.at("p").get<int>();
        const std::string key = "n=" + std::to_string(c.n) + ";p=" + std::to_string(c.p);
        const std::string csv_path = out + "/speciation_n" + std::to_string(c.n) + "_p" +
                                     std::to_string(c.p) + ".csv";
        json scell;
        const std::string cell_path = out + "/cells/speciation_" + std::to_string(c.n) +
                                      "_" + std::to_string(c.p) + ".json";
        if (ck.contains(key) && std::filesystem::exists(cell_path)) {
            scell = load_config(cell_path);
        } else {
            auto curve = speciation_run(c);
            curve.write_csv(csv_path);
            scell = {{"n", c.n}, {"p", c.p}, {"pred", curve.t_tilde_pred},
                     {"warnings", curve.warnings}};
            json crossings = json::array();
            for (std::size_t cls = 0; cls < curve.rms_mean.size(); ++cls) {
                auto x = rms_crossing(curve.t_tilde, curve.rms_mean[cls]);
                crossings.push_back(x ? json(*x) : json(nullptr));
            }
            scell["crossings"] = crossings;
            save_json(scell, cell_path);
            ck.mark(key);
        }
        outputs.push_back(csv_path);
        summary.push_back(scell);
    }
    save_json({{"curves", summary}}, out + "/speciation_summary.json");
    outputs.push_back("speciation_summary.json");
    write_manifest(out, cfg, timer.seconds(), outputs);
    std::cout << "speciation: " << summary.size() << " sizes -> " << out << "\n";
    return 0;
}

int run_memgap(const json& cfg, const std::string& out) {
    Timer timer;
    const auto& mg = cfg.at("memgap");
    auto descs = read_descriptors(mg.at("descriptors").get<std::string>());
    MemgapConfig mcfg;
    mcfg.n = cfg.at("sizes").at("n").get<int>();
    mcfg.p = cfg.at("sizes").at("p").get<int>();
    mcfg.m = cfg.at("sizes").at("m").get<int>();
    mcfg.t = cfg.at("t").get<double>();
    mcfg.b_grid = as_vector(mg.at("b_grid"));
    mcfg.thresholds = as_vector(mg.at("thresholds"));
    mcfg.taus = grid_from_config(cfg.at("training").at("taus"));
    mcfg.seed = cfg.at("seed").get<std::uint64_t>();
    Checkpoint ck(out + "/memgap.checkpoint");
    std::vector<GapRow> rows;
    for (const auto& d : descs)
        for (double b : mcfg.b_grid) {
            const std::string key = d.pair_id + ";b=" + format_double(b);
            const std::string cell_path =
                out + "/cells/memgap_" + d.pair_id + "_" +
                std::to_string(std::hash<std::string>{}(key)) + ".json";
            json cell;
            if (ck.contains(key) && std::filesystem::exists(cell_path)) {
                cell = load_config(cell_path);
            } else {
                const ErrorCurves curves = memgap_curves(d, b, mcfg);
                cell = json::array();
                for (double th : mcfg.thresholds) {
                    GapRow r = gap_from_curves(curves, th);
                    r.pair_id = d.pair_id;
                    r.b_partner = b;
                    json jr = {{"pair_id", r.pair_id},
                               {"b_partner", r.b_partner},
                               {"threshold", r.threshold},
                               {"gap", r.gap ? json(*r.gap) : json(nullptr)},
                               {"tau_m_ref", r.ref.tau_m ? json(*r.ref.tau_m) : json(nullptr)},
                               {"tau_m_partner",
                                r.partner.tau_m ? json(*r.partner.tau_m) : json(nullptr)},
                               {"tau_g_ref", r.ref.tau_g},
                               {"tau_g_partner", r.partner.tau_g},
                               {"flags", r.flags}};
                    cell.push_back(jr);
                }
                save_json(cell, cell_path);
                ck.mark(key);
            }
            for (const auto& jr : cell) {
                GapRow r;
                r.pair_id = jr.at("pair_id").get<std::string>();
                r.b_partner = jr.at("b_partner").get<double>();
                r.threshold = jr.at("threshold").get<double>();
                if (!jr.at("gap").is_null()) r.gap = jr.at("gap").get<double>();
                if (!jr.at("tau_m_ref").is_null())
                    r.ref.tau_m = jr.at("tau_m_ref").get<double>();
                if (!jr.at("tau_m_partner").is_null())
                    r.partner.tau_m = jr.at("tau_m_partner").get<double>();
                r.ref.tau_g = jr.at("tau_g_ref").get<double>();
                r.partner.tau_g = jr.at("tau_g_partner").get<double>();
                r.flags = jr.at("flags").get<std::string>();
                rows.push_back(std::move(r));
            }
        }
    write_gap_csv(rows, out + "/memgap.csv");
    write_manifest(out, cfg, timer.seconds(), {"memgap.csv"});
    std::cout << "memgap: " << rows.size() << " rows -> " << out << "/memgap.csv\n";
    return 0;
}

int run_sample(const json& cfg, const std::string& out) {
    Timer timer;
    const int N = cfg.at("sizes").at("n").get<int>();
    const int rows = cfg.at("sample").at("rows").get<int>();
    auto spec = mixture_from_config(cfg, N);
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    auto centroids = realize_centroids(spec, child_seed(seed, 0, "centroids"));
    auto ds = sample_dataset(spec, centroids, rows, child_seed(seed, 0, "data"));
    std::vector<std::string> header = {"label"};
    for (int j = 0; j < N; ++j) header.push_back("x" + std::to_string(j));
    CsvWriter csv(out + "/samples.csv", header);
    for (int i = 0; i < ds.size(); ++i) {
        std::vector<std::string> row = {std::to_string(ds.labels[i])};
        for (int j = 0; j < N; ++j) row.push_back(format_double(ds.X(i, j)));
        csv.row(row);
    }
    write_manifest(out, cfg, timer.seconds(), {"samples.csv"}, ds.warnings);
    std::cout << "sample: " << ds.size() << " rows -> " << out << "/samples.csv\n";
    return 0;
}

// Quick self-check: the cheap ends of the oracle comparisons.
int run_validate(const json& cfg, const std::string& out) {
    Timer timer;
    int failures = 0;
    auto report = [&](const std::string& name, bool ok, const std::string& detail) {
        std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  (" << detail << ")\n";
        if (!ok) ++failures;
    };
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const Activation act{ActivationKind::Tanh};

    // Closed-form gradient flow vs explicit gradient descent.
    {
        const int N = 30, P = 60, M = 80;
        auto spec = make_centered_spec(N, {0.5, 0.5}, {0.5, 0.25});
        auto clock = make_clock(spec, 0.01);
        auto model = make_rf_model(P, N, act, child_seed(seed, 1, "w"));
        Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(2, N);
        auto ds = sample_dataset(spec, centroids, M, child_seed(seed, 1, "data"));
        auto Ue = empirical_U(ds, model.W, clock, act, spec.weights, 20,
                              child_seed(seed, 1, "noise"));
        auto Ve = empirical_V(ds, model.W, clock, act, spec.weights, 20,
                              child_seed(seed, 1, "noise"));
        const double eta = 5e-5 * N / clock.delta;
        auto gd = train_gd(Ue.U, Ve.V, clock, N, eta, {20000});
        auto eig = eigh(Ue.U);
        auto cf = closed_form_readout(eig, Ve.V, clock, 20000 * 5e-5);
        const double rel = (gd.snapshots[0] - cf).norm() / cf.norm();
        report("closed-form vs GD", rel < 1e-2, "rel frobenius " + format_double(rel));
    }
    // GEP covariance vs Monte Carlo covariance (eigenvalue histograms).
    {
        const int N = 100, P = 200, M = 400;
        auto spec = make_centered_spec(N, {0.5, 0.5}, {0.5, 0.25});
        auto clock = make_clock(spec, 0.01);
        auto model = make_rf_model(P, N, act, child_seed(seed, 2, "w"));
        Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(2, N);
        auto ds = sample_dataset(spec, centroids, M, child_seed(seed, 2, "data"));
        auto co = coeffs_vector(model.W, spec, centroids, clock, act, default_rule());
        auto Ue = empirical_U(ds, model.W, clock, act, spec.weights, 60,
                              child_seed(seed, 2, "noise"));
        auto Ug = gep_U(ds, model.W, spec, centroids, clock, co, child_seed(seed, 2, "g"));
        auto ev_e = eigh(Ue.U, false).values;
        auto ev_g = eigh(Ug.U, false).values;
        const double tv = histogram_tv_distance(
            std::vector<double>(ev_e.data(), ev_e.data() + P),
            std::vector<double>(ev_g.data(), ev_g.data() + P));
        report("GEP vs MC eigenvalue histogram", tv < 0.3, "TV " + format_double(tv));
    }
    // Spectral solver vs the closed-form Marchenko-Pastur limit.
    {
        auto spec1 = make_centered_spec(100, {1.0}, {0.5});
        auto clock1 = make_clock(spec1, 0.3);
        auto co1 = coeffs_scalar(spec1, clock1, Activation{ActivationKind::Identity},
                                 default_rule());
        auto p = make_spectral_params(spec1, clock1, co1, 2.0, 1e9);
        const double G2 = 0.5 * std::exp(-0.6) + clock1.delta;
        const double lo = G2 * std::pow(1.0 - std::sqrt(2.0), 2);
        const double hi = G2 * std::pow(1.0 + std::sqrt(2.0), 2);
        auto sol = solve_grid(p, log_spaced(0.5 * lo, 1.2 * hi, 80),
                              default_eps_schedule());
        double max_err = 0.0;
        for (std::size_t i = 0; i < sol.lambda.size(); ++i) {
            const double lam = sol.lambda[i];
            if (lam < lo + 0.05 * (hi - lo) || lam > hi - 0.05 * (hi - lo)) continue;
            const double mp = std::sqrt((hi - lam) * (lam - lo)) / (2.0 * M_PI * 2.0 * G2 * lam);
            max_err = std::max(max_err, std::abs(sol.rho[i] - mp));
        }
        report("solver vs Marchenko-Pastur", max_err < 1e-4,
               "max density error " + format_double(max_err));
    }
    write_manifest(out, cfg, timer.seconds(), {},
                   {failures == 0 ? "validate passed" : "validate failed"});
    std::cout << (failures == 0 ? "validate: all checks passed\n"
                                : "validate: FAILURES detected\n");
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Random-feature diffusion score laboratory"};
    app.require_subcommand(1);
    std::string config_path, out_dir, kind;
    std::uint64_t seed = 0;
    bool seed_set = false, out_set = false;
    int threads = 1;
    std::vector<std::string> overrides;
    for (const std::string name : {"spectrum", "edges", "windows", "train",
                                   "theory-curves", "speciation", "memgap", "validate",
                                   "sample"}) {
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--out", out_dir, "output directory")->each([&](const std::string&) {
            out_set = true;
        });
        sub->add_option("--threads", threads, "BLAS thread count");
        sub->add_option("--override", overrides, "key.path=value config override")
            ->take_all();
        sub->callback([&, name]() { kind = name; });
    }
    CLI11_PARSE(app, argc, argv);

    try {
        openblas_set_num_threads(std::max(1, threads));
        scorelab::json cfg = scorelab::default_config(kind);
        if (!config_path.empty()) {
            scorelab::json loaded = scorelab::load_config(config_path);
            cfg.merge_patch(loaded);
        }
        cfg["kind"] = kind;
        for (const auto& kv : overrides) scorelab::apply_override(cfg, kv);
        if (seed_set) cfg["seed"] = seed;
        if (out_set) cfg["out"] = out_dir;
        auto errs = scorelab::validate_config(cfg);
        if (!errs.empty()) {
            std::cerr << "invalid config:\n";
            for (const auto& e : errs) std::cerr << "  - " << e << "\n";
            return 2;
        }
        const std::string out = cfg.at("out").get<std::string>();
        std::filesystem::create_directories(out);
        if (kind == "spectrum") return run_spectrum(cfg, out, false);
        if (kind == "edges") return run_spectrum(cfg, out, true);
        if (kind == "windows") return run_windows(cfg, out);
        if (kind == "train") return run_train(cfg, out);
        if (kind == "theory-curves") return run_theory(cfg, out);
        if (kind == "speciation") return run_speciation(cfg, out);
        if (kind == "memgap") return run_memgap(cfg, out);
        if (kind == "validate") return run_validate(cfg, out);
        if (kind == "sample") return run_sample(cfg, out);
        std::cerr << "unknown subcommand " << kind << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

#ifndef SCORELAB_MEMGAP_HPP
#define SCORELAB_MEMGAP_HPP

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scorelab/covariance.hpp"
#include "scorelab/dynamics.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/io.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

// A two-class mixture summarized by the statistics of a reference class and a
// partner class: variances, centroid norms normalized by sqrt(dim), and the
// cosine similarity between the two centroids.
struct PairDescriptor {
    std::string pair_id;
    double ref_variance = 0.0;
    double ref_norm = 0.0;
    double partner_variance = 0.0;
    double partner_norm = 0.0;
    double cosine = 0.0;

    void validate() const {
        if (!(ref_variance > 0.0) || !(partner_variance > 0.0))
            throw std::invalid_argument("descriptor variances must be positive");
        if (!(ref_norm >= 0.0) || !(partner_norm >= 0.0))
            throw std::invalid_argument("descriptor norms must be nonnegative");
        if (std::abs(cosine) > 1.0)
            throw std::invalid_argument("descriptor cosine must be in [-1, 1]");
    }
};

inline std::vector<PairDescriptor> read_descriptors(const std::string& path) {
    auto table = read_csv(path);
    if (table.empty()) throw std::runtime_error("empty descriptor CSV " + path);
    const std::vector<std::string> want = {"pair_id", "ref_variance", "ref_norm",
                                           "partner_variance", "partner_norm", "cosine"};
    const auto& header = table.front();
    std::vector<int> col(want.size(), -1);
    for (std::size_t j = 0; j < header.size(); ++j)
        for (std::size_t k = 0; k < want.size(); ++k)
            if (header[j] == want[k]) col[k] = static_cast<int>(j);
    for (std::size_t k = 0; k < want.size(); ++k)
        if (col[k] < 0)
            throw std::runtime_error("descriptor CSV missing column " + want[k]);
    std::vector<PairDescriptor> out;
    for (std::size_t r = 1; r < table.size(); ++r) {
        const auto& row = table[r];
        PairDescriptor d;
        d.pair_id = row[col[0]];
        d.ref_variance = std::stod(row[col[1]]);
        d.ref_norm = std::stod(row[col[2]]);
        d.partner_variance = std::stod(row[col[3]]);
        d.partner_norm = std::stod(row[col[4]]);
        d.cosine = std::stod(row[col[5]]);
        d.validate();
        out.push_back(std::move(d));
    }
    return out;
}

inline MixtureSpec spec_from_descriptor(const PairDescriptor& d, int dim, double b_partner) {
    if (!(b_partner > 0.0) || !(b_partner < 1.0))
        throw std::invalid_argument("b_partner must be in (0, 1)");
    Eigen::MatrixXd cosines = Eigen::MatrixXd::Identity(2, 2);
    cosines(0, 1) = cosines(1, 0) = d.cosine;
    return make_spec(dim, {1.0 - b_partner, b_partner},
                     {d.ref_variance, d.partner_variance}, {d.ref_norm, d.partner_norm},
                     cosines);
}

struct MemgapConfig {
    int n = 100, p = 10000, m = 500;
    double t = 0.01;
    std::vector<double> b_grid = {0.25, 0.5, 0.75};
    std::vector<double> thresholds = {1.2};
    std::vector<double> taus = log_spaced(1e-3, 1e6, 240);
    ActivationKind act = ActivationKind::Tanh;
    std::uint64_t seed = 0;
};

// Semi-analytical error curves for one descriptor at one mixing proportion.
// Class 0 is the reference, class 1 the partner.
inline ErrorCurves memgap_curves(const PairDescriptor& d, double b_partner,
                                 const MemgapConfig& cfg) {
    d.validate();
    auto spec = spec_from_descriptor(d, cfg.n, b_partner);
    auto clock = make_clock(spec, cfg.t);
    const Activation act{cfg.act};
    const auto& rule = default_rule();
    const std::uint64_t s = child_seed(cfg.seed, 0, "memgap:" + d.pair_id);
    auto model = make_rf_model(cfg.p, cfg.n, act, child_seed(s, 0, "w"));
    auto centroids = realize_centroids(spec, child_seed(s, 0, "centroids"));
    auto ds = sample_dataset(spec, centroids, cfg.m, child_seed(s, 0, "data"));
    auto co = coeffs_vector(model.W, spec, centroids, clock, act, rule);
    auto Ug = gep_U(ds, model.W, spec, centroids, clock, co, child_seed(s, 0, "noise"));
    auto Vg = gep_V(model.W, spec, clock, co);
    auto eig = eigh(Ug.U);
    std::vector<Eigen::MatrixXd> Upc, Vpc;
    for (int c = 0; c < 2; ++c) {
        Upc.push_back(population_U_class(model.W, co, c, cfg.n));
        Vpc.push_back(gep_V_class(model.W, clock, co, c, cfg.n));
    }
    SemiAnalyticInputs in{&eig, &Vg.V, &Upc, &Vpc};
    return semi_analytic_curves(in, spec, clock, cfg.taus);
}

struct GapRow {
    std::string pair_id;
    double b_partner = 0.0;
    double threshold = 0.0;
    std::optional<double> gap; // tau_m(ref) - tau_m(partner)
    ClassTimes ref, partner;
    std::string flags;
};

inline GapRow gap_from_curves(const ErrorCurves& curves, double threshold) {
    GapRow row;
    row.threshold = threshold;
    row.ref = extract_times(curves.taus, curves.e_test_c[0], 2.0, threshold);
    row.partner = extract_times(curves.taus, curves.e_test_c[1], 2.0, threshold);
    if (row.ref.tau_m && row.partner.tau_m) {
        row.gap = *row.ref.tau_m - *row.partner.tau_m;
    } else {
        row.flags = "no-crossing";
    }
    if (row.ref.flagged || row.partner.flagged) {
        if (!row.flags.empty()) row.flags += ";";
        row.flags += "flagged-extraction";
    }
    return row;
}

inline GapRow gap_from_descriptor(const PairDescriptor& d, double b_partner,
                                  double threshold, const MemgapConfig& cfg) {
    GapRow row = gap_from_curves(memgap_curves(d, b_partner, cfg), threshold);
    row.pair_id = d.pair_id;
    row.b_partner = b_partner;
    return row;
}

// Full cross product over descriptors, mixing proportions, and thresholds.
// The expensive eigen-decomposition is computed once per (descriptor, b) cell
// and shared across thresholds.
inline std::vector<GapRow> gap_sweep(const std::vector<PairDescriptor>& descs,
                                     const MemgapConfig& cfg) {
    std::vector<GapRow> out;
    for (const auto& d : descs)
        for (double b : cfg.b_grid) {
            const ErrorCurves curves = memgap_curves(d, b, cfg);
            for (double th : cfg.thresholds) {
                GapRow row = gap_from_curves(curves, th);
                row.pair_id = d.pair_id;
                row.b_partner = b;
                out.push_back(std::move(row));
            }
        }
    return out;
}

inline void write_gap_csv(const std::vector<GapRow>& rows, const std::string& path) {
    CsvWriter w(path, {"pair_id", "b_partner", "threshold", "gap", "tau_m_ref",
                       "tau_m_partner", "tau_g_ref", "tau_g_partner", "flags"});
    auto opt = [](const std::optional<double>& v) {
        return v ? format_double(*v) : std::string("nan");
    };
    for (const auto& r : rows)
        w.row({r.pair_id, format_double(r.b_partner), format_double(r.threshold),
               opt(r.gap), opt(r.ref.tau_m), opt(r.partner.tau_m),
               format_double(r.ref.tau_g), format_double(r.partner.tau_g), r.flags});
}

} // namespace scorelab

#endif // SCORELAB_MEMGAP_HPP

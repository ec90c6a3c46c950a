#ifndef SCORELAB_SPECIATION_HPP
#define SCORELAB_SPECIATION_HPP

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scorelab/covariance.hpp"
#include "scorelab/dynamics.hpp"
#include "scorelab/gep.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/io.hpp"
#include "scorelab/linalg.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

// Squared overlap of each projected centroid with the span of the top-k
// eigenvectors of U, normalized by the centroid norm.  Mu is C x P (rows are
// the feature-space centroids W m_c / sqrt(N)).
struct OverlapResult {
    Eigen::VectorXd sq_overlap; // per class, in [0, 1]
    bool degenerate = false;    // top-k / rest eigenvalue gap below 1e-12
};

inline OverlapResult squared_overlaps(const Eigen::MatrixXd& U, const Eigen::MatrixXd& Mu,
                                      int k) {
    const int P = static_cast<int>(U.rows());
    if (k < 1 || k > P) throw std::invalid_argument("k must be in [1, P]");
    // One extra pair to detect a degenerate subspace boundary.
    const int k_probe = std::min(P, k + 1);
    auto top = top_eigenpairs(U, k_probe);
    OverlapResult res;
    if (k_probe > k)
        res.degenerate = std::abs(top.values(k - 1) - top.values(k)) < 1e-12;
    const int C = static_cast<int>(Mu.rows());
    res.sq_overlap.resize(C);
    for (int c = 0; c < C; ++c) {
        const double n2 = Mu.row(c).squaredNorm();
        if (n2 <= 0.0) {
            res.sq_overlap(c) = 0.0;
            continue;
        }
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
            const double d = Mu.row(c).dot(top.vectors.col(i).transpose());
            acc += d * d;
        }
        res.sq_overlap(c) = acc / n2;
    }
    return res;
}

// One backward-time speciation curve at fixed (N, P).
struct SpeciationCurve {
    int n = 0, p = 0, m = 0, n_runs = 0;
    std::vector<double> t_tilde;                // t / log N
    std::vector<std::vector<double>> rms_mean;  // [class][grid]
    std::vector<std::vector<double>> rms_stderr;
    Eigen::VectorXd weights;              // mixing proportions actually used
    std::optional<double> a;              // strong-imbalance exponent, if any
    std::vector<double> t_tilde_pred;     // per-class predicted crossing
    std::vector<std::string> warnings;

    void write_csv(const std::string& path) const {
        CsvWriter w(path, {"t_tilde", "class", "rms_mean", "rms_stderr", "n", "p"});
        for (std::size_t c = 0; c < rms_mean.size(); ++c)
            for (std::size_t i = 0; i < t_tilde.size(); ++i)
                w.row({format_double(t_tilde[i]), std::to_string(c),
                       format_double(rms_mean[c][i]), format_double(rms_stderr[c][i]),
                       std::to_string(n), std::to_string(p)});
    }
};

// Leading-order crossing predictions: t_tilde = (1 - a_c)/2 per class, with
// a_c = 0 for order-one mixing weights.
inline std::vector<double> predict_speciation(const std::vector<double>& a_exponents) {
    std::vector<double> out(a_exponents.size());
    for (std::size_t c = 0; c < a_exponents.size(); ++c) {
        if (a_exponents[c] < 0.0 || a_exponents[c] > 1.0)
            throw std::invalid_argument("imbalance exponent must be in [0, 1]");
        out[c] = 0.5 * (1.0 - a_exponents[c]);
    }
    return out;
}

// First t_tilde, scanning downward from the large-t_tilde end, where the mean
// RMS exceeds the threshold; linearly interpolated between grid points.
inline std::optional<double> rms_crossing(const std::vector<double>& t_tilde,
                                          const std::vector<double>& rms,
                                          double threshold = 0.5) {
    if (t_tilde.size() != rms.size() || t_tilde.size() < 2)
        throw std::invalid_argument("rms_crossing needs matching grids of >= 2 points");
    for (int i = static_cast<int>(rms.size()) - 1; i >= 0; --i) {
        if (rms[i] > threshold) {
            if (i + 1 >= static_cast<int>(rms.size())) return t_tilde[i];
            const double f = (threshold - rms[i]) / (rms[i + 1] - rms[i]);
            return t_tilde[i] + f * (t_tilde[i + 1] - t_tilde[i]);
        }
    }
    return std::nullopt;
}

struct SpeciationConfig {
    int n = 0, p = 0, m = 2000;
    std::vector<double> t_tilde;
    Eigen::VectorXd weights;   // used directly unless `a` is set
    std::optional<double> a;   // strong imbalance: b = (1 - N^{-a}, N^{-a})
    Eigen::VectorXd variances; // per class
    ActivationKind act = ActivationKind::Tanh;
    bool use_largetime = false; // large-time closed form instead of full gep_U
    int n_runs = 10;
    std::uint64_t seed = 0;
};

inline SpeciationCurve speciation_run(const SpeciationConfig& cfg) {
    if (cfg.n < 2 || cfg.p < 2 || cfg.m < 1) throw std::invalid_argument("bad sizes");
    if (cfg.t_tilde.empty()) throw std::invalid_argument("empty t_tilde grid");
    const int N = cfg.n, P = cfg.p;
    Eigen::VectorXd b;
    std::vector<double> a_exp;
    if (cfg.a) {
        b = strong_imbalance_weights(2, N, *cfg.a);
        a_exp = {0.0, *cfg.a};
    } else {
        b = cfg.weights;
        a_exp.assign(b.size(), 0.0);
    }
    const int C = static_cast<int>(b.size());
    if (cfg.variances.size() != C) throw std::invalid_argument("variances size mismatch");
    // Orthogonal centroids of norm sqrt(N) (normalized norm 1).
    Eigen::MatrixXd cosines = Eigen::MatrixXd::Zero(C, C);
    std::vector<double> vars(cfg.variances.data(), cfg.variances.data() + C);
    std::vector<double> wts(b.data(), b.data() + C);
    auto spec = make_spec(N, wts, vars, std::vector<double>(C, 1.0), cosines);

    SpeciationCurve curve;
    curve.n = N;
    curve.p = P;
    curve.m = cfg.m;
    curve.n_runs = cfg.n_runs;
    curve.t_tilde = cfg.t_tilde;
    curve.weights = b;
    curve.a = cfg.a;
    curve.t_tilde_pred = predict_speciation(a_exp);
    const int T = static_cast<int>(cfg.t_tilde.size());
    curve.rms_mean.assign(C, std::vector<double>(T, 0.0));
    curve.rms_stderr.assign(C, std::vector<double>(T, 0.0));

    const Activation act{cfg.act};
    const auto& rule = default_rule();
    const double logn = std::log(static_cast<double>(N));
    // Accumulate squared overlaps; the RMS is the square root of the run mean.
    std::vector<std::vector<double>> s1(C, std::vector<double>(T, 0.0));
    std::vector<std::vector<double>> s2(C, std::vector<double>(T, 0.0));
    bool flagged_small_class = false;
    for (int r = 0; r < cfg.n_runs; ++r) {
        const std::uint64_t rs = child_seed(cfg.seed, r, "speciation-run");
        auto model = make_rf_model(P, N, act, child_seed(rs, 0, "w"));
        auto centroids = realize_centroids(spec, child_seed(rs, 0, "centroids"));
        auto ds = sample_dataset(spec, centroids, cfg.m, child_seed(rs, 0, "data"));
        for (int c = 0; c < C; ++c)
            if (ds.class_counts[c] < 1 && !flagged_small_class) {
                curve.warnings.push_back("class " + std::to_string(c) +
                                         " has no samples; population term only");
                flagged_small_class = true;
            }
        const Eigen::MatrixXd Mu =
            centroids * model.W.transpose() / std::sqrt(static_cast<double>(N));
        for (int i = 0; i < T; ++i) {
            const double t = cfg.t_tilde[i] * logn;
            auto clock = make_clock(spec, t);
            Eigen::MatrixXd U;
            if (cfg.use_largetime) {
                U = largetime_U(model.W, spec, centroids, clock, act, rule).U;
            } else {
                auto co = coeffs_vector(model.W, spec, centroids, clock, act, rule);
                U = gep_U(ds, model.W, spec, centroids, clock, co,
                          child_seed(rs, i, "gep-noise"))
                        .U;
            }
            auto ov = squared_overlaps(U, Mu, C);
            if (ov.degenerate && curve.warnings.empty())
                curve.warnings.push_back("degenerate top-k eigenvalue gap at t_tilde=" +
                                         format_double(cfg.t_tilde[i]));
            for (int c = 0; c < C; ++c) {
                s1[c][i] += ov.sq_overlap(c);
                s2[c][i] += ov.sq_overlap(c) * ov.sq_overlap(c);
            }
        }
    }
    const double R = static_cast<double>(cfg.n_runs);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < T; ++i) {
            const double mean = s1[c][i] / R;
            curve.rms_mean[c][i] = std::sqrt(std::max(0.0, mean));
            if (cfg.n_runs > 1 && mean > 0.0) {
                const double var = std::max(0.0, s2[c][i] / R - mean * mean) / (R - 1.0);
                // Delta method for sqrt of the run mean.
                curve.rms_stderr[c][i] = 0.5 * std::sqrt(var) / std::sqrt(mean);
            }
        }
    return curve;
}

inline std::vector<SpeciationCurve> speciation_sweep(
    const SpeciationConfig& base, const std::vector<std::pair<int, int>>& sizes) {
    std::vector<SpeciationCurve> out;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        SpeciationConfig cfg = base;
        cfg.n = sizes[i].first;
        cfg.p = sizes[i].second;
        cfg.seed = child_seed(base.seed, i, "speciation-size");
        out.push_back(speciation_run(cfg));
    }
    return out;
}

} // namespace scorelab

#endif // SCORELAB_SPECIATION_HPP

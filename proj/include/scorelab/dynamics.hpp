#ifndef SCORELAB_DYNAMICS_HPP
#define SCORELAB_DYNAMICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "scorelab/covariance.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/io.hpp"
#include "scorelab/linalg.hpp"

namespace scorelab {

// Random-feature score model: s(x) = A phi(W x / sqrt(N)) with W fixed and A
// trained from A(0) = 0.
struct RFModel {
    Eigen::MatrixXd W; // P x N
    Eigen::MatrixXd A; // N x P
    Activation act;
};

inline RFModel make_rf_model(int P, int N, const Activation& act, std::uint64_t seed) {
    RFModel m;
    m.act = act;
    m.W.resize(P, N);
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int p = 0; p < P; ++p)
        for (int j = 0; j < N; ++j) m.W(p, j) = gauss(rng);
    m.A = Eigen::MatrixXd::Zero(N, P);
    return m;
}

// Gradient of the quadratic training loss in A for fixed covariance estimates:
// dE/dA = 2 (Delta_t / N) (A U + V^T / sqrt(Delta_t)).
inline Eigen::MatrixXd loss_gradient(const Eigen::MatrixXd& A, const Eigen::MatrixXd& U,
                                     const Eigen::MatrixXd& V, const DiffusionClock& clock,
                                     int dim) {
    return (2.0 * clock.delta / dim) *
           (A * U + V.transpose() / std::sqrt(clock.delta));
}

// Mode weights of the exact gradient-flow solution:
// A(tau) = -(1/sqrt(Delta)) V^T Psi diag(c) Psi^T, c = (1 - e^{-2 lambda tau})/lambda,
// extended by continuity to 2 tau at lambda = 0 (threshold 1e-12 lambda_max).
inline Eigen::VectorXd flow_weights(const Eigen::VectorXd& evals, double tau) {
    const double lmax = evals.cwiseAbs().maxCoeff();
    const double eps_rank = 1e-12 * std::max(lmax, 1e-300);
    Eigen::VectorXd c(evals.size());
    for (Eigen::Index q = 0; q < evals.size(); ++q) {
        const double l = evals(q);
        c(q) = (l > eps_rank) ? -std::expm1(-2.0 * l * tau) / l : 2.0 * tau;
    }
    return c;
}

// Mode weights of the exact full-batch GD recurrence after k steps with
// learning rate eta: c = (1 - (1 - eps*lambda)^k)/lambda, eps = 2 eta Delta/N.
inline Eigen::VectorXd gd_weights(const Eigen::VectorXd& evals, long k, double eta,
                                  const DiffusionClock& clock, int dim) {
    const double eps = 2.0 * eta * clock.delta / dim;
    const double lmax = evals.cwiseAbs().maxCoeff();
    const double eps_rank = 1e-12 * std::max(lmax, 1e-300);
    Eigen::VectorXd c(evals.size());
    for (Eigen::Index q = 0; q < evals.size(); ++q) {
        const double l = evals(q);
        if (l <= eps_rank) {
            c(q) = eps * static_cast<double>(k);
        } else {
            const double r = 1.0 - eps * l;
            c(q) = (1.0 - std::pow(r, static_cast<double>(k))) / l;
        }
    }
    return c;
}

inline Eigen::MatrixXd readout_from_weights(const EigenPairs& eig, const Eigen::MatrixXd& V,
                                            const DiffusionClock& clock,
                                            const Eigen::VectorXd& c) {
    // A = -(1/sqrt(Delta)) V^T Psi diag(c) Psi^T
    Eigen::MatrixXd VtPsi = V.transpose() * eig.vectors; // N x P
    VtPsi.array().rowwise() *= c.transpose().array();
    return (-1.0 / std::sqrt(clock.delta)) * VtPsi * eig.vectors.transpose();
}

inline Eigen::MatrixXd closed_form_readout(const EigenPairs& eig, const Eigen::MatrixXd& V,
                                           const DiffusionClock& clock, double tau) {
    return readout_from_weights(eig, V, clock, flow_weights(eig.values, tau));
}

// Explicit full-batch GD iteration on the fixed-covariance loss.  Returns A
// snapshots at the requested step indices (sorted ascending).
struct GdResult {
    std::vector<Eigen::MatrixXd> snapshots;
    bool diverged = false;
    long diverged_at = -1;
};

inline GdResult train_gd(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V,
                         const DiffusionClock& clock, int dim, double eta,
                         const std::vector<long>& snapshot_steps) {
    if (eta <= 0.0) throw std::invalid_argument("eta must be positive");
    const int N = dim, P = static_cast<int>(U.rows());
    GdResult res;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, P);
    // Scale reference for the divergence detector: ||A_inf|| ~ ||V||/sqrt(Delta) / lambda_typ.
    const double a_ref = std::max(V.norm() / std::sqrt(std::max(clock.delta, 1e-300)), 1e-12);
    const Eigen::MatrixXd Vt = V.transpose() / std::sqrt(clock.delta);
    const double pref = 2.0 * clock.delta / N;
    long k = 0;
    for (long target : snapshot_steps) {
        for (; k < target; ++k) {
            A -= (eta * pref) * (A * U + Vt);
            if (!((k + 1) & 0x3ff) && !(A.norm() <= 1e6 * a_ref)) {
                res.diverged = true;
                res.diverged_at = k + 1;
                res.snapshots.push_back(A);
                return res;
            }
        }
        res.snapshots.push_back(A);
    }
    return res;
}

// Quadratic-form loss for fixed covariance estimates:
// E = 1 + (Delta/N) Tr(A U A^T) + (2 sqrt(Delta)/N) Tr(V A).
inline double loss_trace(const Eigen::MatrixXd& A, const Eigen::MatrixXd& U,
                         const Eigen::MatrixXd& V, const DiffusionClock& clock, int dim) {
    const double t1 = (A * U).cwiseProduct(A).sum();
    const double t2 = V.cwiseProduct(A.transpose()).sum();
    return 1.0 + clock.delta / dim * t1 + 2.0 * std::sqrt(clock.delta) / dim * t2;
}

// Monte Carlo score-matching loss (1/(N n)) sum ||sqrt(Delta) A phi(...) + xi||^2
// over noise draws for the given sample rows (train) or freshly drawn
// population samples (test).
inline double loss_mc(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W,
                      const DiffusionClock& clock, const Activation& act,
                      const Eigen::MatrixXd& X_rows, int n_noise_draws,
                      std::mt19937_64& rng) {
    const int M = static_cast<int>(X_rows.rows());
    const int N = static_cast<int>(X_rows.cols());
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sq_delta = std::sqrt(clock.delta);
    double acc = 0.0;
    Eigen::MatrixXd Xi(M, N), Xn(M, N);
    for (int d = 0; d < n_noise_draws; ++d) {
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) Xi(i, j) = gauss(rng);
        Xn = X_rows * clock.exp_mt + sq_delta * Xi;
        Eigen::MatrixXd Phi = feature_map(Xn, W, act); // M x P
        Eigen::MatrixXd resid = sq_delta * (Phi * A.transpose()) + Xi;
        acc += resid.squaredNorm();
    }
    return acc / (static_cast<double>(N) * M * n_noise_draws);
}

// Draws n_eval fresh class-c samples and evaluates the class-conditional test loss.
inline double class_test_loss_mc(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W,
                                 const DiffusionClock& clock, const Activation& act,
                                 const MixtureSpec& spec, const Eigen::MatrixXd& centroids,
                                 int c, int n_eval, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int N = spec.dim;
    Eigen::MatrixXd X(n_eval, N);
    const double sigma = std::sqrt(spec.variances(c));
    for (int i = 0; i < n_eval; ++i)
        for (int j = 0; j < N; ++j) X(i, j) = centroids(c, j) + sigma * gauss(rng);
    return loss_mc(A, W, clock, act, X, 1, rng);
}

// Monte Carlo score MSE for class c: (1/N) E ||A phi(W x/sqrt(N)) - s_true(x)||^2
// over x ~ class-c noised population.
inline double score_mse_mc(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W,
                           const DiffusionClock& clock, const Activation& act,
                           const MixtureSpec& spec, const Eigen::MatrixXd& centroids,
                           int c, int n_eval, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int N = spec.dim;
    const double gam = clock.gamma(c);
    double acc = 0.0;
    Eigen::VectorXd x(N);
    for (int i = 0; i < n_eval; ++i) {
        for (int j = 0; j < N; ++j)
            x(j) = clock.exp_mt * centroids(c, j) + gam * gauss(rng);
        Eigen::VectorXd feat =
            (W * x / std::sqrt(static_cast<double>(N))).unaryExpr([&](double v) { return act(v); });
        Eigen::VectorXd s_model = A * feat;
        acc += (s_model - true_score(x, clock, spec, centroids)).squaredNorm();
    }
    return acc / (static_cast<double>(N) * n_eval);
}

// ---------------------------------------------------------------------------
// Curve engine: evaluates E(tau) = 1 + (Delta/N) Tr(A U_eval A^T)
// + (2 sqrt(Delta)/N) Tr(V_eval A) for readouts of the form
// A = -(1/sqrt(Delta)) V_dyn^T Psi diag(c_tau) Psi^T without forming A, so a
// whole tau grid costs O(P^2) per point after an O(P^3) setup.
//
// With R = V_dyn^T Psi, G = R^T R, S = Psi^T U_eval Psi,
// d_q = (Psi^T V_eval R)_qq:
//   E(tau) = 1 + (1/N) c^T (S .* G) c - (2/N) c . d.
struct CurveTarget {
    Eigen::MatrixXd H; // S .* G (P x P); empty for the diagonal (train) target
    Eigen::VectorXd h_diag; // lambda_q G_qq for the train target
    Eigen::VectorXd d;
};

struct CurveEngine {
    int dim = 0;
    EigenPairs eig; // of U_dyn
    Eigen::MatrixXd R; // V_dyn^T Psi (N x P)
    Eigen::MatrixXd G; // R^T R

    CurveEngine(EigenPairs eig_u, const Eigen::MatrixXd& V_dyn, int N)
        : dim(N), eig(std::move(eig_u)) {
        R = V_dyn.transpose() * eig.vectors;
        G = R.transpose() * R;
    }

    // Train target: U_eval = U_dyn, V_eval = V_dyn.
    CurveTarget train_target() const {
        CurveTarget t;
        t.h_diag = eig.values.cwiseProduct(G.diagonal());
        t.d = G.diagonal();
        return t;
    }

    CurveTarget target(const Eigen::MatrixXd& U_eval, const Eigen::MatrixXd& V_eval) const {
        CurveTarget t;
        Eigen::MatrixXd S = eig.vectors.transpose() * U_eval * eig.vectors;
        t.H = S.cwiseProduct(G);
        t.d = ((eig.vectors.transpose() * V_eval).cwiseProduct(R.transpose()))
                  .rowwise()
                  .sum();
        return t;
    }

    double eval(const CurveTarget& t, const Eigen::VectorXd& c) const {
        double quad;
        if (t.H.size() > 0)
            quad = c.dot(t.H * c);
        else
            quad = t.h_diag.cwiseProduct(c.cwiseAbs2()).sum();
        return 1.0 + quad / dim - 2.0 * c.dot(t.d) / dim;
    }
};

// ---------------------------------------------------------------------------
// Error curves container + extraction of class times.

struct ClassTimes {
    double tau_g = 0.0;
    std::optional<double> tau_m;
    bool flagged = false; // e.g. no threshold crossing inside the grid
};

struct ErrorCurves {
    std::vector<double> taus;
    std::vector<double> e_train;
    std::vector<double> e_test;
    std::vector<std::vector<double>> e_test_c;  // [class][tau]
    std::vector<std::vector<double>> e_score_c; // [class][tau]
    std::vector<ClassTimes> times;              // per class

    void write_csv(const std::string& path) const {
        std::vector<std::string> header = {"tau", "e_train", "e_test"};
        for (std::size_t c = 0; c < e_test_c.size(); ++c)
            header.push_back("e_test_c" + std::to_string(c));
        for (std::size_t c = 0; c < e_score_c.size(); ++c)
            header.push_back("e_score_c" + std::to_string(c));
        CsvWriter w(path, header);
        for (std::size_t i = 0; i < taus.size(); ++i) {
            std::vector<std::string> row = {format_double(taus[i]),
                                            format_double(e_train[i]),
                                            format_double(e_test[i])};
            for (const auto& col : e_test_c) row.push_back(format_double(col[i]));
            for (const auto& col : e_score_c) row.push_back(format_double(col[i]));
            w.row(row);
        }
    }
};

// Gaussian smoothing in log-tau (grid-index) space; width in grid points.
inline std::vector<double> gaussian_smooth(const std::vector<double>& y, double width) {
    if (width <= 0.0) return y;
    const int n = static_cast<int>(y.size());
    const int half = std::max(1, static_cast<int>(std::ceil(3.0 * width)));
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0, wsum = 0.0;
        for (int j = std::max(0, i - half); j <= std::min(n - 1, i + half); ++j) {
            const double w = std::exp(-0.5 * (i - j) * (i - j) / (width * width));
            acc += w * y[j];
            wsum += w;
        }
        out[i] = acc / wsum;
    }
    return out;
}

// Argmin with parabolic refinement in log tau plus first crossing of the
// threshold after the minimum (linear interpolation in log tau).
inline ClassTimes extract_times(const std::vector<double>& taus, const std::vector<double>& curve,
                                double smooth_width = 2.0, double threshold = 1.0) {
    if (taus.size() != curve.size() || taus.size() < 3)
        throw std::invalid_argument("extract_times needs matching grids of >= 3 points");
    for (double v : curve)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite curve value");
    const std::vector<double> y = gaussian_smooth(curve, smooth_width);
    const int n = static_cast<int>(y.size());
    int imin = 0;
    for (int i = 1; i < n; ++i)
        if (y[i] < y[imin]) imin = i;
    ClassTimes res;
    if (imin == 0 || imin == n - 1) {
        res.tau_g = taus[imin];
        if (imin == n - 1) res.flagged = true; // still decreasing at the grid end
    } else {
        const double l0 = std::log(taus[imin - 1]), l1 = std::log(taus[imin]),
                     l2 = std::log(taus[imin + 1]);
        const double y0 = y[imin - 1], y1 = y[imin], y2 = y[imin + 1];
        const double denom = (y0 - 2.0 * y1 + y2);
        double lmin = l1;
        if (std::abs(denom) > 1e-300) {
            // Parabola through three (log tau, y) points; assumes near-uniform log grid.
            lmin = l1 + 0.5 * (l2 - l1) * (y0 - y2) / denom;
            lmin = std::clamp(lmin, l0, l2);
        }
        res.tau_g = std::exp(lmin);
    }
    // First crossing of the threshold after the minimum.
    for (int i = imin + 1; i < n; ++i) {
        if (y[i - 1] < threshold && y[i] >= threshold) {
            const double f = (threshold - y[i - 1]) / (y[i] - y[i - 1]);
            const double l = std::log(taus[i - 1]) +
                             f * (std::log(taus[i]) - std::log(taus[i - 1]));
            res.tau_m = std::exp(l);
            return res;
        }
    }
    res.flagged = true; // no crossing inside the grid
    return res;
}

// ---------------------------------------------------------------------------
// Semi-analytical error curves: gradient-flow readout in the GEP matrices'
// eigenbasis, evaluated against the per-class population blocks.

struct SemiAnalyticInputs {
    const EigenPairs* eig_gep;               // eigenpairs of symmetrized U_gep
    const Eigen::MatrixXd* V_gep;            // P x N (mixture-weighted)
    const std::vector<Eigen::MatrixXd>* U_pop_c; // per-class population blocks
    const std::vector<Eigen::MatrixXd>* V_pop_c; // per-class V (gep form)
};

inline ErrorCurves semi_analytic_curves(const SemiAnalyticInputs& in, const MixtureSpec& spec,
                                        const DiffusionClock& clock,
                                        const std::vector<double>& taus,
                                        double memorization_threshold = 1.0) {
    const int C = spec.n_classes;
    CurveEngine engine(*in.eig_gep, *in.V_gep, spec.dim);
    const CurveTarget train = engine.train_target();
    std::vector<CurveTarget> test_c(C);
    for (int c = 0; c < C; ++c)
        test_c[c] = engine.target((*in.U_pop_c)[c], (*in.V_pop_c)[c]);
    ErrorCurves out;
    out.taus = taus;
    const int n = static_cast<int>(taus.size());
    out.e_train.resize(n);
    out.e_test.assign(n, 0.0);
    out.e_test_c.assign(C, std::vector<double>(n));
    out.e_score_c.assign(C, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd c_w = flow_weights(engine.eig.values, taus[i]);
        out.e_train[i] = engine.eval(train, c_w);
        for (int c = 0; c < C; ++c) {
            const double e = engine.eval(test_c[c], c_w);
            out.e_test_c[c][i] = e;
            out.e_test[i] += spec.weights(c) * e;
            out.e_score_c[c][i] =
                1.0 / clock.gamma2(c) + (e - 1.0) / clock.delta;
        }
    }
    out.times.resize(C);
    for (int c = 0; c < C; ++c)
        out.times[c] = extract_times(taus, out.e_test_c[c], 2.0, memorization_threshold);
    return out;
}

// Fully analytical train error from the solver's rho_Omega table (centered
// mixtures): 1 - (Delta chi_p / e^{-2t}) (sum_c b_c gamma_tilde_c / sigma_c)^2
// * int dlambda (1 - e^{-4 lambda tau}) rho_Omega(lambda) / lambda.
inline std::vector<double> analytic_train_error(const std::vector<double>& lambda_grid,
                                                const std::vector<double>& rho_omega,
                                                const GepCoefficients& coeffs,
                                                const MixtureSpec& spec,
                                                const DiffusionClock& clock, double chi_p,
                                                const std::vector<double>& taus) {
    if (lambda_grid.size() != rho_omega.size())
        throw std::invalid_argument("lambda grid / rho_omega size mismatch");
    double s = 0.0;
    for (int c = 0; c < spec.n_classes; ++c)
        s += spec.weights(c) * coeffs.cls[c].gamma_tilde(0) / std::sqrt(spec.variances(c));
    const double pref = clock.delta * chi_p * std::exp(2.0 * clock.t) * s * s;
    std::vector<double> out(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) {
        double integral = 0.0;
        for (std::size_t j = 1; j < lambda_grid.size(); ++j) {
            const double l0 = lambda_grid[j - 1], l1 = lambda_grid[j];
            const double f0 = rho_omega[j - 1] * (-std::expm1(-4.0 * l0 * taus[i])) / l0;
            const double f1 = rho_omega[j] * (-std::expm1(-4.0 * l1 * taus[i])) / l1;
            integral += 0.5 * (f0 + f1) * (l1 - l0);
        }
        out[i] = 1.0 - pref * integral;
    }
    return out;
}

} // namespace scorelab

#endif // SCORELAB_DYNAMICS_HPP

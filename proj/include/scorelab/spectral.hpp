#ifndef SCORELAB_SPECTRAL_HPP
#define SCORELAB_SPECTRAL_HPP

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scorelab/gep.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/io.hpp"

namespace scorelab {

using cplx = std::complex<double>;

// Scalar (centered-mixture) parameters of the resolvent saddle-point system.
struct SpectralParams {
    double chi_p = 1.0; // P/N
    double chi_m = 1.0; // M/N
    double t = 0.0;
    double delta = 0.0; // Delta_t
    Eigen::VectorXd b, sigma2;
    Eigen::VectorXd beta_tilde, beta, gamma, varsigma, h2; // per class scalars

    int n_classes() const { return static_cast<int>(b.size()); }
    double varsigma_bar() const { return b.dot(varsigma); }
};

inline SpectralParams make_spectral_params(const MixtureSpec& spec, const DiffusionClock& clock,
                                           const GepCoefficients& scalar_coeffs,
                                           double chi_p, double chi_m) {
    if (chi_p <= 0.0 || chi_m <= 0.0)
        throw std::invalid_argument("aspect ratios must be positive");
    SpectralParams p;
    p.chi_p = chi_p;
    p.chi_m = chi_m;
    p.t = clock.t;
    p.delta = clock.delta;
    const int C = spec.n_classes;
    p.b = spec.weights;
    p.sigma2 = spec.variances;
    p.beta_tilde.resize(C);
    p.beta.resize(C);
    p.gamma.resize(C);
    p.varsigma.resize(C);
    p.h2.resize(C);
    for (int c = 0; c < C; ++c) {
        p.beta_tilde(c) = scalar_coeffs.cls[c].beta_tilde(0);
        p.beta(c) = scalar_coeffs.cls[c].beta(0);
        p.gamma(c) = scalar_coeffs.cls[c].gamma(0);
        p.varsigma(c) = scalar_coeffs.cls[c].varsigma(0);
        p.h2(c) = scalar_coeffs.cls[c].h2(0);
    }
    return p;
}

// Residuals of the two coupled saddle-point equations for (g_Psi, g_Omega) at
// spectral parameter z, written with all terms on one side:
//   F1 = (1 - 1/chi_p)/g_Psi + (1/chi_p) g_Omega/g_Psi^2
//        - sum_c b_c (varsigma_c - z) - sum_c b_c h_c^2 / D_c
//   F2 = (1/chi_p)/g_Omega - (Delta/e^{-2t}) sum_c (b_c/sigma_c^2) gamma_c^2
//        - (1/chi_p)/g_Psi - sum_c b_c gamma_c^2 / D_c
// with D_c = 1 + (chi_p/chi_m)(gamma_c^2 g_Omega + h_c^2 g_Psi).
inline std::pair<cplx, cplx> saddle_residuals(cplx g_psi, cplx g_omega, cplx z,
                                              const SpectralParams& p) {
    const double cp = p.chi_p, ratio = p.chi_p / p.chi_m;
    const double e2t = std::exp(-2.0 * p.t);
    cplx f1 = (1.0 - 1.0 / cp) / g_psi + (g_omega / (g_psi * g_psi)) / cp;
    cplx f2 = (1.0 / cp) / g_omega - (1.0 / cp) / g_psi;
    double drift = 0.0;
    for (int c = 0; c < p.n_classes(); ++c) {
        const double g2 = p.gamma(c) * p.gamma(c);
        const cplx D = 1.0 + ratio * (g2 * g_omega + p.h2(c) * g_psi);
        f1 -= p.b(c) * (p.varsigma(c) - z) + p.b(c) * p.h2(c) / D;
        f2 -= p.b(c) * g2 / D;
        drift += p.b(c) / p.sigma2(c) * g2;
    }
    f2 -= (p.delta / e2t) * drift;
    return {f1, f2};
}

// ---------------------------------------------------------------------------
// Damped least-squares (Levenberg-Marquardt) on real residual vectors with a
// forward-difference Jacobian.

struct LmOptions {
    int max_iter = 200;
    double tol = 1e-12;
    double fd_step = 1e-8;
};

struct LmResult {
    Eigen::VectorXd x;
    bool converged = false;
    double residual_norm = 0.0;
    int iterations = 0;
};

inline LmResult lm_solve(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                         Eigen::VectorXd x0, const LmOptions& opt = {},
                         const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jac = {}) {
    const int n = static_cast<int>(x0.size());
    Eigen::VectorXd x = std::move(x0);
    Eigen::VectorXd r = f(x);
    double mu = 1e-3;
    LmResult res;
    // Scale-aware acceptance: near resolvent poles the unknowns are O(1e3+)
    // and a forward-difference Jacobian cannot push the absolute residual to
    // tol, so the threshold grows with the solution magnitude.
    auto accept = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& rr) {
        return rr.norm() <= opt.tol * std::max(1.0, xx.norm());
    };
    for (int it = 0; it < opt.max_iter; ++it) {
        res.iterations = it + 1;
        if (!r.allFinite()) break;
        if (accept(x, r)) {
            res.converged = true;
            break;
        }
        Eigen::MatrixXd J;
        if (jac) {
            J = jac(x);
        } else {
            // Forward-difference Jacobian.
            J.resize(r.size(), n);
            for (int j = 0; j < n; ++j) {
                const double h = opt.fd_step * std::max(1.0, std::abs(x(j)));
                Eigen::VectorXd xp = x;
                xp(j) += h;
                J.col(j) = (f(xp) - r) / h;
            }
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        bool stepped = false;
        // Marquardt scaling: damp relative to diag(J^T J) so badly scaled
        // unknowns (resolvent entries span many orders of magnitude near
        // poles) are handled uniformly.
        const Eigen::VectorXd damp = JtJ.diagonal().cwiseMax(1e-300);
        for (int tries = 0; tries < 25; ++tries) {
            Eigen::MatrixXd Aug = JtJ;
            Aug.diagonal() += mu * damp;
            const Eigen::VectorXd dx = Aug.ldlt().solve(-g);
            const Eigen::VectorXd xn = x + dx;
            const Eigen::VectorXd rn = f(xn);
            if (rn.allFinite() && rn.squaredNorm() < r.squaredNorm()) {
                x = xn;
                r = rn;
                mu = std::max(mu / 3.0, 1e-14);
                stepped = true;
                break;
            }
            mu *= 4.0;
            if (mu > 1e14) break;
        }
        if (!stepped) break;
    }
    res.x = x;
    res.residual_norm = r.norm();
    if (accept(x, r)) res.converged = true;
    return res;
}

// ---------------------------------------------------------------------------
// Grid solve with continuation in the imaginary part.

struct SpectralSolution {
    std::vector<double> lambda;
    std::vector<cplx> g_psi, g_omega;
    std::vector<double> rho, rho_omega;
    std::vector<bool> converged;
    std::vector<std::pair<int, int>> bulks; // index ranges [first, last] of nonzero rho
    std::vector<std::string> diagnostics;
    double delta_weight = 0.0;  // point mass at lambda = varsigma_bar
    double continuous_mass = 0.0;
};

inline std::vector<double> default_eps_schedule(int n_eps = 60) {
    std::vector<double> s = log_spaced(1e-9, 100.0, n_eps);
    std::reverse(s.begin(), s.end());
    s.push_back(0.0);
    return s;
}

// Solve the pair (g_Psi, g_Omega) at a single z by LM on the 4 real components.
inline LmResult solve_point(cplx z, const SpectralParams& p, const Eigen::VectorXd& guess,
                            const LmOptions& opt = {}) {
    auto fun = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        const cplx gp(v(0), v(1)), go(v(2), v(3));
        Eigen::VectorXd r(4);
        if (gp == 0.0 || go == 0.0) {
            r.setConstant(1e30);
            return r;
        }
        auto [f1, f2] = saddle_residuals(gp, go, z, p);
        r << f1.real(), f1.imag(), f2.real(), f2.imag();
        return r;
    };
    // The residuals are holomorphic in (g_Psi, g_Omega); the real 4x4 Jacobian
    // follows from the complex 2x2 one via the Cauchy-Riemann structure.
    auto jac = [&](const Eigen::VectorXd& v) -> Eigen::MatrixXd {
        const cplx gp(v(0), v(1)), go(v(2), v(3));
        const double cp = p.chi_p, ratio = p.chi_p / p.chi_m;
        const cplx gp2 = gp * gp;
        cplx d11 = -(1.0 - 1.0 / cp) / gp2 - 2.0 * go / (cp * gp2 * gp);
        cplx d12 = 1.0 / (cp * gp2);
        cplx d21 = 1.0 / (cp * gp2);
        cplx d22 = -1.0 / (cp * go * go);
        for (int c = 0; c < p.n_classes(); ++c) {
            const double g2 = p.gamma(c) * p.gamma(c), h2 = p.h2(c);
            const cplx D = 1.0 + ratio * (g2 * go + h2 * gp);
            const cplx D2 = D * D;
            d11 += p.b(c) * h2 * ratio * h2 / D2;
            d12 += p.b(c) * h2 * ratio * g2 / D2;
            d21 += p.b(c) * g2 * ratio * h2 / D2;
            d22 += p.b(c) * g2 * ratio * g2 / D2;
        }
        Eigen::MatrixXd J(4, 4);
        auto put = [&](int r0, int c0, cplx d) {
            J(r0, c0) = d.real();
            J(r0, c0 + 1) = -d.imag();
            J(r0 + 1, c0) = d.imag();
            J(r0 + 1, c0 + 1) = d.real();
        };
        put(0, 0, d11);
        put(0, 2, d12);
        put(2, 0, d21);
        put(2, 2, d22);
        return J;
    };
    LmResult res = lm_solve(fun, guess, opt, jac);
    // Newton polish on the complex 2x2 system.  Near resolvent poles the
    // residual is almost flat in Im g, so the LM tolerance leaves an O(1)
    // error there; quadratic Newton steps pin the root to machine precision.
    cplx gp(res.x(0), res.x(1)), go(res.x(2), res.x(3));
    double best = res.residual_norm;
    for (int it = 0; it < 12; ++it) {
        auto [f1, f2] = saddle_residuals(gp, go, z, p);
        const double rn = std::sqrt(std::norm(f1) + std::norm(f2));
        if (rn < best) {
            best = rn;
            res.x << gp.real(), gp.imag(), go.real(), go.imag();
            res.residual_norm = rn;
            res.converged = res.converged || rn <= opt.tol;
        } else if (it > 0) {
            break;
        }
        Eigen::VectorXd v(4);
        v << gp.real(), gp.imag(), go.real(), go.imag();
        const Eigen::MatrixXd J = jac(v);
        const cplx d11(J(0, 0), J(1, 0)), d12(J(0, 2), J(1, 2));
        const cplx d21(J(2, 0), J(3, 0)), d22(J(2, 2), J(3, 2));
        const cplx det = d11 * d22 - d12 * d21;
        if (std::abs(det) < 1e-300 || !std::isfinite(std::abs(det))) break;
        gp -= (d22 * f1 - d12 * f2) / det;
        go -= (-d21 * f1 + d11 * f2) / det;
        if (!std::isfinite(std::abs(gp)) || !std::isfinite(std::abs(go))) break;
    }
    return res;
}

inline SpectralSolution solve_grid(const SpectralParams& p, const std::vector<double>& grid,
                                   const std::vector<double>& eps_schedule,
                                   double rho_floor = 1e-6, const LmOptions& opt = {}) {
    for (std::size_t i = 1; i + 1 < eps_schedule.size(); ++i)
        if (eps_schedule[i] >= eps_schedule[i - 1])
            throw std::invalid_argument("eps schedule must be strictly decreasing");
    SpectralSolution sol;
    const int n = static_cast<int>(grid.size());
    sol.lambda = grid;
    sol.g_psi.resize(n);
    sol.g_omega.resize(n);
    sol.rho.assign(n, 0.0);
    sol.rho_omega.assign(n, 0.0);
    sol.converged.assign(n, false);
    for (int i = 0; i < n; ++i) {
        const double lam = grid[i];
        // Continuation from the free-theory guess at large imaginary part.
        cplx z0(lam, eps_schedule.front());
        cplx g0 = -1.0 / z0;
        Eigen::VectorXd v(4);
        v << g0.real(), g0.imag(), g0.real(), g0.imag();
        bool ok = true;
        LmResult last;
        double im_prev = std::numeric_limits<double>::infinity();
        for (double eps : eps_schedule) {
            const cplx z(lam, eps);
            last = solve_point(z, p, v, opt);
            if (!last.converged) {
                ok = false;
                break;
            }
            // Near a point mass the physical Im g decays linearly in eps; a
            // jump upwards at eps = 0 signals capture by a spurious complex
            // branch.  Re-solving from the real-projected guess stays on the
            // real (zero-density) branch when one exists nearby.
            if (eps == 0.0 && last.x(1) > 2.0 * im_prev + 1e-12) {
                Eigen::VectorXd vr = v;
                vr(1) = 0.0;
                vr(3) = 0.0;
                LmResult real_try = solve_point(z, p, vr, opt);
                if (real_try.converged && std::abs(real_try.x(1)) < im_prev)
                    last = real_try;
            }
            v = last.x;
            im_prev = v(1);
        }
        sol.converged[i] = ok;
        if (!ok) {
            sol.diagnostics.push_back("non-convergence at lambda=" + format_double(lam));
            continue;
        }
        sol.g_psi[i] = cplx(v(0), v(1));
        sol.g_omega[i] = cplx(v(2), v(3));
        double r = v(1) / M_PI, ro = v(3) / M_PI;
        sol.rho[i] = (r >= rho_floor) ? r : 0.0;
        sol.rho_omega[i] = (ro >= rho_floor) ? ro : 0.0;
    }
    // Bulk intervals: maximal runs of nonzero rho, at least 3 grid points wide.
    int start = -1;
    for (int i = 0; i <= n; ++i) {
        const bool on = (i < n) && sol.rho[i] > 0.0;
        if (on && start < 0) start = i;
        if (!on && start >= 0) {
            if (i - start >= 3)
                sol.bulks.emplace_back(start, i - 1);
            else
                sol.diagnostics.push_back("dropped bulk narrower than 3 points at lambda=" +
                                          format_double(grid[start]));
            start = -1;
        }
    }
    // Mass bookkeeping (trapezoid over the continuous part).
    double mass = 0.0;
    for (int i = 1; i < n; ++i)
        mass += 0.5 * (sol.rho[i] + sol.rho[i - 1]) * (grid[i] - grid[i - 1]);
    sol.continuous_mass = mass;
    sol.delta_weight = std::max(0.0, 1.0 - p.chi_m / p.chi_p - 2.0 / p.chi_p);
    return sol;
}

// ---------------------------------------------------------------------------
// Edge equations: three real equations in (g_Psi*, g_Omega*, omega*); the edge
// location follows from the solved triple.

inline Eigen::Vector3d edge_residuals(double gp, double go, double om,
                                      const SpectralParams& p) {
    const double cp = p.chi_p, ratio = p.chi_p / p.chi_m;
    const double e2t = std::exp(-2.0 * p.t);
    double s1 = 0.0, s2 = 0.0, s3 = 0.0, drift = 0.0;
    for (int c = 0; c < p.n_classes(); ++c) {
        const double g2 = p.gamma(c) * p.gamma(c);
        const double D = 1.0 + ratio * (g2 * go + p.h2(c) * gp);
        const double num = p.h2(c) + om * g2;
        s1 += p.b(c) * p.h2(c) * num / (D * D);
        s2 += p.b(c) * g2 * num / (D * D);
        s3 += p.b(c) * g2 / D;
        drift += p.b(c) / p.sigma2(c) * g2;
    }
    Eigen::Vector3d r;
    r(0) = -(1.0 - 1.0 / cp) / (gp * gp) + om / (cp * gp * gp) -
           2.0 * go / (cp * gp * gp * gp) + ratio * s1;
    r(1) = om / (cp * go * go) - 1.0 / (cp * gp * gp) - ratio * s2;
    r(2) = 1.0 / (cp * go) - (p.delta / e2t) * drift - 1.0 / (cp * gp) - s3;
    return r;
}

inline double edge_lambda(double gp, double go, const SpectralParams& p) {
    const double cp = p.chi_p, ratio = p.chi_p / p.chi_m;
    double lam = 0.0;
    for (int c = 0; c < p.n_classes(); ++c) {
        const double g2 = p.gamma(c) * p.gamma(c);
        const double D = 1.0 + ratio * (g2 * go + p.h2(c) * gp);
        lam += p.b(c) * p.varsigma(c) + p.b(c) * p.h2(c) / D;
    }
    lam -= (1.0 - 1.0 / cp) / gp + go / (cp * gp * gp);
    return lam;
}

struct EdgeRoot {
    double lambda = 0.0;
    double g_psi = 0.0, g_omega = 0.0, omega = 0.0;
    bool converged = false;
};

struct EdgeSummary {
    std::optional<double> lambda_gen, lambda_mem1, lambda_mem2;
    std::optional<double> tau_gen, tau_mem1, tau_mem2;
    std::optional<double> w_g, w_m;
    std::vector<EdgeRoot> roots;
    bool merged = false; // fewer than three resolvable bulks
    std::vector<std::string> diagnostics;
};

// Solve the edge system from every bulk boundary of a grid solution and
// classify the results into the generalization/memorization timescales.
inline EdgeSummary solve_edges(const SpectralParams& p, const SpectralSolution& sol,
                               const LmOptions& opt = {}) {
    EdgeSummary out;
    struct Boundary {
        int grid_index;
        bool lower; // lower edge of its bulk
        int bulk;
    };
    std::vector<Boundary> boundaries;
    for (std::size_t b = 0; b < sol.bulks.size(); ++b) {
        boundaries.push_back({sol.bulks[b].first, true, static_cast<int>(b)});
        boundaries.push_back({sol.bulks[b].second, false, static_cast<int>(b)});
    }
    std::vector<std::optional<double>> edge_of(boundaries.size());
    for (std::size_t k = 0; k < boundaries.size(); ++k) {
        const auto& bd = boundaries[k];
        // Initial guess from the solved resolvent just inside the bulk.
        int i = bd.grid_index;
        const double gp0 = sol.g_psi[i].real();
        const double go0 = sol.g_omega[i].real();
        const double om0 = (std::abs(sol.g_psi[i].imag()) > 1e-14)
                               ? sol.g_omega[i].imag() / sol.g_psi[i].imag()
                               : 1.0;
        auto fun = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            if (v(0) == 0.0 || v(1) == 0.0) return Eigen::Vector3d::Constant(1e30);
            return edge_residuals(v(0), v(1), v(2), p);
        };
        Eigen::VectorXd v0(3);
        v0 << gp0, go0, om0;
        LmResult r = lm_solve(fun, v0, opt);
        EdgeRoot root;
        root.converged = r.converged;
        root.g_psi = r.x(0);
        root.g_omega = r.x(1);
        root.omega = r.x(2);
        if (r.converged) {
            root.lambda = edge_lambda(r.x(0), r.x(1), p);
            edge_of[k] = root.lambda;
        } else {
            out.diagnostics.push_back("edge solve failed near lambda=" +
                                      format_double(sol.lambda[bd.grid_index]));
        }
        out.roots.push_back(root);
    }
    // Classification per the timescale definitions: lambda_gen = lower edge of
    // the rightmost bulk, lambda_mem1 = upper edge of the central bulk,
    // lambda_mem2 = lower edge of the leftmost bulk.
    const int nb = static_cast<int>(sol.bulks.size());
    auto find_edge = [&](int bulk, bool lower) -> std::optional<double> {
        for (std::size_t k = 0; k < boundaries.size(); ++k)
            if (boundaries[k].bulk == bulk && boundaries[k].lower == lower && edge_of[k])
                return edge_of[k];
        // Fall back to the grid boundary if the refinement failed.
        for (std::size_t k = 0; k < boundaries.size(); ++k)
            if (boundaries[k].bulk == bulk && boundaries[k].lower == lower)
                return sol.lambda[boundaries[k].grid_index];
        return std::nullopt;
    };
    if (nb >= 1) out.lambda_gen = find_edge(nb - 1, true);
    if (nb >= 3) {
        out.lambda_mem1 = find_edge(1, false);
        out.lambda_mem2 = find_edge(0, true);
    } else {
        out.merged = true;
        if (nb == 2) {
            out.lambda_mem1 = find_edge(0, false);
            out.lambda_mem2 = find_edge(0, true);
            out.diagnostics.push_back("only two bulks resolved; central/left merged");
        }
    }
    auto tau = [](std::optional<double> l) -> std::optional<double> {
        if (l && *l > 0.0) return 1.0 / (2.0 * *l);
        return std::nullopt;
    };
    out.tau_gen = tau(out.lambda_gen);
    out.tau_mem1 = tau(out.lambda_mem1);
    out.tau_mem2 = tau(out.lambda_mem2);
    if (out.tau_gen && out.tau_mem1) out.w_g = *out.tau_mem1 / *out.tau_gen;
    if (out.tau_mem1 && out.tau_mem2) out.w_m = *out.tau_mem2 / *out.tau_mem1;
    return out;
}

inline void write_solution_csv(const SpectralSolution& sol, const std::string& path) {
    CsvWriter w(path, {"lambda", "re_g_psi", "im_g_psi", "re_g_omega", "im_g_omega",
                       "rho", "rho_omega", "converged"});
    for (std::size_t i = 0; i < sol.lambda.size(); ++i)
        w.row({format_double(sol.lambda[i]), format_double(sol.g_psi[i].real()),
               format_double(sol.g_psi[i].imag()), format_double(sol.g_omega[i].real()),
               format_double(sol.g_omega[i].imag()), format_double(sol.rho[i]),
               format_double(sol.rho_omega[i]), sol.converged[i] ? "1" : "0"});
}

} // namespace scorelab

#endif // SCORELAB_SPECTRAL_HPP

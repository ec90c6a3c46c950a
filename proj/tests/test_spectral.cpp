#include <doctest.h>

#include <cmath>
#include <complex>

#include "scorelab/covariance.hpp"
#include "scorelab/spectral.hpp"

using namespace scorelab;

namespace {

// Closed-form Marchenko-Pastur Stieltjes transform for C = (s2/n) X X^T with
// X p-by-n standard Gaussian, q = p/n: the root with Im m > 0 of
//   q s2 z m^2 + (z - s2 (1 - q)) m + 1 = 0.
cplx mp_stieltjes(cplx z, double q, double s2) {
    const cplx a = q * s2 * z;
    const cplx b = z - s2 * (1.0 - q);
    const cplx disc = std::sqrt(b * b - 4.0 * a);
    cplx m = (-b + disc) / (2.0 * a);
    if (m.imag() < 0.0) m = (-b - disc) / (2.0 * a);
    return m;
}

double mp_density(double lam, double q, double s2) {
    const double lo = s2 * std::pow(1.0 - std::sqrt(q), 2);
    const double hi = s2 * std::pow(1.0 + std::sqrt(q), 2);
    if (lam <= lo || lam >= hi) return 0.0;
    return std::sqrt((hi - lam) * (lam - lo)) / (2.0 * M_PI * q * s2 * lam);
}

// Identity-activation single-class parameters; chi_m huge makes the sampling
// term vanish so the feature covariance is exactly Gamma^2 W W^T / N.
SpectralParams identity_params(double chi_p, double chi_m, double sigma2, double t) {
    auto spec = make_centered_spec(100, {1.0}, {sigma2});
    auto clock = make_clock(spec, t);
    auto co = coeffs_scalar(spec, clock, Activation{ActivationKind::Identity},
                            default_rule());
    return make_spectral_params(spec, clock, co, chi_p, chi_m);
}

} // namespace

TEST_CASE("free-theory guess cancels the leading large-z terms") {
    auto p = identity_params(2.0, 5.0, 0.5, 0.3);
    for (double ang : {0.3, 1.2, 2.0}) {
        const cplx z = 1e4 * cplx(std::cos(ang), std::sin(ang));
        auto [f1, f2] = saddle_residuals(-1.0 / z, -1.0 / z, z, p);
        // Individual terms are O(|z|); the combination must stay O(1).
        CHECK(std::abs(f1) < 10.0);
        CHECK(std::abs(f2) < 10.0);
    }
}

TEST_CASE("lm_solve on a quadratic toy") {
    auto f = [](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        Eigen::VectorXd r(2);
        r << v(0) * v(0) + v(1) - 3.0, v(0) - v(1);
        return r;
    };
    Eigen::VectorXd x0(2);
    x0 << 5.0, -2.0;
    auto res = lm_solve(f, x0);
    CHECK(res.converged);
    // Root of x^2 + x - 3 with x = y.
    const double root = (-1.0 + std::sqrt(13.0)) / 2.0;
    CHECK(res.x(0) == doctest::Approx(root).epsilon(1e-9));
    CHECK(res.x(1) == doctest::Approx(root).epsilon(1e-9));
}

TEST_CASE("Marchenko-Pastur oracle annihilates the residuals (identity, chi_m -> inf)") {
    const double chi_p = 2.0, sigma2 = 0.5, t = 0.3;
    auto p = identity_params(chi_p, 1e9, sigma2, t);
    const double G2 = sigma2 * std::exp(-2.0 * t) + p.delta; // Gamma^2
    const double lo = G2 * std::pow(1.0 - std::sqrt(chi_p), 2);
    const double hi = G2 * std::pow(1.0 + std::sqrt(chi_p), 2);
    for (double f : {0.15, 0.4, 0.6, 0.85}) {
        const cplx z(lo + f * (hi - lo), 1e-3);
        const cplx m = mp_stieltjes(z, chi_p, G2);
        const cplx go = m / (1.0 + chi_p * G2 * m);
        auto [f1, f2] = saddle_residuals(m, go, z, p);
        CHECK(std::abs(f1) < 1e-6);
        CHECK(std::abs(f2) < 1e-6);
    }
}

TEST_CASE("pure-noise reduction is Marchenko-Pastur in chi_p/chi_m") {
    SpectralParams p;
    p.chi_p = 3.0;
    p.chi_m = 10.0;
    p.t = 0.5;
    p.delta = -std::expm1(-2.0 * p.t);
    p.b = Eigen::VectorXd::Ones(1);
    p.sigma2 = Eigen::VectorXd::Ones(1);
    p.beta_tilde = Eigen::VectorXd::Ones(1);
    p.beta = Eigen::VectorXd::Zero(1);
    p.gamma = Eigen::VectorXd::Zero(1);
    p.varsigma = Eigen::VectorXd::Zero(1);
    p.h2 = Eigen::VectorXd::Ones(1);
    const double q = p.chi_p / p.chi_m;
    const double lo = std::pow(1.0 - std::sqrt(q), 2);
    const double hi = std::pow(1.0 + std::sqrt(q), 2);
    for (double f : {0.2, 0.5, 0.8}) {
        const cplx z(lo + f * (hi - lo), 1e-6);
        const cplx m = mp_stieltjes(z, q, 1.0);
        auto [f1, f2] = saddle_residuals(m, m, z, p);
        CHECK(std::abs(f1) < 1e-9);
        CHECK(std::abs(f2) < 1e-9);
    }
}

TEST_CASE("solve_grid reproduces the Marchenko-Pastur density") {
    const double chi_p = 2.0, sigma2 = 0.5, t = 0.3;
    auto p = identity_params(chi_p, 1e9, sigma2, t);
    const double G2 = sigma2 * std::exp(-2.0 * t) + p.delta;
    const double lo = G2 * std::pow(1.0 - std::sqrt(chi_p), 2);
    const double hi = G2 * std::pow(1.0 + std::sqrt(chi_p), 2);
    auto grid = log_spaced(0.5 * lo, 1.3 * hi, 160);
    auto sol = solve_grid(p, grid, default_eps_schedule());
    int n_checked = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(sol.converged[i]);
        // Herglotz: nonnegative spectral densities everywhere.
        CHECK(sol.rho[i] >= 0.0);
        CHECK(sol.rho_omega[i] >= 0.0);
        const double lam = grid[i];
        if (lam > lo + 0.05 * (hi - lo) && lam < hi - 0.05 * (hi - lo)) {
            CHECK(sol.rho[i] == doctest::Approx(mp_density(lam, chi_p, G2)).epsilon(1e-4));
            ++n_checked;
        }
        if (lam < 0.9 * lo || lam > 1.1 * hi) CHECK(sol.rho[i] == 0.0);
    }
    CHECK(n_checked > 50);
    REQUIRE(sol.bulks.size() == 1);
    // Continuous mass: rank N out of P modes -> 1/chi_p (the rest is a point
    // mass at zero, outside this grid).
    CHECK(sol.continuous_mass == doctest::Approx(1.0 / chi_p).epsilon(0.02));

    // Solved points satisfy the equations to the solver tolerance.
    for (std::size_t i = 0; i < grid.size(); i += 37) {
        auto [f1, f2] =
            saddle_residuals(sol.g_psi[i], sol.g_omega[i], cplx(grid[i], 0.0), p);
        CHECK(std::sqrt(std::norm(f1) + std::norm(f2)) < 1e-10);
    }

    // Determinism: identical inputs give bitwise identical output.
    auto sol2 = solve_grid(p, grid, default_eps_schedule());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(sol.rho[i] == sol2.rho[i]);
        CHECK(sol.g_psi[i] == sol2.g_psi[i]);
    }
}

TEST_CASE("edge refinement matches the Marchenko-Pastur edges") {
    const double chi_p = 2.0, sigma2 = 0.5, t = 0.3;
    auto p = identity_params(chi_p, 1e9, sigma2, t);
    const double G2 = sigma2 * std::exp(-2.0 * t) + p.delta;
    const double lo = G2 * std::pow(1.0 - std::sqrt(chi_p), 2);
    const double hi = G2 * std::pow(1.0 + std::sqrt(chi_p), 2);
    auto grid = log_spaced(0.5 * lo, 1.3 * hi, 160);
    auto sol = solve_grid(p, grid, default_eps_schedule());
    auto edges = solve_edges(p, sol);
    REQUIRE(edges.roots.size() == 2);
    CHECK(edges.merged); // a single bulk cannot resolve three timescales
    REQUIRE(edges.lambda_gen.has_value());
    CHECK(*edges.lambda_gen == doctest::Approx(lo).epsilon(1e-3));
    double upper = -1.0;
    for (const auto& r : edges.roots)
        if (r.converged) upper = std::max(upper, r.lambda);
    CHECK(upper == doctest::Approx(hi).epsilon(1e-3));
    // Refined edges sit within one grid step of the on-grid bulk boundaries.
    const double step = grid[1] / grid[0];
    CHECK(*edges.lambda_gen >= grid[sol.bulks[0].first] / (step * step));
    CHECK(*edges.lambda_gen <= grid[sol.bulks[0].first] * step);
    REQUIRE(edges.tau_gen.has_value());
    CHECK(*edges.tau_gen == doctest::Approx(1.0 / (2.0 * lo)).epsilon(1e-3));
}

TEST_CASE("three-bulk tanh configuration: mass split and timescale ordering") {
    auto spec = make_centered_spec(100, {0.5, 0.5}, {0.5, 0.25});
    auto clock = make_clock(spec, 0.001);
    auto co = coeffs_scalar(spec, clock, Activation{ActivationKind::Tanh}, default_rule());
    auto p = make_spectral_params(spec, clock, co, 60.0, 30.0);
    auto grid = log_spaced(1e-6, 60.0, 260);
    auto sol = solve_grid(p, grid, default_eps_schedule());
    int n_conv = 0;
    for (bool c : sol.converged) n_conv += c;
    CHECK(n_conv == static_cast<int>(grid.size()));
    REQUIRE(sol.bulks.size() >= 3);
    // Point mass at varsigma_bar carries 1 - chi_m/chi_p - 2/chi_p.
    CHECK(sol.delta_weight == doctest::Approx(1.0 - 30.0 / 60.0 - 2.0 / 60.0));
    // Continuous part carries the remaining (chi_m + 2)/chi_p.
    CHECK(sol.continuous_mass == doctest::Approx((30.0 + 2.0) / 60.0).epsilon(0.05));
    auto edges = solve_edges(p, sol);
    REQUIRE(edges.lambda_gen.has_value());
    REQUIRE(edges.lambda_mem1.has_value());
    REQUIRE(edges.lambda_mem2.has_value());
    CHECK(*edges.lambda_mem2 < *edges.lambda_mem1);
    CHECK(*edges.lambda_mem1 < *edges.lambda_gen);
    REQUIRE(edges.w_g.has_value());
    REQUIRE(edges.w_m.has_value());
    CHECK(*edges.w_g > 1.0);
    CHECK(*edges.w_m > 1.0);
}

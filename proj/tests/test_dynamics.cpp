#include <doctest.h>

#include <cmath>

#include "scorelab/dynamics.hpp"

using namespace scorelab;

namespace {

struct SmallSetup {
    MixtureSpec spec;
    Eigen::MatrixXd centroids;
    Dataset ds;
    RFModel model;
    DiffusionClock clock;
    GepCoefficients co;
    FeatureCovariance Ue;
    NoiseCovariance Ve;
};

SmallSetup make_setup(int N = 30, int P = 50, int M = 120, double t = 0.05,
                      std::uint64_t seed = 5) {
    SmallSetup s{make_centered_spec(N, {0.5, 0.5}, {0.5, 0.25}),
                 Eigen::MatrixXd::Zero(2, N),
                 {},
                 {},
                 {},
                 {},
                 {},
                 {}};
    s.ds = sample_dataset(s.spec, s.centroids, M, child_seed(seed, 0, "data"));
    s.model = make_rf_model(P, N, Activation{ActivationKind::Tanh},
                            child_seed(seed, 0, "w"));
    s.clock = make_clock(s.spec, t);
    s.co = coeffs_vector(s.model.W, s.spec, s.centroids, s.clock, s.model.act,
                         default_rule());
    s.Ue = empirical_U(s.ds, s.model.W, s.clock, s.model.act, s.spec.weights, 40,
                       child_seed(seed, 0, "noise"));
    s.Ve = empirical_V(s.ds, s.model.W, s.clock, s.model.act, s.spec.weights, 40,
                       child_seed(seed, 0, "noise"));
    return s;
}

} // namespace

TEST_CASE("closed_form_readout limits") {
    auto s = make_setup();
    auto eig = eigh(s.Ue.U);
    CHECK(closed_form_readout(eig, s.Ve.V, s.clock, 0.0).norm() == doctest::Approx(0.0));

    // tau -> infinity gives the pseudo-inverse solution on the nonzero spectrum.
    auto A_inf = closed_form_readout(eig, s.Ve.V, s.clock, 1e9);
    Eigen::MatrixXd pinv_part = Eigen::MatrixXd::Zero(s.Ue.U.rows(), s.Ue.U.rows());
    const double lmax = eig.values.maxCoeff();
    for (int q = 0; q < eig.values.size(); ++q)
        if (eig.values(q) > 1e-12 * lmax)
            pinv_part += eig.vectors.col(q) * eig.vectors.col(q).transpose() / eig.values(q);
    Eigen::MatrixXd expected =
        -(1.0 / std::sqrt(s.clock.delta)) * s.Ve.V.transpose() * pinv_part;
    CHECK((A_inf - expected).norm() / expected.norm() < 1e-9);
}

TEST_CASE("analytic gradient matches finite differences of the trace loss") {
    auto s = make_setup(20, 30, 80);
    auto rng = make_rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd A(s.spec.dim, s.Ue.U.rows());
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) A(i, j) = 0.3 * gauss(rng);
    auto G = loss_gradient(A, s.Ue.U, s.Ve.V, s.clock, s.spec.dim);
    for (int rep = 0; rep < 5; ++rep) {
        Eigen::MatrixXd D(A.rows(), A.cols());
        for (int i = 0; i < D.rows(); ++i)
            for (int j = 0; j < D.cols(); ++j) D(i, j) = gauss(rng);
        D /= D.norm();
        const double h = 1e-6;
        const double fd = (loss_trace(A + h * D, s.Ue.U, s.Ve.V, s.clock, s.spec.dim) -
                           loss_trace(A - h * D, s.Ue.U, s.Ve.V, s.clock, s.spec.dim)) /
                          (2.0 * h);
        const double an = G.cwiseProduct(D).sum();
        CHECK(fd == doctest::Approx(an).epsilon(1e-5));
    }
}

TEST_CASE("explicit GD equals the spectral GD recurrence") {
    auto s = make_setup(20, 35, 90);
    const double eta = 5e-5 * s.spec.dim / s.clock.delta;
    std::vector<long> steps = {1, 10, 100, 500};
    auto gd = train_gd(s.Ue.U, s.Ve.V, s.clock, s.spec.dim, eta, steps);
    REQUIRE(!gd.diverged);
    auto eig = eigh(s.Ue.U);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        auto A_spec = readout_from_weights(
            eig, s.Ve.V, s.clock,
            gd_weights(eig.values, steps[i], eta, s.clock, s.spec.dim));
        CHECK((gd.snapshots[i] - A_spec).norm() /
                  std::max(1e-12, A_spec.norm()) < 1e-10);
    }
}

TEST_CASE("GD approaches closed-form gradient flow for small steps") {
    auto s = make_setup(25, 40, 100, 0.05, 7);
    const double eta = 5e-6 * s.spec.dim / s.clock.delta;
    const double eta_tilde = eta * s.clock.delta / s.spec.dim;
    std::vector<long> steps = {2000};
    auto gd = train_gd(s.Ue.U, s.Ve.V, s.clock, s.spec.dim, eta, steps);
    auto eig = eigh(s.Ue.U);
    auto A_flow = closed_form_readout(eig, s.Ve.V, s.clock, steps[0] * eta_tilde);
    CHECK((gd.snapshots[0] - A_flow).norm() / A_flow.norm() < 1e-3);
}

TEST_CASE("divergence detector") {
    auto s = make_setup(15, 25, 60);
    const double lmax = eigh(s.Ue.U, false).values.maxCoeff();
    // Step far above the stability bound 1/(eta_tilde lambda_max).
    const double eta = 10.0 * s.spec.dim / (s.clock.delta * lmax);
    auto gd = train_gd(s.Ue.U, s.Ve.V, s.clock, s.spec.dim, eta, {200000});
    CHECK(gd.diverged);
}

TEST_CASE("loss_mc normalization and consistency") {
    auto s = make_setup(25, 40, 100);
    Eigen::MatrixXd A0 = Eigen::MatrixXd::Zero(s.spec.dim, s.Ue.U.rows());
    auto rng = make_rng(23);
    // At A = 0 the loss is the mean of xi^2, so 1 up to Monte Carlo error.
    CHECK(loss_mc(A0, s.model.W, s.clock, s.model.act, s.ds.X, 50, rng) ==
          doctest::Approx(1.0).epsilon(0.02));

    // Monte Carlo loss converges to the trace loss with the same-data
    // empirical covariances as the noise draws grow.
    auto eig = eigh(s.Ue.U);
    auto A = closed_form_readout(eig, s.Ve.V, s.clock, 0.5);
    const double tr = loss_trace(A, s.Ue.U, s.Ve.V, s.clock, s.spec.dim);
    // Unweighted MC average corresponds to equal per-sample weighting; the
    // setup's classes are balanced so the class-weighted trace matches.
    const double mc = loss_mc(A, s.model.W, s.clock, s.model.act, s.ds.X, 600, rng);
    CHECK(mc == doctest::Approx(tr).epsilon(0.02));
}

TEST_CASE("score_mse_mc at A=0 for a single centered class") {
    const int N = 40, P = 20;
    auto spec = make_centered_spec(N, {1.0}, {0.5});
    auto centroids = Eigen::MatrixXd::Zero(1, N);
    auto model = make_rf_model(P, N, Activation{ActivationKind::Tanh}, 31);
    auto clock = make_clock(spec, 0.3);
    auto rng = make_rng(33);
    Eigen::MatrixXd A0 = Eigen::MatrixXd::Zero(N, P);
    const double mse =
        score_mse_mc(A0, model.W, clock, model.act, spec, centroids, 0, 4000, rng);
    CHECK(mse == doctest::Approx(1.0 / clock.gamma2(0)).epsilon(0.05));
}

TEST_CASE("semi-analytic curves: normalization, decomposition, score identity") {
    auto s = make_setup(30, 60, 150, 0.05, 11);
    auto Ug = gep_U(s.ds, s.model.W, s.spec, s.centroids, s.clock, s.co, 41);
    auto Vg = gep_V(s.model.W, s.spec, s.clock, s.co);
    auto eig = eigh(Ug.U);
    std::vector<Eigen::MatrixXd> Upc, Vpc;
    for (int c = 0; c < 2; ++c) {
        Upc.push_back(population_U_class(s.model.W, s.co, c, s.spec.dim));
        Vpc.push_back(gep_V_class(s.model.W, s.clock, s.co, c, s.spec.dim));
    }
    SemiAnalyticInputs in{&eig, &Vg.V, &Upc, &Vpc};
    auto taus = log_spaced(1e-4, 1e3, 80);
    // Prepend tau = 0 via a tiny value check instead: evaluate exactly at 0.
    auto curves = semi_analytic_curves(in, s.spec, s.clock, taus);
    // tau -> 0 limit: evaluate on a grid starting essentially at zero.
    Eigen::VectorXd c0 = flow_weights(eig.values, 0.0);
    CHECK(c0.norm() == doctest::Approx(0.0));
    CurveEngine engine(eig, Vg.V, s.spec.dim);
    CHECK(engine.eval(engine.train_target(), c0) == doctest::Approx(1.0));
    for (int c = 0; c < 2; ++c)
        CHECK(engine.eval(engine.target(Upc[c], Vpc[c]), c0) == doctest::Approx(1.0));
    for (std::size_t i = 0; i < taus.size(); ++i) {
        // Mixture decomposition.
        double mix = 0.0;
        for (int c = 0; c < 2; ++c) mix += s.spec.weights(c) * curves.e_test_c[c][i];
        CHECK(curves.e_test[i] == doctest::Approx(mix).epsilon(1e-10));
        // Score identity by construction.
        for (int c = 0; c < 2; ++c) {
            const double rel = 1.0 / s.clock.gamma2(c) +
                               (curves.e_test_c[c][i] - 1.0) / s.clock.delta;
            CHECK(std::abs(curves.e_score_c[c][i] - rel) < 1e-8);
        }
    }
    // Gradient-flow train error is monotone decreasing.
    for (std::size_t i = 1; i < taus.size(); ++i)
        CHECK(curves.e_train[i] <= curves.e_train[i - 1] + 1e-12);
}

TEST_CASE("extract_times on synthetic curves") {
    auto taus = log_spaced(1e-3, 1e3, 200);
    // Strictly decreasing curve: argmin at the last grid point, no crossing.
    std::vector<double> dec(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) dec[i] = 2.0 - 1e-3 * i;
    auto td = extract_times(taus, dec, 0.0);
    CHECK(td.tau_g == doctest::Approx(taus.back()));
    CHECK(!td.tau_m.has_value());
    CHECK(td.flagged);

    // V-shape in log tau with known vertex and crossing.
    const double lv = std::log(1.7);
    std::vector<double> vshape(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const double l = std::log(taus[i]);
        vshape[i] = 0.5 + 0.2 * (l - lv) * (l - lv);
    }
    auto tv = extract_times(taus, vshape, 0.0);
    CHECK(std::abs(std::log(tv.tau_g) - lv) < std::log(taus[1] / taus[0]));
    REQUIRE(tv.tau_m.has_value());
    // Crossing of 1: 0.2 (l - lv)^2 = 0.5 -> l = lv + sqrt(2.5).
    CHECK(std::log(*tv.tau_m) ==
          doctest::Approx(lv + std::sqrt(2.5)).epsilon(0.01));

    CHECK_THROWS(extract_times(taus, std::vector<double>(taus.size(),
                                                         std::nan(""))));
}

TEST_CASE("analytic_train_error basics") {
    // Degenerate density concentrated at lambda0: integral reduces to
    // (1 - e^{-4 lambda0 tau})/lambda0 * mass.
    auto spec = make_centered_spec(100, {1.0}, {0.5});
    auto clock = make_clock(spec, 0.01);
    auto co = coeffs_scalar(spec, clock, Activation{ActivationKind::Tanh}, default_rule());
    std::vector<double> grid = log_spaced(0.9, 1.1, 400);
    std::vector<double> rho(grid.size(), 0.0);
    // Narrow box density around lambda = 1.
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid[i] > 0.95 && grid[i] < 1.05) rho[i] = 1.0;
    double mass = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i)
        mass += 0.5 * (rho[i] + rho[i - 1]) * (grid[i] - grid[i - 1]);
    std::vector<double> taus = {0.0, 0.5, 2.0};
    auto e = analytic_train_error(grid, rho, co, spec, clock, 20.0, taus);
    CHECK(e[0] == doctest::Approx(1.0));
    const double pref = clock.delta * 20.0 * std::exp(2.0 * clock.t) *
                        std::pow(co.cls[0].gamma_tilde(0) / std::sqrt(0.5), 2);
    for (std::size_t i = 1; i < taus.size(); ++i) {
        const double expected =
            1.0 - pref * mass * (-std::expm1(-4.0 * taus[i]));
        CHECK(e[i] == doctest::Approx(expected).epsilon(0.01));
    }
}

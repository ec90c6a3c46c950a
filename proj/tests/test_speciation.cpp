#include <doctest.h>

#include <cmath>

#include "scorelab/speciation.hpp"

using namespace scorelab;

TEST_CASE("squared_overlaps: rank-one alignment and random floor") {
    const int P = 300;
    auto rng = make_rng(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd mu(P);
    for (int i = 0; i < P; ++i) mu(i) = gauss(rng);
    Eigen::MatrixXd U = mu * mu.transpose() + Eigen::MatrixXd::Identity(P, P);
    Eigen::MatrixXd Mu(1, P);
    Mu.row(0) = mu.transpose();
    auto ov = squared_overlaps(U, Mu, 1);
    CHECK(ov.sq_overlap(0) == doctest::Approx(1.0).epsilon(1e-10));

    // Unrelated random direction: squared overlap with a k-dim subspace
    // concentrates around k/P.
    double acc = 0.0;
    const int reps = 40;
    for (int r = 0; r < reps; ++r) {
        Eigen::MatrixXd R(1, P);
        for (int i = 0; i < P; ++i) R(0, i) = gauss(rng);
        acc += squared_overlaps(U, R, 2).sq_overlap(0);
    }
    CHECK(acc / reps == doctest::Approx(2.0 / P).epsilon(0.5));

    // Permuting the centroid rows permutes the overlaps.
    Eigen::MatrixXd Mu2(2, P);
    Mu2.row(0) = mu.transpose();
    for (int i = 0; i < P; ++i) Mu2(1, i) = gauss(rng);
    auto a = squared_overlaps(U, Mu2, 1);
    Eigen::MatrixXd Mu2p = Mu2.colwise().reverse();
    auto b = squared_overlaps(U, Mu2p, 1);
    CHECK(a.sq_overlap(0) == doctest::Approx(b.sq_overlap(1)).epsilon(1e-12));
    CHECK(a.sq_overlap(1) == doctest::Approx(b.sq_overlap(0)).epsilon(1e-12));

    // Degenerate top subspace is flagged.
    auto deg = squared_overlaps(Eigen::MatrixXd::Identity(40, 40), Mu.leftCols(40), 2);
    CHECK(deg.degenerate);
    CHECK_THROWS(squared_overlaps(U, Mu, 0));
}

TEST_CASE("predict_speciation") {
    auto p = predict_speciation({0.0, 0.5, 1.0});
    CHECK(p[0] == doctest::Approx(0.5));   // weak limit
    CHECK(p[1] == doctest::Approx(0.25));  // strong a = 1/2
    CHECK(p[2] == doctest::Approx(0.0));   // O(1) samples: no escape
    CHECK_THROWS(predict_speciation({1.5}));
}

TEST_CASE("rms_crossing on synthetic curves") {
    std::vector<double> t = {0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> rms = {1.0, 0.9, 0.6, 0.2, 0.05};
    auto c = rms_crossing(t, rms);
    REQUIRE(c.has_value());
    // Between 0.3 (0.6) and 0.4 (0.2): linear crossing of 0.5 at 0.325.
    CHECK(*c == doctest::Approx(0.325).epsilon(1e-12));
    auto none = rms_crossing(t, {0.4, 0.3, 0.2, 0.1, 0.05});
    CHECK(!none.has_value());
    // Curve above threshold everywhere: crossing at the top of the grid.
    auto top = rms_crossing(t, {1.0, 0.9, 0.9, 0.8, 0.7});
    REQUIRE(top.has_value());
    CHECK(*top == doctest::Approx(0.5));
}

TEST_CASE("speciation_run end to end at small size") {
    SpeciationConfig cfg;
    cfg.n = 200;
    cfg.p = 300;
    cfg.m = 500;
    cfg.t_tilde = {0.2, 0.85};
    cfg.weights = Eigen::Vector2d(0.7, 0.3);
    cfg.variances = Eigen::Vector2d(0.5, 0.5);
    cfg.n_runs = 2;
    cfg.seed = 99;
    auto curve = speciation_run(cfg);
    CHECK(curve.t_tilde_pred[0] == doctest::Approx(0.5));
    CHECK(curve.t_tilde_pred[1] == doctest::Approx(0.5));
    for (int c = 0; c < 2; ++c) {
        for (double v : curve.rms_mean[c]) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0 + 1e-12);
        }
        // Well below the crossing the centroids dominate the top subspace;
        // well above it only the random-overlap floor remains.
        CHECK(curve.rms_mean[c][0] > 0.8);
        CHECK(curve.rms_mean[c][1] < 0.3);
    }

    // Strong imbalance weights wiring.
    SpeciationConfig scfg = cfg;
    scfg.a = 0.5;
    auto sc = speciation_run(scfg);
    CHECK(sc.weights(1) == doctest::Approx(std::pow(200.0, -0.5)));
    CHECK(sc.t_tilde_pred[1] == doctest::Approx(0.25));

    // Large-time closed form gives the same qualitative picture above the
    // crossing (it is exact only for large t, which t_tilde=0.85 provides).
    SpeciationConfig lcfg = cfg;
    lcfg.use_largetime = true;
    lcfg.t_tilde = {0.85};
    auto lt = speciation_run(lcfg);
    CHECK(lt.rms_mean[0][0] < 0.3);
}

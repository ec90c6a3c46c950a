#ifndef SCORELAB_COVARIANCE_HPP
#define SCORELAB_COVARIANCE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "scorelab/activation.hpp"
#include "scorelab/gep.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

enum class Provenance : std::int32_t { Empirical = 0, Gep = 1, Population = 2, LargeTime = 3 };

struct FeatureCovariance {
    Eigen::MatrixXd U; // P x P, symmetric
    Provenance tag = Provenance::Empirical;
    double t = 0.0;
    std::vector<std::string> warnings;
};

struct NoiseCovariance {
    Eigen::MatrixXd V; // P x N
    Provenance tag = Provenance::Empirical;
    double t = 0.0;
};

inline const QuadratureRule& default_rule() {
    static const QuadratureRule rule = make_rule(80);
    return rule;
}

// Feature map Phi = phi(Xn W^T / sqrt(N)) for a batch of rows Xn.
inline Eigen::MatrixXd feature_map(const Eigen::MatrixXd& Xn, const Eigen::MatrixXd& W,
                                   const Activation& act) {
    Eigen::MatrixXd Z = Xn * W.transpose() / std::sqrt(static_cast<double>(Xn.cols()));
    if (act.kind == ActivationKind::Tanh) Z = Z.array().tanh();
    return Z;
}

// Empirical U: Monte Carlo over the forward noise of the class-weighted
// average sum_c b_c U_c, U_c = (1/M_c) sum_{nu in c} E_xi[phi phi^T].
inline FeatureCovariance empirical_U(const Dataset& ds, const Eigen::MatrixXd& W,
                                     const DiffusionClock& clock, const Activation& act,
                                     const Eigen::VectorXd& class_weights,
                                     int n_noise_draws, std::uint64_t seed) {
    if (n_noise_draws < 1) throw std::invalid_argument("n_noise_draws must be >= 1");
    const int M = ds.size(), N = static_cast<int>(ds.X.cols());
    const int P = static_cast<int>(W.rows());
    FeatureCovariance out;
    out.tag = Provenance::Empirical;
    out.t = clock.t;
    // Row weight sqrt(b_c / (M_c * draws)) folds the whole class-weighted
    // average into a single rank-M update per draw.
    Eigen::VectorXd row_w(M);
    for (int i = 0; i < M; ++i) {
        const int c = ds.labels[i];
        row_w(i) = std::sqrt(class_weights(c) /
                             (static_cast<double>(ds.class_counts[c]) * n_noise_draws));
    }
    for (std::size_t c = 0; c < ds.class_counts.size(); ++c)
        if (ds.class_counts[c] == 0 && class_weights(static_cast<int>(c)) > 0.0)
            out.warnings.push_back("class " + std::to_string(c) +
                                   " empty; contributes zero to empirical_U");
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sq_delta = std::sqrt(clock.delta);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(P, P);
    Eigen::MatrixXd Xn(M, N);
    for (int d = 0; d < n_noise_draws; ++d) {
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j)
                Xn(i, j) = ds.X(i, j) * clock.exp_mt + sq_delta * gauss(rng);
        Eigen::MatrixXd Phi = feature_map(Xn, W, act);
        Phi.array().colwise() *= row_w.array();
        U.selfadjointView<Eigen::Lower>().rankUpdate(Phi.transpose(), 1.0);
    }
    out.U = Eigen::MatrixXd(U.selfadjointView<Eigen::Lower>());
    out.U = 0.5 * (out.U + out.U.transpose());
    return out;
}

// Empirical V: Monte Carlo estimate of sum_c b_c (1/M_c) sum_nu E_xi[phi xi^T].
inline NoiseCovariance empirical_V(const Dataset& ds, const Eigen::MatrixXd& W,
                                   const DiffusionClock& clock, const Activation& act,
                                   const Eigen::VectorXd& class_weights,
                                   int n_noise_draws, std::uint64_t seed) {
    if (n_noise_draws < 1) throw std::invalid_argument("n_noise_draws must be >= 1");
    const int M = ds.size(), N = static_cast<int>(ds.X.cols());
    const int P = static_cast<int>(W.rows());
    NoiseCovariance out;
    out.tag = Provenance::Empirical;
    out.t = clock.t;
    Eigen::VectorXd row_w(M);
    for (int i = 0; i < M; ++i) {
        const int c = ds.labels[i];
        row_w(i) = class_weights(c) /
                   (static_cast<double>(ds.class_counts[c]) * n_noise_draws);
    }
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sq_delta = std::sqrt(clock.delta);
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(P, N);
    Eigen::MatrixXd Xi(M, N), Xn(M, N);
    for (int d = 0; d < n_noise_draws; ++d) {
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) Xi(i, j) = gauss(rng);
        Xn = ds.X * clock.exp_mt + sq_delta * Xi;
        Eigen::MatrixXd Phi = feature_map(Xn, W, act);
        Phi.array().colwise() *= row_w.array();
        V.noalias() += Phi.transpose() * Xi;
    }
    out.V = std::move(V);
    return out;
}

// GEP surrogate of U: per class
//   U_c = (1/M_c) sum_nu G_nu G_nu^T
//       + (Delta_t/(N sigma_c^2 e^{-2t})) (gamma_c gamma_c^T .* W W^T)
//       + diag(varsigma_c)
// with G_nu = alpha_c + gamma_c .* W(x_nu - m_c)/(sigma_c sqrt(N)) + h_c .* eta_nu.
inline FeatureCovariance gep_U(const Dataset& ds, const Eigen::MatrixXd& W,
                               const MixtureSpec& spec, const Eigen::MatrixXd& centroids,
                               const DiffusionClock& clock, const GepCoefficients& coeffs,
                               std::uint64_t seed) {
    const int N = spec.dim;
    const int P = static_cast<int>(W.rows());
    const int C = spec.n_classes;
    const double e2t = std::exp(-2.0 * clock.t);
    FeatureCovariance out;
    out.tag = Provenance::Gep;
    out.t = clock.t;
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(P, P);
    Eigen::MatrixXd WWt;
    // The Hadamard term is only needed when Delta_t > 0.
    if (clock.delta > 0.0) {
        WWt.setZero(P, P);
        WWt.selfadjointView<Eigen::Lower>().rankUpdate(W, 1.0);
        WWt = Eigen::MatrixXd(WWt.selfadjointView<Eigen::Lower>());
    }
    for (int c = 0; c < C; ++c) {
        const double b = spec.weights(c);
        if (b == 0.0) continue;
        const auto& cc = coeffs.cls[c];
        const int Mc = ds.class_counts[c];
        const double sigma = std::sqrt(spec.variances(c));
        if (Mc == 0) {
            out.warnings.push_back("class " + std::to_string(c) +
                                   " empty; data term replaced by its mean alpha alpha^T");
            U.noalias() += b * (cc.alpha * cc.alpha.transpose());
        } else {
            // G matrix, P x M_c.
            Eigen::MatrixXd Xc(Mc, N);
            for (int k = 0; k < Mc; ++k)
                Xc.row(k) = ds.X.row(ds.class_rows[c][k]) - centroids.row(c);
            Eigen::MatrixXd G = (W * Xc.transpose()) / (sigma * std::sqrt((double)N));
            G.array().colwise() *= cc.gamma.array();
            G.colwise() += cc.alpha;
            for (int k = 0; k < Mc; ++k)
                for (int p = 0; p < P; ++p)
                    G(p, k) += std::sqrt(cc.h2(p)) * gauss(rng);
            U.selfadjointView<Eigen::Lower>().rankUpdate(G, b / Mc);
        }
        if (clock.delta > 0.0) {
            const double pref = b * clock.delta / (N * spec.variances(c) * e2t);
            U.noalias() +=
                pref * (cc.gamma.asDiagonal() * WWt * cc.gamma.asDiagonal());
        }
        U.diagonal() += b * cc.varsigma;
    }
    out.U = Eigen::MatrixXd(U.selfadjointView<Eigen::Lower>());
    out.U = 0.5 * (out.U + out.U.transpose());
    return out;
}

// GEP (= population) form of V: sum_c b_c sqrt(Delta_t/N) diag(gamma_tilde_c/Gamma_c) W.
inline NoiseCovariance gep_V(const Eigen::MatrixXd& W, const MixtureSpec& spec,
                             const DiffusionClock& clock, const GepCoefficients& coeffs) {
    NoiseCovariance out;
    out.tag = Provenance::Gep;
    out.t = clock.t;
    const int P = static_cast<int>(W.rows());
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(P);
    for (int c = 0; c < spec.n_classes; ++c) {
        const auto& gt = coeffs.cls[c].gamma_tilde;
        if (gt.size() == 1)
            scale.array() += spec.weights(c) * gt(0) / clock.gamma(c);
        else
            scale += spec.weights(c) * (gt / clock.gamma(c));
    }
    scale *= std::sqrt(clock.delta / spec.dim);
    out.V = scale.asDiagonal() * W;
    return out;
}

// Per-class GEP V (needed for class-conditional test errors).
inline Eigen::MatrixXd gep_V_class(const Eigen::MatrixXd& W, const DiffusionClock& clock,
                                   const GepCoefficients& coeffs, int c, int dim) {
    const auto& gt = coeffs.cls[c].gamma_tilde;
    Eigen::VectorXd scale =
        (gt.size() == 1) ? Eigen::VectorXd::Constant(W.rows(), gt(0)) : gt;
    scale *= std::sqrt(clock.delta / dim) / clock.gamma(c);
    return scale.asDiagonal() * W;
}

// Population (dataset-averaged) GEP matrix for one class:
// alpha alpha^T + (W W^T/N) .* gamma_tilde gamma_tilde^T + diag(beta_tilde - alpha^2 - gamma_tilde^2).
inline Eigen::MatrixXd population_U_class(const Eigen::MatrixXd& W,
                                          const GepCoefficients& coeffs, int c, int dim) {
    const auto& cc = coeffs.cls[c];
    const int P = static_cast<int>(W.rows());
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(P, P);
    U.selfadjointView<Eigen::Lower>().rankUpdate(W, 1.0 / dim);
    U = Eigen::MatrixXd(U.selfadjointView<Eigen::Lower>());
    U = cc.gamma_tilde.asDiagonal() * U * cc.gamma_tilde.asDiagonal();
    U.noalias() += cc.alpha * cc.alpha.transpose();
    U.diagonal() += cc.beta_tilde - cc.alpha.cwiseAbs2() - cc.gamma_tilde.cwiseAbs2();
    return U;
}

inline FeatureCovariance population_U(const Eigen::MatrixXd& W, const MixtureSpec& spec,
                                      const DiffusionClock& clock,
                                      const GepCoefficients& coeffs) {
    FeatureCovariance out;
    out.tag = Provenance::Population;
    out.t = clock.t;
    const int P = static_cast<int>(W.rows());
    out.U = Eigen::MatrixXd::Zero(P, P);
    for (int c = 0; c < spec.n_classes; ++c)
        if (spec.weights(c) > 0.0)
            out.U += spec.weights(c) * population_U_class(W, coeffs, c, spec.dim);
    out.U = 0.5 * (out.U + out.U.transpose());
    return out;
}

// Generalization/memorization split: delta_U = U_gep - U_population.
struct GenMemSplit {
    Eigen::MatrixXd delta_U;
    double frob_delta = 0.0;
    double frob_population = 0.0;
};

inline GenMemSplit split_gen_mem(const FeatureCovariance& gep,
                                 const FeatureCovariance& population) {
    GenMemSplit s;
    s.delta_U = gep.U - population.U;
    s.frob_delta = s.delta_U.norm();
    s.frob_population = population.U.norm();
    return s;
}

// Large-time truncation: gamma^2 WW^T/N + (beta_tilde - gamma^2) I
// + gamma^2 e^{-2t} sum_c b_c mu_c mu_c^T with the global activation scalars.
inline FeatureCovariance largetime_U(const Eigen::MatrixXd& W, const MixtureSpec& spec,
                                     const Eigen::MatrixXd& centroids,
                                     const DiffusionClock& clock, const Activation& act,
                                     const QuadratureRule& rule) {
    FeatureCovariance out;
    out.tag = Provenance::LargeTime;
    out.t = clock.t;
    const int P = static_cast<int>(W.rows());
    const double g = global_gamma(act, rule);
    const double bt = global_beta_tilde(act, rule);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(P, P);
    U.selfadjointView<Eigen::Lower>().rankUpdate(W, g * g / spec.dim);
    U = Eigen::MatrixXd(U.selfadjointView<Eigen::Lower>());
    U.diagonal().array() += bt - g * g;
    const double e2t = std::exp(-2.0 * clock.t);
    Eigen::MatrixXd mu = W * centroids.transpose() / std::sqrt((double)spec.dim); // P x C
    for (int c = 0; c < spec.n_classes; ++c)
        U.noalias() += (g * g * e2t * spec.weights(c)) * (mu.col(c) * mu.col(c).transpose());
    out.U = 0.5 * (U + U.transpose());
    return out;
}

// ---------------------------------------------------------------------------
// Binary persistence: row-major little-endian doubles with a small header.

inline void save_matrix(const std::string& path, const Eigen::MatrixXd& A,
                        std::int32_t tag, double t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    const char magic[8] = {'S', 'L', 'M', 'A', 'T', '0', '1', '\0'};
    const std::int64_t rows = A.rows(), cols = A.cols();
    f.write(magic, 8);
    f.write(reinterpret_cast<const char*>(&rows), 8);
    f.write(reinterpret_cast<const char*>(&cols), 8);
    f.write(reinterpret_cast<const char*>(&tag), 4);
    f.write(reinterpret_cast<const char*>(&t), 8);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R = A;
    f.write(reinterpret_cast<const char*>(R.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
}

inline Eigen::MatrixXd load_matrix(const std::string& path, std::int32_t* tag = nullptr,
                                   double* t = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (std::string(magic, 7) != "SLMAT01") throw std::runtime_error("bad matrix file");
    std::int64_t rows, cols;
    std::int32_t tg;
    double tt;
    f.read(reinterpret_cast<char*>(&rows), 8);
    f.read(reinterpret_cast<char*>(&cols), 8);
    f.read(reinterpret_cast<char*>(&tg), 4);
    f.read(reinterpret_cast<char*>(&tt), 8);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R(rows, cols);
    f.read(reinterpret_cast<char*>(R.data()),
           static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!f) throw std::runtime_error("truncated matrix file");
    if (tag) *tag = tg;
    if (t) *t = tt;
    return Eigen::MatrixXd(R);
}

} // namespace scorelab

#endif // SCORELAB_COVARIANCE_HPP

#ifndef SCORELAB_GMM_HPP
#define SCORELAB_GMM_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "scorelab/rng.hpp"

namespace scorelab {

// Gaussian mixture with C isotropic components in dimension N.  Centroid
// geometry is carried as the normalized Gram matrix r_{cc'} = m_c.m_{c'} / N,
// so a spec is realization-independent.
struct MixtureSpec {
    int n_classes = 1;
    int dim = 1;
    Eigen::VectorXd weights;       // b_c, sums to 1
    Eigen::VectorXd variances;     // sigma_c^2
    Eigen::MatrixXd centroid_gram; // r_{cc'} = m_c . m_{c'} / N

    void validate() const {
        if (n_classes < 1 || dim < 1)
            throw std::invalid_argument("mixture needs n_classes >= 1, dim >= 1");
        if (weights.size() != n_classes || variances.size() != n_classes ||
            centroid_gram.rows() != n_classes || centroid_gram.cols() != n_classes)
            throw std::invalid_argument("mixture field sizes inconsistent");
        if (std::abs(weights.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("mixture weights must sum to 1");
        if ((weights.array() < 0.0).any())
            throw std::invalid_argument("mixture weights must be nonnegative");
        if ((variances.array() <= 0.0).any())
            throw std::invalid_argument("mixture variances must be positive");
        if (!centroid_gram.isApprox(centroid_gram.transpose(), 1e-10))
            throw std::invalid_argument("centroid gram must be symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centroid_gram);
        if (es.eigenvalues().minCoeff() < -1e-10)
            throw std::invalid_argument("centroid gram must be PSD");
    }
};

// Convenience builders --------------------------------------------------------

// Centered mixture (all centroids zero).
inline MixtureSpec make_centered_spec(int dim, const std::vector<double>& weights,
                                      const std::vector<double>& variances) {
    MixtureSpec s;
    s.n_classes = static_cast<int>(weights.size());
    s.dim = dim;
    s.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), s.n_classes);
    s.variances = Eigen::Map<const Eigen::VectorXd>(variances.data(), s.n_classes);
    s.centroid_gram = Eigen::MatrixXd::Zero(s.n_classes, s.n_classes);
    s.validate();
    return s;
}

// Mixture with prescribed normalized centroid norms (||m_c||/sqrt(N)) and
// pairwise cosines; gram entries r_{cc'} = cos_{cc'} * norm_c * norm_{c'}.
inline MixtureSpec make_spec(int dim, const std::vector<double>& weights,
                             const std::vector<double>& variances,
                             const std::vector<double>& norms_normalized,
                             const Eigen::MatrixXd& cosines) {
    MixtureSpec s;
    s.n_classes = static_cast<int>(weights.size());
    s.dim = dim;
    s.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), s.n_classes);
    s.variances = Eigen::Map<const Eigen::VectorXd>(variances.data(), s.n_classes);
    s.centroid_gram.resize(s.n_classes, s.n_classes);
    for (int c = 0; c < s.n_classes; ++c)
        for (int d = 0; d < s.n_classes; ++d)
            s.centroid_gram(c, d) =
                (c == d ? 1.0 : cosines(c, d)) * norms_normalized[c] * norms_normalized[d];
    s.validate();
    return s;
}

// Strong-imbalance helper: b_minor = N^{-a} on the last class, remainder
// spread uniformly over the others.
inline Eigen::VectorXd strong_imbalance_weights(int n_classes, int dim, double a) {
    const double b_minor = std::pow(static_cast<double>(dim), -a);
    Eigen::VectorXd b = Eigen::VectorXd::Constant(
        n_classes, (1.0 - b_minor) / std::max(1, n_classes - 1));
    b(n_classes - 1) = b_minor;
    return b;
}

// Diffusion clock for the variance-preserving OU forward process:
// x(t) = x e^{-t} + sqrt(Delta_t) xi, Delta_t = 1 - e^{-2t}.  Per class the
// noised marginal is N(e^{-t} m_c, Gamma_c^2 I) with
// Gamma_c^2 = sigma_c^2 e^{-2t} + Delta_t.
struct DiffusionClock {
    double t = 0.0;
    double exp_mt = 1.0;          // e^{-t}
    double delta = 0.0;           // Delta_t
    Eigen::VectorXd gamma2;       // per-class Gamma_c^2

    double gamma(int c) const { return std::sqrt(gamma2(c)); }
};

inline DiffusionClock make_clock(const MixtureSpec& spec, double t) {
    if (t < 0.0) throw std::invalid_argument("diffusion time must be >= 0");
    DiffusionClock clock;
    clock.t = t;
    clock.exp_mt = std::exp(-t);
    clock.delta = -std::expm1(-2.0 * t);
    clock.gamma2 = spec.variances.array() * std::exp(-2.0 * t) + clock.delta;
    return clock;
}

struct Dataset {
    Eigen::MatrixXd X;               // M x N samples (rows)
    std::vector<int> labels;         // size M
    std::vector<std::vector<int>> class_rows; // per-class row indices
    std::vector<int> class_counts;   // M_c
    std::vector<std::string> warnings;

    int size() const { return static_cast<int>(X.rows()); }
};

// Realize centroids with the prescribed Gram geometry: square-root factor of
// N*r spans the first C directions of a seeded random orthonormal frame, so
// m_c . m_{c'} = N r_{cc'} exactly (up to roundoff).
inline Eigen::MatrixXd realize_centroids(const MixtureSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int C = spec.n_classes, N = spec.dim;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.centroid_gram * N);
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
        throw std::invalid_argument("centroid gram not PSD");
    Eigen::MatrixXd L =
        es.eigenvectors() *
        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal(); // C x C, L L^T = N r
    // Random orthonormal frame Q (N x C) from the QR of a Gaussian matrix.
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd G(N, C);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < C; ++j) G(i, j) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(N, C);
    return L * Q.transpose(); // C x N, rows are centroids
}

// Deterministic largest-remainder class counts for b_c * M.
inline std::vector<int> largest_remainder_counts(const Eigen::VectorXd& b, int M) {
    const int C = static_cast<int>(b.size());
    std::vector<int> counts(C);
    std::vector<double> frac(C);
    int assigned = 0;
    for (int c = 0; c < C; ++c) {
        const double exact = b(c) * M;
        counts[c] = static_cast<int>(std::floor(exact));
        frac[c] = exact - counts[c];
        assigned += counts[c];
    }
    std::vector<int> order(C);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return frac[i] > frac[j]; });
    for (int k = 0; k < M - assigned; ++k) counts[order[k % C]] += 1;
    return counts;
}

inline Dataset sample_dataset(const MixtureSpec& spec, const Eigen::MatrixXd& centroids,
                              int M, std::uint64_t seed) {
    spec.validate();
    const int C = spec.n_classes, N = spec.dim;
    Dataset ds;
    ds.X.resize(M, N);
    ds.labels.resize(M);
    ds.class_rows.assign(C, {});
    ds.class_counts = largest_remainder_counts(spec.weights, M);
    for (int c = 0; c < C; ++c)
        if (ds.class_counts[c] == 0 && spec.weights(c) > 0.0)
            ds.warnings.push_back("class " + std::to_string(c) +
                                  " has positive weight but zero samples");
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    int row = 0;
    for (int c = 0; c < C; ++c) {
        const double sigma = std::sqrt(spec.variances(c));
        for (int k = 0; k < ds.class_counts[c]; ++k, ++row) {
            for (int j = 0; j < N; ++j)
                ds.X(row, j) = centroids(c, j) + sigma * gauss(rng);
            ds.labels[row] = c;
            ds.class_rows[c].push_back(row);
        }
    }
    return ds;
}

// One forward-noising draw; returns (noised, xi) since the score-matching loss
// needs the noise realization itself.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd>
forward_noise(const Eigen::VectorXd& x, const DiffusionClock& clock, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd xi(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) xi(i) = gauss(rng);
    return {x * clock.exp_mt + std::sqrt(clock.delta) * xi, xi};
}

// Exact score of the noised mixture, responsibilities via log-sum-exp.
inline Eigen::VectorXd true_score(const Eigen::VectorXd& x, const DiffusionClock& clock,
                                  const MixtureSpec& spec, const Eigen::MatrixXd& centroids) {
    const int C = spec.n_classes;
    const int N = spec.dim;
    Eigen::VectorXd logw(C);
    Eigen::MatrixXd resid(C, N);
    for (int c = 0; c < C; ++c) {
        resid.row(c) = x.transpose() - clock.exp_mt * centroids.row(c);
        const double g2 = clock.gamma2(c);
        logw(c) = std::log(std::max(spec.weights(c), 1e-300)) -
                  0.5 * resid.row(c).squaredNorm() / g2 - 0.5 * N * std::log(g2);
    }
    const double lmax = logw.maxCoeff();
    Eigen::VectorXd zeta = (logw.array() - lmax).exp();
    zeta /= zeta.sum();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(N);
    for (int c = 0; c < C; ++c)
        s -= (zeta(c) / clock.gamma2(c)) * resid.row(c).transpose();
    return s;
}

// log p_t(x) up to the dimension-independent constant -N/2 log(2 pi); used by
// the finite-difference score oracle in the tests.
inline double log_density(const Eigen::VectorXd& x, const DiffusionClock& clock,
                          const MixtureSpec& spec, const Eigen::MatrixXd& centroids) {
    const int C = spec.n_classes;
    const int N = spec.dim;
    Eigen::VectorXd logw(C);
    for (int c = 0; c < C; ++c) {
        const double g2 = clock.gamma2(c);
        logw(c) = std::log(std::max(spec.weights(c), 1e-300)) -
                  0.5 * (x.transpose() - clock.exp_mt * centroids.row(c)).squaredNorm() / g2 -
                  0.5 * N * std::log(g2);
    }
    const double lmax = logw.maxCoeff();
    return lmax + std::log((logw.array() - lmax).exp().sum());
}

} // namespace scorelab

#endif // SCORELAB_GMM_HPP

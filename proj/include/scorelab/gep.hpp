#ifndef SCORELAB_GEP_HPP
#define SCORELAB_GEP_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "scorelab/activation.hpp"
#include "scorelab/gmm.hpp"
#include "scorelab/quadrature.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

// Per-class Gaussian-equivalence coefficients at one diffusion time.  In the
// general (extensive-centroid) case every coefficient is a P-vector indexed by
// the hidden unit; the centered limit collapses them to a single scalar
// (stored as size-1 vectors so both cases share one layout).
//
// With m = e^{-t} mu_c^{(p)} and s = Gamma_c:
//   alpha      = E[phi(s z + m)]
//   beta_tilde = E[phi^2(s z + m)]
//   gamma_tilde= E[z phi(s z + m)]
//   beta       = E[phi(s u + m) phi(s v + m)], corr(u,v) = sigma_c^2 e^{-2t}/Gamma_c^2
//   gamma      = (sigma_c e^{-t} / Gamma_c) * gamma_tilde
//   varsigma   = beta_tilde - beta - (Delta_t / (sigma_c^2 e^{-2t})) gamma^2
//   h2         = beta - alpha^2 - gamma^2
struct ClassCoeffs {
    Eigen::VectorXd mu; // projected centroid W m_c / sqrt(N)
    Eigen::VectorXd alpha, beta, beta_tilde, gamma, gamma_tilde, varsigma, h2;
};

struct GepCoefficients {
    double t = 0.0;
    bool scalar_limit = false;
    std::vector<ClassCoeffs> cls;
    int clamp_count = 0; // entries clamped to 0 by the roundoff tolerance
};

namespace detail {

// Computes one entry set given the effective mean; shared by the vector and
// scalar paths.
struct EntryCoeffs {
    double alpha, beta, beta_tilde, gamma_tilde;
};

inline EntryCoeffs entry_coeffs(const Activation& act, double mean, double std_dev,
                                double corr, const QuadratureRule& rule) {
    EntryCoeffs e;
    e.alpha = expect_std([&](double z) { return act(mean + std_dev * z); }, rule);
    e.beta_tilde = expect_std(
        [&](double z) {
            const double p = act(mean + std_dev * z);
            return p * p;
        },
        rule);
    e.gamma_tilde =
        expect_std([&](double z) { return z * act(mean + std_dev * z); }, rule);
    e.beta = expect_2d_correlated(
        [&](double u, double v) {
            return act(mean + std_dev * u) * act(mean + std_dev * v);
        },
        corr, rule);
    return e;
}

} // namespace detail

inline GepCoefficients coeffs_impl(const MixtureSpec& spec, const DiffusionClock& clock,
                                   const Activation& act, const QuadratureRule& rule,
                                   const Eigen::MatrixXd* mu_all /* C x P or null */) {
    if (!act.odd())
        throw std::invalid_argument("GEP coefficients require an odd activation");
    GepCoefficients out;
    out.t = clock.t;
    out.scalar_limit = (mu_all == nullptr);
    const int C = spec.n_classes;
    const int P = mu_all ? static_cast<int>(mu_all->cols()) : 1;
    const double e2t = std::exp(-2.0 * clock.t);
    out.cls.resize(C);
    for (int c = 0; c < C; ++c) {
        auto& cc = out.cls[c];
        const double sigma2 = spec.variances(c);
        const double gam2 = clock.gamma2(c);
        const double gam = std::sqrt(gam2);
        const double corr = sigma2 * e2t / gam2;
        const double gfac = std::sqrt(sigma2) * clock.exp_mt / gam;
        if (mu_all)
            cc.mu = mu_all->row(c).transpose();
        else
            cc.mu = Eigen::VectorXd::Zero(1);
        cc.alpha.resize(P);
        cc.beta.resize(P);
        cc.beta_tilde.resize(P);
        cc.gamma.resize(P);
        cc.gamma_tilde.resize(P);
        cc.varsigma.resize(P);
        cc.h2.resize(P);
        for (int p = 0; p < P; ++p) {
            const double mean = clock.exp_mt * cc.mu(p);
            const auto e = detail::entry_coeffs(act, mean, gam, corr, rule);
            cc.alpha(p) = e.alpha;
            cc.beta_tilde(p) = e.beta_tilde;
            cc.gamma_tilde(p) = e.gamma_tilde;
            cc.beta(p) = e.beta;
            cc.gamma(p) = gfac * e.gamma_tilde;
            // Delta_t / (sigma^2 e^{-2t}) * gamma^2 == (Delta_t / Gamma^2) gamma_tilde^2,
            // finite for every t >= 0.
            double vs = e.beta_tilde - e.beta -
                        (clock.delta / gam2) * e.gamma_tilde * e.gamma_tilde;
            if (vs < 0.0) {
                if (vs < -1e-10)
                    throw std::runtime_error("varsigma below roundoff tolerance");
                vs = 0.0;
                ++out.clamp_count;
            }
            cc.varsigma(p) = vs;
            double h2 = e.beta - e.alpha * e.alpha - cc.gamma(p) * cc.gamma(p);
            if (h2 < 0.0) {
                if (h2 < -1e-10)
                    throw std::runtime_error("h^2 below roundoff tolerance");
                h2 = 0.0;
                ++out.clamp_count;
            }
            cc.h2(p) = h2;
        }
    }
    return out;
}

// Extensive-centroid coefficients: entry p uses the projected centroid
// mu_c^(p) = (W m_c)_p / sqrt(N).
inline GepCoefficients coeffs_vector(const Eigen::MatrixXd& W, const MixtureSpec& spec,
                                     const Eigen::MatrixXd& centroids,
                                     const DiffusionClock& clock, const Activation& act,
                                     const QuadratureRule& rule) {
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(spec.dim));
    Eigen::MatrixXd mu = centroids * W.transpose() * inv_sqrt_n; // C x P
    return coeffs_impl(spec, clock, act, rule, &mu);
}

// Centered (subextensive-centroid) limit: one scalar per class.
inline GepCoefficients coeffs_scalar(const MixtureSpec& spec, const DiffusionClock& clock,
                                     const Activation& act, const QuadratureRule& rule) {
    return coeffs_impl(spec, clock, act, rule, nullptr);
}

// Large-time global scalars of the activation alone.
inline double global_gamma(const Activation& act, const QuadratureRule& rule) {
    return expect_std([&](double z) { return z * act(z); }, rule);
}
inline double global_beta_tilde(const Activation& act, const QuadratureRule& rule) {
    return expect_std([&](double z) { return act(z) * act(z); }, rule);
}

// ---------------------------------------------------------------------------
// Content-hash cache: the spectral and error-curve pipelines request the same
// (W, spec, t) coefficients repeatedly.  The key hashes dims, clock, spec
// parameters and a strided sample of W's entries.

namespace detail {

inline std::uint64_t hash_double(std::uint64_t h, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    return splitmix64(h ^ bits);
}

inline std::uint64_t coeffs_key(const Eigen::MatrixXd& W, const MixtureSpec& spec,
                                const Eigen::MatrixXd& centroids,
                                const DiffusionClock& clock, const Activation& act) {
    std::uint64_t h = splitmix64(0x5ca1ab1eULL);
    h = splitmix64(h ^ static_cast<std::uint64_t>(W.rows()));
    h = splitmix64(h ^ static_cast<std::uint64_t>(W.cols()));
    h = splitmix64(h ^ static_cast<std::uint64_t>(act.kind));
    h = hash_double(h, clock.t);
    for (int c = 0; c < spec.n_classes; ++c) {
        h = hash_double(h, spec.weights(c));
        h = hash_double(h, spec.variances(c));
    }
    const auto* data = W.data();
    const std::size_t n = static_cast<std::size_t>(W.size());
    const std::size_t stride = std::max<std::size_t>(1, n / 257);
    for (std::size_t i = 0; i < n; i += stride) h = hash_double(h, data[i]);
    for (int i = 0; i < centroids.size(); i += std::max<int>(1, (int)centroids.size() / 67))
        h = hash_double(h, centroids.data()[i]);
    return h;
}

} // namespace detail

inline std::shared_ptr<const GepCoefficients>
coeffs_vector_cached(const Eigen::MatrixXd& W, const MixtureSpec& spec,
                     const Eigen::MatrixXd& centroids, const DiffusionClock& clock,
                     const Activation& act, const QuadratureRule& rule) {
    static std::mutex mtx;
    static std::unordered_map<std::uint64_t, std::shared_ptr<const GepCoefficients>> cache;
    const std::uint64_t key = detail::coeffs_key(W, spec, centroids, clock, act);
    {
        std::lock_guard<std::mutex> lock(mtx);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    auto value = std::make_shared<const GepCoefficients>(
        coeffs_vector(W, spec, centroids, clock, act, rule));
    std::lock_guard<std::mutex> lock(mtx);
    auto [it, inserted] = cache.emplace(key, value);
    return it->second;
}

} // namespace scorelab

#endif // SCORELAB_GEP_HPP

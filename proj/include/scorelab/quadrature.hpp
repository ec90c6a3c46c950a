#ifndef SCORELAB_QUADRATURE_HPP
#define SCORELAB_QUADRATURE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace scorelab {

// Gauss-Hermite quadrature in the probabilist convention: the rule integrates
// f against the standard normal density, sum_i w_i f(x_i) ~ E_{z~N(0,1)}[f(z)].
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    int order = 0;
};

// Golub-Welsch on the Jacobi matrix of the probabilist Hermite polynomials
// He_n (three-term recurrence He_{n+1} = x He_n - n He_{n-1}).
inline QuadratureRule make_rule(int order) {
    if (order < 1) throw std::invalid_argument("quadrature order must be >= 1");
    QuadratureRule rule;
    rule.order = order;
    if (order == 1) {
        rule.nodes = {0.0};
        rule.weights = {1.0};
        return rule;
    }
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int i = 1; i < order; ++i) {
        const double b = std::sqrt(static_cast<double>(i));
        J(i, i - 1) = b;
        J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (int i = 0; i < order; ++i) {
        rule.nodes[i] = es.eigenvalues()(i);
        const double v0 = es.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0; // total mass 1 in the probabilist convention
    }
    // Enforce exact mirror symmetry of the computed rule.
    for (int i = 0; i < order / 2; ++i) {
        const int j = order - 1 - i;
        const double n = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -n;
        rule.nodes[j] = n;
        rule.weights[i] = rule.weights[j] = w;
    }
    if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
    return rule;
}

// E[f(z)] for z ~ N(0,1).
template <typename F>
double expect_std(F&& f, const QuadratureRule& rule) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        acc += rule.weights[i] * f(rule.nodes[i]);
    return acc;
}

// E[f(mean + std * z)] for z ~ N(0,1); std = 0 degenerates to f(mean).
template <typename F>
double expect_1d(F&& f, double mean, double std_dev, const QuadratureRule& rule) {
    if (std_dev < 0.0) throw std::invalid_argument("negative std in expect_1d");
    if (std_dev == 0.0) return f(mean);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        acc += rule.weights[i] * f(mean + std_dev * rule.nodes[i]);
    return acc;
}

// E[f(u,v)] for (u,v) ~ N(0, [[1,c],[c,1]]).  Tensor-product quadrature after
// the lower-triangular square root u = z1, v = c z1 + sqrt(1-c^2) z2; the
// degenerate |c| = 1 cases collapse to the 1D rule.
template <typename F>
double expect_2d_correlated(F&& f, double c, const QuadratureRule& rule) {
    if (std::abs(c) > 1.0 + 1e-12)
        throw std::invalid_argument("correlation magnitude exceeds 1");
    c = std::clamp(c, -1.0, 1.0);
    if (c == 1.0) return expect_std([&](double z) { return f(z, z); }, rule);
    if (c == -1.0) return expect_std([&](double z) { return f(z, -z); }, rule);
    const double s = std::sqrt(1.0 - c * c);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double u = rule.nodes[i];
        double inner = 0.0;
        for (std::size_t j = 0; j < rule.nodes.size(); ++j)
            inner += rule.weights[j] * f(u, c * u + s * rule.nodes[j]);
        acc += rule.weights[i] * inner;
    }
    return acc;
}

// Probabilist Hermite polynomial He_n(x).
inline double hermite_he(int n, double x) {
    if (n == 0) return 1.0;
    if (n == 1) return x;
    double h0 = 1.0, h1 = x;
    for (int k = 2; k <= n; ++k) {
        const double h2 = x * h1 - (k - 1) * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

// Mehler-series evaluation of E[phi(s u + m) phi(s v + m)] at correlation c:
// sum_n (c^n / n!) h_n^2 with h_n = E[He_n(z) phi(s z + m)].  Used as an
// independent oracle for expect_2d_correlated.
template <typename F>
double mehler_series(F&& phi, double c, double s, double m, int n_terms,
                     const QuadratureRule& rule) {
    double acc = 0.0;
    double cn = 1.0;  // c^n / n!
    for (int n = 0; n < n_terms; ++n) {
        if (n > 0) cn *= c / n;
        const double hn = expect_std(
            [&](double z) { return hermite_he(n, z) * phi(s * z + m); }, rule);
        acc += cn * hn * hn;
    }
    return acc;
}

} // namespace scorelab

#endif // SCORELAB_QUADRATURE_HPP

#ifndef SCORELAB_ACTIVATION_HPP
#define SCORELAB_ACTIVATION_HPP

#include <cmath>
#include <stdexcept>
#include <string>

namespace scorelab {

// The nonlinearity applied to the random features.  Only odd activations are
// supported: the centered-class simplifications implemented downstream rely on
// E[phi(z)] = 0 for symmetric inputs.
enum class ActivationKind { Tanh, Identity };

struct Activation {
    ActivationKind kind = ActivationKind::Tanh;

    double operator()(double x) const {
        return kind == ActivationKind::Tanh ? std::tanh(x) : x;
    }
    double deriv(double x) const {
        if (kind == ActivationKind::Identity) return 1.0;
        const double th = std::tanh(x);
        return 1.0 - th * th;
    }
    bool odd() const { return true; }
    std::string name() const {
        return kind == ActivationKind::Tanh ? "tanh" : "identity";
    }
};

inline Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return {ActivationKind::Tanh};
    if (name == "identity") return {ActivationKind::Identity};
    throw std::invalid_argument("unknown activation: " + name +
                                " (supported: tanh, identity; must be odd)");
}

} // namespace scorelab

#endif // SCORELAB_ACTIVATION_HPP

#include "scalelab/exponents.hpp"

#include "scalelab/errors.hpp"

#include <algorithm>
#include <cmath>

namespace scalelab {

namespace {

void check(double alpha, double beta) {
    if (!(alpha > 1.0)) throw ValidationError("alpha must exceed 1");
    if (!(beta > 0.0)) throw ValidationError("beta must be positive");
}

double rich_factor(double beta, Dynamics mode) {
    return mode == Dynamics::rich ? std::max(1.0, 2.0 / (1.0 + beta)) : 1.0;
}

} // namespace

std::string to_string(Regime r) {
    switch (r) {
    case Regime::hard: return "hard";
    case Regime::easy: return "easy";
    case Regime::super_easy: return "super_easy";
    }
    return "unknown";
}

std::string to_string(Dynamics d) { return d == Dynamics::rich ? "rich" : "lazy"; }

Dynamics parse_dynamics(const std::string& s) {
    if (s == "rich") return Dynamics::rich;
    if (s == "lazy") return Dynamics::lazy;
    throw ValidationError("dynamics must be lazy or rich, got '" + s + "'");
}

RegimeLabel classify_regime(double alpha, double beta) {
    check(alpha, beta);
    RegimeLabel l;
    l.easy_threshold = 1.0;
    l.super_easy_threshold = 2.0 - 1.0 / alpha;
    if (beta <= l.easy_threshold) {
        l.regime = Regime::hard;
        l.on_boundary = beta == l.easy_threshold;
    } else if (beta <= l.super_easy_threshold) {
        l.regime = Regime::easy;
        l.on_boundary = beta == l.super_easy_threshold;
    } else {
        l.regime = Regime::super_easy;
    }
    return l;
}

double chi_closed(double beta) {
    if (!(beta > 0.0)) throw ValidationError("beta must be positive");
    return beta * std::max(1.0, 2.0 / (1.0 + beta));
}

double loss_surrogate(double t, double n_params, double batch, double eta, double alpha, double beta, Dynamics mode) {
    check(alpha, beta);
    if (!(t > 0.0) || !(n_params > 0.0) || !(batch > 0.0) || !(eta > 0.0))
        throw ValidationError("surrogate arguments must be positive");
    const double f = rich_factor(beta, mode);
    double l = std::pow(t, -beta * f);
    if (std::isfinite(n_params)) {
        l += std::pow(n_params, -alpha * std::min(2.0, beta));
        l += std::pow(t, -(1.0 - 1.0 / alpha) * f) / n_params;
    }
    if (std::isfinite(batch)) l += eta / batch * std::pow(t, -(2.0 - 1.0 / alpha) * f);
    return l;
}

ComputeOptimal compute_optimal_exponent(double alpha, double beta, Dynamics mode) {
    ComputeOptimal c;
    c.regime = classify_regime(alpha, beta);
    switch (c.regime.regime) {
    case Regime::hard:
        c.exponent = mode == Dynamics::rich ? 2.0 * alpha * beta / (alpha * (1.0 + beta) + 2.0)
                                            : alpha * beta / (alpha + 1.0);
        break;
    case Regime::easy: c.exponent = alpha * beta / (alpha * beta + 1.0); break;
    case Regime::super_easy: c.exponent = 1.0 - 1.0 / (2.0 * alpha); break;
    }
    return c;
}

TransientExponents transient_exponents(double alpha, double beta, Dynamics mode) {
    check(alpha, beta);
    const double f = rich_factor(beta, mode);
    return {(1.0 - 1.0 / alpha) * f, (2.0 - 1.0 / alpha) * f};
}

TransientExponents transient_exponents(double alpha, double beta) {
    return transient_exponents(alpha, beta, Dynamics::rich);
}

double mode_frontier(double alpha, double chi, double t) {
    if (!(alpha > 1.0)) throw ValidationError("alpha must exceed 1");
    if (!(t > 0.0)) throw ValidationError("t must be positive");
    return std::pow(t, (2.0 - chi) / alpha);
}

ExponentReport exponent_report(double alpha, double beta) {
    ExponentReport r;
    r.alpha = alpha;
    r.beta = beta;
    r.chi = chi_closed(beta);
    r.model_bottleneck = alpha * std::min(2.0, beta);
    r.transient = transient_exponents(alpha, beta);
    r.compute_lazy = compute_optimal_exponent(alpha, beta, Dynamics::lazy).exponent;
    const auto rich = compute_optimal_exponent(alpha, beta, Dynamics::rich);
    r.compute_rich = rich.exponent;
    r.regime = rich.regime;
    return r;
}

} // namespace scalelab

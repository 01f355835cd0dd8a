#pragma once

#include <string>

namespace scalelab {

enum class Regime { hard, easy, super_easy };

struct RegimeLabel {
    Regime regime = Regime::hard;
    bool on_boundary = false;     // beta exactly at a threshold; placed in the harder regime
    double easy_threshold = 1.0;  // beta = 1
    double super_easy_threshold = 0.0;  // beta = 2 - 1/alpha
};

enum class Dynamics { lazy, rich };

std::string to_string(Regime r);
std::string to_string(Dynamics d);
Dynamics parse_dynamics(const std::string& s);

RegimeLabel classify_regime(double alpha, double beta);

// beta * max{1, 2 / (1 + beta)}.
double chi_closed(double beta);

// Unit-prefactor sum of the four power laws: gradient flow, model bottleneck,
// finite-N transient and SGD transient (the last carrying eta / B).
// Infinite N or B drops the corresponding terms.
double loss_surrogate(double t, double n_params, double batch, double eta, double alpha, double beta, Dynamics mode);

struct ComputeOptimal {
    double exponent = 0.0;
    RegimeLabel regime;
};

ComputeOptimal compute_optimal_exponent(double alpha, double beta, Dynamics mode);

struct TransientExponents {
    double finite_n = 0.0;
    double sgd = 0.0;
};

// Rich-regime transient exponents; the lazy ones are obtained with beta >= 1 factor 1.
TransientExponents transient_exponents(double alpha, double beta);
TransientExponents transient_exponents(double alpha, double beta, Dynamics mode);

// k*(t) = t^((2 - chi) / alpha).
double mode_frontier(double alpha, double chi, double t);

struct ExponentReport {
    double alpha = 0.0, beta = 0.0;
    double chi = 0.0;
    double model_bottleneck = 0.0;  // alpha * min{2, beta}
    TransientExponents transient;
    double compute_lazy = 0.0;
    double compute_rich = 0.0;
    RegimeLabel regime;
};

ExponentReport exponent_report(double alpha, double beta);

} // namespace scalelab

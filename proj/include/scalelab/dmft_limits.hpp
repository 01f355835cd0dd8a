#pragma once

#include "scalelab/dmft_online.hpp"
#include "scalelab/spectra.hpp"
#include "scalelab/trajectory.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace scalelab {

// N, B -> infinity reduction of the discrete-time equations.
struct LimitSolution {
    LossTrajectory loss;         // times are step indices
    Matrix C2, Cw;
    Matrix error_ratio;          // groups x T, v0_k(t) / w*_k per mode group
    double residual = 0.0;       // consistency of Cw against a direct filter solve
};

struct LimitOptions {
    double tol = 1e-8;
    int max_groups = 300;
    bool verify = true;          // re-derive Cw by a triangular solve and check it
};

LimitSolution solve_infinite_limit(const ModeGroups& groups, double eta, double gamma, int T,
                                   const LimitOptions& opts = {});
LimitSolution solve_infinite_limit(const SpectrumTable& table, double eta, double gamma, int T,
                                   const LimitOptions& opts = {});

enum class MarkovMethod { exponential_midpoint, rk4 };

struct MarkovOptions {
    MarkovMethod method = MarkovMethod::exponential_midpoint;
    double h0 = 0.05;          // uniform step up to t_uniform
    double t_uniform = 1.0;
    double log_step = 0.02;    // beyond t_uniform the step is log_step * t
    double rk4_dt = 0.01;      // rk4 starting step, halved until the curve settles
    double rk4_rel_tol = 1e-3;
    int rk4_max_halvings = 8;
};

struct MarkovSolution {
    LossTrajectory loss;                // continuous time
    std::vector<double> kernel_scale;   // 1 + 2 gamma int_0^t (y - Delta) . Delta ds
};

// dDelta/dt = -K Delta, K(0) = Lambda, with the feature-learning drive on K.
MarkovSolution integrate_markovian(const ModeGroups& groups, double gamma, double t_max,
                                   const MarkovOptions& opts = {});
MarkovSolution integrate_markovian(const SpectrumTable& table, double gamma, double t_max,
                                   const MarkovOptions& opts = {});

struct ChiResult {
    double chi = 0.0;
    int iterations = 0;
    std::vector<double> history;
};

struct ChiOptions {
    double tol = 1e-4;
    double damping = 0.5;
    int max_iter = 200;
};

// Fixed point of chi -> -d log L / d log t for
// L(t) = sum_k lambda_k (w*_k)^2 exp(-lambda_k (t + gamma t^(2 - chi))).
ChiResult solve_chi(const ModeGroups& groups, double beta, double gamma, const std::vector<double>& t_grid,
                    const ChiOptions& opts = {});
ChiResult solve_chi(const SourceCapacitySpec& spec, double gamma, const std::vector<double>& t_grid,
                    const ChiOptions& opts = {});

// chi_0 = beta, chi_{n+1} = beta (2 - chi_n); returns `levels` entries.
std::vector<double> bootstrap_chi(double beta, int levels);

// Positive root of 1 = (1/R) sum_k lambda_k r / (1 + lambda_k r) for resource R (N or P).
double solve_bottleneck_scale(const SpectrumTable& table, double resource, double tol = 1e-12);
double solve_r3(const SpectrumTable& table, double n_params, double tol = 1e-12);
double solve_r1(const SpectrumTable& table, double n_samples, double tol = 1e-12);

// sum_k lambda_k (w*_k)^2 / (1 + lambda_k r)^2.
double bottleneck_loss(const SpectrumTable& table, double r);
double asymptotic_loss_vs_N(const SpectrumTable& table, double n_params);
double asymptotic_loss_vs_P(const SpectrumTable& table, double n_samples);

struct BottleneckRow {
    double resource = 0.0;
    double r_value = 0.0;
    double limiting_loss = 0.0;
};

struct BottleneckReport {
    std::string resource;  // "N" or "P"
    std::vector<BottleneckRow> rows;
    double loss_slope = 0.0;
    double r_slope = 0.0;
};

BottleneckReport bottleneck_scan(const SpectrumTable& table, const std::vector<double>& resources,
                                 const std::string& resource = "N");

} // namespace scalelab

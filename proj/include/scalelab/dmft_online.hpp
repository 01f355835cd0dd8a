#pragma once

#include "scalelab/spectra.hpp"
#include "scalelab/trajectory.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <vector>

namespace scalelab {

using Matrix = Eigen::MatrixXd;

// eta * 1[t > s] on a T x T grid.
Matrix step_matrix(int T, double eta);

// Time discretization of the closed equations.
//   integrate: the response of w and v0 to their drive (Theta)
//   inner:     memory weights inside the w filter, multiplied elementwise with C3
//   memory:    weights applied elementwise to Cw in the feature-learning filter
// Discrete SGD uses eta * 1[t > s] for all three. Gradient flow on a nonuniform
// grid uses an implicit rule for `integrate` and `memory` and an explicit one for `inner`.
struct TimeDiscretization {
    std::vector<double> times;
    Matrix integrate;
    Matrix inner;
    Matrix memory;
    bool discrete_steps = true;

    int size() const { return static_cast<int>(times.size()); }
    TimeDiscretization leading(int n) const;
};

TimeDiscretization discrete_grid(int T, double eta);

// tau grid: uniform spacing h0 up to t_uniform, then geometric with the given ratio up to t_max.
std::vector<double> flow_times(double t_uniform, double h0, double t_max, double ratio);
TimeDiscretization flow_grid(const std::vector<double>& times);

struct KernelSet {
    Matrix C0, C2, C3, Cw, R3;
    Matrix Theta;
    std::vector<double> times;
    std::int64_t n_params = 0;
    double batch_size = std::numeric_limits<double>::infinity();
    double learning_rate = 0.0;
    double richness = 0.0;
    bool discrete_steps = true;

    int horizon() const { return static_cast<int>(C0.rows()); }
    std::vector<double> loss() const;
};

struct DmftParams {
    std::int64_t n_params = 256;
    double batch_size = std::numeric_limits<double>::infinity();  // infinity: no SGD noise
    double learning_rate = 0.1;
    double richness = 0.0;
    int horizon = 128;

    void validate() const;
};

struct DmftOptions {
    double tol = 1e-8;
    double damping = 0.5;
    int max_iter = 500;          // sweeps per continuation stage
    int max_groups = 96;         // mode bins used when solving from a table
    int initial_horizon = 32;    // first continuation stage
    int continuation_step = 16;  // rows added per stage; 0 solves the full horizon at once
    int threads = 1;
    const KernelSet* warm_start = nullptr;
    bool verbose = false;
};

struct ResidualReport {
    double c0 = 0, c2 = 0, c3 = 0, cw = 0, r3 = 0;
    double max() const;
};

struct DmftResult {
    KernelSet kernels;
    LossTrajectory loss;
    int iterations = 0;      // sweeps in the final stage
    int total_sweeps = 0;
    double residual = 0.0;
    std::vector<double> residual_history;
};

DmftResult solve_dmft(const ModeGroups& groups, const DmftParams& params, const DmftOptions& options = {});
DmftResult solve_dmft(const SpectrumTable& table, const DmftParams& params, const DmftOptions& options = {});

// Gradient flow (B infinite) on an arbitrary tau grid, for horizons far beyond dense unit steps.
DmftResult solve_dmft_flow(const ModeGroups& groups, std::int64_t n_params, double richness,
                           const std::vector<double>& times, const DmftOptions& options = {});

// One sweep from the given kernels; each entry is the max abs change of that equation.
ResidualReport residuals(const KernelSet& ks, const ModeGroups& groups);
ResidualReport residuals(const KernelSet& ks, const SpectrumTable& table, int max_groups = 96);

void write_kernel_csv(const KernelSet& ks, const std::string& path, bool full_matrices = false);

} // namespace scalelab

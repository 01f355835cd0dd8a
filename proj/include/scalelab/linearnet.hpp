#pragma once

#include "scalelab/analysis.hpp"
#include "scalelab/spectra.hpp"
#include "scalelab/trajectory.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace scalelab {

// Two-layer linear network f(x) = (1/gamma) (f~(x; t) - f~(x; 0)) with the
// mean-field readout f~ = (1/N) w^T A x. The step size is scaled by gamma^2 N,
// so each update moves w and A by eta * gamma * (gradient of f~ times N).
struct LinearNetConfig {
    std::int64_t width = 64;
    double richness = 1.0;
    double learning_rate = 0.05;
    std::int64_t batch_size = 16;
    std::int64_t steps = 10000;
    std::uint64_t seed = 0;
    std::vector<std::int64_t> checkpoints;  // empty: log-spaced

    void validate() const;
};

struct LinearNetState {
    Eigen::VectorXd w, w0;
    Eigen::MatrixXd A, A0;
    std::int64_t step = 0;
};

LinearNetState init_linearnet(const SpectrumTable& table, const LinearNetConfig& config);

// Effective input-space map beta_eff with f(x) = beta_eff . x.
Eigen::VectorXd effective_map(const LinearNetState& s, double richness);
double linearnet_loss(const LinearNetState& s, const SpectrumTable& table, double richness);

// |w|^2 / N.
double spike_norm(const LinearNetState& s);

struct LinearNetRun {
    LossTrajectory loss;
    LossTrajectory spike;  // times aligned with loss; values |w|^2 / N
};

LinearNetRun train_linearnet(const SpectrumTable& table, const LinearNetConfig& config);

// Seed-averaged runs; member i uses derive_seed(config.seed, i). Both
// trajectories carry standard errors. Results do not depend on threads.
LinearNetRun train_linearnet_ensemble(const SpectrumTable& table, const LinearNetConfig& config, int n_seeds,
                                      int threads = 1);

// Growth exponent of the spike: the log-log slope itself (positive for growth).
FitResult spike_growth_exponent(const LossTrajectory& spike, const FitWindow& window);
FitResult spike_growth_exponent(const LossTrajectory& spike);

} // namespace scalelab

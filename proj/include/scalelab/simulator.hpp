#pragma once

#include "scalelab/rng.hpp"
#include "scalelab/spectra.hpp"
#include "scalelab/trajectory.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace scalelab {

struct TrainConfig {
    std::int64_t n_params = 64;
    std::int64_t batch_size = 32;
    double learning_rate = 0.1;
    double richness = 0.0;
    std::int64_t steps = 1000;
    std::uint64_t seed = 0;
    std::vector<std::int64_t> checkpoints;  // empty: log_checkpoints(steps)

    void validate() const;
    std::vector<std::int64_t> resolved_checkpoints() const;
};

struct ModelState {
    Eigen::VectorXd w;   // readout, length N
    Eigen::MatrixXd A;   // features, N x M
    Eigen::MatrixXd A0;  // frozen A(0)
    std::int64_t step = 0;
};

// Sorted unique steps in [0, T], log-spaced with at most per_decade points per
// decade plus every integer where that spacing is finer than one step.
std::vector<std::int64_t> log_checkpoints(std::int64_t steps, int per_decade = 64);

Eigen::VectorXd target_vector(const SpectrumTable& table);

// A(0) i.i.d. standard normal, w(0) = 0.
ModelState init_state(const SpectrumTable& table, const TrainConfig& config, std::uint64_t seed);

// B x M Gaussian features with column variances lambda_k.
Eigen::MatrixXd sample_batch(const SpectrumTable& table, std::int64_t batch, Rng& rng);

// v0 = w* - (1/N) A^T w.
Eigen::VectorXd error_vector(const ModelState& state, const Eigen::VectorXd& w_star);

double test_loss(const ModelState& state, const SpectrumTable& table);
double test_loss_from_error(const Eigen::VectorXd& v0, const SpectrumTable& table);

// One projected-SGD step on the batch; w and A both updated from time-t values.
void sgd_step(ModelState& state, const Eigen::MatrixXd& batch, const SpectrumTable& table,
              const TrainConfig& config);

// Same step with the population moment Lambda in place of (1/B) Psi^T Psi.
void population_step(ModelState& state, const SpectrumTable& table, const TrainConfig& config);

LossTrajectory run_online(const SpectrumTable& table, const TrainConfig& config);

// Full-batch gradient descent reusing one dataset of n_samples points.
LossTrajectory run_offline(const SpectrumTable& table, const TrainConfig& config, std::int64_t n_samples);

// Gradient descent on f = (1/N) w^T Bmat A(0) psi with Bmat(0) = I and gamma scaling
// the Bmat learning rate. Consumes randomness exactly like run_online.
LossTrajectory run_b_parameterized(const SpectrumTable& table, const TrainConfig& config);

enum class TrainingMode { online, offline, b_parameterized };

struct EnsembleOptions {
    int n_seeds = 8;
    int threads = 1;
    TrainingMode mode = TrainingMode::online;
    std::int64_t n_samples = 0;  // offline only
};

// Per-checkpoint mean and standard error over seeds derive_seed(config.seed, i).
LossTrajectory run_ensemble(const SpectrumTable& table, const TrainConfig& config, const EnsembleOptions& opts);

} // namespace scalelab

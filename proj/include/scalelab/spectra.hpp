#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scalelab {

// Power-law spectrum parameters: lambda_k = k^-alpha, lambda_k (w*_k)^2 = k^-(alpha beta + 1).
struct SourceCapacitySpec {
    double alpha = 2.0;
    double beta = 0.5;
    std::int64_t mode_cutoff = 1000;

    void validate() const;
};

struct SpectrumTable {
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<double> eigenvalues;
    std::vector<double> target_weights_sq;

    std::size_t size() const { return eigenvalues.size(); }
    // lambda_k (w*_k)^2 for 0-based index i (mode k = i + 1).
    double weighted(std::size_t i) const { return eigenvalues[i] * target_weights_sq[i]; }
};

SpectrumTable build_spectrum(const SourceCapacitySpec& spec);

struct RkhsNorm {
    bool divergent = false;
    double truncated_sum = 0.0;     // sum_k (w*_k)^2 over the table
    double leading_estimate = 0.0;  // 1/(alpha (beta - 1)); infinity when divergent
};

RkhsNorm rkhs_norm(const SpectrumTable& table, const SourceCapacitySpec& spec);

// sum_{k > k_star} lambda_k (w*_k)^2, with k_star in [0, M].
double tail_loss(const SpectrumTable& table, std::int64_t k_star);

// Full trace sum_k lambda_k (w*_k)^2, i.e. the loss of the zero predictor.
double initial_loss(const SpectrumTable& table);

// sum_{k=a}^{b} k^-p. Exact summation for small k, midpoint integral beyond,
// so cutoffs far beyond what fits in memory are cheap.
double power_sum(std::int64_t a, std::int64_t b, double p);

// Smallest M for which the truncated trace is within rel_tol of the infinite one.
std::int64_t default_mode_cutoff(double alpha, double beta, double rel_tol = 1e-3);

void write_spectrum_csv(const SpectrumTable& table, const std::string& path);

// Modes pooled into geometric bins in k. Sums over modes are replaced by
//   sum lambda f(lambda)        -> lambda_mass_g f(lambda_g)
//   sum lambda w*^2 f(lambda)   -> target_mass_g f(lambda_g)
// with lambda_g = lambda_mass_g / count_g.
struct ModeGroups {
    std::vector<double> lambda;
    std::vector<double> lambda_mass;
    std::vector<double> target_mass;
    std::vector<std::int64_t> count;

    std::size_t size() const { return lambda.size(); }
    double total_target_mass() const;
    std::int64_t total_modes() const;
};

// Bins an explicit table. max_groups >= M keeps every mode separate.
ModeGroups group_modes(const SpectrumTable& table, int max_groups);

// Bins the analytic power law directly, without materializing M modes.
ModeGroups group_power_law(const SourceCapacitySpec& spec, int max_groups);

} // namespace scalelab

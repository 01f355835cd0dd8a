#pragma once

#include "scalelab/trajectory.hpp"

#include <optional>
#include <vector>

namespace scalelab {

struct FitWindow {
    double t_min = 0.0;
    double t_max = 0.0;
};

struct FitResult {
    double exponent = 0.0;   // minus the log-log slope
    double intercept = 0.0;  // natural-log intercept
    double std_error = 0.0;  // standard error of the slope
    FitWindow window;
    int n_points = 0;

    double slope() const { return -exponent; }
};

// OLS of log y on log x over all given points.
FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

// Points with t in [t_min, t_max]; t <= 0 is skipped.
FitResult fit_power_law(const LossTrajectory& traj, const FitWindow& window);

// Last 1.5 decades of positive times, minus the final 5% of those points.
FitWindow default_fit_window(const LossTrajectory& traj);
FitResult fit_power_law(const LossTrajectory& traj);

// Log-log interpolation of the loss at time t; t must lie inside the positive time range.
double interpolate_loss(const LossTrajectory& traj, double t);

struct GridCurve {
    double n_params = 0.0;
    LossTrajectory traj;
};

struct Envelope {
    std::vector<double> compute;
    std::vector<double> loss;
    std::vector<double> n_star;
    std::vector<double> t_star;
    std::vector<bool> interior;  // optimum strictly between the smallest and largest N

    std::size_t size() const { return compute.size(); }
};

// 16 points per decade spanning every C reachable by at least one curve.
std::vector<double> default_compute_grid(const std::vector<GridCurve>& grid, int per_decade = 16);

// L*(C) = min over N of L_N(C / N); C values no curve covers raise ValidationError.
Envelope compute_optimal_envelope(const std::vector<GridCurve>& grid, const std::vector<double>& compute);

// Envelope exponent over the C values whose optimum is interior, optionally restricted to [c_min, c_max].
FitResult fit_envelope(const Envelope& env, std::optional<FitWindow> window = std::nullopt);

// max |b - a| / |a| over times present in both.
double compare_curves(const LossTrajectory& a, const LossTrajectory& b);

// Fraction of shared checkpoints where |theory - mean| <= k * stderr.
double fraction_within_band(const LossTrajectory& theory, const LossTrajectory& ensemble, double k = 3.0);

void write_envelope_csv(const Envelope& env, const std::string& path);

} // namespace scalelab

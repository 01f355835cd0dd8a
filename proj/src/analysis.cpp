#include "scalelab/analysis.hpp"

#include "scalelab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>

namespace scalelab {

FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("fit inputs misaligned");
    if (x.size() < 3) throw ValidationError("power-law fit needs at least 3 points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    std::vector<double> lx(x.size()), ly(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) throw ValidationError("nonpositive abscissa in power-law fit");
        if (!(y[i] > 0.0)) throw ValidationError("nonpositive loss in fit window");
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw ValidationError("power-law fit needs distinct abscissae");
    const double slope = sxy / sxx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = ly[i] - (my + slope * (lx[i] - mx));
        ssr += r * r;
    }
    FitResult f;
    f.exponent = -slope;
    f.intercept = my - slope * mx;
    f.std_error = std::sqrt(ssr / (n - 2.0) / sxx);
    f.window = {*std::min_element(x.begin(), x.end()), *std::max_element(x.begin(), x.end())};
    f.n_points = static_cast<int>(x.size());
    return f;
}

FitResult fit_power_law(const LossTrajectory& traj, const FitWindow& window) {
    if (!(window.t_min < window.t_max)) throw ValidationError("fit window must have t_min < t_max");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const double t = traj.times[i];
        if (t > 0.0 && t >= window.t_min && t <= window.t_max) {
            x.push_back(t);
            y.push_back(traj.losses[i]);
        }
    }
    FitResult f = fit_loglog(x, y);
    f.window = window;
    return f;
}

FitWindow default_fit_window(const LossTrajectory& traj) {
    std::vector<double> ts;
    for (double t : traj.times)
        if (t > 0.0) ts.push_back(t);
    if (ts.size() < 3) throw ValidationError("too few positive times for a fit");
    const double t_end = ts.back();
    const double t_start = t_end / std::pow(10.0, 1.5);
    std::vector<double> in;
    for (double t : ts)
        if (t >= t_start) in.push_back(t);
    const auto drop = static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(in.size())));
    if (in.size() - drop < 3) throw ValidationError("too few points in the default fit window");
    return {in.front(), in[in.size() - 1 - drop]};
}

FitResult fit_power_law(const LossTrajectory& traj) { return fit_power_law(traj, default_fit_window(traj)); }

double interpolate_loss(const LossTrajectory& traj, double t) {
    // First index with positive time.
    std::size_t lo = 0;
    while (lo < traj.size() && !(traj.times[lo] > 0.0)) ++lo;
    if (lo >= traj.size() || t < traj.times[lo] || t > traj.times.back())
        throw ValidationError("time outside trajectory range");
    auto it = std::lower_bound(traj.times.begin() + static_cast<std::ptrdiff_t>(lo), traj.times.end(), t);
    auto j = static_cast<std::size_t>(it - traj.times.begin());
    if (traj.times[j] == t) return traj.losses[j];
    const std::size_t i = j - 1;
    const double u = (std::log(t) - std::log(traj.times[i])) / (std::log(traj.times[j]) - std::log(traj.times[i]));
    return std::exp((1.0 - u) * std::log(traj.losses[i]) + u * std::log(traj.losses[j]));
}

namespace {

std::pair<double, double> positive_range(const LossTrajectory& t) {
    double lo = std::numeric_limits<double>::infinity();
    for (double x : t.times)
        if (x > 0.0) {
            lo = x;
            break;
        }
    return {lo, t.times.empty() ? 0.0 : t.times.back()};
}

} // namespace

std::vector<double> default_compute_grid(const std::vector<GridCurve>& grid, int per_decade) {
    if (grid.empty()) throw ValidationError("empty loss grid");
    double c_lo = std::numeric_limits<double>::infinity(), c_hi = 0.0;
    for (const auto& g : grid) {
        const auto [t0, t1] = positive_range(g.traj);
        c_lo = std::min(c_lo, g.n_params * t0);
        c_hi = std::max(c_hi, g.n_params * t1);
    }
    std::vector<double> cs;
    const double a = std::ceil(std::log10(c_lo) * per_decade - 1e-9);
    const double b = std::floor(std::log10(c_hi) * per_decade + 1e-9);
    for (double k = a; k <= b; k += 1.0) cs.push_back(std::pow(10.0, k / per_decade));
    return cs;
}

Envelope compute_optimal_envelope(const std::vector<GridCurve>& grid, const std::vector<double>& compute) {
    if (grid.empty()) throw ValidationError("empty loss grid");
    double n_min = std::numeric_limits<double>::infinity(), n_max = 0.0;
    for (const auto& g : grid) {
        if (!(g.n_params > 0.0)) throw ValidationError("grid N must be positive");
        n_min = std::min(n_min, g.n_params);
        n_max = std::max(n_max, g.n_params);
    }
    Envelope env;
    for (double c : compute) {
        double best = std::numeric_limits<double>::infinity(), best_n = 0.0;
        for (const auto& g : grid) {
            const auto [t0, t1] = positive_range(g.traj);
            const double t = c / g.n_params;
            if (t < t0 || t > t1) continue;
            const double l = interpolate_loss(g.traj, t);
            if (l < best) {
                best = l;
                best_n = g.n_params;
            }
        }
        if (!std::isfinite(best)) throw ValidationError("compute budget " + std::to_string(c) + " not covered by the grid");
        env.compute.push_back(c);
        env.loss.push_back(best);
        env.n_star.push_back(best_n);
        env.t_star.push_back(c / best_n);
        env.interior.push_back(best_n > n_min && best_n < n_max);
    }
    return env;
}

FitResult fit_envelope(const Envelope& env, std::optional<FitWindow> window) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < env.size(); ++i) {
        if (!env.interior[i]) continue;
        if (window && (env.compute[i] < window->t_min || env.compute[i] > window->t_max)) continue;
        x.push_back(env.compute[i]);
        y.push_back(env.loss[i]);
    }
    return fit_loglog(x, y);
}

double compare_curves(const LossTrajectory& a, const LossTrajectory& b) {
    std::map<double, double> bm;
    for (std::size_t i = 0; i < b.size(); ++i) bm[b.times[i]] = b.losses[i];
    double worst = 0.0;
    std::size_t shared = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto it = bm.find(a.times[i]);
        if (it == bm.end()) continue;
        ++shared;
        const double ref = std::abs(a.losses[i]);
        const double d = std::abs(it->second - a.losses[i]);
        worst = std::max(worst, ref > 0.0 ? d / ref : (d > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
    }
    if (shared == 0) throw ValidationError("curves share no checkpoints");
    return worst;
}

double fraction_within_band(const LossTrajectory& theory, const LossTrajectory& ensemble, double k) {
    if (ensemble.stderrs.size() != ensemble.size()) throw ValidationError("ensemble lacks standard errors");
    std::map<double, double> th;
    for (std::size_t i = 0; i < theory.size(); ++i) th[theory.times[i]] = theory.losses[i];
    std::size_t shared = 0, inside = 0;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        auto it = th.find(ensemble.times[i]);
        if (it == th.end()) continue;
        ++shared;
        // Rounding slack for deterministic checkpoints such as t = 0, where the stderr is exactly zero.
        const double slack = 1e-12 * std::abs(ensemble.losses[i]);
        if (std::abs(it->second - ensemble.losses[i]) <= k * ensemble.stderrs[i] + slack) ++inside;
    }
    if (shared == 0) throw ValidationError("curves share no checkpoints");
    return static_cast<double>(inside) / static_cast<double>(shared);
}

void write_envelope_csv(const Envelope& env, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out << std::setprecision(17) << "C,L_star,N_star,t_star\n";
    for (std::size_t i = 0; i < env.size(); ++i)
        out << env.compute[i] << ',' << env.loss[i] << ',' << env.n_star[i] << ',' << env.t_star[i] << '\n';
}

} // namespace scalelab

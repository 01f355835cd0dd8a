#pragma once

// Reference computations written independently of the library, used as test oracles.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

// sum_{k=1}^{n} k^-p by plain summation from the small end.
inline double partial_zeta(double p, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t k = n; k >= 1; --k) s += std::pow(static_cast<double>(k), -p);
    return s;
}

struct Line {
    double slope, intercept;
};

// Least-squares line through (log x, log y), textbook normal equations.
inline Line loglog_line(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {slope, (sy - slope * sx) / n};
}

inline std::vector<double> logspace(double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = std::pow(10.0, a + (b - a) * i / (n - 1));
    return v;
}

// Root of f(r) = (1/R) sum_k lambda_k r / (1 + lambda_k r) - 1 by plain bisection on [0, hi].
template <class Lambdas>
double bottleneck_root(const Lambdas& lambda, double resource) {
    auto f = [&](double r) {
        double s = 0.0;
        for (double l : lambda) s += l * r / (1.0 + l * r);
        return s / resource - 1.0;
    };
    double lo = 0.0, hi = 1.0;
    while (f(hi) < 0.0) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// chi = beta max(1, 2 / (1 + beta)).
inline double chi(double beta) { return beta * std::max(1.0, 2.0 / (1.0 + beta)); }

} // namespace oracle

#include "scalelab/spectra.hpp"

#include "scalelab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace scalelab {

namespace {

constexpr std::int64_t kExactSumLimit = 2000;

// Integer bin edges 1 = e_0 < e_1 < ... < e_G = M + 1, roughly geometric.
std::vector<std::int64_t> geometric_edges(std::int64_t m, int max_groups) {
    std::vector<std::int64_t> edges;
    if (max_groups >= m) {
        for (std::int64_t k = 1; k <= m + 1; ++k) edges.push_back(k);
        return edges;
    }
    const double top = std::log(static_cast<double>(m + 1));
    for (int g = 0; g <= max_groups; ++g) {
        auto e = static_cast<std::int64_t>(std::llround(std::exp(top * g / max_groups)));
        e = std::clamp<std::int64_t>(e, 1, m + 1);
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    if (edges.back() != m + 1) edges.push_back(m + 1);
    return edges;
}

} // namespace

void SourceCapacitySpec::validate() const {
    if (!(alpha > 1.0)) throw ValidationError("capacity exponent alpha must exceed 1");
    if (!(beta > 0.0)) throw ValidationError("source exponent beta must be positive");
    if (mode_cutoff < 1) throw ValidationError("mode_cutoff must be at least 1");
}

SpectrumTable build_spectrum(const SourceCapacitySpec& spec) {
    spec.validate();
    SpectrumTable t;
    t.alpha = spec.alpha;
    t.beta = spec.beta;
    const auto m = static_cast<std::size_t>(spec.mode_cutoff);
    t.eigenvalues.resize(m);
    t.target_weights_sq.resize(m);
    const double w_exp = spec.alpha - spec.alpha * spec.beta - 1.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double k = static_cast<double>(i + 1);
        t.eigenvalues[i] = std::pow(k, -spec.alpha);
        t.target_weights_sq[i] = std::pow(k, w_exp);
    }
    return t;
}

RkhsNorm rkhs_norm(const SpectrumTable& table, const SourceCapacitySpec& spec) {
    spec.validate();
    if (table.size() != static_cast<std::size_t>(spec.mode_cutoff) || table.alpha != spec.alpha ||
        table.beta != spec.beta)
        throw ValidationError("spectrum table was not built from this spec");
    RkhsNorm r;
    r.truncated_sum = std::accumulate(table.target_weights_sq.begin(), table.target_weights_sq.end(), 0.0);
    r.divergent = spec.beta <= 1.0;
    r.leading_estimate = r.divergent ? std::numeric_limits<double>::infinity()
                                     : 1.0 / (spec.alpha * (spec.beta - 1.0));
    return r;
}

double tail_loss(const SpectrumTable& table, std::int64_t k_star) {
    const auto m = static_cast<std::int64_t>(table.size());
    if (k_star < 0 || k_star > m) throw ValidationError("k_star outside [0, M]");
    // Summed from the smallest terms up for accuracy.
    double s = 0.0;
    for (std::int64_t i = m - 1; i >= k_star; --i) s += table.weighted(static_cast<std::size_t>(i));
    return s;
}

double initial_loss(const SpectrumTable& table) { return tail_loss(table, 0); }

double power_sum(std::int64_t a, std::int64_t b, double p) {
    if (b < a) return 0.0;
    double s = 0.0;
    const std::int64_t exact_end = std::min(b, std::max(a - 1, kExactSumLimit));
    for (std::int64_t k = exact_end; k >= a; --k) s += std::pow(static_cast<double>(k), -p);
    const std::int64_t lo = std::max(a, exact_end + 1);
    if (lo <= b) {
        const double x0 = static_cast<double>(lo) - 0.5;
        const double x1 = static_cast<double>(b) + 0.5;
        if (std::abs(p - 1.0) < 1e-12) {
            s += std::log(x1 / x0);
        } else {
            s += (std::pow(x0, 1.0 - p) - std::pow(x1, 1.0 - p)) / (p - 1.0);
        }
    }
    return s;
}

std::int64_t default_mode_cutoff(double alpha, double beta, double rel_tol) {
    SourceCapacitySpec{alpha, beta, 1}.validate();
    const double p = alpha * beta + 1.0;
    // Tail beyond M is about M^(1-p)/(p-1); the full trace is at least 1.
    const double total = power_sum(1, kExactSumLimit, p) +
                         std::pow(kExactSumLimit + 0.5, 1.0 - p) / (p - 1.0);
    const double m = std::pow((p - 1.0) * rel_tol * total, -1.0 / (p - 1.0));
    if (!std::isfinite(m) || m > 1e15) throw ValidationError("default cutoff too large for this alpha*beta");
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(m)));
}

void write_spectrum_csv(const SpectrumTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(17);
    out << "k,lambda,w_star_sq\n";
    for (std::size_t i = 0; i < table.size(); ++i)
        out << i + 1 << ',' << table.eigenvalues[i] << ',' << table.target_weights_sq[i] << '\n';
}

double ModeGroups::total_target_mass() const {
    double s = 0.0;
    for (auto it = target_mass.rbegin(); it != target_mass.rend(); ++it) s += *it;
    return s;
}

std::int64_t ModeGroups::total_modes() const {
    return std::accumulate(count.begin(), count.end(), std::int64_t{0});
}

ModeGroups group_modes(const SpectrumTable& table, int max_groups) {
    if (max_groups < 1) throw ValidationError("max_groups must be positive");
    const auto m = static_cast<std::int64_t>(table.size());
    const auto edges = geometric_edges(m, max_groups);
    ModeGroups g;
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        double lm = 0.0, tm = 0.0;
        for (std::int64_t k = edges[b + 1] - 1; k >= edges[b]; --k) {
            const auto i = static_cast<std::size_t>(k - 1);
            lm += table.eigenvalues[i];
            tm += table.weighted(i);
        }
        const std::int64_t n = edges[b + 1] - edges[b];
        g.count.push_back(n);
        g.lambda_mass.push_back(lm);
        g.target_mass.push_back(tm);
        g.lambda.push_back(lm / static_cast<double>(n));
    }
    return g;
}

ModeGroups group_power_law(const SourceCapacitySpec& spec, int max_groups) {
    spec.validate();
    if (max_groups < 1) throw ValidationError("max_groups must be positive");
    const auto edges = geometric_edges(spec.mode_cutoff, max_groups);
    const double p_target = spec.alpha * spec.beta + 1.0;
    ModeGroups g;
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        const std::int64_t lo = edges[b], hi = edges[b + 1] - 1;
        const double lm = power_sum(lo, hi, spec.alpha);
        const std::int64_t n = hi - lo + 1;
        g.count.push_back(n);
        g.lambda_mass.push_back(lm);
        g.target_mass.push_back(power_sum(lo, hi, p_target));
        g.lambda.push_back(lm / static_cast<double>(n));
    }
    return g;
}

} // namespace scalelab

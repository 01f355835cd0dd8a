#include "oracles.hpp"
#include "scalelab/analysis.hpp"
#include "scalelab/dmft_limits.hpp"
#include "scalelab/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace scalelab;

namespace {

SpectrumTable flat_two_modes() {
    SpectrumTable t;
    t.alpha = 2.0;
    t.beta = 1.0;
    t.eigenvalues = {1.0, 1.0};
    t.target_weights_sq = {1.0, 1.0};
    return t;
}

std::vector<double> chi_grid() { return oracle::logspace(2.0, 8.0, 61); }

} // namespace

TEST_CASE("infinite limit without feature learning is geometric decay per mode") {
    const auto t = build_spectrum({2.0, 0.4, 300});
    const double eta = 0.3;
    const auto sol = solve_infinite_limit(t, eta, 0.0, 200);
    for (int step : {0, 1, 7, 50, 199}) {
        double expect = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k)
            expect += t.weighted(k) * std::pow(1.0 - eta * t.eigenvalues[k], 2 * step);
        CHECK(sol.loss.losses[step] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("infinite limit starts at the trace and stays nonnegative") {
    const auto t = build_spectrum({2.0, 0.4, 2000});
    const auto sol = solve_infinite_limit(t, 0.1, 0.75, 300);
    CHECK(sol.loss.losses.front() == doctest::Approx(initial_loss(t)).epsilon(1e-12));
    for (double l : sol.loss.losses) CHECK(l >= 0.0);
    CHECK(sol.residual < 1e-8);
}

TEST_CASE("hard task: infinite-limit exponent approaches 2 beta / (1 + beta)") {
    const auto g = group_power_law({2.0, 0.4, 10000000}, 300);
    const auto sol = solve_infinite_limit(g, 0.1, 0.75, 1000);
    const auto fit = fit_power_law(sol.loss, {100.0, 1000.0});
    CHECK(std::abs(fit.exponent - 4.0 / 7.0) < 0.05);
}

TEST_CASE("easy task: infinite-limit exponent stays at beta") {
    const auto g = group_power_law({2.0, 1.2, 10000000}, 300);
    const auto sol = solve_infinite_limit(g, 0.1, 0.75, 1000);
    const auto fit = fit_power_law(sol.loss, {100.0, 1000.0});
    CHECK(std::abs(fit.exponent - 1.2) < 0.07);
}

TEST_CASE("markovian integrator: closed form without feature learning") {
    const auto t = build_spectrum({2.0, 0.4, 400});
    auto closed = [&](double time) {
        double s = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k) s += t.weighted(k) * std::exp(-2.0 * t.eigenvalues[k] * time);
        return s;
    };
    // gamma = 0 short-circuits; a negligible gamma runs the integrator itself.
    for (double gamma : {0.0, 1e-14}) {
        const auto sol = integrate_markovian(t, gamma, 100.0);
        for (std::size_t i = 0; i < sol.loss.size(); i += 7)
            CHECK(sol.loss.losses[i] == doctest::Approx(closed(sol.loss.times[i])).epsilon(1e-6));
    }
    MarkovOptions rk;
    rk.method = MarkovMethod::rk4;
    const auto sol = integrate_markovian(t, 1e-14, 20.0, rk);
    for (std::size_t i = 0; i < sol.loss.size(); i += 50)
        CHECK(sol.loss.losses[i] == doctest::Approx(closed(sol.loss.times[i])).epsilon(1e-6));
}

TEST_CASE("markovian integrator rejects oversized mode sets") {
    CHECK_THROWS_AS(integrate_markovian(build_spectrum({2.0, 0.4, 5000}), 0.5, 10.0), ValidationError);
}

TEST_CASE("the three limit solvers agree on the loss exponent") {
    for (double beta : {0.4, 0.7, 1.2}) {
        for (double gamma : {0.25, 0.75}) {
            CAPTURE(beta);
            CAPTURE(gamma);
            const auto groups = group_power_law({2.0, beta, 10000000}, 300);
            const double eta = 0.1;
            const auto rec = solve_infinite_limit(groups, eta, gamma, 1000);
            const auto mk = integrate_markovian(groups, gamma, 1e5);
            const auto chi = solve_chi(SourceCapacitySpec{2.0, beta, 1000000000000LL}, gamma, chi_grid());
            // Same horizon in continuous time: steps [100, 1000] are tau [10, 100].
            const double early_rec = fit_power_law(rec.loss, {100.0, 1000.0}).exponent;
            const double early_mk = fit_power_law(mk.loss, {10.0, 100.0}).exponent;
            CHECK(std::abs(early_rec - early_mk) < 0.05);
            const double late_mk = fit_power_law(mk.loss, {1e4, 1e5}).exponent;
            CHECK(std::abs(late_mk - chi.chi) < 0.05);
            CHECK(std::abs(chi.chi - oracle::chi(beta)) < 0.05);
            if (beta < 1.0) {
                // Kernel scale grows as t^(1 - chi).
                LossTrajectory scale;
                scale.times = mk.loss.times;
                scale.losses = mk.kernel_scale;
                const double growth = fit_power_law(scale, {1e4, 1e5}).slope();
                CHECK(std::abs(growth - (1.0 - oracle::chi(beta))) < 0.07);
            }
        }
    }
}

TEST_CASE("chi fixed point: values at and around the branch point") {
    for (double beta : {0.4, 1.0, 1.2}) {
        CAPTURE(beta);
        const auto r = solve_chi(SourceCapacitySpec{2.0, beta, 1000000000000LL}, 0.75, chi_grid());
        CHECK(std::abs(r.chi - oracle::chi(beta)) < 0.01);
        CHECK(r.iterations > 0);
        // History holds the starting guess plus one entry per iteration.
        CHECK(r.history.size() == static_cast<std::size_t>(r.iterations) + 1);
        CHECK(r.history.back() == r.chi);
    }
}

TEST_CASE("chi grid must span three decades") {
    CHECK_THROWS_AS(solve_chi(SourceCapacitySpec{2.0, 0.4, 100000}, 0.75, oracle::logspace(2, 4, 20)),
                    ValidationError);
}

TEST_CASE("bootstrap series follows chi_{n+1} = beta (2 - chi_n)") {
    const auto s = bootstrap_chi(0.5, 30);
    REQUIRE(s.size() == 30);
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.75);
    CHECK(s[2] == 0.625);
    CHECK(s[3] == 0.6875);
    for (double c : bootstrap_chi(1.0, 12)) CHECK(c == 1.0);
    for (double beta : {0.1, 0.3, 0.5, 0.6, 0.7, 0.9}) {
        CAPTURE(beta);
        const auto b = bootstrap_chi(beta, 31);
        const double fixed = 2.0 * beta / (1.0 + beta);
        // e_{n+1} = -beta e_n exactly, so |chi_30 - fixed| = beta^30 |beta - fixed|.
        const double predicted = std::pow(beta, 30) * (fixed - beta);
        CHECK(std::abs(std::abs(b[30] - fixed) - predicted) < 1e-4 * predicted + 1e-15);
        if (beta <= 0.6) CHECK(std::abs(b[30] - fixed) < 1e-6);
        for (std::size_t n = 1; n + 1 < b.size(); ++n) {
            const double e0 = b[n] - fixed, e1 = b[n + 1] - fixed;
            if (std::abs(e0) < 1e-8) break;
            CHECK(e0 * e1 < 0.0);
            CHECK(std::abs(e1 / e0) == doctest::Approx(beta).epsilon(1e-6));
        }
    }
}

TEST_CASE("bottleneck scales: analytic two-mode roots") {
    const auto t = flat_two_modes();
    CHECK(solve_r3(t, 1.0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(solve_r1(t, 1.0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_AS(solve_r3(t, 2.0), NoSolutionError);
    CHECK_THROWS_AS(solve_r1(t, 3.0), NoSolutionError);
}

TEST_CASE("r3 grows as N^alpha") {
    for (double alpha : {1.5, 2.0, 3.0}) {
        CAPTURE(alpha);
        const auto t = build_spectrum({alpha, 1.0, 100000});
        std::vector<double> ns = oracle::logspace(1, 3, 9), rs;
        double prev = 0.0;
        for (double n : ns) {
            const double r = solve_r3(t, n, 1e-12);
            CHECK(r == doctest::Approx(oracle::bottleneck_root(t.eigenvalues, n)).epsilon(1e-8));
            // Residual of the self-consistency at the root.
            double s = 0.0;
            for (double l : t.eigenvalues) s += l * r / (1.0 + l * r);
            CHECK(std::abs(s / n - 1.0) < 1e-10);
            CHECK(r > prev);
            prev = r;
            rs.push_back(r);
        }
        CHECK(oracle::loglog_line(ns, rs).slope == doctest::Approx(alpha).epsilon(0.05 / alpha));
    }
}

TEST_CASE("limiting loss decays as resource^-alpha min(2, beta)") {
    const std::vector<double> rs = oracle::logspace(1, 3, 9);
    for (auto [beta, expect, tol] : {std::tuple{0.5, -1.0, 0.1}, std::tuple{3.0, -4.0, 0.15}}) {
        CAPTURE(beta);
        const auto t = build_spectrum({2.0, beta, 100000});
        std::vector<double> ln, lp;
        for (double r : rs) {
            ln.push_back(asymptotic_loss_vs_N(t, r));
            lp.push_back(asymptotic_loss_vs_P(t, r));
        }
        for (std::size_t i = 1; i < ln.size(); ++i) CHECK(ln[i] < ln[i - 1]);
        CHECK(std::abs(oracle::loglog_line(rs, ln).slope - expect) < tol);
        CHECK(std::abs(oracle::loglog_line(rs, lp).slope - expect) < tol);
        CHECK(bottleneck_loss(t, 0.0) == doctest::Approx(initial_loss(t)).epsilon(1e-14));
    }
}

TEST_CASE("bottleneck scan report") {
    const auto t = build_spectrum({2.0, 0.5, 100000});
    const auto rep = bottleneck_scan(t, {10, 30, 100, 300, 1000}, "P");
    CHECK(rep.resource == "P");
    REQUIRE(rep.rows.size() == 5);
    for (const auto& row : rep.rows) {
        CHECK(row.r_value > 0.0);
        CHECK(row.limiting_loss >= 0.0);
    }
    CHECK(std::abs(rep.loss_slope + 1.0) < 0.1);
    CHECK(std::abs(rep.r_slope - 2.0) < 0.05);
    CHECK_THROWS_AS(bottleneck_scan(t, {10, 100}, "Q"), ValidationError);
}

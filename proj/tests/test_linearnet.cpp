#include "oracles.hpp"
#include "scalelab/analysis.hpp"
#include "scalelab/errors.hpp"
#include "scalelab/linearnet.hpp"
#include "scalelab/rng.hpp"
#include "scalelab/simulator.hpp"

#include <doctest.h>

#include <cmath>

using namespace scalelab;

namespace {

LinearNetConfig config(std::int64_t width, std::int64_t steps) {
    LinearNetConfig c;
    c.width = width;
    c.richness = 1.0;
    c.learning_rate = 0.05;
    c.batch_size = 16;
    c.steps = steps;
    c.seed = 1;
    return c;
}

// Batch loss (1/2B) sum (f(x) - y)^2 written out from the predictor definition.
double batch_loss(const Eigen::VectorXd& w, const Eigen::MatrixXd& A, const LinearNetState& s0, double gamma,
                  const Eigen::MatrixXd& x, const Eigen::VectorXd& w_star) {
    const double n = static_cast<double>(w.size());
    double acc = 0.0;
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        const Eigen::VectorXd xb = x.row(b).transpose();
        const double f = (w.dot(A * xb) - s0.w0.dot(s0.A0 * xb)) / (gamma * n);
        const double d = f - w_star.dot(xb);
        acc += d * d;
    }
    return acc / (2.0 * static_cast<double>(x.rows()));
}

} // namespace

TEST_CASE("init: predictor vanishes and loss equals the trace") {
    const auto t = build_spectrum({2.0, 0.5, 200});
    double trace = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) trace += t.weighted(i);
    for (std::uint64_t seed : {0ULL, 5ULL, 77ULL}) {
        auto c = config(32, 0);
        c.seed = seed;
        const auto s = init_linearnet(t, c);
        CHECK(effective_map(s, 1.0).norm() == 0.0);
        CHECK(linearnet_loss(s, t, 1.0) == doctest::Approx(trace).epsilon(1e-13));
        CHECK(spike_norm(s) == doctest::Approx(s.w0.squaredNorm() / 32.0).epsilon(1e-15));
        const auto run = train_linearnet(t, c);
        REQUIRE(run.loss.size() == 1);
        CHECK(run.loss.losses[0] == doctest::Approx(trace).epsilon(1e-13));
        CHECK(run.spike.losses[0] == doctest::Approx(spike_norm(s)).epsilon(1e-15));
    }
}

TEST_CASE("init: spike starts at order one for a unit-variance readout") {
    const auto t = build_spectrum({2.0, 0.5, 100});
    const auto s = init_linearnet(t, config(4096, 0));
    CHECK(spike_norm(s) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("one step matches finite-difference SGD on the batch loss") {
    const auto t = build_spectrum({2.0, 0.7, 6});
    auto c = config(4, 1);
    c.richness = 0.6;
    c.learning_rate = 0.3;
    c.batch_size = 5;
    c.checkpoints = {0, 1};
    const auto s0 = init_linearnet(t, c);
    Rng rng(derive_seed(c.seed, 1));
    const Eigen::MatrixXd x = sample_batch(t, c.batch_size, rng);
    const Eigen::VectorXd w_star = target_vector(t);

    const double h = 1e-6;
    Eigen::VectorXd gw(s0.w.size());
    for (Eigen::Index i = 0; i < gw.size(); ++i) {
        Eigen::VectorXd wp = s0.w, wm = s0.w;
        wp[i] += h;
        wm[i] -= h;
        gw[i] = (batch_loss(wp, s0.A, s0, c.richness, x, w_star) - batch_loss(wm, s0.A, s0, c.richness, x, w_star)) /
                (2.0 * h);
    }
    Eigen::MatrixXd gA(s0.A.rows(), s0.A.cols());
    for (Eigen::Index i = 0; i < gA.rows(); ++i)
        for (Eigen::Index k = 0; k < gA.cols(); ++k) {
            Eigen::MatrixXd ap = s0.A, am = s0.A;
            ap(i, k) += h;
            am(i, k) -= h;
            gA(i, k) = (batch_loss(s0.w, ap, s0, c.richness, x, w_star) -
                        batch_loss(s0.w, am, s0, c.richness, x, w_star)) /
                       (2.0 * h);
        }
    // Step size eta * gamma^2 * N on the raw parameters.
    const double lr = c.learning_rate * c.richness * c.richness * static_cast<double>(c.width);
    LinearNetState s1 = s0;
    s1.w -= lr * gw;
    s1.A -= lr * gA;
    const auto run = train_linearnet(t, c);
    REQUIRE(run.loss.size() == 2);
    CHECK(run.loss.losses[1] == doctest::Approx(linearnet_loss(s1, t, c.richness)).epsilon(1e-7));
    CHECK(run.spike.losses[1] == doctest::Approx(spike_norm(s1)).epsilon(1e-7));
}

TEST_CASE("hard task: loss exponent near 2 beta / (1 + beta) and the spike grows") {
    const auto t = build_spectrum({2.0, 0.5, 1000});
    const auto run = train_linearnet_ensemble(t, config(256, 20000), 2);
    const auto fit = fit_power_law(run.loss);
    const auto spike = spike_growth_exponent(run.spike);
    MESSAGE("beta=0.5 loss exponent " << fit.exponent << ", spike exponent " << spike.exponent);
    CHECK(std::abs(fit.exponent - 2.0 / 3.0) < 0.07);
    CHECK(spike.exponent > 0.2);
    // Compared against 1 - chi = 1/3 loosely: the finite run sits below the asymptote.
    CHECK(std::abs(spike.exponent - (1.0 - oracle::chi(0.5))) < 0.1);
}

TEST_CASE("easy task: spike plateaus") {
    const auto t = build_spectrum({2.0, 1.5, 1000});
    const auto run = train_linearnet_ensemble(t, config(256, 20000), 2);
    const auto spike = spike_growth_exponent(run.spike);
    MESSAGE("beta=1.5 spike exponent " << spike.exponent);
    CHECK(std::abs(spike.exponent) < 0.05);
}

TEST_CASE("easy task: loss exponent near beta before the width transient") {
    // The width correction t^-(1 - 1/alpha) / N overtakes t^-beta near t ~ N,
    // so the window stays well below the width.
    const auto t = build_spectrum({2.0, 1.5, 1000});
    const auto run = train_linearnet_ensemble(t, config(4096, 1000), 2);
    const auto fit = fit_power_law(run.loss, {100.0, 1000.0});
    MESSAGE("beta=1.5 loss exponent " << fit.exponent);
    CHECK(std::abs(fit.exponent - 1.5) < 0.1);
}

TEST_CASE("spike exponent of a constant series is zero") {
    LossTrajectory s;
    for (double x : oracle::logspace(0.0, 4.0, 30)) s.push(x, 1.7);
    const auto f = spike_growth_exponent(s, {1.0, 1e4});
    CHECK(std::abs(f.exponent) < 1e-12);
    LossTrajectory g;
    for (double x : oracle::logspace(0.0, 4.0, 30)) g.push(x, 3.0 * std::pow(x, 0.25));
    CHECK(spike_growth_exponent(g, {1.0, 1e4}).exponent == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("ensemble is independent of thread count and carries standard errors") {
    const auto t = build_spectrum({2.0, 0.5, 100});
    const auto c = config(16, 200);
    const auto a = train_linearnet_ensemble(t, c, 3, 1);
    const auto b = train_linearnet_ensemble(t, c, 3, 3);
    CHECK(a.loss.losses == b.loss.losses);
    CHECK(a.spike.losses == b.spike.losses);
    CHECK(a.loss.n_seeds == 3);
    REQUIRE(a.loss.stderrs.size() == a.loss.size());
    CHECK(a.loss.stderrs[0] == 0.0);
    CHECK(a.loss.stderrs.back() > 0.0);
    // Member 0 is the single run with derive_seed(seed, 0).
    auto c0 = c;
    c0.seed = derive_seed(c.seed, 0);
    const auto one = train_linearnet(t, c0);
    const auto single = train_linearnet_ensemble(t, c, 1);
    CHECK(single.loss.losses == one.loss.losses);
}

TEST_CASE("invalid configurations and divergence") {
    const auto t = build_spectrum({2.0, 0.5, 50});
    auto c = config(8, 10);
    c.richness = 0.0;
    CHECK_THROWS_AS(train_linearnet(t, c), ValidationError);
    c = config(0, 10);
    CHECK_THROWS_AS(train_linearnet(t, c), ValidationError);
    c = config(8, 10);
    c.checkpoints = {0, 20};
    CHECK_THROWS_AS(train_linearnet(t, c), ValidationError);
    CHECK_THROWS_AS(train_linearnet_ensemble(t, config(8, 10), 0), ValidationError);
    c = config(8, 2000);
    c.learning_rate = 50.0;
    CHECK_THROWS_AS(train_linearnet(t, c), DivergedError);
}

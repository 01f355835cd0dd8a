#include "oracles.hpp"
#include "scalelab/analysis.hpp"
#include "scalelab/errors.hpp"
#include "scalelab/simulator.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace scalelab;

namespace {

TrainConfig small_config(double gamma = 0.0) {
    TrainConfig c;
    c.n_params = 32;
    c.batch_size = 16;
    c.learning_rate = 0.2;
    c.richness = gamma;
    c.steps = 100;
    c.seed = 11;
    return c;
}

} // namespace

TEST_CASE("init: zero readout gives the full trace as loss") {
    const auto t = build_spectrum({2.0, 0.4, 300});
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
        const auto s = init_state(t, small_config(), seed);
        CHECK(s.w.norm() == 0.0);
        CHECK(s.step == 0);
        CHECK(s.A == s.A0);
        CHECK(test_loss(s, t) == doctest::Approx(initial_loss(t)).epsilon(1e-14));
    }
}

TEST_CASE("init: equal seeds give bit-identical features") {
    const auto t = build_spectrum({2.0, 0.4, 200});
    const auto a = init_state(t, small_config(), 5), b = init_state(t, small_config(), 5);
    const auto c = init_state(t, small_config(), 6);
    CHECK(a.A0 == b.A0);
    CHECK(a.A0 != c.A0);
}

TEST_CASE("init: diagonal of A0^T A0 / N averages to one") {
    const auto t = build_spectrum({2.0, 0.4, 64});
    auto cfg = small_config();
    cfg.n_params = 100;
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = init_state(t, cfg, seed);
        mean += (s.A0.transpose() * s.A0).diagonal().mean() / static_cast<double>(cfg.n_params);
    }
    mean /= 100.0;
    CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(100.0));
}

TEST_CASE("batches: column variance lambda_k, uncorrelated columns, shape") {
    const auto t = build_spectrum({2.0, 0.4, 8});
    Rng rng(3);
    const std::int64_t rows = 200000;
    const auto x = sample_batch(t, rows, rng);
    CHECK(x.rows() == rows);
    CHECK(x.cols() == 8);
    const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(rows);
    for (int k = 0; k < 8; ++k) {
        const double tol = 4.0 * std::sqrt(2.0 / rows);
        CHECK(std::abs(cov(k, k) / t.eigenvalues[k] - 1.0) < tol);
        for (int j = 0; j < k; ++j) {
            const double corr = cov(k, j) / std::sqrt(t.eigenvalues[k] * t.eigenvalues[j]);
            CHECK(std::abs(corr) < 5.0 / std::sqrt(static_cast<double>(rows)));
        }
    }
    const auto one = sample_batch(t, 1, rng);
    CHECK(one.rows() == 1);
    CHECK(one.cols() == 8);
}

TEST_CASE("sgd step: lazy features stay frozen, zero rate is a no-op") {
    const auto t = build_spectrum({2.0, 0.4, 100});
    Rng rng(1);
    auto cfg = small_config(0.0);
    auto s = init_state(t, cfg, 1);
    for (int i = 0; i < 5; ++i) sgd_step(s, sample_batch(t, cfg.batch_size, rng), t, cfg);
    CHECK(s.A == s.A0);
    CHECK(s.step == 5);
    CHECK(s.w.norm() > 0.0);

    cfg.richness = 0.5;
    cfg.learning_rate = 0.0;
    const auto before = s;
    sgd_step(s, sample_batch(t, cfg.batch_size, rng), t, cfg);
    CHECK(s.w == before.w);
    CHECK(s.A == before.A);
}

TEST_CASE("sgd step: both updates use time-t values") {
    const auto t = build_spectrum({2.0, 0.4, 40});
    auto cfg = small_config(0.7);
    auto s = init_state(t, cfg, 2);
    Rng rng(2);
    for (int i = 0; i < 3; ++i) sgd_step(s, sample_batch(t, 8, rng), t, cfg);
    const auto batch = sample_batch(t, 8, rng);

    const double n = static_cast<double>(cfg.n_params), eta = cfg.learning_rate, gamma = cfg.richness;
    const Eigen::VectorXd v0 = target_vector(t) - s.A.transpose() * s.w / n;
    const Eigen::VectorXd v2 = batch.transpose() * (batch * v0) / 8.0;
    const Eigen::VectorXd v4 = s.A0.transpose() * s.A0 * v2 / n;
    const Eigen::VectorXd w_next = s.w + eta * s.A * v2;
    const Eigen::MatrixXd a_next = s.A + eta * gamma * s.w * v4.transpose();

    sgd_step(s, batch, t, cfg);
    CHECK((s.w - w_next).norm() < 1e-12 * w_next.norm());
    CHECK((s.A - a_next).norm() < 1e-12 * a_next.norm());
}

TEST_CASE("population step with identity features decays each mode geometrically") {
    const std::int64_t m = 20;
    const auto t = build_spectrum({2.0, 0.5, m});
    auto cfg = small_config(0.0);
    cfg.n_params = m;
    cfg.learning_rate = 0.5;
    auto s = init_state(t, cfg, 0);
    s.A0 = std::sqrt(static_cast<double>(m)) * Eigen::MatrixXd::Identity(m, m);
    s.A = s.A0;
    const Eigen::VectorXd ws = target_vector(t);
    for (int step = 1; step <= 30; ++step) {
        population_step(s, t, cfg);
        const Eigen::VectorXd v0 = error_vector(s, ws);
        for (std::int64_t k = 0; k < m; ++k) {
            const double expect = std::pow(1.0 - cfg.learning_rate * t.eigenvalues[k], step) * ws[k];
            REQUIRE(v0[k] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("test loss: closed cases and a Monte Carlo estimate") {
    const auto t = build_spectrum({2.0, 0.4, 32});
    auto cfg = small_config(0.5);
    auto s = init_state(t, cfg, 4);
    const Eigen::VectorXd ws = target_vector(t);
    CHECK(test_loss_from_error(Eigen::VectorXd::Zero(32), t) == 0.0);
    CHECK(test_loss_from_error(ws, t) == doctest::Approx(initial_loss(t)));

    Rng rng(4);
    for (int i = 0; i < 20; ++i) sgd_step(s, sample_batch(t, 16, rng), t, cfg);
    const Eigen::VectorXd v0 = error_vector(s, ws);

    // (y - f)^2 averaged over fresh Gaussian inputs; y - f = psi . v0.
    std::mt19937_64 gen(123);
    std::normal_distribution<double> z;
    const int samples = 1000000;
    double acc = 0.0;
    for (int i = 0; i < samples; ++i) {
        double r = 0.0;
        for (int k = 0; k < 32; ++k) r += std::sqrt(t.eigenvalues[k]) * z(gen) * v0[k];
        acc += r * r;
    }
    CHECK(std::abs(acc / samples / test_loss(s, t) - 1.0) < 0.01);
}

TEST_CASE("online runs are deterministic and start at the trace") {
    const auto t = build_spectrum({2.0, 0.4, 200});
    auto cfg = small_config(0.5);
    const auto a = run_online(t, cfg), b = run_online(t, cfg);
    CHECK(a.losses == b.losses);
    CHECK(a.times.front() == 0.0);
    CHECK(a.losses.front() == doctest::Approx(initial_loss(t)).epsilon(1e-14));
    CHECK(a.losses.back() < a.losses.front());
}

TEST_CASE("divergence is reported with its step") {
    const auto t = build_spectrum({2.0, 0.4, 100});
    auto cfg = small_config(0.0);
    cfg.learning_rate = 50.0;
    try {
        run_online(t, cfg);
        FAIL("expected divergence");
    } catch (const DivergedError& e) {
        CHECK(e.step() > 0);
        CHECK(e.step() <= cfg.steps);
    }
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.checkpoints = {0, 5, 5};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.checkpoints = {0, 500};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_config();
    cfg.richness = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    const auto cp = log_checkpoints(100000);
    CHECK(cp.front() == 0);
    CHECK(cp.back() == 100000);
    CHECK(std::is_sorted(cp.begin(), cp.end()));
    CHECK(std::adjacent_find(cp.begin(), cp.end()) == cp.end());
}

TEST_CASE("offline training: zero rate is flat, large datasets track online early") {
    const auto t = build_spectrum({2.0, 0.4, 256});
    auto cfg = small_config(0.0);
    cfg.learning_rate = 0.0;
    cfg.steps = 20;
    for (double l : run_offline(t, cfg, 16).losses) CHECK(l == doctest::Approx(initial_loss(t)).epsilon(1e-14));

    cfg = small_config(0.5);
    cfg.n_params = 64;
    cfg.batch_size = 256;
    cfg.learning_rate = 0.2;
    cfg.steps = 40;
    EnsembleOptions on;
    on.n_seeds = 16;
    EnsembleOptions off = on;
    off.mode = TrainingMode::offline;
    off.n_samples = 8192;
    const auto a = run_ensemble(t, cfg, on);
    auto b_cfg = cfg;
    b_cfg.seed = 1000;  // independent draws
    const auto b = run_ensemble(t, b_cfg, off);
    for (std::size_t i = 1; i < a.size(); ++i) {
        const double se = std::hypot(a.stderrs[i], b.stderrs[i]);
        CHECK(std::abs(a.losses[i] - b.losses[i]) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("offline plateau decays as P^-alpha min(2, beta)") {
    const auto t = build_spectrum({2.0, 0.5, 256});
    TrainConfig cfg;
    cfg.n_params = 512;
    cfg.batch_size = 1;
    cfg.learning_rate = 0.5;
    cfg.richness = 0.0;
    cfg.steps = 3000;
    cfg.checkpoints = {0, 3000};
    cfg.seed = 21;
    EnsembleOptions o;
    o.n_seeds = 8;
    o.mode = TrainingMode::offline;
    std::vector<double> ps = {4, 8, 16, 32}, plateau;
    for (double p : ps) {
        o.n_samples = static_cast<std::int64_t>(p);
        plateau.push_back(run_ensemble(t, cfg, o).losses.back());
    }
    const double slope = oracle::loglog_line(ps, plateau).slope;
    CHECK(slope == doctest::Approx(-1.0).epsilon(0.1));
}

TEST_CASE("B-parameterized training matches projected SGD") {
    const auto t = build_spectrum({2.0, 0.4, 256});
    TrainConfig cfg;
    cfg.n_params = 64;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.2;
    cfg.steps = 200;
    cfg.seed = 8;
    for (double gamma : {0.0, 0.75}) {
        cfg.richness = gamma;
        const auto a = run_online(t, cfg), b = run_b_parameterized(t, cfg);
        REQUIRE(a.size() == b.size());
        CHECK(a.losses.front() == b.losses.front());
        CHECK(compare_curves(a, b) < 1e-6);
    }
}

TEST_CASE("ensembles do not depend on the thread count") {
    const auto t = build_spectrum({2.0, 0.4, 128});
    auto cfg = small_config(0.5);
    EnsembleOptions o;
    o.n_seeds = 6;
    o.threads = 1;
    const auto a = run_ensemble(t, cfg, o);
    o.threads = 4;
    const auto b = run_ensemble(t, cfg, o);
    CHECK(a.losses == b.losses);
    CHECK(a.stderrs == b.stderrs);
    CHECK(a.n_seeds == 6);
}

#include "scalelab/simulator.hpp"

#include "scalelab/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

namespace scalelab {

namespace {

constexpr double kDivergenceFactor = 1e6;

Eigen::VectorXd lambda_vector(const SpectrumTable& table) {
    return Eigen::Map<const Eigen::VectorXd>(table.eigenvalues.data(), static_cast<Eigen::Index>(table.size()));
}

// w += eta A v2 and A += eta gamma w v4^T with v4 = (1/N) A0^T A0 v2, both from time-t values.
void apply_update(ModelState& s, const Eigen::VectorXd& v2, double eta, double gamma) {
    const double n = static_cast<double>(s.w.size());
    Eigen::VectorXd dw = eta * (s.A * v2);
    if (gamma != 0.0) {
        Eigen::VectorXd v4 = s.A0.transpose() * (s.A0 * v2) / n;
        if (!v4.allFinite()) throw DivergedError("non-finite feature update", s.step);
        s.A.noalias() += (eta * gamma) * s.w * v4.transpose();
    }
    s.w += dw;
    if (!s.w.allFinite()) throw DivergedError("non-finite readout", s.step);
    ++s.step;
}

Eigen::VectorXd batch_moment(const Eigen::MatrixXd& batch, const Eigen::VectorXd& v0) {
    return batch.transpose() * (batch * v0) / static_cast<double>(batch.rows());
}

void check_loss(double loss, double initial, std::int64_t step) {
    if (!std::isfinite(loss) || loss > kDivergenceFactor * initial)
        throw DivergedError("loss diverged; reduce the learning rate", step);
}

void check_table(const SpectrumTable& table) {
    if (table.size() == 0) throw ValidationError("empty spectrum table");
}

Rng init_rng(std::uint64_t seed) { return Rng(derive_seed(seed, 0)); }
Rng batch_rng(std::uint64_t seed) { return Rng(derive_seed(seed, 1)); }

nlohmann::json config_meta(const TrainConfig& c, const SpectrumTable& t) {
    return {{"alpha", t.alpha},
            {"beta", t.beta},
            {"mode_cutoff", t.size()},
            {"n_params", c.n_params},
            {"batch_size", c.batch_size},
            {"learning_rate_per_step", c.learning_rate},
            {"richness", c.richness},
            {"steps", c.steps},
            {"seed", c.seed}};
}

} // namespace

void TrainConfig::validate() const {
    if (n_params < 1) throw ValidationError("n_params must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("learning_rate must be finite and nonnegative");
    if (!(richness >= 0.0)) throw ValidationError("richness must be nonnegative");
    if (steps < 0) throw ValidationError("steps must be nonnegative");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        if (checkpoints[i] < 0 || checkpoints[i] > steps) throw ValidationError("checkpoint outside [0, steps]");
        if (i > 0 && checkpoints[i] <= checkpoints[i - 1])
            throw ValidationError("checkpoints must be sorted and unique");
    }
}

std::vector<std::int64_t> TrainConfig::resolved_checkpoints() const {
    return checkpoints.empty() ? log_checkpoints(steps) : checkpoints;
}

std::vector<std::int64_t> log_checkpoints(std::int64_t steps, int per_decade) {
    if (steps < 0) throw ValidationError("steps must be nonnegative");
    if (per_decade < 1) throw ValidationError("per_decade must be positive");
    std::vector<std::int64_t> out{0};
    if (steps == 0) return out;
    const double top = std::log10(static_cast<double>(steps));
    const auto n = static_cast<int>(std::ceil(top * per_decade));
    for (int i = 0; i <= n; ++i) {
        const double x = std::min(top, static_cast<double>(i) / per_decade);
        const auto s = static_cast<std::int64_t>(std::llround(std::pow(10.0, x)));
        if (s > out.back() && s <= steps) out.push_back(s);
    }
    if (out.back() != steps) out.push_back(steps);
    return out;
}

Eigen::VectorXd target_vector(const SpectrumTable& table) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(table.size()));
    for (std::size_t i = 0; i < table.size(); ++i) w[static_cast<Eigen::Index>(i)] = std::sqrt(table.target_weights_sq[i]);
    return w;
}

ModelState init_state(const SpectrumTable& table, const TrainConfig& config, std::uint64_t seed) {
    check_table(table);
    config.validate();
    Rng rng = init_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(config.n_params);
    const auto m = static_cast<Eigen::Index>(table.size());
    ModelState s;
    s.A0.resize(n, m);
    // Row-major fill order so the draw sequence does not depend on storage order.
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < m; ++k) s.A0(i, k) = normal(rng);
    s.A = s.A0;
    s.w = Eigen::VectorXd::Zero(n);
    return s;
}

Eigen::MatrixXd sample_batch(const SpectrumTable& table, std::int64_t batch, Rng& rng) {
    if (batch < 1) throw ValidationError("batch size must be at least 1");
    const auto m = static_cast<Eigen::Index>(table.size());
    Eigen::MatrixXd psi(batch, m);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> sd(table.size());
    for (std::size_t k = 0; k < sd.size(); ++k) sd[k] = std::sqrt(table.eigenvalues[k]);
    for (Eigen::Index mu = 0; mu < batch; ++mu)
        for (Eigen::Index k = 0; k < m; ++k) psi(mu, k) = sd[static_cast<std::size_t>(k)] * normal(rng);
    return psi;
}

Eigen::VectorXd error_vector(const ModelState& state, const Eigen::VectorXd& w_star) {
    return w_star - state.A.transpose() * state.w / static_cast<double>(state.w.size());
}

double test_loss_from_error(const Eigen::VectorXd& v0, const SpectrumTable& table) {
    double s = 0.0;
    for (Eigen::Index k = v0.size() - 1; k >= 0; --k) s += table.eigenvalues[static_cast<std::size_t>(k)] * v0[k] * v0[k];
    return s;
}

double test_loss(const ModelState& state, const SpectrumTable& table) {
    return test_loss_from_error(error_vector(state, target_vector(table)), table);
}

void sgd_step(ModelState& state, const Eigen::MatrixXd& batch, const SpectrumTable& table,
              const TrainConfig& config) {
    if (batch.cols() != state.A.cols()) throw ValidationError("batch width does not match mode count");
    const Eigen::VectorXd v0 = error_vector(state, target_vector(table));
    apply_update(state, batch_moment(batch, v0), config.learning_rate, config.richness);
}

void population_step(ModelState& state, const SpectrumTable& table, const TrainConfig& config) {
    const Eigen::VectorXd v0 = error_vector(state, target_vector(table));
    apply_update(state, lambda_vector(table).cwiseProduct(v0), config.learning_rate, config.richness);
}

namespace {

// Shared driver: `moment(v0, step)` returns v2 for the step.
template <class Moment>
LossTrajectory drive(const SpectrumTable& table, const TrainConfig& config, ModelState state, Moment&& moment) {
    const auto checkpoints = config.resolved_checkpoints();
    const Eigen::VectorXd w_star = target_vector(table);
    const double initial = initial_loss(table);
    LossTrajectory traj;
    std::size_t next = 0;
    for (std::int64_t t = 0;; ++t) {
        const Eigen::VectorXd v0 = error_vector(state, w_star);
        const double loss = test_loss_from_error(v0, table);
        check_loss(loss, initial, t);
        if (next < checkpoints.size() && checkpoints[next] == t) {
            traj.push(static_cast<double>(t), loss);
            ++next;
        }
        if (t == config.steps) break;
        apply_update(state, moment(v0), config.learning_rate, config.richness);
    }
    traj.meta = config_meta(config, table);
    return traj;
}

} // namespace

LossTrajectory run_online(const SpectrumTable& table, const TrainConfig& config) {
    ModelState state = init_state(table, config, config.seed);
    Rng rng = batch_rng(config.seed);
    auto traj = drive(table, config, std::move(state), [&](const Eigen::VectorXd& v0) {
        return batch_moment(sample_batch(table, config.batch_size, rng), v0);
    });
    traj.meta["mode"] = "online";
    return traj;
}

LossTrajectory run_offline(const SpectrumTable& table, const TrainConfig& config, std::int64_t n_samples) {
    if (n_samples < 1) throw ValidationError("n_samples must be at least 1");
    ModelState state = init_state(table, config, config.seed);
    Rng rng = batch_rng(config.seed);
    const Eigen::MatrixXd data = sample_batch(table, n_samples, rng);
    auto traj = drive(table, config, std::move(state),
                      [&](const Eigen::VectorXd& v0) { return batch_moment(data, v0); });
    traj.meta["mode"] = "offline";
    traj.meta["n_samples"] = n_samples;
    return traj;
}

LossTrajectory run_b_parameterized(const SpectrumTable& table, const TrainConfig& config) {
    const ModelState init = init_state(table, config, config.seed);
    Rng rng = batch_rng(config.seed);
    const Eigen::MatrixXd& a0 = init.A0;
    const auto n = a0.rows();
    const double nd = static_cast<double>(n);
    Eigen::MatrixXd bmat = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd w = init.w;
    const Eigen::VectorXd w_star = target_vector(table);
    const double eta = config.learning_rate, gamma = config.richness;
    const double initial = initial_loss(table);
    const auto checkpoints = config.resolved_checkpoints();

    LossTrajectory traj;
    std::size_t next = 0;
    for (std::int64_t t = 0;; ++t) {
        const Eigen::VectorXd v0 = w_star - a0.transpose() * (bmat.transpose() * w) / nd;
        const double loss = test_loss_from_error(v0, table);
        check_loss(loss, initial, t);
        if (next < checkpoints.size() && checkpoints[next] == t) {
            traj.push(static_cast<double>(t), loss);
            ++next;
        }
        if (t == config.steps) break;
        const Eigen::VectorXd v2 = batch_moment(sample_batch(table, config.batch_size, rng), v0);
        const Eigen::VectorXd a0v2 = a0 * v2;
        // Plain gradient step on (w, Bmat); gamma rescales the Bmat rate.
        const Eigen::VectorXd dw = eta * (bmat * a0v2);
        if (gamma != 0.0) bmat.noalias() += (eta * gamma / nd) * w * a0v2.transpose();
        w += dw;
        if (!w.allFinite()) throw DivergedError("non-finite readout", t);
    }
    traj.meta = config_meta(config, table);
    traj.meta["mode"] = "b_parameterized";
    return traj;
}

LossTrajectory run_ensemble(const SpectrumTable& table, const TrainConfig& config, const EnsembleOptions& opts) {
    if (opts.n_seeds < 1) throw ValidationError("n_seeds must be at least 1");
    config.validate();
    std::vector<LossTrajectory> runs(static_cast<std::size_t>(opts.n_seeds));
    std::vector<std::exception_ptr> errors(runs.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            try {
                TrainConfig c = config;
                c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
                switch (opts.mode) {
                case TrainingMode::online: runs[i] = run_online(table, c); break;
                case TrainingMode::offline: runs[i] = run_offline(table, c, opts.n_samples); break;
                case TrainingMode::b_parameterized: runs[i] = run_b_parameterized(table, c); break;
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::clamp(opts.threads, 1, opts.n_seeds);
    std::vector<std::thread> pool;
    for (int k = 1; k < n_threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    LossTrajectory out;
    out.times = runs[0].times;
    out.n_seeds = opts.n_seeds;
    const double n = opts.n_seeds;
    for (std::size_t j = 0; j < out.times.size(); ++j) {
        double mean = 0.0;
        for (const auto& r : runs) mean += r.losses[j];
        mean /= n;
        double var = 0.0;
        for (const auto& r : runs) var += (r.losses[j] - mean) * (r.losses[j] - mean);
        var = opts.n_seeds > 1 ? var / (n - 1.0) : 0.0;
        out.losses.push_back(mean);
        out.stderrs.push_back(std::sqrt(var / n));
    }
    out.meta = runs[0].meta;
    out.meta["seed"] = config.seed;
    out.meta["n_seeds"] = opts.n_seeds;
    return out;
}

} // namespace scalelab

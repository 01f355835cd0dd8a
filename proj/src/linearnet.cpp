#include "scalelab/linearnet.hpp"

#include "scalelab/errors.hpp"
#include "scalelab/rng.hpp"
#include "scalelab/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

namespace scalelab {

void LinearNetConfig::validate() const {
    if (width < 1) throw ValidationError("width must be at least 1");
    if (!(richness > 0.0)) throw ValidationError("richness must be positive for the linear network");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (steps < 0) throw ValidationError("steps must be nonnegative");
    for (std::size_t i = 0; i < checkpoints.size(); ++i)
        if (checkpoints[i] < 0 || checkpoints[i] > steps || (i > 0 && checkpoints[i] <= checkpoints[i - 1]))
            throw ValidationError("checkpoints must be sorted, unique and inside [0, steps]");
}

LinearNetState init_linearnet(const SpectrumTable& table, const LinearNetConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, 0));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(config.width);
    const auto m = static_cast<Eigen::Index>(table.size());
    LinearNetState s;
    s.A0.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < m; ++k) s.A0(i, k) = normal(rng);
    s.w0.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) s.w0[i] = normal(rng);
    s.A = s.A0;
    s.w = s.w0;
    return s;
}

Eigen::VectorXd effective_map(const LinearNetState& s, double richness) {
    const double scale = 1.0 / (richness * static_cast<double>(s.w.size()));
    return scale * (s.A.transpose() * s.w - s.A0.transpose() * s.w0);
}

double linearnet_loss(const LinearNetState& s, const SpectrumTable& table, double richness) {
    const Eigen::VectorXd e = effective_map(s, richness) - target_vector(table);
    return test_loss_from_error(e, table);
}

double spike_norm(const LinearNetState& s) { return s.w.squaredNorm() / static_cast<double>(s.w.size()); }

LinearNetRun train_linearnet(const SpectrumTable& table, const LinearNetConfig& config) {
    LinearNetState s = init_linearnet(table, config);
    Rng rng(derive_seed(config.seed, 1));
    const auto checkpoints = config.checkpoints.empty() ? log_checkpoints(config.steps) : config.checkpoints;
    const Eigen::VectorXd w_star = target_vector(table);
    const double initial = initial_loss(table);
    const double n = static_cast<double>(config.width);
    const double b = static_cast<double>(config.batch_size);
    const double rate = config.learning_rate * config.richness;
    const Eigen::VectorXd bias0 = s.A0.transpose() * s.w0;

    LinearNetRun run;
    std::size_t next = 0;
    for (std::int64_t t = 0;; ++t) {
        const Eigen::VectorXd e = (s.A.transpose() * s.w - bias0) / (config.richness * n) - w_star;
        const double loss = test_loss_from_error(e, table);
        if (!std::isfinite(loss) || loss > 1e6 * initial) throw DivergedError("linear network diverged", t);
        if (next < checkpoints.size() && checkpoints[next] == t) {
            run.loss.push(static_cast<double>(t), loss);
            run.spike.push(static_cast<double>(t), spike_norm(s));
            ++next;
        }
        if (t == config.steps) break;
        const Eigen::MatrixXd x = sample_batch(table, config.batch_size, rng);
        const Eigen::VectorXd err = x * e;               // f - y per sample
        const Eigen::MatrixXd h = x * s.A.transpose();   // hidden preactivations, B x N
        const Eigen::VectorXd gw = h.transpose() * err / b;
        const Eigen::VectorXd gx = x.transpose() * err / b;
        s.A.noalias() -= rate * s.w * gx.transpose();
        s.w -= rate * gw;
        ++s.step;
    }
    nlohmann::json meta = {{"alpha", table.alpha},
                           {"beta", table.beta},
                           {"mode_cutoff", table.size()},
                           {"width", config.width},
                           {"richness", config.richness},
                           {"learning_rate_per_step", config.learning_rate},
                           {"batch_size", config.batch_size},
                           {"steps", config.steps},
                           {"seed", config.seed}};
    run.loss.meta = meta;
    run.spike.meta = meta;
    run.spike.meta["quantity"] = "spike_norm";
    return run;
}

namespace {

LossTrajectory seed_mean(const std::vector<LossTrajectory>& runs) {
    LossTrajectory out;
    out.times = runs[0].times;
    out.n_seeds = static_cast<int>(runs.size());
    const double n = static_cast<double>(runs.size());
    for (std::size_t j = 0; j < out.times.size(); ++j) {
        double mean = 0.0;
        for (const auto& r : runs) mean += r.losses[j];
        mean /= n;
        double var = 0.0;
        for (const auto& r : runs) var += (r.losses[j] - mean) * (r.losses[j] - mean);
        var = runs.size() > 1 ? var / (n - 1.0) : 0.0;
        out.losses.push_back(mean);
        out.stderrs.push_back(std::sqrt(var / n));
    }
    out.meta = runs[0].meta;
    return out;
}

} // namespace

LinearNetRun train_linearnet_ensemble(const SpectrumTable& table, const LinearNetConfig& config, int n_seeds,
                                      int threads) {
    if (n_seeds < 1) throw ValidationError("n_seeds must be at least 1");
    config.validate();
    std::vector<LinearNetRun> runs(static_cast<std::size_t>(n_seeds));
    std::vector<std::exception_ptr> errors(runs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            try {
                LinearNetConfig c = config;
                c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
                runs[i] = train_linearnet(table, c);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int k = 1; k < std::clamp(threads, 1, n_seeds); ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<LossTrajectory> losses, spikes;
    for (const auto& r : runs) {
        losses.push_back(r.loss);
        spikes.push_back(r.spike);
    }
    LinearNetRun out;
    out.loss = seed_mean(losses);
    out.spike = seed_mean(spikes);
    for (auto* t : {&out.loss, &out.spike}) {
        t->meta["seed"] = config.seed;
        t->meta["n_seeds"] = n_seeds;
    }
    return out;
}

FitResult spike_growth_exponent(const LossTrajectory& spike, const FitWindow& window) {
    FitResult f = fit_power_law(spike, window);
    f.exponent = -f.exponent;
    return f;
}

FitResult spike_growth_exponent(const LossTrajectory& spike) {
    return spike_growth_exponent(spike, default_fit_window(spike));
}

} // namespace scalelab

#include "scalelab/dmft_online.hpp"

#include "scalelab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

namespace scalelab {

namespace {

constexpr double kRunawayFactor = 1e6;

// Bins per parallel work item; fixed so the reduction order never depends on thread count.
constexpr std::size_t kChunk = 8;

struct State {
    Matrix C3, Cw, R3;
    Eigen::VectorXd c0;  // equal-time loss, drives the SGD noise
};

struct Sweep {
    Matrix C0, C2, C3, Cw, R3;
};

struct Partial {
    Matrix C0, C2, SH;
};

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite())
        throw IllConditionedError(std::string("non-finite ") + what + "; try a smaller learning rate or horizon");
}

Sweep sweep(const State& s, const ModeGroups& g, double n, double b, double gamma, const TimeDiscretization& d,
            int threads) {
    const int T = d.size();
    const Matrix I = Matrix::Identity(T, T);
    const bool noisy = std::isfinite(b);

    Matrix lhs = I;
    if (gamma != 0.0) lhs.noalias() -= gamma * d.integrate * s.C3.cwiseProduct(d.inner);
    const Matrix Hw = lhs.triangularView<Eigen::Lower>().solve(d.integrate);
    Matrix F = Hw;
    if (gamma != 0.0) F += gamma * s.Cw.cwiseProduct(d.memory);
    const Matrix X = F * s.R3;
    const Matrix P1 = F * s.C3 * F.transpose();
    Matrix P2, D;
    if (noisy) {
        D = s.c0.asDiagonal();
        P2 = X * s.c0.asDiagonal() * X.transpose();
    }

    const std::size_t G = g.size();
    const std::size_t n_chunks = (G + kChunk - 1) / kChunk;
    std::vector<Partial> parts(n_chunks);
    std::vector<std::string> failures(n_chunks);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(T);

    auto work = [&](std::size_t c) {
        Partial& p = parts[c];
        p.C0 = Matrix::Zero(T, T);
        p.C2 = Matrix::Zero(T, T);
        p.SH = Matrix::Zero(T, T);
        Matrix Q0, Q2, tmp;
        for (std::size_t k = c * kChunk; k < std::min(G, (c + 1) * kChunk); ++k) {
            const double lam = g.lambda[k], lm = g.lambda_mass[k], wm = g.target_mass[k];
            Matrix A = I + lam * X;
            if (A.diagonal().cwiseAbs().minCoeff() < 1e-12 || !A.allFinite()) {
                failures[c] = "singular mode filter";
                return;
            }
            const Matrix H = A.triangularView<Eigen::Lower>().solve(I);
            const Eigen::VectorXd a = H * ones;
            p.SH += lm * H;
            Q0 = (lm / n) * P1;
            Q2 = (lam * lm / n) * P1;
            if (noisy) {
                Q0 += (lm * lam / b) * P2;
                Q2 += (lm / b) * D;
            }
            // H Q H^T is symmetric, so it equals H (H Q)^T.
            tmp.noalias() = H.triangularView<Eigen::Lower>() * Q0;
            p.C0.noalias() += H.triangularView<Eigen::Lower>() * tmp.transpose();
            tmp.noalias() = H.triangularView<Eigen::Lower>() * Q2;
            p.C2.noalias() += H.triangularView<Eigen::Lower>() * tmp.transpose();
            p.C0.noalias() += wm * a * a.transpose();
            p.C2.noalias() += (lam * wm) * a * a.transpose();
        }
    };

    const int n_threads = std::clamp<int>(threads, 1, static_cast<int>(std::max<std::size_t>(1, n_chunks)));
    if (n_threads == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) work(c);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t c = static_cast<std::size_t>(t); c < n_chunks; c += static_cast<std::size_t>(n_threads))
                    work(c);
            });
        for (auto& th : pool) th.join();
    }
    for (const auto& f : failures)
        if (!f.empty()) throw IllConditionedError(f + "; try a smaller learning rate or horizon");

    Sweep out;
    out.C0 = Matrix::Zero(T, T);
    out.C2 = Matrix::Zero(T, T);
    Matrix SH = Matrix::Zero(T, T);
    for (const auto& p : parts) {
        out.C0 += p.C0;
        out.C2 += p.C2;
        SH += p.SH;
    }
    const Matrix r3_lhs = I + SH * F / n;
    out.R3 = r3_lhs.triangularView<Eigen::Lower>().solve(I);
    out.C3 = out.R3 * out.C2 * out.R3.transpose();
    out.Cw = Hw * out.C3 * Hw.transpose();
    check_finite(out.C0, "loss correlation");
    check_finite(out.Cw, "readout correlation");
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

ResidualReport compare(const State& s, const Sweep& o, const Matrix& C0_in, const Matrix& C2_in) {
    ResidualReport r;
    r.c3 = max_abs_diff(o.C3, s.C3);
    r.cw = max_abs_diff(o.Cw, s.Cw) / (1.0 + o.Cw.cwiseAbs().maxCoeff());
    r.r3 = max_abs_diff(o.R3, s.R3);
    r.c0 = C0_in.size() ? max_abs_diff(o.C0, C0_in) : (o.C0.diagonal() - s.c0).cwiseAbs().maxCoeff();
    r.c2 = C2_in.size() ? max_abs_diff(o.C2, C2_in) : 0.0;
    return r;
}

// Extends correlations by repeating the last row/column, R3 by the identity.
Matrix pad_correlation(const Matrix& a, int T) {
    const auto t0 = a.rows();
    Matrix z(T, T);
    z.topLeftCorner(t0, t0) = a;
    for (Eigen::Index i = t0; i < T; ++i) {
        z.block(i, 0, 1, t0) = a.row(t0 - 1);
        z.block(0, i, t0, 1) = a.col(t0 - 1);
    }
    z.bottomRightCorner(T - t0, T - t0).setConstant(a(t0 - 1, t0 - 1));
    return z;
}

Matrix pad_response(const Matrix& a, int T) {
    Matrix z = Matrix::Identity(T, T);
    z.topLeftCorner(a.rows(), a.cols()) = a;
    return z;
}

State initial_state(int T, double l0) {
    return {Matrix::Zero(T, T), Matrix::Zero(T, T), Matrix::Identity(T, T), Eigen::VectorXd::Constant(T, l0)};
}

State pad_state(const State& s, int T) {
    const auto t0 = s.c0.size();
    State p{pad_correlation(s.C3, T), pad_correlation(s.Cw, T), pad_response(s.R3, T),
            Eigen::VectorXd::Constant(T, s.c0[t0 - 1])};
    p.c0.head(t0) = s.c0;
    return p;
}

DmftResult solve_on(const ModeGroups& groups, double n, double b, double gamma, const TimeDiscretization& full,
                    const DmftOptions& opt) {
    if (!(opt.tol > 0.0)) throw ValidationError("tol must be positive");
    if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw ValidationError("damping must be in (0, 1]");
    if (opt.max_iter < 1) throw ValidationError("max_iter must be positive");
    if (groups.size() == 0) throw ValidationError("no modes");
    const int T = full.size();
    const double l0 = groups.total_target_mass();

    int tc = T;
    State st;
    if (opt.warm_start) {
        const KernelSet& w = *opt.warm_start;
        if (w.horizon() != T) throw ValidationError("warm start horizon mismatch");
        st = {w.C3, w.Cw, w.R3, w.C0.diagonal()};
    } else {
        if (opt.continuation_step > 0) tc = std::min(T, std::max(1, opt.initial_horizon));
        st = initial_state(tc, l0);
    }

    DmftResult res;
    Sweep last;
    for (;;) {
        const TimeDiscretization d = full.leading(tc);
        int it = 0;
        double r = 0.0;
        for (;;) {
            last = sweep(st, groups, n, b, gamma, d, opt.threads);
            r = compare(st, last, Matrix(), Matrix()).max();
            const double a = it == 0 ? 1.0 : opt.damping;
            st.C3 = (1.0 - a) * st.C3 + a * last.C3;
            st.Cw = (1.0 - a) * st.Cw + a * last.Cw;
            st.R3 = (1.0 - a) * st.R3 + a * last.R3;
            st.c0 = (1.0 - a) * st.c0 + a * last.C0.diagonal();
            ++it;
            ++res.total_sweeps;
            res.residual_history.push_back(r);
            if (opt.verbose) std::cerr << "dmft horizon " << tc << " sweep " << it << " residual " << r << '\n';
            if (!std::isfinite(r)) throw IllConditionedError("fixed-point iteration blew up; try more damping");
            // Same guard as the simulator: unstable dynamics make the kernels grow without bound.
            if (last.C0.diagonal().maxCoeff() > kRunawayFactor * l0)
                throw IllConditionedError("loss grows beyond 1e6 x initial; try a smaller learning rate or horizon");
            if (r < opt.tol) break;
            if (it >= opt.max_iter) throw NonConvergenceError("dmft did not converge at horizon " + std::to_string(tc), r);
        }
        res.iterations = it;
        res.residual = r;
        if (tc == T) break;
        tc = std::min(T, tc + opt.continuation_step);
        st = pad_state(st, tc);
    }

    KernelSet& k = res.kernels;
    k.C0 = std::move(last.C0);
    k.C2 = std::move(last.C2);
    k.C3 = std::move(last.C3);
    k.Cw = std::move(last.Cw);
    k.R3 = std::move(last.R3);
    k.Theta = full.integrate;
    k.times = full.times;
    k.n_params = static_cast<std::int64_t>(n);
    k.batch_size = b;
    k.richness = gamma;
    k.discrete_steps = full.discrete_steps;
    if (full.discrete_steps && T > 1) k.learning_rate = full.integrate(1, 0);

    const auto l = k.loss();
    for (int t = 0; t < T; ++t) res.loss.push(full.times[static_cast<std::size_t>(t)], l[static_cast<std::size_t>(t)]);
    res.loss.meta = {{"solver", full.discrete_steps ? "dmft" : "dmft_flow"},
                     {"n_params", k.n_params},
                     {"batch_size", std::isfinite(b) ? nlohmann::json(b) : nlohmann::json("inf")},
                     {"learning_rate_per_step", k.learning_rate},
                     {"richness", gamma},
                     {"mode_groups", groups.size()},
                     {"sweeps", res.total_sweeps},
                     {"residual", res.residual}};
    return res;
}

} // namespace

Matrix step_matrix(int T, double eta) {
    if (T < 1) throw ValidationError("horizon must be at least 1");
    Matrix m = Matrix::Zero(T, T);
    for (int t = 1; t < T; ++t) m.row(t).head(t).setConstant(eta);
    return m;
}

TimeDiscretization TimeDiscretization::leading(int n) const {
    TimeDiscretization d;
    d.times.assign(times.begin(), times.begin() + n);
    d.integrate = integrate.topLeftCorner(n, n);
    d.inner = inner.topLeftCorner(n, n);
    d.memory = memory.topLeftCorner(n, n);
    d.discrete_steps = discrete_steps;
    return d;
}

TimeDiscretization discrete_grid(int T, double eta) {
    TimeDiscretization d;
    d.integrate = step_matrix(T, eta);
    d.inner = d.integrate;
    d.memory = d.integrate;
    d.times.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) d.times[static_cast<std::size_t>(t)] = t;
    d.discrete_steps = true;
    return d;
}

std::vector<double> flow_times(double t_uniform, double h0, double t_max, double ratio) {
    if (!(h0 > 0.0) || !(ratio > 1.0) || !(t_max > 0.0)) throw ValidationError("invalid flow grid parameters");
    std::vector<double> ts{0.0};
    while (ts.back() < t_uniform - 1e-12 && ts.back() < t_max) ts.push_back(ts.back() + h0);
    while (ts.back() < t_max) ts.push_back(ts.back() * ratio);
    return ts;
}

TimeDiscretization flow_grid(const std::vector<double>& times) {
    const int T = static_cast<int>(times.size());
    if (T < 1 || times[0] != 0.0) throw ValidationError("flow grid must start at 0");
    TimeDiscretization d;
    d.times = times;
    d.integrate = Matrix::Zero(T, T);
    d.inner = Matrix::Zero(T, T);
    for (int i = 1; i < T; ++i) {
        for (int j = 0; j < i; ++j) {
            const double h = times[static_cast<std::size_t>(j + 1)] - times[static_cast<std::size_t>(j)];
            if (!(h > 0.0)) throw ValidationError("flow grid must be strictly increasing");
            d.integrate(i, j + 1) = h;  // implicit: interval (t_j, t_{j+1}] weighted at its right end
            d.inner(i, j) = h;          // explicit: weighted at its left end
        }
    }
    d.memory = d.integrate;
    d.discrete_steps = false;
    return d;
}

std::vector<double> KernelSet::loss() const {
    std::vector<double> l(static_cast<std::size_t>(C0.rows()));
    for (Eigen::Index t = 0; t < C0.rows(); ++t) l[static_cast<std::size_t>(t)] = C0(t, t);
    return l;
}

void DmftParams::validate() const {
    if (n_params < 1) throw ValidationError("n_params must be at least 1");
    if (!(batch_size >= 1.0)) throw ValidationError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(richness >= 0.0)) throw ValidationError("richness must be nonnegative");
    if (horizon < 1) throw ValidationError("horizon must be at least 1");
}

double ResidualReport::max() const { return std::max({c0, c2, c3, cw, r3}); }

DmftResult solve_dmft(const ModeGroups& groups, const DmftParams& p, const DmftOptions& options) {
    p.validate();
    return solve_on(groups, static_cast<double>(p.n_params), p.batch_size, p.richness,
                    discrete_grid(p.horizon, p.learning_rate), options);
}

DmftResult solve_dmft(const SpectrumTable& table, const DmftParams& p, const DmftOptions& options) {
    return solve_dmft(group_modes(table, options.max_groups), p, options);
}

DmftResult solve_dmft_flow(const ModeGroups& groups, std::int64_t n_params, double richness,
                           const std::vector<double>& times, const DmftOptions& options) {
    if (n_params < 1) throw ValidationError("n_params must be at least 1");
    if (!(richness >= 0.0)) throw ValidationError("richness must be nonnegative");
    return solve_on(groups, static_cast<double>(n_params), std::numeric_limits<double>::infinity(), richness,
                    flow_grid(times), options);
}

ResidualReport residuals(const KernelSet& ks, const ModeGroups& groups) {
    const int T = ks.horizon();
    const TimeDiscretization d = ks.discrete_steps ? discrete_grid(T, ks.learning_rate) : flow_grid(ks.times);
    const State s{ks.C3, ks.Cw, ks.R3, ks.C0.diagonal()};
    const Sweep o = sweep(s, groups, static_cast<double>(ks.n_params), ks.batch_size, ks.richness, d, 1);
    return compare(s, o, ks.C0, ks.C2);
}

ResidualReport residuals(const KernelSet& ks, const SpectrumTable& table, int max_groups) {
    return residuals(ks, group_modes(table, max_groups));
}

void write_kernel_csv(const KernelSet& ks, const std::string& path, bool full_matrices) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out << std::setprecision(17);
    if (!full_matrices) {
        out << "step,loss\n";
        for (int t = 0; t < ks.horizon(); ++t) out << ks.times[static_cast<std::size_t>(t)] << ',' << ks.C0(t, t) << '\n';
        return;
    }
    out << "matrix,t,s,value\n";
    const std::pair<const char*, const Matrix*> mats[] = {
        {"C0", &ks.C0}, {"C2", &ks.C2}, {"C3", &ks.C3}, {"Cw", &ks.Cw}, {"R3", &ks.R3}};
    for (const auto& [name, m] : mats)
        for (Eigen::Index t = 0; t < m->rows(); ++t)
            for (Eigen::Index s = 0; s < m->cols(); ++s) out << name << ',' << t << ',' << s << ',' << (*m)(t, s) << '\n';
}

} // namespace scalelab

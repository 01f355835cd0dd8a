#include "scalelab/dmft_limits.hpp"

#include "scalelab/analysis.hpp"
#include "scalelab/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scalelab {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

// Theta C Theta^T for Theta = eta 1[t > s], via running sums.
Matrix sandwich_step(const Matrix& c, double eta) {
    const auto T = c.rows();
    Matrix rows = Matrix::Zero(T, T);  // rows(t, :) = eta sum_{a<t} c(a, :)
    for (Eigen::Index t = 1; t < T; ++t) rows.row(t) = rows.row(t - 1) + eta * c.row(t - 1);
    Matrix out = Matrix::Zero(T, T);
    for (Eigen::Index s = 1; s < T; ++s) out.col(s) = out.col(s - 1) + eta * rows.col(s - 1);
    return out;
}

double filter_residual(const Matrix& C2, const Matrix& Cw, double eta, double gamma) {
    const auto T = C2.rows();
    const Matrix theta = step_matrix(static_cast<int>(T), eta);
    Matrix lhs = Matrix::Identity(T, T);
    lhs.noalias() -= eta * gamma * theta * C2.triangularView<Eigen::StrictlyLower>().toDenseMatrix();
    const Matrix hw = lhs.triangularView<Eigen::Lower>().solve(theta);
    const Matrix direct = hw * C2 * hw.transpose();
    return (direct - Cw).cwiseAbs().maxCoeff() / (1.0 + Cw.cwiseAbs().maxCoeff());
}

} // namespace

LimitSolution solve_infinite_limit(const ModeGroups& groups, double eta, double gamma, int T, const LimitOptions& opts) {
    if (!(eta > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(gamma >= 0.0)) throw ValidationError("richness must be nonnegative");
    if (T < 1) throw ValidationError("horizon must be at least 1");
    if (groups.size() == 0) throw ValidationError("no modes");
    const auto G = static_cast<Eigen::Index>(groups.size());
    const Eigen::VectorXd lam = as_vector(groups.lambda);
    const Eigen::VectorXd wm = as_vector(groups.target_mass);
    const Eigen::VectorXd lwm = lam.cwiseProduct(wm);

    Matrix h(G, T);  // v0 / w* per group
    RowMatrix C2 = RowMatrix::Zero(T, T);
    RowMatrix Cw = RowMatrix::Zero(T + 1, T + 1);

    if (gamma == 0.0) {
        for (Eigen::Index g = 0; g < G; ++g) {
            const double r = 1.0 - eta * lam[g];
            double v = 1.0;
            for (int t = 0; t < T; ++t, v *= r) h(g, t) = v;
        }
        const Matrix hl = lwm.asDiagonal() * h;
        const Matrix c2 = h.transpose() * hl;
        C2 = c2;
        Cw.topLeftCorner(T, T) = sandwich_step(c2, eta);
    } else {
        Matrix p = Matrix::Zero(G, T + 1);  // readout contribution to 1 - v0 / w*
        RowMatrix Hw = RowMatrix::Zero(T + 1, T + 1);
        const double eg = eta * gamma;
        for (int t = 0; t < T; ++t) {
            h.col(t) = Eigen::VectorXd::Ones(G) - p.col(t);
            if (t > 0) h.col(t) -= eg * lam.cwiseProduct(h.leftCols(t) * Cw.row(t).head(t).transpose());
            const Eigen::VectorXd row = h.leftCols(t + 1).transpose() * lwm.cwiseProduct(h.col(t));
            C2.row(t).head(t + 1) = row.transpose();
            C2.col(t).head(t + 1) = row;

            p.col(t + 1) = p.col(t) + eta * lam.cwiseProduct(h.col(t));
            if (t > 0) p.col(t + 1) += eta * eg * (p.leftCols(t) * C2.row(t).head(t).transpose());

            Hw.row(t + 1) = Hw.row(t);
            Hw(t + 1, t) += eta;
            if (t > 0) Hw.row(t + 1).head(t + 1) += eta * eg * (C2.row(t).head(t) * Hw.topLeftCorner(t, t + 1));
            const Eigen::RowVectorXd r = Hw.row(t + 1).head(t + 1) * C2.topLeftCorner(t + 1, t + 1);
            const Eigen::VectorXd cw = Hw.topLeftCorner(t + 2, t + 1) * r.transpose();
            Cw.row(t + 1).head(t + 2) = cw.transpose();
            Cw.col(t + 1).head(t + 2) = cw;
            if (!h.col(t).allFinite() || !cw.allFinite())
                throw DivergedError("infinite-limit recursion diverged; reduce the learning rate", t);
        }
    }

    LimitSolution sol;
    sol.C2 = C2;
    sol.Cw = Cw.topLeftCorner(T, T);
    sol.error_ratio = h;
    const Eigen::VectorXd loss = (h.array().square().colwise() * wm.array()).colwise().sum().transpose();
    for (int t = 0; t < T; ++t) {
        if (!std::isfinite(loss[t])) throw DivergedError("non-finite loss", t);
        sol.loss.push(t, loss[t]);
    }
    if (opts.verify && gamma != 0.0) {
        sol.residual = filter_residual(sol.C2, sol.Cw, eta, gamma);
        if (!(sol.residual < opts.tol))
            throw NonConvergenceError("readout filter inconsistent with its direct solve", sol.residual);
    }
    sol.loss.meta = {{"solver", "infinite_limit"},
                     {"learning_rate_per_step", eta},
                     {"richness", gamma},
                     {"mode_groups", groups.size()},
                     {"residual", sol.residual}};
    return sol;
}

LimitSolution solve_infinite_limit(const SpectrumTable& table, double eta, double gamma, int T, const LimitOptions& opts) {
    return solve_infinite_limit(group_modes(table, opts.max_groups), eta, gamma, T, opts);
}

namespace {

struct MarkovSystem {
    Eigen::VectorXd lam, y;
    double gamma;

    Matrix dK(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd r = y - x;
        const Eigen::VectorXd lx = lam.cwiseProduct(x);
        Matrix d = gamma * (r * lx.transpose() + lx * r.transpose());
        d.diagonal() += 2.0 * gamma * r.dot(x) * lam;
        return d;
    }
    double dscale(const Eigen::VectorXd& x) const { return 2.0 * gamma * (y - x).dot(x); }
};

// exp(-h K) x for symmetric K.
Eigen::VectorXd expv(const Matrix& K, double h, const Eigen::VectorXd& x) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(K);
    if (es.info() != Eigen::Success) throw IllConditionedError("kernel eigendecomposition failed");
    const Eigen::VectorXd c = es.eigenvectors().transpose() * x;
    return es.eigenvectors() * (c.array() * (-h * es.eigenvalues().array()).exp()).matrix();
}

MarkovSolution markov_exponential(const MarkovSystem& sys, double t_max, const MarkovOptions& o) {
    Eigen::VectorXd x = sys.y;
    Matrix K = sys.lam.asDiagonal();
    double t = 0.0, s = 1.0;
    MarkovSolution out;
    out.loss.push(0.0, x.squaredNorm());
    out.kernel_scale.push_back(s);
    std::int64_t step = 0;
    while (t < t_max) {
        double h = t < o.t_uniform ? o.h0 : o.log_step * t;
        h = std::min(h, t_max - t);
        // Exponential midpoint: predictor half step, then a full step with the midpoint kernel.
        const Eigen::VectorXd xm = expv(K + 0.5 * h * sys.dK(x), 0.5 * h, x);
        const Matrix dk = sys.dK(xm);
        x = expv(K + 0.5 * h * dk, h, x);
        K += h * dk;
        s += h * sys.dscale(xm);
        t += h;
        ++step;
        if (!x.allFinite() || !K.allFinite()) throw DivergedError("markovian integration diverged; shrink the step", step);
        out.loss.push(t, x.squaredNorm());
        out.kernel_scale.push_back(s);
    }
    return out;
}

struct Rk4State {
    Eigen::VectorXd x;
    Matrix K;
    double s;
};

MarkovSolution markov_rk4_fixed(const MarkovSystem& sys, double t_max, double dt) {
    const auto n = static_cast<std::int64_t>(std::ceil(t_max / dt - 1e-9));
    const double h = t_max / static_cast<double>(n);
    Rk4State st{sys.y, Matrix(sys.lam.asDiagonal()), 1.0};
    auto deriv = [&](const Rk4State& u) {
        return Rk4State{-(u.K * u.x), sys.dK(u.x), sys.dscale(u.x)};
    };
    auto axpy = [](const Rk4State& u, double a, const Rk4State& d) {
        return Rk4State{u.x + a * d.x, u.K + a * d.K, u.s + a * d.s};
    };
    MarkovSolution out;
    out.loss.push(0.0, st.x.squaredNorm());
    out.kernel_scale.push_back(st.s);
    for (std::int64_t i = 1; i <= n; ++i) {
        const Rk4State k1 = deriv(st);
        const Rk4State k2 = deriv(axpy(st, 0.5 * h, k1));
        const Rk4State k3 = deriv(axpy(st, 0.5 * h, k2));
        const Rk4State k4 = deriv(axpy(st, h, k3));
        st.x += h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
        st.K += h / 6.0 * (k1.K + 2.0 * k2.K + 2.0 * k3.K + k4.K);
        st.s += h / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s);
        if (!st.x.allFinite() || st.x.squaredNorm() > 1e6 * out.loss.losses[0])
            throw DivergedError("rk4 integration unstable; shrink dt", i);
        out.loss.push(static_cast<double>(i) * h, st.x.squaredNorm());
        out.kernel_scale.push_back(st.s);
    }
    return out;
}

MarkovSolution markov_rk4(const MarkovSystem& sys, double t_max, const MarkovOptions& o) {
    double dt = o.rk4_dt;
    MarkovSolution coarse = markov_rk4_fixed(sys, t_max, dt);
    for (int k = 0; k < o.rk4_max_halvings; ++k) {
        dt *= 0.5;
        MarkovSolution fine = markov_rk4_fixed(sys, t_max, dt);
        double worst = 0.0;
        for (std::size_t i = 0; i < coarse.loss.size(); ++i)
            worst = std::max(worst, std::abs(fine.loss.losses[2 * i] - coarse.loss.losses[i]) / coarse.loss.losses[i]);
        coarse = std::move(fine);
        if (worst < o.rk4_rel_tol) return coarse;
    }
    throw NonConvergenceError("rk4 step halving did not settle", dt);
}

} // namespace

MarkovSolution integrate_markovian(const ModeGroups& groups, double gamma, double t_max, const MarkovOptions& opts) {
    if (groups.size() == 0) throw ValidationError("no modes");
    if (groups.size() > 4096) throw ValidationError("dense kernel limited to 4096 mode groups");
    if (!(t_max > 0.0)) throw ValidationError("t_max must be positive");
    if (!(gamma >= 0.0)) throw ValidationError("richness must be nonnegative");
    MarkovSystem sys{as_vector(groups.lambda), as_vector(groups.target_mass).cwiseSqrt(), gamma};

    MarkovSolution out;
    if (gamma == 0.0) {
        // Decoupled modes: Delta_k(t) = exp(-lambda_k t) Delta_k(0) on the default time grid.
        double t = 0.0;
        auto push = [&] {
            out.loss.push(t, (sys.y.array() * (-sys.lam.array() * t).exp()).matrix().squaredNorm());
            out.kernel_scale.push_back(1.0);
        };
        push();
        while (t < t_max) {
            t += std::min(t < opts.t_uniform ? opts.h0 : opts.log_step * t, t_max - t);
            push();
        }
    } else if (opts.method == MarkovMethod::rk4) {
        out = markov_rk4(sys, t_max, opts);
    } else {
        out = markov_exponential(sys, t_max, opts);
    }
    out.loss.meta = {{"solver", "markovian"},
                     {"richness", gamma},
                     {"mode_groups", groups.size()},
                     {"method", opts.method == MarkovMethod::rk4 ? "rk4" : "exponential_midpoint"}};
    return out;
}

MarkovSolution integrate_markovian(const SpectrumTable& table, double gamma, double t_max, const MarkovOptions& opts) {
    if (table.size() > 4096) throw ValidationError("dense kernel limited to 4096 modes; bin the table with group_modes first");
    return integrate_markovian(group_modes(table, static_cast<int>(table.size())), gamma, t_max, opts);
}

ChiResult solve_chi(const ModeGroups& groups, double beta, double gamma, const std::vector<double>& t_grid,
                    const ChiOptions& opts) {
    const auto n = t_grid.size();
    if (n < 5) throw ValidationError("t_grid too short");
    for (std::size_t i = 1; i < n; ++i)
        if (!(t_grid[i] > t_grid[i - 1]) || !(t_grid[0] > 0.0)) throw ValidationError("t_grid must be positive and increasing");
    if (std::log10(t_grid.back() / t_grid.front()) < 3.0 - 1e-9) throw ValidationError("t_grid must span 3 decades");

    // Window: the last 1.5 decades ending at the third-to-last point, final two points excluded.
    const double t_end = t_grid[n - 3];
    std::vector<double> tw;
    for (std::size_t i = 0; i + 2 < n; ++i)
        if (t_grid[i] >= t_end / std::pow(10.0, 1.5)) tw.push_back(t_grid[i]);
    if (tw.size() < 3) throw ValidationError("t_grid too sparse for the slope window");

    auto slope = [&](double chi) {
        std::vector<double> l(tw.size());
        for (std::size_t i = 0; i < tw.size(); ++i) {
            const double tau = tw[i] + gamma * std::pow(tw[i], 2.0 - chi);
            double s = 0.0;
            for (std::size_t g = groups.size(); g-- > 0;) s += groups.target_mass[g] * std::exp(-groups.lambda[g] * tau);
            l[i] = s;
        }
        return fit_loglog(tw, l).exponent;
    };

    ChiResult r;
    double chi = beta;
    r.history.push_back(chi);
    for (int it = 1; it <= opts.max_iter; ++it) {
        const double next = (1.0 - opts.damping) * chi + opts.damping * slope(chi);
        r.history.push_back(next);
        const double step = std::abs(next - chi);
        chi = next;
        if (step < opts.tol) {
            r.chi = chi;
            r.iterations = it;
            return r;
        }
    }
    std::ostringstream ss;
    ss << "chi iteration did not settle; last iterates";
    for (std::size_t i = r.history.size() > 5 ? r.history.size() - 5 : 0; i < r.history.size(); ++i) ss << ' ' << r.history[i];
    throw NonConvergenceError(ss.str(), std::abs(r.history.back() - r.history[r.history.size() - 2]));
}

ChiResult solve_chi(const SourceCapacitySpec& spec, double gamma, const std::vector<double>& t_grid, const ChiOptions& opts) {
    return solve_chi(group_power_law(spec, 4000), spec.beta, gamma, t_grid, opts);
}

std::vector<double> bootstrap_chi(double beta, int levels) {
    if (!(beta > 0.0)) throw ValidationError("beta must be positive");
    if (levels < 1) throw ValidationError("levels must be at least 1");
    std::vector<double> chi{beta};
    while (static_cast<int>(chi.size()) < levels) chi.push_back(beta * (2.0 - chi.back()));
    return chi;
}

double solve_bottleneck_scale(const SpectrumTable& table, double resource, double tol) {
    if (!(resource > 0.0)) throw ValidationError("resource must be positive");
    if (!(tol > 0.0)) throw ValidationError("tol must be positive");
    if (resource >= static_cast<double>(table.size()))
        throw NoSolutionError("resource must be below the mode count: the sum is bounded by M / resource");
    auto f = [&](double r) {
        double s = 0.0;
        for (std::size_t k = table.size(); k-- > 0;) {
            const double lr = table.eigenvalues[k] * r;
            s += lr / (1.0 + lr);
        }
        return s / resource - 1.0;
    };
    double lo = 0.0, hi = 1.0;
    while (f(hi) < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (!std::isfinite(hi)) throw NoSolutionError("bracket growth failed");
    }
    double mid = hi;
    for (int i = 0; i < 400; ++i) {
        mid = 0.5 * (lo + hi);
        const double v = f(mid);
        if (std::abs(v) < tol || hi - lo <= 1e-15 * hi) break;
        (v < 0.0 ? lo : hi) = mid;
    }
    return mid;
}

double solve_r3(const SpectrumTable& table, double n_params, double tol) { return solve_bottleneck_scale(table, n_params, tol); }
double solve_r1(const SpectrumTable& table, double n_samples, double tol) { return solve_bottleneck_scale(table, n_samples, tol); }

double bottleneck_loss(const SpectrumTable& table, double r) {
    double s = 0.0;
    for (std::size_t k = table.size(); k-- > 0;) {
        const double d = 1.0 + table.eigenvalues[k] * r;
        s += table.weighted(k) / (d * d);
    }
    return s;
}

double asymptotic_loss_vs_N(const SpectrumTable& table, double n_params) {
    return bottleneck_loss(table, solve_r3(table, n_params));
}

double asymptotic_loss_vs_P(const SpectrumTable& table, double n_samples) {
    return bottleneck_loss(table, solve_r1(table, n_samples));
}

BottleneckReport bottleneck_scan(const SpectrumTable& table, const std::vector<double>& resources,
                                 const std::string& resource) {
    if (resource != "N" && resource != "P") throw ValidationError("resource must be N or P");
    BottleneckReport rep;
    rep.resource = resource;
    std::vector<double> xs, rs, ls;
    for (double x : resources) {
        const double r = solve_bottleneck_scale(table, x);
        rep.rows.push_back({x, r, bottleneck_loss(table, r)});
        xs.push_back(x);
        rs.push_back(r);
        ls.push_back(rep.rows.back().limiting_loss);
    }
    if (xs.size() >= 3) {
        rep.loss_slope = fit_loglog(xs, ls).slope();
        rep.r_slope = fit_loglog(xs, rs).slope();
    }
    return rep;
}

} // namespace scalelab

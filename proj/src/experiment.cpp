#include "scalelab/experiment.hpp"

#include "scalelab/analysis.hpp"
#include "scalelab/dmft_limits.hpp"
#include "scalelab/dmft_online.hpp"
#include "scalelab/exponents.hpp"
#include "scalelab/linearnet.hpp"
#include "scalelab/rng.hpp"
#include "scalelab/simulator.hpp"
#include "scalelab/trajectory.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace scalelab {

namespace {

// Allowed keys per kind with their defaults. Keys carry their units.
const std::map<ExperimentKind, json>& param_defaults() {
    static const std::map<ExperimentKind, json> d = {
        {ExperimentKind::simulate,
         {{"n_params", 64},
          {"batch_size", 32},
          {"learning_rate_per_step", 0.1},
          {"richness", 0.0},
          {"steps", 1000},
          {"n_seeds", 8},
          {"training", "online"},
          {"n_samples", 0},
          {"checkpoints_per_decade", 64}}},
        {ExperimentKind::dmft,
         {{"n_params", 256},
          {"batch_size", "inf"},
          {"learning_rate_per_step", 0.1},
          {"richness", 0.0},
          {"horizon_steps", 128},
          {"mode_groups", 96},
          {"tol", 1e-8},
          {"damping", 0.5},
          {"max_iter", 500}}},
        {ExperimentKind::limit,
         {{"method", "recursion"},
          {"learning_rate_per_step", 0.1},
          {"richness", 0.75},
          {"horizon_steps", 1000},
          {"t_max_time", 1e5},
          {"mode_groups", 300}}},
        {ExperimentKind::chi,
         {{"richness", 0.75}, {"t_min_time", 1e2}, {"t_max_time", 1e8}, {"grid_points", 61}, {"mode_groups", 4000}}},
        {ExperimentKind::bottleneck, {{"resource", "N"}, {"values", {10, 20, 50, 100, 200, 500, 1000}}}},
        {ExperimentKind::envelope,
         {{"n_params_values", {16, 32, 64, 128, 256, 512, 1024}},
          {"richness", 0.75},
          {"t_max_time", 1e6},
          {"uniform_until_time", 2.0},
          {"uniform_step_time", 0.1},
          {"growth_ratio", 1.06},
          {"mode_groups", 80},
          {"compute_per_decade", 16},
          {"tol", 1e-8},
          {"damping", 1.0}}},
        {ExperimentKind::linearnet,
         {{"width", 64},
          {"richness", 1.0},
          {"learning_rate_per_step", 0.05},
          {"batch_size", 16},
          {"steps", 10000},
          {"n_seeds", 1}}},
        {ExperimentKind::exponent_table, json::object()},
    };
    return d;
}

const std::vector<std::string> kSpectrumKeys = {"alpha", "beta", "mode_cutoff"};

bool is_spectrum_key(const std::string& k) {
    return std::find(kSpectrumKeys.begin(), kSpectrumKeys.end(), k) != kSpectrumKeys.end();
}

void check_type(const std::string& field, const json& value, const json& def) {
    if (def.is_number()) {
        if (!value.is_number()) throw ConfigError("field '" + field + "': expected a number");
        if (def.is_number_integer() && !value.is_number_integer())
            throw ConfigError("field '" + field + "': expected an integer");
    } else if (def.is_string()) {
        // batch_size accepts either a number or "inf".
        if (field.ends_with("batch_size") && value.is_number()) return;
        if (!value.is_string()) throw ConfigError("field '" + field + "': expected a string");
    } else if (def.is_array()) {
        if (!value.is_array() || value.empty()) throw ConfigError("field '" + field + "': expected a non-empty list");
        for (const auto& v : value)
            if (!v.is_number()) throw ConfigError("field '" + field + "': list entries must be numbers");
    }
}

// Spectrum / params of one grid point with the axis values substituted.
struct PointInputs {
    json spectrum;
    json params;
};

PointInputs resolve(const ExperimentConfig& c, const GridPoint& p) {
    PointInputs in{c.spectrum, c.params};
    for (const auto& [k, v] : p.axes.items()) (is_spectrum_key(k) ? in.spectrum : in.params)[k] = v;
    return in;
}

SourceCapacitySpec spectrum_spec(const json& s, bool allow_default_cutoff = true) {
    SourceCapacitySpec spec;
    spec.alpha = s.at("alpha").get<double>();
    spec.beta = s.at("beta").get<double>();
    if (s.contains("mode_cutoff")) {
        spec.mode_cutoff = s.at("mode_cutoff").get<std::int64_t>();
    } else if (allow_default_cutoff) {
        spec.mode_cutoff = default_mode_cutoff(spec.alpha, spec.beta);
    }
    spec.validate();
    return spec;
}

double batch_value(const json& v) {
    if (v.is_string()) {
        if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw ConfigError("batch_size must be a number or \"inf\"");
    }
    return v.get<double>();
}

std::string point_stem(const GridPoint& p) {
    std::ostringstream ss;
    ss << "point_" << std::setw(4) << std::setfill('0') << p.index;
    return ss.str();
}

constexpr std::size_t kMaxTableModes = 20'000'000;

SpectrumTable table_for(const SourceCapacitySpec& spec) {
    if (static_cast<std::size_t>(spec.mode_cutoff) > kMaxTableModes)
        throw ValidationError("mode_cutoff too large for an explicit mode table");
    return build_spectrum(spec);
}

// Result of one grid point.
struct PointResult {
    std::string status = "ok";
    std::string message;
    std::string file;
    std::optional<FitResult> fit;
    json extra = json::object();
};

void write_fit(json& out, const FitResult& f) {
    out["exponent"] = f.exponent;
    out["exponent_stderr"] = f.std_error;
    out["window"] = {f.window.t_min, f.window.t_max};
    out["n_points"] = f.n_points;
}

std::optional<FitResult> try_fit(const LossTrajectory& t) {
    try {
        return fit_power_law(t);
    } catch (const Error&) {
        return std::nullopt;
    }
}

void save_trajectory(const LossTrajectory& t, const fs::path& dir, const std::string& stem, PointResult& r,
                     const json& sidecar_extra) {
    write_trajectory_csv(t, (dir / (stem + ".csv")).string());
    json side = t.meta;
    side.update(sidecar_extra);
    write_json(side, (dir / (stem + ".json")).string());
    r.file = stem + ".csv";
    r.fit = try_fit(t);
}

PointResult run_point(const ExperimentConfig& c, const GridPoint& p, const fs::path& dir, int threads) {
    const PointInputs in = resolve(c, p);
    const json& q = in.params;
    const std::string stem = point_stem(p);
    const json sidecar = {{"grid_point", p.index}, {"axes", p.axes}, {"seed", p.seed}, {"kind", to_string(c.kind)}};
    PointResult r;

    switch (c.kind) {
    case ExperimentKind::simulate: {
        const auto table = table_for(spectrum_spec(in.spectrum));
        TrainConfig tc;
        tc.n_params = q.at("n_params");
        tc.batch_size = q.at("batch_size");
        tc.learning_rate = q.at("learning_rate_per_step");
        tc.richness = q.at("richness");
        tc.steps = q.at("steps");
        tc.seed = p.seed;
        tc.checkpoints = log_checkpoints(tc.steps, q.at("checkpoints_per_decade").get<int>());
        EnsembleOptions eo;
        eo.n_seeds = q.at("n_seeds");
        eo.threads = threads;
        const std::string mode = q.at("training");
        if (mode == "online") eo.mode = TrainingMode::online;
        else if (mode == "offline") eo.mode = TrainingMode::offline;
        else if (mode == "b_parameterized") eo.mode = TrainingMode::b_parameterized;
        else throw ConfigError("field 'params.training': expected online, offline or b_parameterized");
        eo.n_samples = q.at("n_samples");
        save_trajectory(run_ensemble(table, tc, eo), dir, stem, r, sidecar);
        break;
    }
    case ExperimentKind::dmft: {
        const auto spec = spectrum_spec(in.spectrum);
        DmftParams dp;
        dp.n_params = q.at("n_params");
        dp.batch_size = batch_value(q.at("batch_size"));
        dp.learning_rate = q.at("learning_rate_per_step");
        dp.richness = q.at("richness");
        dp.horizon = q.at("horizon_steps");
        DmftOptions o;
        o.max_groups = q.at("mode_groups");
        o.tol = q.at("tol");
        o.damping = q.at("damping");
        o.max_iter = q.at("max_iter");
        o.threads = threads;
        const auto groups = static_cast<std::size_t>(spec.mode_cutoff) <= kMaxTableModes
                                ? group_modes(build_spectrum(spec), o.max_groups)
                                : group_power_law(spec, o.max_groups);
        auto res = solve_dmft(groups, dp, o);
        save_trajectory(res.loss, dir, stem, r, sidecar);
        break;
    }
    case ExperimentKind::limit: {
        const auto spec = spectrum_spec(in.spectrum);
        const auto groups = group_power_law(spec, q.at("mode_groups").get<int>());
        const std::string method = q.at("method");
        const double gamma = q.at("richness");
        if (method == "recursion") {
            auto sol = solve_infinite_limit(groups, q.at("learning_rate_per_step").get<double>(), gamma,
                                            q.at("horizon_steps").get<int>());
            save_trajectory(sol.loss, dir, stem, r, sidecar);
        } else if (method == "markovian") {
            auto sol = integrate_markovian(groups, gamma, q.at("t_max_time").get<double>());
            save_trajectory(sol.loss, dir, stem, r, sidecar);
            LossTrajectory scale;
            scale.times = sol.loss.times;
            scale.losses = sol.kernel_scale;
            const auto sf = try_fit(scale);
            if (sf) r.extra["kernel_scale_exponent"] = -sf->exponent;
        } else {
            throw ConfigError("field 'params.method': expected recursion or markovian");
        }
        break;
    }
    case ExperimentKind::chi: {
        auto spec = spectrum_spec(in.spectrum, false);
        if (!in.spectrum.contains("mode_cutoff")) spec.mode_cutoff = 1'000'000'000'000LL;
        const int n = q.at("grid_points");
        const double a = std::log10(q.at("t_min_time").get<double>()), b = std::log10(q.at("t_max_time").get<double>());
        std::vector<double> grid;
        for (int i = 0; i < n; ++i) grid.push_back(std::pow(10.0, a + (b - a) * i / (n - 1)));
        const auto res = solve_chi(group_power_law(spec, q.at("mode_groups").get<int>()), spec.beta,
                                   q.at("richness").get<double>(), grid);
        r.extra["chi"] = res.chi;
        r.extra["chi_closed_form"] = chi_closed(spec.beta);
        r.extra["iterations"] = res.iterations;
        break;
    }
    case ExperimentKind::bottleneck: {
        const auto table = table_for(spectrum_spec(in.spectrum));
        const auto rep = bottleneck_scan(table, q.at("values").get<std::vector<double>>(), q.at("resource").get<std::string>());
        std::ofstream out(dir / (stem + ".csv"));
        out << std::setprecision(17) << "resource,r_value,limiting_loss\n";
        for (const auto& row : rep.rows) out << row.resource << ',' << row.r_value << ',' << row.limiting_loss << '\n';
        if (!out) throw Error("write failed: " + stem + ".csv");
        r.file = stem + ".csv";
        r.extra["loss_slope"] = rep.loss_slope;
        r.extra["r_slope"] = rep.r_slope;
        break;
    }
    case ExperimentKind::envelope: {
        auto spec = spectrum_spec(in.spectrum, false);
        if (!in.spectrum.contains("mode_cutoff")) spec.mode_cutoff = 10'000'000;
        const auto groups = group_power_law(spec, q.at("mode_groups").get<int>());
        const auto times = flow_times(q.at("uniform_until_time"), q.at("uniform_step_time"), q.at("t_max_time"),
                                      q.at("growth_ratio"));
        const auto ns = q.at("n_params_values").get<std::vector<double>>();
        DmftOptions o;
        o.tol = q.at("tol");
        o.damping = q.at("damping");
        std::vector<GridCurve> curves(ns.size());
        std::vector<std::exception_ptr> errs(ns.size());
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t i = next++; i < ns.size(); i = next++) {
                try {
                    const auto res = solve_dmft_flow(groups, static_cast<std::int64_t>(ns[i]), q.at("richness"), times, o);
                    curves[i] = {ns[i], res.loss};
                } catch (...) {
                    errs[i] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int k = 1; k < std::min<int>(threads, static_cast<int>(ns.size())); ++k) pool.emplace_back(work);
        work();
        for (auto& th : pool) th.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
        for (std::size_t i = 0; i < ns.size(); ++i) {
            std::ostringstream name;
            name << stem << "_N" << static_cast<std::int64_t>(ns[i]) << ".csv";
            write_trajectory_csv(curves[i].traj, (dir / name.str()).string());
        }
        const auto env = compute_optimal_envelope(curves, default_compute_grid(curves, q.at("compute_per_decade").get<int>()));
        write_envelope_csv(env, (dir / (stem + "_envelope.csv")).string());
        r.file = stem + "_envelope.csv";
        r.fit = fit_envelope(env);
        const auto pred = compute_optimal_exponent(spec.alpha, spec.beta,
                                                   q.at("richness").get<double>() > 0.0 ? Dynamics::rich : Dynamics::lazy);
        r.extra["predicted_exponent"] = pred.exponent;
        break;
    }
    case ExperimentKind::linearnet: {
        const auto table = table_for(spectrum_spec(in.spectrum));
        LinearNetConfig lc;
        lc.width = q.at("width");
        lc.richness = q.at("richness");
        lc.learning_rate = q.at("learning_rate_per_step");
        lc.batch_size = q.at("batch_size");
        lc.steps = q.at("steps");
        lc.seed = p.seed;
        const auto run = train_linearnet_ensemble(table, lc, q.at("n_seeds").get<int>(), threads);
        std::ofstream out(dir / (stem + ".csv"));
        out << std::setprecision(17) << "step,loss,loss_stderr,spike_norm,spike_stderr,n_seeds\n";
        for (std::size_t i = 0; i < run.loss.size(); ++i)
            out << run.loss.times[i] << ',' << run.loss.losses[i] << ',' << run.loss.stderrs[i] << ','
                << run.spike.losses[i] << ',' << run.spike.stderrs[i] << ',' << run.loss.n_seeds << '\n';
        if (!out) throw Error("write failed: " + stem + ".csv");
        json side = run.loss.meta;
        side.update(sidecar);
        write_json(side, (dir / (stem + ".json")).string());
        r.file = stem + ".csv";
        r.fit = try_fit(run.loss);
        try {
            r.extra["spike_exponent"] = spike_growth_exponent(run.spike).exponent;
        } catch (const Error&) {
        }
        break;
    }
    case ExperimentKind::exponent_table: break;  // aggregated by the coordinator
    }
    return r;
}

void write_exponent_table(const ExperimentConfig& c, const std::vector<GridPoint>& pts, const fs::path& path) {
    std::ofstream out(path);
    out << std::setprecision(17);
    out << "alpha,beta,regime,boundary,chi,model_bottleneck,transient_finite_n,transient_sgd,compute_lazy,compute_rich\n";
    for (const auto& p : pts) {
        const auto in = resolve(c, p);
        const double a = in.spectrum.at("alpha"), b = in.spectrum.at("beta");
        const auto r = exponent_report(a, b);
        out << a << ',' << b << ',' << to_string(r.regime.regime) << ',' << (r.regime.on_boundary ? 1 : 0) << ','
            << r.chi << ',' << r.model_bottleneck << ',' << r.transient.finite_n << ',' << r.transient.sgd << ','
            << r.compute_lazy << ',' << r.compute_rich << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
}

std::string csv_field(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    std::ostringstream ss;
    ss << std::setprecision(17);
    if (v.is_number_integer()) ss << v.get<std::int64_t>();
    else if (v.is_number()) ss << v.get<double>();
    else ss << v.dump();
    return ss.str();
}

} // namespace

std::string to_string(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::dmft: return "dmft";
    case ExperimentKind::limit: return "limit";
    case ExperimentKind::chi: return "chi";
    case ExperimentKind::bottleneck: return "bottleneck";
    case ExperimentKind::envelope: return "envelope";
    case ExperimentKind::linearnet: return "linearnet";
    case ExperimentKind::exponent_table: return "exponent-table";
    }
    return "unknown";
}

ExperimentKind parse_kind(const std::string& s) {
    for (const auto& [k, _] : param_defaults())
        if (to_string(k) == s) return k;
    throw ConfigError("field 'kind': unknown experiment kind '" + s + "'");
}

json ExperimentConfig::to_json() const {
    json j;
    j["kind"] = scalelab::to_string(kind);
    j["spectrum"] = spectrum;
    j["params"] = params;
    json sw = json::array();
    for (const auto& a : sweep) sw.push_back({{"name", a.name}, {"values", a.values}});
    j["sweep"] = sw;
    j["base_seed"] = base_seed;
    j["output_dir"] = output_dir;
    return j;
}

// The output location does not change results, so it stays out of the fingerprint.
std::string ExperimentConfig::fingerprint() const {
    json j = to_json();
    j.erase("output_dir");
    return sha256_string(j.dump());
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::vector<std::string> top = {"kind", "spectrum", "params", "sweep", "base_seed", "output_dir"};
    for (const auto& [k, _] : j.items())
        if (std::find(top.begin(), top.end(), k) == top.end()) throw ConfigError("field '" + k + "': unknown top-level key");
    if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("field 'kind': required string");

    ExperimentConfig c;
    c.kind = parse_kind(j["kind"]);
    const json& defaults = param_defaults().at(c.kind);

    if (!j.contains("spectrum") || !j["spectrum"].is_object()) throw ConfigError("field 'spectrum': required object");
    for (const auto& [k, v] : j["spectrum"].items()) {
        if (!is_spectrum_key(k)) throw ConfigError("field 'spectrum." + k + "': unknown key");
        if (k == "mode_cutoff" ? !v.is_number_integer() : !v.is_number())
            throw ConfigError("field 'spectrum." + k + "': expected a number");
    }
    c.spectrum = j["spectrum"];

    c.params = defaults;
    if (j.contains("params")) {
        if (!j["params"].is_object()) throw ConfigError("field 'params': expected object");
        for (const auto& [k, v] : j["params"].items()) {
            if (!defaults.contains(k))
                throw ConfigError("field 'params." + k + "': not used by kind '" + to_string(c.kind) + "'");
            check_type("params." + k, v, defaults[k]);
            c.params[k] = v;
        }
    }

    if (j.contains("sweep")) {
        const json& sw = j["sweep"];
        auto add_axis = [&](const std::string& name, const json& values, const std::string& where) {
            if (!values.is_array() || values.empty()) throw ConfigError("field '" + where + "': expected a non-empty list");
            if (!is_spectrum_key(name) && !defaults.contains(name))
                throw ConfigError("field '" + where + "': axis '" + name + "' is not a parameter of this kind");
            for (const auto& v : values) {
                if (is_spectrum_key(name)) {
                    if (!v.is_number()) throw ConfigError("field '" + where + "': axis values must be numbers");
                } else {
                    check_type(where, v, defaults[name]);
                }
            }
            for (const auto& a : c.sweep)
                if (a.name == name) throw ConfigError("field '" + where + "': duplicate axis '" + name + "'");
            c.sweep.push_back({name, values.get<std::vector<json>>()});
        };
        if (sw.is_array()) {
            for (std::size_t i = 0; i < sw.size(); ++i) {
                const std::string where = "sweep[" + std::to_string(i) + "]";
                if (!sw[i].is_object() || !sw[i].contains("name") || !sw[i]["name"].is_string() || !sw[i].contains("values"))
                    throw ConfigError("field '" + where + "': expected {name, values}");
                add_axis(sw[i]["name"], sw[i]["values"], where + ".values");
            }
        } else if (sw.is_object()) {
            for (const auto& [k, v] : sw.items()) add_axis(k, v, "sweep." + k);
        } else {
            throw ConfigError("field 'sweep': expected a list of axes");
        }
    }

    // Every point needs alpha and beta from somewhere.
    for (const char* k : {"alpha", "beta"}) {
        const bool swept = std::any_of(c.sweep.begin(), c.sweep.end(), [&](const SweepAxis& a) { return a.name == k; });
        if (!c.spectrum.contains(k) && !swept) throw ConfigError(std::string("field 'spectrum.") + k + "': required");
    }

    if (j.contains("base_seed")) {
        if (!j["base_seed"].is_number_unsigned() && !j["base_seed"].is_number_integer())
            throw ConfigError("field 'base_seed': expected a nonnegative integer");
        if (j["base_seed"].is_number_integer() && j["base_seed"].get<std::int64_t>() < 0)
            throw ConfigError("field 'base_seed': expected a nonnegative integer");
        c.base_seed = j["base_seed"].get<std::uint64_t>();
    }
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string()) throw ConfigError("field 'output_dir': expected a string");
        c.output_dir = j["output_dir"];
    }
    return c;
}

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config ") + e.what());  // message carries line and column
    }
    return config_from_json(j);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::vector<GridPoint> expand_grid(const ExperimentConfig& c) {
    std::vector<GridPoint> pts;
    std::vector<std::size_t> idx(c.sweep.size(), 0);
    for (;;) {
        GridPoint p;
        p.index = pts.size();
        for (std::size_t a = 0; a < c.sweep.size(); ++a) p.axes[c.sweep[a].name] = c.sweep[a].values[idx[a]];
        const std::string h = sha256_string(p.axes.dump());
        p.seed = derive_seed(c.base_seed, {std::stoull(h.substr(0, 16), nullptr, 16)});
        pts.push_back(std::move(p));
        // Odometer with the last axis fastest.
        std::size_t a = c.sweep.size();
        while (a > 0) {
            --a;
            if (++idx[a] < c.sweep[a].values.size()) break;
            idx[a] = 0;
            if (a == 0) return pts;
        }
        if (c.sweep.empty()) return pts;
    }
}

RunSummary run_experiment(ExperimentConfig config, const RunOptions& opts) {
    if (opts.seed) config.base_seed = *opts.seed;
    if (!opts.output_dir.empty()) config.output_dir = opts.output_dir;
    const fs::path dir(config.output_dir);
    fs::create_directories(dir);
    const auto t_start = std::chrono::steady_clock::now();
    const auto pts = expand_grid(config);

    std::vector<PointResult> results(pts.size());
    std::vector<double> wall(pts.size(), 0.0);
    if (config.kind == ExperimentKind::exponent_table) {
        write_exponent_table(config, pts, dir / "exponent_table.csv");
    } else {
        // Grid points in a pool; a single point gets the threads for its own inner work.
        const int pool_size = std::clamp<int>(opts.threads, 1, static_cast<int>(pts.size()));
        const int inner = pts.size() == 1 ? std::max(1, opts.threads) : 1;
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t i = next++; i < pts.size(); i = next++) {
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    results[i] = run_point(config, pts[i], dir, inner);
                } catch (const std::exception& e) {
                    results[i].status = "failed";
                    results[i].message = e.what();
                }
                wall[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            }
        };
        std::vector<std::thread> pool;
        for (int k = 1; k < pool_size; ++k) pool.emplace_back(work);
        work();
        for (auto& th : pool) th.join();
    }

    RunSummary sum;
    sum.points = pts.size();
    sum.output_dir = dir.string();
    json fits = json::array();
    if (config.kind != ExperimentKind::exponent_table) {
        std::ofstream s(dir / "summary.csv");
        s << std::setprecision(17) << "point";
        for (const auto& a : config.sweep) s << ',' << a.name;
        s << ",seed,status,file,exponent,exponent_stderr\n";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto& r = results[i];
            if (r.status != "ok") ++sum.failed;
            s << i;
            for (const auto& a : config.sweep) s << ',' << csv_field(pts[i].axes[a.name]);
            s << ',' << pts[i].seed << ',' << r.status << ',' << r.file << ',';
            if (r.fit) s << r.fit->exponent << ',' << r.fit->std_error;
            else s << ',';
            s << '\n';
            json f = {{"point", i}, {"axes", pts[i].axes}, {"status", r.status}};
            if (!r.message.empty()) f["error"] = r.message;
            if (r.fit) write_fit(f, *r.fit);
            f.update(r.extra);
            fits.push_back(f);
        }
        if (!s) throw Error("write failed: summary.csv");
        write_json(fits, (dir / "fits.json").string());
    }

    // Manifest last, covering every file present in the output directory.
    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["config_fingerprint"] = config.fingerprint();
    manifest["config"] = config.to_json();
    manifest["base_seed"] = config.base_seed;
    json runs = json::array();
    for (std::size_t i = 0; i < pts.size(); ++i)
        runs.push_back({{"point", i}, {"axes", pts[i].axes}, {"seed", pts[i].seed}, {"status", results[i].status},
                        {"wall_seconds", wall[i]}});
    manifest["runs"] = runs;
    manifest["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    json files = json::array();
    for (const auto& n : names)
        files.push_back({{"path", n}, {"sha256", sha256_file((dir / n).string())}, {"bytes", fs::file_size(dir / n)}});
    manifest["files"] = files;
    write_json(manifest, (dir / "manifest.json").string());

    sum.exit_code = sum.failed > 0 ? 1 : 0;
    return sum;
}

json validate_experiment(const ExperimentConfig& c) {
    const auto pts = expand_grid(c);
    json rep;
    rep["kind"] = to_string(c.kind);
    rep["grid_points"] = pts.size();
    rep["config_fingerprint"] = c.fingerprint();
    double peak = 0.0;
    json per = json::array();
    for (const auto& p : pts) {
        const auto in = resolve(c, p);
        const json& q = in.params;
        // Rough count of live doubles for the dominant dense objects.
        double doubles = 0.0;
        std::int64_t m = 0;
        if (in.spectrum.contains("mode_cutoff")) m = in.spectrum["mode_cutoff"];
        else if (c.kind != ExperimentKind::exponent_table) {
            try {
                m = default_mode_cutoff(in.spectrum.at("alpha"), in.spectrum.at("beta"));
            } catch (const Error&) {
                m = 0;
            }
        }
        switch (c.kind) {
        case ExperimentKind::simulate: {
            const double n = q["n_params"];
            doubles = 2.0 * n * static_cast<double>(m) * std::max(1, q["n_seeds"].get<int>()) +
                      std::max(q["batch_size"].get<double>(), q["n_samples"].get<double>()) * static_cast<double>(m);
            break;
        }
        case ExperimentKind::dmft: {
            const double t = q["horizon_steps"];
            const double chunks = std::ceil(q["mode_groups"].get<double>() / 8.0);
            doubles = (16.0 + 3.0 * chunks) * t * t;
            break;
        }
        case ExperimentKind::limit: {
            const double g = q["mode_groups"];
            const double t = q["horizon_steps"];
            doubles = q["method"] == "markovian" ? 6.0 * g * g : 4.0 * t * t + 2.0 * g * t;
            break;
        }
        case ExperimentKind::envelope: {
            const auto times = flow_times(q["uniform_until_time"], q["uniform_step_time"], q["t_max_time"], q["growth_ratio"]);
            const double t = static_cast<double>(times.size());
            doubles = (16.0 + 3.0 * std::ceil(q["mode_groups"].get<double>() / 8.0)) * t * t;
            break;
        }
        case ExperimentKind::linearnet:
            doubles = 2.0 * q["width"].get<double>() * static_cast<double>(m) * std::max(1, q["n_seeds"].get<int>());
            break;
        case ExperimentKind::bottleneck: doubles = 2.0 * static_cast<double>(m); break;
        default: break;
        }
        const double bytes = 8.0 * doubles;
        peak = std::max(peak, bytes);
        per.push_back({{"point", p.index}, {"axes", p.axes}, {"seed", p.seed}, {"estimated_bytes", bytes}});
    }
    rep["points"] = per;
    rep["peak_bytes_per_point"] = peak;
    return rep;
}

std::string report_experiment(const std::string& output_dir) {
    const fs::path dir(output_dir);
    std::ostringstream out;
    if (fs::exists(dir / "fits.json")) {
        std::ifstream in(dir / "fits.json");
        const json fits = json::parse(in);
        out << std::left << std::setw(7) << "point" << std::setw(40) << "axes" << std::setw(8) << "status"
            << std::setw(12) << "exponent" << std::setw(12) << "stderr" << "window / extra\n";
        for (const auto& f : fits) {
            out << std::setw(7) << f["point"].get<int>() << std::setw(40) << f["axes"].dump() << std::setw(8)
                << f["status"].get<std::string>();
            if (f.contains("exponent")) {
                out << std::setw(12) << std::setprecision(5) << f["exponent"].get<double>() << std::setw(12)
                    << std::setprecision(3) << f["exponent_stderr"].get<double>() << f["window"].dump();
            } else {
                out << std::setw(24) << "-";
            }
            json extra = f;
            for (const char* k : {"point", "axes", "status", "exponent", "exponent_stderr", "window", "n_points"}) extra.erase(k);
            if (!extra.empty()) out << ' ' << extra.dump();
            out << '\n';
        }
    } else if (fs::exists(dir / "exponent_table.csv")) {
        std::ifstream in(dir / "exponent_table.csv");
        out << in.rdbuf();
    } else {
        throw Error("no fits.json or exponent_table.csv in " + output_dir);
    }
    return out.str();
}

} // namespace scalelab

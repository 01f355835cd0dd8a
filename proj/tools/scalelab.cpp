#include "scalelab/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <thread>

int main(int argc, char** argv) {
    CLI::App app{"scalelab: scaling-law experiments on the solvable random-feature model"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(scalelab::kToolVersion));

    std::string config_path, out_dir;
    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::uint64_t seed = 0;

    auto* run = app.add_subcommand("run", "Run every grid point of a config and write results plus manifest");
    run->add_option("-c,--config", config_path, "Experiment config (JSON, comments allowed)")->required();
    run->add_option("-o,--out", out_dir, "Output directory (overrides output_dir)");
    run->add_option("-j,--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    auto* seed_opt = run->add_option("--seed", seed, "Override base_seed");

    auto* validate = app.add_subcommand("validate", "Check a config and estimate memory without running it");
    validate->add_option("-c,--config", config_path, "Experiment config")->required();

    auto* report = app.add_subcommand("report", "Print the fitted exponents of a finished run");
    auto* report_dir = report->add_option("dir", out_dir, "Output directory of a run");
    report->add_option("-o,--out", out_dir, "Same as dir")->excludes(report_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = scalelab::load_config(config_path);
            scalelab::RunOptions o;
            o.output_dir = out_dir;
            o.threads = threads;
            if (*seed_opt) o.seed = seed;
            const auto sum = scalelab::run_experiment(cfg, o);
            std::cout << sum.points << " grid points, " << sum.failed << " failed, results in " << sum.output_dir << '\n';
            return sum.exit_code;
        }
        if (*validate) {
            const auto cfg = scalelab::load_config(config_path);
            std::cout << scalelab::validate_experiment(cfg).dump(2) << '\n';
            return 0;
        }
        if (*report) {
            if (out_dir.empty()) {
                std::cerr << "report needs an output directory\n";
                return 2;
            }
            std::cout << scalelab::report_experiment(out_dir);
            return 0;
        }
    } catch (const scalelab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace scalelab {

// Loss recorded at checkpoints. For discrete solvers `times` holds step
// indices; for continuous-time solvers it holds tau = eta * steps.
struct LossTrajectory {
    std::vector<double> times;
    std::vector<double> losses;
    std::vector<double> stderrs;  // empty or aligned with losses
    int n_seeds = 1;
    nlohmann::json meta = nlohmann::json::object();

    std::size_t size() const { return times.size(); }
    void push(double t, double loss) {
        times.push_back(t);
        losses.push_back(loss);
    }
    void validate() const;
};

// Columns: step, loss_mean, loss_stderr, n_seeds.
void write_trajectory_csv(const LossTrajectory& traj, const std::string& path);
LossTrajectory read_trajectory_csv(const std::string& path);

// Writes meta as a JSON sidecar next to a CSV.
void write_json(const nlohmann::json& j, const std::string& path);

std::string sha256_file(const std::string& path);
std::string sha256_string(const std::string& data);

} // namespace scalelab

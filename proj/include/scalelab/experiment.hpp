#pragma once

#include "scalelab/errors.hpp"
#include "scalelab/spectra.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scalelab {

inline constexpr const char* kToolVersion = "0.3.0";

// Malformed or inconsistent experiment configuration. Carries the offending field or location.
class ConfigError : public Error {
public:
    using Error::Error;
};

enum class ExperimentKind { simulate, dmft, limit, chi, bottleneck, envelope, linearnet, exponent_table };

std::string to_string(ExperimentKind k);
ExperimentKind parse_kind(const std::string& s);

struct SweepAxis {
    std::string name;
    std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::simulate;
    nlohmann::json spectrum = nlohmann::json::object();  // alpha, beta, mode_cutoff
    nlohmann::json params = nlohmann::json::object();    // kind-specific, defaults filled in
    std::vector<SweepAxis> sweep;
    std::uint64_t base_seed = 0;
    std::string output_dir = "out";

    nlohmann::json to_json() const;
    std::string fingerprint() const;  // sha256 of the canonical serialization, output_dir excluded
};

// JSON with comments allowed. Unknown keys, wrong types and empty axes raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

// One Cartesian-product point: axis name -> value, in axis order.
struct GridPoint {
    std::size_t index = 0;
    nlohmann::json axes = nlohmann::json::object();
    std::uint64_t seed = 0;
};

// Seeds are hash(base_seed, axis values), so adding points never moves existing ones.
std::vector<GridPoint> expand_grid(const ExperimentConfig& config);

struct RunOptions {
    std::string output_dir;             // overrides the config when non-empty
    int threads = 1;
    std::optional<std::uint64_t> seed;  // overrides base_seed
};

struct RunSummary {
    int exit_code = 0;  // 0 ok, 1 some grid points failed
    std::size_t points = 0;
    std::size_t failed = 0;
    std::string output_dir;
};

RunSummary run_experiment(ExperimentConfig config, const RunOptions& opts);

// Dry run: schema check plus memory estimate for the dense objects each point allocates.
nlohmann::json validate_experiment(const ExperimentConfig& config);

// Human-readable table of the fit results in an output directory.
std::string report_experiment(const std::string& output_dir);

} // namespace scalelab

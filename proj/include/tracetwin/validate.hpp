#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracetwin/flowmap.hpp"

namespace tracetwin::validate {

struct Range {
    double min = 0;
    double max = 0;
};

/// min/max over the union of both samples. Throws Error when both are empty.
Range joint_range(std::span<const double> a, std::span<const double> b);

/// (v - min) / (max - min); every value maps to 0.5 when max == min.
std::vector<double> normalize(std::span<const double> values, const Range& r);

/// Two-sample Kolmogorov-Smirnov distance sup_x |F_a(x) - F_b(x)| from exact
/// empirical CDFs. Throws Error on empty input.
double ks_distance(std::span<const double> a, std::span<const double> b);

struct ValidationReport {
    std::string metric;
    int round = 1;
    double ks_distance = 0;
    double threshold = 0.1;
    bool pass = false;
    std::size_t n_real = 0;
    std::size_t n_twin = 0;
    Range normalization;
};

/// Normalizes both samples through their joint range, then compares.
ValidationReport compare(std::string metric, std::span<const double> real, std::span<const double> twin,
                         double threshold);

/// metric name -> samples.
using MetricSet = std::map<std::string, std::vector<double>>;

/// Builds a script from the current flow-mapping parameters.
using ScriptBuilder = std::function<flowmap::TrafficScript(const flowmap::EmitOptions&)>;
/// Replays a script and measures the twinned metrics; `round` counts from 1.
using ReplayFn = std::function<MetricSet(const flowmap::TrafficScript&, int round)>;
/// Returns adjusted flow-mapping parameters after a failing round.
using RetunePolicy = std::function<flowmap::EmitOptions(const flowmap::EmitOptions& current, const MetricSet& real,
                                                        const MetricSet& twin)>;

/// Scales the eMBB per-UE rates by mean(real) / mean(twin) of `metric`.
/// Deliberately simple: one multiplicative correction per round.
RetunePolicy mean_ratio_tuner(std::string metric = "window_load");

struct LoopConfig {
    double threshold = 0.1;
    int max_rounds = 3;
    /// Metrics to compare; empty means every metric present in `real`.
    std::vector<std::string> metrics;
    /// Accepted scripts and manifest.json are written here when set.
    std::optional<std::filesystem::path> database_dir;
    std::string config_hash;
};

struct LoopResult {
    std::vector<ValidationReport> history;
    flowmap::TrafficScript final_script;
    flowmap::EmitOptions final_options;
    bool converged = false;
    int rounds = 0;
    std::optional<std::filesystem::path> saved_script;
};

/// Emit, replay, compare; retune and repeat until every metric passes or
/// `max_rounds` is reached. Non-convergence is reported, not thrown.
LoopResult validate_and_loop(const MetricSet& real, const ScriptBuilder& build, flowmap::EmitOptions initial,
                             const ReplayFn& replay, const RetunePolicy& tuner, const LoopConfig& cfg);

/// Stores an accepted script in the traffic database and records it in
/// manifest.json. Returns the script path. An entry for the same file name
/// is replaced.
std::filesystem::path save_to_database(const std::filesystem::path& dir, const flowmap::TrafficScript& script,
                                       std::span<const ValidationReport> reports, const std::string& config_hash);

/// key=value lines, one block per report, followed by a summary.
void write_report(std::ostream& out, std::span<const ValidationReport> history, bool converged);

}  // namespace tracetwin::validate

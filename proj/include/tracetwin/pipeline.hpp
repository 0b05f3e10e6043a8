#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tracetwin/flowmap.hpp"
#include "tracetwin/ingest.hpp"
#include "tracetwin/profile.hpp"
#include "tracetwin/replay.hpp"
#include "tracetwin/ticc.hpp"
#include "tracetwin/validate.hpp"

namespace tracetwin::pipeline {

/// Flat `key = value` configuration; keys carry a section prefix
/// (`ticc.window`, `replay.speedup`, ...). '#' starts a comment.
class Config {
public:
    static Config parse(std::string_view text);
    static Config load(const std::filesystem::path& path);

    /// Applies one `key=value` assignment.
    void assign(std::string_view assignment);
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    std::int64_t get_int(const std::string& key, std::int64_t def) const;
    bool get_bool(const std::string& key, bool def) const;

    /// Canonical form: sorted `key=value` lines.
    std::string serialize() const;
    /// SHA-256 of the canonical form.
    std::string hash() const;

    const std::map<std::string, std::string>& values() const { return values_; }
    /// Directory relative paths are resolved against (the config file's).
    std::filesystem::path base_dir;

private:
    std::map<std::string, std::string> values_;
};

struct PipelineConfig {
    std::filesystem::path trace;
    std::filesystem::path workdir;
    std::filesystem::path database;

    ingest::ColumnMapping mapping;
    ingest::AggregateOptions aggregate;
    ticc::TiccConfig ticc;
    std::vector<std::string> variates;
    int W = 60;
    double split = 1.0;
    std::vector<profile::ClassSpec> classes;
    flowmap::EndpointMap endpoints;
    flowmap::EmitOptions emit;

    replay::SocketAddress send_bind{"0.0.0.0", 0};
    replay::SocketAddress recv_bind{"127.0.0.1", 0};
    /// Loopback mode sends every flow to the receiver's address.
    bool loopback = true;
    std::optional<replay::SocketAddress> dst_override;
    double speedup = 1.0;
    /// Extra receive time after the last send (seconds).
    double drain_s = 0.5;
    /// Receive duration for the standalone receiver stage; 0 = until stopped.
    double recv_duration_s = 0;

    double threshold = 0.1;
    int max_rounds = 3;
    std::vector<std::string> metrics;
    std::uint64_t seed = 0;

    std::string hash;

    static PipelineConfig from(const Config& cfg);
};

/// Artifact file names inside the work directory.
namespace artifact {
inline constexpr const char* series = "series.csv";
inline constexpr const char* model = "model.ticc";
inline constexpr const char* labels = "labels.csv";
inline constexpr const char* profiles = "profiles.csv";
inline constexpr const char* script = "script.mgen";
inline constexpr const char* send_report = "send_report.txt";
inline constexpr const char* packets = "mgen.csv";
inline constexpr const char* latency = "latency.csv";
inline constexpr const char* throughput = "throughput.csv";
inline constexpr const char* satisfaction = "satisfaction.csv";
inline constexpr const char* validation = "validation.txt";
}  // namespace artifact

enum class Stage { ingest, cluster, profile, emit, replay_send, replay_recv, kpm, validate, twin };

Stage parse_stage(std::string_view s);
std::string to_string(Stage s);

/// Exit status: 0 pass, 1 non-converged (or validation failure), 2 error.
/// Errors are reported on `log` rather than thrown.
int run_stage(Stage stage, const PipelineConfig& cfg, std::ostream& log, std::stop_token stop = {});

// Individual stages; each throws Error on failure, names a missing input
// file, and writes its artifacts with a `# config_hash=` header.
ingest::CellSeries stage_ingest(const PipelineConfig& cfg, std::ostream& log);
ticc::FitResult stage_cluster(const PipelineConfig& cfg, std::ostream& log);
std::vector<profile::WindowProfile> stage_profile(const PipelineConfig& cfg, std::ostream& log);
flowmap::TrafficScript stage_emit(const PipelineConfig& cfg, std::ostream& log);
replay::SendReport stage_replay_send(const PipelineConfig& cfg, std::ostream& log, std::stop_token stop = {});
replay::PacketLog stage_replay_recv(const PipelineConfig& cfg, std::ostream& log, std::stop_token stop = {});
void stage_kpm(const PipelineConfig& cfg, std::ostream& log);
std::vector<validate::ValidationReport> stage_validate(const PipelineConfig& cfg, std::ostream& log);
validate::LoopResult stage_twin(const PipelineConfig& cfg, std::ostream& log, std::stop_token stop = {});

/// Inputs a metric can draw on.
struct RealSide {
    const ingest::CellSeries* series = nullptr;
    std::span<const profile::WindowProfile> profiles;
};

struct TwinSide {
    const replay::PacketLog* log = nullptr;
    const replay::SendReport* report = nullptr;
    std::span<const profile::WindowProfile> profiles;
    double warmup_s = 0;
};

struct MetricDef {
    std::function<std::vector<double>(const RealSide&)> real;
    std::function<std::vector<double>(const TwinSide&)> twin;
};

/// Built-in metrics:
///   window_load   per-window offered load in Mbps. Real: the window's mean
///                 1 s load. Twin: received bytes per window, keyed by the
///                 sender timestamp so network jitter does not move packets
///                 across window edges.
///   active_flows  per-window count of active flows. Real: the window's mean
///                 active-UE count rounded half up. Twin: distinct flows
///                 received in the window.
/// Callers may add entries.
std::map<std::string, MetricDef>& metric_registry();

validate::MetricSet real_metrics(const RealSide& real, std::span<const std::string> names);
validate::MetricSet twin_metrics(const TwinSide& twin, std::span<const std::string> names);

/// Sends `script` to an in-process receiver and returns the received log.
struct LoopbackRun {
    replay::SendReport report;
    replay::PacketLog log;
};
LoopbackRun replay_loopback(const flowmap::TrafficScript& script, const PipelineConfig& cfg, std::stop_token stop = {},
                            const std::optional<std::filesystem::path>& packet_file = std::nullopt);

void write_send_report(std::ostream& out, const replay::SendReport& r);
replay::SendReport read_send_report(std::string_view content);

/// Synthetic DCI trace: piecewise-constant load levels, each held for
/// `windows_per_level` windows of `W` seconds, with multiplicative per-second
/// noise and a fixed number of RNTIs scheduled every second.
struct SynthTraceOptions {
    std::vector<double> levels_mbps{1.0, 2.0, 1.0};
    int windows_per_level = 10;
    int W = 60;
    double noise = 0.3;
    /// Each window's level is also scaled by a factor drawn from [1-j, 1+j].
    double window_jitter = 0.1;
    int rntis = 4;
    int allocations_per_second = 20;
    std::uint64_t seed = 1;
};

std::string synth_trace(const SynthTraceOptions& opts);

}  // namespace tracetwin::pipeline

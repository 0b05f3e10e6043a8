#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracetwin/replay.hpp"

namespace tracetwin::kpm {

/// One row of a per-UE protocol-stack metrics file (250 ms logging window).
/// Numeric fields absent from the file are NaN; dl_cqi is -1 when absent.
struct KpmFrame {
    double timestamp = 0;
    std::string imsi;
    int slice_id = -1;  // 0 = eMBB, 1 = URLLC
    double dl_buffer_bytes = 0;
    double dl_mcs = 0;
    double tx_brate_dl_mbps = 0;
    double tx_pkts_dl = 0;
    int dl_cqi = -1;
    double sum_requested_prbs = 0;
    double sum_granted_prbs = 0;
    /// Columns the reader does not know, by normalized header name.
    std::map<std::string, std::string> extras;
};

/// Header-driven reader. Table 3 display names (`dl_buffer [bytes]`,
/// `tx_brate downlink [Mbps]`, ...) and plain snake_case names are both
/// accepted. `default_imsi` fills rows of files without an imsi column.
std::vector<KpmFrame> read_frames(std::string_view content, const std::string& default_imsi = "");

/// Reads `<ue_imsi>_metrics.csv`; the IMSI comes from the file name when the
/// file has no imsi column.
std::vector<KpmFrame> read_frames_file(const std::string& path);

std::vector<KpmFrame> frames_for_slice(std::span<const KpmFrame> frames, int slice_id);

struct LatencySeries {
    std::vector<double> ms;
    /// Packets with rx < tx (clock skew); kept in `ms`, not clamped.
    std::size_t negative = 0;
};

/// Per-packet latency (rx - tx) in milliseconds, in log order.
LatencySeries latency_series(const replay::PacketLog& log);

struct ThroughputSeries {
    double t0 = 0;
    double window_s = 0.25;
    std::vector<double> mbps;
};

/// Bytes received per window, in Mbps. Windows start at `t0` (default: the
/// first rx_time) and cover the log up to `t1` (default: the last rx_time).
/// Windows without packets are 0.
ThroughputSeries windowed_throughput(const replay::PacketLog& log, double window_s = 0.25,
                                     std::optional<double> t0 = std::nullopt, std::optional<double> t1 = std::nullopt);

struct FlowLoss {
    std::uint64_t received = 0;
    std::uint64_t expected = 0;  // max(seq) + 1
    std::uint64_t lost() const { return expected > received ? expected - received : 0; }
};

std::map<std::uint32_t, FlowLoss> loss_per_flow(const replay::PacketLog& log);

/// sum_granted / sum_requested per frame. Frames with no request are excluded.
std::vector<double> prb_ratio(std::span<const KpmFrame> frames);

struct CqiRow {
    std::array<double, 16> percent{};
    std::size_t frames = 0;
    /// No frame with a CQI report; `percent` is all zero.
    bool empty = true;
};

CqiRow cqi_occupancy(std::span<const int> cqi);
/// Frames grouped by IMSI. Frames without a CQI (-1) do not count.
std::map<std::string, CqiRow> cqi_occupancy(std::span<const KpmFrame> frames);

struct LatencyRequirement {
    std::string use_case;
    double bound_ms = 0;
};

/// The seven URLLC use cases of the latency table: 5, 7, 10, 15, 30, 100, 140 ms.
std::vector<LatencyRequirement> default_requirements();

/// Empirical P(latency <= bound) per requirement. Throws Error on an empty series.
std::vector<double> requirement_satisfaction(std::span<const double> latencies_ms,
                                             std::span<const LatencyRequirement> reqs);

struct Ecdf {
    std::vector<double> x;  // sorted unique values
    std::vector<double> p;  // P(X <= x)
};

Ecdf ecdf(std::span<const double> values);

enum class Scheduler { round_robin = 0, waterfilling = 1, proportional_fair = 2 };

struct SlicingConfig {
    std::string name;
    int embb_prbs = 0;
    int urllc_prbs = 0;
};

/// slicing_1 ... slicing_5 over the 50-PRB budget.
const std::vector<SlicingConfig>& slicing_table();
const SlicingConfig& find_slicing(std::string_view name);

void write_values(std::ostream& out, std::string_view name, std::span<const double> values);
void write_throughput(std::ostream& out, const ThroughputSeries& s);
void write_ecdf(std::ostream& out, const Ecdf& e);
void write_cqi(std::ostream& out, const std::map<std::string, CqiRow>& rows);
void write_satisfaction(std::ostream& out, std::span<const LatencyRequirement> reqs, std::span<const double> p);

}  // namespace tracetwin::kpm

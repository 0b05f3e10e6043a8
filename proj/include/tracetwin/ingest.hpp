#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tracetwin::ingest {

enum class Direction { downlink, uplink };

/// One decoded control-channel allocation (one RNTI, one TTI).
struct DciRecord {
    std::int64_t timestamp_ms = 0;
    int sfn = 0;
    int subframe = 0;
    std::uint32_t rnti = 0;
    Direction direction = Direction::downlink;
    int mcs = 0;
    std::int64_t tbs_bits = 0;
    int prb_count = 0;

    bool operator==(const DciRecord&) const = default;
};

enum class TbsUnit { bits, bytes };

/// A column reference: either a 0-based index or a header name.
using ColumnRef = std::variant<std::size_t, std::string>;

/// Maps each DciRecord field to a column of the trace file.
///
/// The default is positional: timestamp,sfn,subframe,rnti,direction,mcs,tbs,prb.
/// A header row is detected automatically when every mapping is positional
/// (first row whose timestamp cell is not numeric); name-based mappings
/// always require a header.
struct ColumnMapping {
    ColumnRef timestamp = std::size_t{0};
    ColumnRef sfn = std::size_t{1};
    ColumnRef subframe = std::size_t{2};
    ColumnRef rnti = std::size_t{3};
    ColumnRef direction = std::size_t{4};
    ColumnRef mcs = std::size_t{5};
    ColumnRef tbs = std::size_t{6};
    ColumnRef prb = std::size_t{7};
    char delimiter = ',';
    TbsUnit tbs_unit = TbsUnit::bits;
    /// PRBs per subframe; rows above it are rejected.
    int prb_budget = 100;

    static ColumnMapping identity() { return {}; }
    static ColumnMapping by_name();
};

struct ParseResult {
    std::vector<DciRecord> records;
    std::size_t rows_read = 0;
    std::size_t rows_skipped = 0;
    std::vector<std::string> skip_reasons;
};

/// Parses trace text. Rows with out-of-range values are skipped and counted.
/// Throws Error when a mapped column is absent.
ParseResult parse_trace_text(std::string_view content, const ColumnMapping& mapping);
ParseResult parse_trace(const std::string& path, const ColumnMapping& mapping);

/// 1 s multivariate cell time series.
struct CellSeries {
    std::string cell_id;
    std::int64_t t0 = 0;  // seconds since trace epoch of the first sample
    std::vector<double> load_mbps;
    std::vector<double> prb_util;
    std::vector<double> active_ues;

    std::size_t size() const noexcept { return load_mbps.size(); }
    bool empty() const noexcept { return load_mbps.empty(); }
};

struct AggregateOptions {
    int prb_budget = 50;
    Direction direction = Direction::downlink;
    /// Centered rolling-average width in seconds; 1 disables smoothing.
    int rolling_width = 5;
    int subframes_per_second = 1000;
};

/// Bins records (sorted by timestamp) into gap-free 1 s samples, then smooths.
CellSeries aggregate_1s(std::span<const DciRecord> records, const AggregateOptions& opts);

/// Centered moving average. The window shrinks at the edges; for even widths
/// the extra sample is taken on the right.
std::vector<double> rolling_average(std::span<const double> values, int width);

void write_series(std::ostream& out, const CellSeries& series);
CellSeries read_series(std::string_view content);
CellSeries read_series_file(const std::string& path);

}  // namespace tracetwin::ingest

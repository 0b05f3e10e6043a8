#include "tracetwin/ingest.hpp"

#include <algorithm>
#include <array>
#include <ostream>
#include <unordered_set>

#include "tracetwin/common.hpp"

namespace tracetwin::ingest {

ColumnMapping ColumnMapping::by_name() {
    ColumnMapping m;
    m.timestamp = std::string("timestamp");
    m.sfn = std::string("sfn");
    m.subframe = std::string("subframe");
    m.rnti = std::string("rnti");
    m.direction = std::string("direction");
    m.mcs = std::string("mcs");
    m.tbs = std::string("tbs");
    m.prb = std::string("prb");
    return m;
}

namespace {

bool is_named(const ColumnRef& r) { return std::holds_alternative<std::string>(r); }

std::size_t resolve(const ColumnRef& ref, const std::vector<std::string>& header, const char* field) {
    if (const auto* idx = std::get_if<std::size_t>(&ref)) return *idx;
    const auto& name = std::get<std::string>(ref);
    const auto key = text::normalize_header(name);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (text::normalize_header(header[i]) == key) return i;
    }
    throw Error(std::string("trace is missing the column '") + name + "' mapped to field " + field);
}

std::optional<Direction> parse_direction(std::string_view s) {
    const auto v = text::to_lower(text::trim(s));
    if (v == "dl" || v == "downlink" || v == "0" || v == "d") return Direction::downlink;
    if (v == "ul" || v == "uplink" || v == "1" || v == "u") return Direction::uplink;
    return std::nullopt;
}

}  // namespace

ParseResult parse_trace_text(std::string_view content, const ColumnMapping& m) {
    const std::array<const ColumnRef*, 8> refs{&m.timestamp, &m.sfn, &m.subframe, &m.rnti,
                                               &m.direction, &m.mcs, &m.tbs, &m.prb};
    const bool any_named = std::any_of(refs.begin(), refs.end(), [](auto* r) { return is_named(*r); });

    Table table = read_table(content, m.delimiter, any_named);
    if (!any_named && !table.rows.empty()) {
        // Header auto-detection for positional mappings.
        const auto ts_idx = std::get<std::size_t>(m.timestamp);
        const auto& first = table.rows.front();
        if (ts_idx < first.size() && !text::parse_double(first[ts_idx])) {
            table.header = first;
            table.rows.erase(table.rows.begin());
            table.line_numbers.erase(table.line_numbers.begin());
        }
    }

    static const char* names[] = {"timestamp", "sfn", "subframe", "rnti", "direction", "mcs", "tbs", "prb"};
    std::array<std::size_t, 8> col{};
    for (std::size_t i = 0; i < refs.size(); ++i) col[i] = resolve(*refs[i], table.header, names[i]);
    const std::size_t needed = *std::max_element(col.begin(), col.end()) + 1;

    if (!table.rows.empty()) {
        std::size_t widest = 0;
        for (const auto& row : table.rows) widest = std::max(widest, row.size());
        if (widest < needed)
            throw Error("trace has " + std::to_string(widest) + " columns but the mapping needs " +
                        std::to_string(needed));
    }

    ParseResult result;
    result.records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        ++result.rows_read;
        auto skip = [&](const std::string& why) {
            ++result.rows_skipped;
            result.skip_reasons.push_back("line " + std::to_string(table.line_numbers[r]) + ": " + why);
        };
        if (row.size() < needed) {
            skip("expected at least " + std::to_string(needed) + " fields");
            continue;
        }
        const auto ts = text::parse_double(row[col[0]]);
        const auto sfn = text::parse_int(row[col[1]]);
        const auto sf = text::parse_int(row[col[2]]);
        const auto rnti = text::parse_int(row[col[3]]);
        const auto dir = parse_direction(row[col[4]]);
        const auto mcs = text::parse_int(row[col[5]]);
        const auto tbs = text::parse_int(row[col[6]]);
        const auto prb = text::parse_int(row[col[7]]);
        if (!ts || !sfn || !sf || !rnti || !dir || !mcs || !tbs || !prb) {
            skip("unparseable field");
            continue;
        }
        if (*ts < 0) { skip("negative timestamp"); continue; }
        if (*sfn < 0 || *sfn > 1023) { skip("sfn out of range"); continue; }
        if (*sf < 0 || *sf > 9) { skip("subframe out of range"); continue; }
        if (*rnti < 1 || *rnti > 65535) { skip("rnti out of range"); continue; }
        if (*mcs < 0 || *mcs > 31) { skip("mcs out of range"); continue; }
        const std::int64_t bits = m.tbs_unit == TbsUnit::bytes ? *tbs * 8 : *tbs;
        if (bits <= 0) { skip("tbs must be positive"); continue; }
        if (*prb < 1 || *prb > m.prb_budget) { skip("prb_count outside [1, budget]"); continue; }

        DciRecord rec;
        rec.timestamp_ms = static_cast<std::int64_t>(*ts);
        rec.sfn = static_cast<int>(*sfn);
        rec.subframe = static_cast<int>(*sf);
        rec.rnti = static_cast<std::uint32_t>(*rnti);
        rec.direction = *dir;
        rec.mcs = static_cast<int>(*mcs);
        rec.tbs_bits = bits;
        rec.prb_count = static_cast<int>(*prb);
        result.records.push_back(rec);
    }
    std::stable_sort(result.records.begin(), result.records.end(),
                     [](const DciRecord& a, const DciRecord& b) { return a.timestamp_ms < b.timestamp_ms; });
    return result;
}

ParseResult parse_trace(const std::string& path, const ColumnMapping& mapping) {
    return parse_trace_text(read_file(path), mapping);
}

std::vector<double> rolling_average(std::span<const double> values, int width) {
    if (width < 1) throw Error("rolling width must be >= 1");
    const auto n = static_cast<std::ptrdiff_t>(values.size());
    const std::ptrdiff_t left = (width - 1) / 2;
    const std::ptrdiff_t right = width / 2;
    std::vector<double> out(values.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - left);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, i + right);
        if (width == 1) {
            out[i] = values[i];
        } else {
            double s = 0;
            for (auto k = lo; k <= hi; ++k) s += values[k];
            out[i] = s / static_cast<double>(hi - lo + 1);
        }
    }
    return out;
}

CellSeries aggregate_1s(std::span<const DciRecord> records, const AggregateOptions& opts) {
    if (opts.prb_budget <= 0) throw Error("PRB budget must be positive");
    if (opts.subframes_per_second <= 0) throw Error("subframes per second must be positive");
    CellSeries series;
    if (records.empty()) return series;

    auto floor_div = [](std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
    const std::int64_t first_s = floor_div(records.front().timestamp_ms, 1000);
    const std::int64_t last_s = floor_div(records.back().timestamp_ms, 1000);
    const auto n = static_cast<std::size_t>(last_s - first_s + 1);
    series.t0 = first_s;

    std::vector<double> bits(n, 0.0);
    std::vector<double> prbs(n, 0.0);
    std::vector<std::unordered_set<std::uint32_t>> rntis(n);
    for (const auto& r : records) {
        if (r.direction != opts.direction) continue;
        const auto s = static_cast<std::size_t>(floor_div(r.timestamp_ms, 1000) - first_s);
        bits[s] += static_cast<double>(r.tbs_bits);
        prbs[s] += r.prb_count;
        rntis[s].insert(r.rnti);
    }

    const double prb_capacity = static_cast<double>(opts.prb_budget) * opts.subframes_per_second;
    std::vector<double> load(n), util(n), ues(n);
    for (std::size_t s = 0; s < n; ++s) {
        load[s] = bits[s] / 1e6;
        util[s] = std::min(1.0, prbs[s] / prb_capacity);
        ues[s] = static_cast<double>(rntis[s].size());
    }
    series.load_mbps = rolling_average(load, opts.rolling_width);
    series.prb_util = rolling_average(util, opts.rolling_width);
    series.active_ues = rolling_average(ues, opts.rolling_width);
    return series;
}

void write_series(std::ostream& out, const CellSeries& s) {
    out << "t,load_mbps,prb_util,active_ues\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << s.t0 + static_cast<std::int64_t>(i) << ',' << text::format_trimmed(s.load_mbps[i], 9) << ','
            << text::format_trimmed(s.prb_util[i], 9) << ',' << text::format_trimmed(s.active_ues[i], 9) << '\n';
    }
}

CellSeries read_series(std::string_view content) {
    const Table t = read_table(content, ',', true);
    const auto ct = t.column("t");
    const auto cl = t.column("load_mbps");
    const auto cp = t.column("prb_util");
    const auto cu = t.column("active_ues");
    if (!ct || !cl || !cp || !cu) throw Error("series file must have columns t,load_mbps,prb_util,active_ues");
    CellSeries s;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        auto get = [&](std::size_t c) {
            if (c >= row.size()) throw ParseError(t.line_numbers[r], "missing field");
            auto v = text::parse_double(row[c]);
            if (!v) throw ParseError(t.line_numbers[r], "not a number: '" + row[c] + "'");
            return *v;
        };
        const auto tt = static_cast<std::int64_t>(get(*ct));
        if (r == 0) s.t0 = tt;
        else if (tt != s.t0 + static_cast<std::int64_t>(r))
            throw ParseError(t.line_numbers[r], "series must be gap-free at 1 s steps");
        s.load_mbps.push_back(get(*cl));
        s.prb_util.push_back(get(*cp));
        s.active_ues.push_back(get(*cu));
    }
    return s;
}

CellSeries read_series_file(const std::string& path) { return read_series(read_file(path)); }

}  // namespace tracetwin::ingest

#include "tracetwin/kpm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <set>

#include "tracetwin/common.hpp"

namespace tracetwin::kpm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct FieldAliases {
    const char* field;
    std::vector<const char*> names;
};

// Normalized names; see text::normalize_header.
const std::vector<FieldAliases>& aliases() {
    static const std::vector<FieldAliases> a = {
        {"timestamp", {"timestamp", "time", "ts"}},
        {"imsi", {"imsi", "ue_imsi"}},
        {"slice_id", {"slice_id", "slice"}},
        {"dl_buffer", {"dl_buffer", "dl_buffer_bytes"}},
        {"dl_mcs", {"dl_mcs"}},
        {"tx_brate", {"tx_brate_downlink", "tx_brate_dl", "tx_brate_dl_mbps", "dl_brate"}},
        {"tx_pkts", {"tx_pkts_downlink", "tx_pkts_dl"}},
        {"dl_cqi", {"dl_cqi", "cqi"}},
        {"requested", {"sum_requested_prbs"}},
        {"granted", {"sum_granted_prbs"}},
    };
    return a;
}

}  // namespace

std::vector<KpmFrame> read_frames(std::string_view content, const std::string& default_imsi) {
    const Table t = read_table(content, ',', true);
    std::map<std::string, std::size_t> col;
    std::set<std::size_t> known;
    for (const auto& f : aliases()) {
        for (const char* n : f.names) {
            if (auto c = t.column(n)) {
                col[f.field] = *c;
                known.insert(*c);
                break;
            }
        }
    }
    std::vector<KpmFrame> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto line = t.line_numbers[r];
        auto num = [&](const char* field, bool counter) {
            auto it = col.find(field);
            if (it == col.end() || it->second >= row.size() || text::trim(row[it->second]).empty()) return kNaN;
            auto v = text::parse_double(row[it->second]);
            if (!v) throw ParseError(line, std::string("bad number in ") + field + ": '" + row[it->second] + "'");
            if (counter && *v < 0) throw ParseError(line, std::string(field) + " is negative");
            return *v;
        };
        KpmFrame f;
        f.timestamp = num("timestamp", false);
        f.imsi = default_imsi;
        if (auto it = col.find("imsi"); it != col.end() && it->second < row.size())
            f.imsi = std::string(text::trim(row[it->second]));
        const double slice = num("slice_id", false);
        f.slice_id = std::isnan(slice) ? -1 : static_cast<int>(slice);
        f.dl_buffer_bytes = num("dl_buffer", true);
        f.dl_mcs = num("dl_mcs", true);
        f.tx_brate_dl_mbps = num("tx_brate", true);
        f.tx_pkts_dl = num("tx_pkts", true);
        const double cqi = num("dl_cqi", false);
        if (!std::isnan(cqi)) {
            if (cqi < 0 || cqi > 15 || cqi != std::floor(cqi))
                throw ParseError(line, "dl_cqi out of range [0,15]: " + text::format_trimmed(cqi, 6));
            f.dl_cqi = static_cast<int>(cqi);
        }
        f.sum_requested_prbs = num("requested", true);
        f.sum_granted_prbs = num("granted", true);
        for (std::size_t c = 0; c < row.size() && c < t.header.size(); ++c)
            if (!known.contains(c)) f.extras[text::normalize_header(t.header[c])] = row[c];
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<KpmFrame> read_frames_file(const std::string& path) {
    std::string imsi = std::filesystem::path(path).stem().string();
    if (auto pos = imsi.find("_metrics"); pos != std::string::npos) imsi = imsi.substr(0, pos);
    if (imsi == "enb" || imsi == "ue") imsi.clear();
    return read_frames(read_file(path), imsi);
}

std::vector<KpmFrame> frames_for_slice(std::span<const KpmFrame> frames, int slice_id) {
    std::vector<KpmFrame> out;
    for (const auto& f : frames)
        if (f.slice_id == slice_id) out.push_back(f);
    return out;
}

LatencySeries latency_series(const replay::PacketLog& log) {
    LatencySeries s;
    s.ms.reserve(log.rows.size());
    for (const auto& r : log.rows) {
        const double ms = (r.rx_time - r.tx_time) * 1000.0;
        if (ms < 0) ++s.negative;
        s.ms.push_back(ms);
    }
    return s;
}

ThroughputSeries windowed_throughput(const replay::PacketLog& log, double window_s, std::optional<double> t0,
                                     std::optional<double> t1) {
    if (!(window_s > 0)) throw Error("throughput window must be > 0");
    ThroughputSeries s;
    s.window_s = window_s;
    if (log.rows.empty() && !(t0 && t1)) return s;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : log.rows) {
        lo = std::min(lo, r.rx_time);
        hi = std::max(hi, r.rx_time);
    }
    s.t0 = t0.value_or(lo);
    const double end = t1.value_or(hi);
    // The last window is the one holding `end` when it was derived from the
    // log, and the last one starting before `end` otherwise.
    std::size_t n = 0;
    if (end >= s.t0) {
        const double span = (end - s.t0) / window_s;
        n = t1 ? static_cast<std::size_t>(std::ceil(span)) : static_cast<std::size_t>(std::floor(span)) + 1;
    }
    std::vector<double> bytes(n, 0.0);
    for (const auto& r : log.rows) {
        if (r.rx_time < s.t0) continue;
        const auto k = static_cast<std::size_t>(std::floor((r.rx_time - s.t0) / window_s));
        if (k < n) bytes[k] += r.size;
    }
    s.mbps.resize(n);
    for (std::size_t k = 0; k < n; ++k) s.mbps[k] = bytes[k] * 8.0 / window_s / 1e6;
    return s;
}

std::map<std::uint32_t, FlowLoss> loss_per_flow(const replay::PacketLog& log) {
    std::map<std::uint32_t, FlowLoss> out;
    for (const auto& r : log.rows) {
        auto& f = out[r.flow];
        ++f.received;
        f.expected = std::max<std::uint64_t>(f.expected, std::uint64_t{r.seq} + 1);
    }
    return out;
}

std::vector<double> prb_ratio(std::span<const KpmFrame> frames) {
    std::vector<double> out;
    for (const auto& f : frames) {
        if (!(f.sum_requested_prbs > 0) || std::isnan(f.sum_granted_prbs)) continue;
        out.push_back(f.sum_granted_prbs / f.sum_requested_prbs);
    }
    return out;
}

CqiRow cqi_occupancy(std::span<const int> cqi) {
    CqiRow row;
    std::array<std::size_t, 16> counts{};
    for (int c : cqi) {
        if (c < 0) continue;
        if (c > 15) throw Error("CQI out of range [0,15]: " + std::to_string(c));
        ++counts[static_cast<std::size_t>(c)];
        ++row.frames;
    }
    row.empty = row.frames == 0;
    if (row.empty) return row;
    for (std::size_t i = 0; i < 16; ++i)
        row.percent[i] = 100.0 * static_cast<double>(counts[i]) / static_cast<double>(row.frames);
    return row;
}

std::map<std::string, CqiRow> cqi_occupancy(std::span<const KpmFrame> frames) {
    std::map<std::string, std::vector<int>> by_ue;
    for (const auto& f : frames) by_ue[f.imsi].push_back(f.dl_cqi);
    std::map<std::string, CqiRow> out;
    for (const auto& [imsi, v] : by_ue) out[imsi] = cqi_occupancy(v);
    return out;
}

std::vector<LatencyRequirement> default_requirements() {
    return {
        {"AGV control", 5},
        {"Cloud gaming", 7},
        {"Robot tooling", 10},
        {"AR in smart factory", 15},
        {"Fault mgmt in distributed power generation", 30},
        {"UAV command and control", 100},
        {"Fault location identification", 140},
    };
}

std::vector<double> requirement_satisfaction(std::span<const double> latencies_ms,
                                             std::span<const LatencyRequirement> reqs) {
    if (latencies_ms.empty()) throw Error("requirement_satisfaction: empty latency series");
    std::vector<double> sorted(latencies_ms.begin(), latencies_ms.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    for (const auto& r : reqs) {
        if (!(r.bound_ms > 0)) throw Error("latency bound must be > 0 for '" + r.use_case + "'");
        const auto n = std::upper_bound(sorted.begin(), sorted.end(), r.bound_ms) - sorted.begin();
        out.push_back(static_cast<double>(n) / static_cast<double>(sorted.size()));
    }
    return out;
}

Ecdf ecdf(std::span<const double> values) {
    if (values.empty()) throw Error("ecdf: empty input");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    Ecdf e;
    const auto n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i + 1 < v.size() && v[i + 1] == v[i]) continue;
        e.x.push_back(v[i]);
        e.p.push_back(static_cast<double>(i + 1) / n);
    }
    return e;
}

const std::vector<SlicingConfig>& slicing_table() {
    static const std::vector<SlicingConfig> t = {
        {"slicing_1", 9, 41}, {"slicing_2", 21, 29}, {"slicing_3", 30, 20}, {"slicing_4", 39, 11}, {"slicing_5", 50, 0},
    };
    return t;
}

const SlicingConfig& find_slicing(std::string_view name) {
    for (const auto& s : slicing_table())
        if (s.name == name) return s;
    throw Error("unknown slicing configuration '" + std::string(name) + "'");
}

void write_values(std::ostream& out, std::string_view name, std::span<const double> values) {
    out << "index," << name << '\n';
    for (std::size_t i = 0; i < values.size(); ++i) out << i << ',' << text::format_trimmed(values[i], 9) << '\n';
}

void write_throughput(std::ostream& out, const ThroughputSeries& s) {
    out << "t,mbps\n";
    for (std::size_t i = 0; i < s.mbps.size(); ++i)
        out << text::format_trimmed(s.t0 + static_cast<double>(i) * s.window_s, 6) << ','
            << text::format_trimmed(s.mbps[i], 9) << '\n';
}

void write_ecdf(std::ostream& out, const Ecdf& e) {
    out << "x,p\n";
    for (std::size_t i = 0; i < e.x.size(); ++i)
        out << text::format_trimmed(e.x[i], 9) << ',' << text::format_trimmed(e.p[i], 12) << '\n';
}

void write_cqi(std::ostream& out, const std::map<std::string, CqiRow>& rows) {
    out << "imsi,frames";
    for (int i = 0; i < 16; ++i) out << ",cqi_" << i;
    out << ",empty\n";
    for (const auto& [imsi, r] : rows) {
        out << imsi << ',' << r.frames;
        for (double p : r.percent) out << ',' << text::format_trimmed(p, 9);
        out << ',' << (r.empty ? 1 : 0) << '\n';
    }
}

void write_satisfaction(std::ostream& out, std::span<const LatencyRequirement> reqs, std::span<const double> p) {
    out << "use_case,bound_ms,probability\n";
    for (std::size_t i = 0; i < reqs.size() && i < p.size(); ++i)
        out << '"' << reqs[i].use_case << "\"," << text::format_trimmed(reqs[i].bound_ms, 6) << ','
            << text::format_trimmed(p[i], 6) << '\n';
}

}  // namespace tracetwin::kpm

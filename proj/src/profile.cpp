#include "tracetwin/profile.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tracetwin/common.hpp"

namespace tracetwin::profile {

std::string to_string(ServiceClass c) { return c == ServiceClass::eMBB ? "eMBB" : "URLLC"; }

ServiceClass parse_service_class(std::string_view s) {
    const auto v = text::to_lower(text::trim(s));
    if (v == "embb") return ServiceClass::eMBB;
    if (v == "urllc") return ServiceClass::URLLC;
    throw Error("unknown service class '" + std::string(s) + "'");
}

std::vector<ClassSpec> default_classes() {
    return {
        ClassSpec{ServiceClass::eMBB, 4, 1250, RatePolicy::share_of_aggregate, 0.0},
        ClassSpec{ServiceClass::URLLC, 4, 125, RatePolicy::fixed, 10.0},
    };
}

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

std::vector<WindowProfile> window_aggregate(const ingest::CellSeries& series, std::span<const int> labels, int W) {
    if (W < 1) throw Error("window length W must be >= 1");
    if (labels.size() != series.size())
        throw Error("labels (" + std::to_string(labels.size()) + ") and series (" + std::to_string(series.size()) +
                    ") are not aligned");
    std::vector<WindowProfile> out;
    const std::size_t T = series.size();
    for (std::size_t begin = 0, idx = 0; begin < T; begin += static_cast<std::size_t>(W), ++idx) {
        const std::size_t end = std::min(T, begin + static_cast<std::size_t>(W));
        WindowProfile p;
        p.window_index = idx;
        p.start = series.t0 + static_cast<std::int64_t>(begin);
        p.W = W;
        std::map<int, int> votes;
        double load = 0, ues = 0;
        for (std::size_t s = begin; s < end; ++s) {
            ++votes[labels[s]];
            load += series.load_mbps[s];
            ues += series.active_ues[s];
        }
        // std::map iterates in ascending label order, so ties keep the lower index.
        int best = -1;
        int best_count = 0;
        for (auto [label, count] : votes) {
            if (count > best_count) {
                best = label;
                best_count = count;
            }
        }
        p.cluster = best;
        const auto n = static_cast<double>(end - begin);
        p.agg_rate_mbps = load / n;
        p.avg_ues = ues / n;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<WindowProfile> derive_class_flows(std::span<const WindowProfile> profiles,
                                              std::span<const ClassSpec> classes, double split) {
    if (classes.empty()) throw Error("derive_class_flows: no service classes given");
    if (!(split >= 0.0 && split <= 1.0)) throw Error("derive_class_flows: split must be in [0,1]");
    int total_population = 0;
    for (const auto& c : classes) {
        if (c.population < 0) throw Error("class population must be >= 0");
        if (c.payload_bytes <= 0) throw Error("class payload must be > 0");
        total_population += c.population;
    }
    std::vector<std::size_t> share_classes;
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].rate_policy == RatePolicy::share_of_aggregate) share_classes.push_back(i);

    std::vector<WindowProfile> out(profiles.begin(), profiles.end());
    for (auto& p : out) {
        p.per_class.clear();
        p.unserved_mbps = 0.0;
        std::vector<int> active(classes.size(), 0);
        for (std::size_t i = 0; i < classes.size(); ++i) {
            const double share =
                total_population > 0 ? static_cast<double>(classes[i].population) / total_population : 0.0;
            active[i] = std::clamp(round_half_up(p.avg_ues * share), 0, classes[i].population);
        }
        if (!(p.agg_rate_mbps > 0)) {
            for (std::size_t i = 0; i < classes.size(); ++i)
                p.per_class[classes[i].name] = ClassFlow{active[i], 0.0, classes[i].payload_bytes};
            continue;
        }

        double remaining = p.agg_rate_mbps;
        for (std::size_t i = 0; i < classes.size(); ++i) {
            if (classes[i].rate_policy != RatePolicy::fixed) continue;
            ClassFlow f{active[i], classes[i].fixed_rate_msgs_s, classes[i].payload_bytes};
            remaining -= f.load_mbps();
            p.per_class[classes[i].name] = f;
        }
        if (remaining < 0) {
            // Fixed classes alone exceed the aggregate; nothing left to share.
            p.unserved_mbps = remaining;
            remaining = 0;
        }

        int other_population = 0;
        for (std::size_t k = 1; k < share_classes.size(); ++k) other_population += classes[share_classes[k]].population;
        for (std::size_t k = 0; k < share_classes.size(); ++k) {
            const auto& spec = classes[share_classes[k]];
            double target = 0;
            if (share_classes.size() == 1) target = remaining;
            else if (k == 0) target = remaining * split;
            else if (other_population > 0)
                target = remaining * (1.0 - split) * spec.population / other_population;
            const int n_active = active[share_classes[k]];
            ClassFlow f{n_active, 0.0, spec.payload_bytes};
            if (n_active > 0) {
                f.per_ue_rate_msgs_s = target * 1e6 / (n_active * spec.payload_bytes * 8.0);
            } else if (target > 0) {
                p.unserved_mbps += target;
            }
            p.per_class[spec.name] = f;
        }
        if (share_classes.empty() && remaining > 0) p.unserved_mbps += remaining;
    }
    return out;
}

void write_profiles(std::ostream& out, std::span<const WindowProfile> profiles) {
    if (!profiles.empty()) out << "# W=" << profiles.front().W << "\n";
    out << "window,start,cluster,agg_mbps,avg_ues,class,n_active,rate_msgs_s,payload_B\n";
    for (const auto& p : profiles) {
        auto prefix = [&] {
            out << p.window_index << ',' << p.start << ',' << p.cluster << ',' << text::format_trimmed(p.agg_rate_mbps, 9)
                << ',' << text::format_trimmed(p.avg_ues, 9) << ',';
        };
        if (p.per_class.empty()) {
            prefix();
            out << ",,,\n";
            continue;
        }
        for (const auto& [cls, f] : p.per_class) {
            prefix();
            out << to_string(cls) << ',' << f.n_active << ',' << text::format_trimmed(f.per_ue_rate_msgs_s, 9) << ','
                << f.payload_bytes << '\n';
        }
    }
}

std::vector<WindowProfile> read_profiles(std::string_view content) {
    int W = 0;
    if (auto pos = content.find("# W="); pos != std::string_view::npos) {
        auto end = content.find('\n', pos);
        if (auto v = text::parse_int(content.substr(pos + 4, end - pos - 4))) W = static_cast<int>(*v);
    }
    const Table t = read_table(content, ',', true);
    static const char* cols[] = {"window", "start", "cluster", "agg_mbps", "avg_ues", "class", "n_active", "rate_msgs_s", "payload_B"};
    std::vector<std::size_t> idx;
    for (const char* c : cols) {
        auto i = t.column(c);
        if (!i) throw Error(std::string("profiles file is missing column '") + c + "'");
        idx.push_back(*i);
    }
    std::vector<WindowProfile> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto line = t.line_numbers[r];
        auto field = [&](std::size_t k) -> const std::string& {
            if (idx[k] >= row.size()) throw ParseError(line, std::string("missing field ") + cols[k]);
            return row[idx[k]];
        };
        auto num = [&](std::size_t k) {
            auto v = text::parse_double(field(k));
            if (!v) throw ParseError(line, std::string("bad number in ") + cols[k]);
            return *v;
        };
        const auto window = static_cast<std::size_t>(num(0));
        if (out.empty() || out.back().window_index != window) {
            WindowProfile p;
            p.window_index = window;
            p.start = static_cast<std::int64_t>(num(1));
            p.cluster = static_cast<int>(num(2));
            p.agg_rate_mbps = num(3);
            p.avg_ues = num(4);
            p.W = W;
            out.push_back(std::move(p));
        }
        if (field(5).empty()) continue;
        ClassFlow f{static_cast<int>(num(6)), num(7), static_cast<int>(num(8))};
        out.back().per_class[parse_service_class(field(5))] = f;
    }
    if (W == 0 && out.size() >= 2) {
        for (auto& p : out) p.W = static_cast<int>(out[1].start - out[0].start);
    }
    if (!out.empty() && out.front().W <= 0) throw Error("profiles file does not state the window length W");
    return out;
}

}  // namespace tracetwin::profile

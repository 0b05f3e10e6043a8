#include "tracetwin/flowmap.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "tracetwin/common.hpp"

namespace tracetwin::flowmap {

using profile::ServiceClass;

std::optional<Ipv4> Ipv4::parse(std::string_view s) {
    std::uint32_t addr = 0;
    int parts = 0;
    std::size_t pos = 0;
    while (parts < 4) {
        const auto dot = s.find('.', pos);
        const auto piece = s.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
        if (piece.empty() || piece.size() > 3) return std::nullopt;
        for (char c : piece)
            if (c < '0' || c > '9') return std::nullopt;
        const auto v = text::parse_int(piece);
        if (!v || *v > 255) return std::nullopt;
        addr = (addr << 8) | static_cast<std::uint32_t>(*v);
        ++parts;
        if (dot == std::string_view::npos) break;
        pos = dot + 1;
    }
    if (parts != 4 || s.find('.', pos) != std::string_view::npos) return std::nullopt;
    return Ipv4{addr};
}

std::string Ipv4::str() const {
    return std::to_string((addr >> 24) & 0xff) + "." + std::to_string((addr >> 16) & 0xff) + "." +
           std::to_string((addr >> 8) & 0xff) + "." + std::to_string(addr & 0xff);
}

EndpointMap default_endpoints(std::span<const profile::ClassSpec> classes, Ipv4 first_ip, std::uint16_t port,
                              std::uint64_t first_imsi) {
    EndpointMap m;
    int ue = 1;
    for (const auto& c : classes) {
        for (int k = 0; k < c.population; ++k, ++ue) {
            const auto off = static_cast<std::uint32_t>(ue - 1);
            m[ue] = Endpoint{std::to_string(first_imsi + off), first_ip.offset(off), port, c.name};
        }
    }
    return m;
}

EndpointMap default_endpoints() { return default_endpoints(profile::default_classes()); }

double canonical_rate(double rate) { return std::round(rate * 100.0) / 100.0; }

namespace {

double canonical_time(double t) { return std::round(t * 1000.0) / 1000.0; }

struct Running {
    double rate;
    int payload;
    bool operator==(const Running&) const = default;
};

}  // namespace

TrafficScript emit_script(std::span<const profile::WindowProfile> profiles, const EndpointMap& endpoints,
                          const EmitOptions& opts) {
    if (opts.warmup_s < 0) throw Error("emit_script: warmup must be >= 0");
    TrafficScript script;
    if (profiles.empty()) return script;

    std::map<ServiceClass, std::vector<int>> class_ues;
    for (const auto& [id, ep] : endpoints) class_ues[ep.cls].push_back(id);  // map order: ascending id

    std::map<int, Running> running;
    auto on_event = [&](double t, int ue, const Running& r) {
        const auto& ep = endpoints.at(ue);
        FlowEvent e;
        e.time_s = t;
        e.kind = EventKind::On;
        e.flow_id = ue;
        e.dst_ip = ep.ip;
        e.dst_port = ep.port;
        e.pattern = Periodic{r.rate, r.payload};
        script.events.push_back(e);
    };
    auto off_event = [&](double t, int ue) {
        FlowEvent e;
        e.time_s = t;
        e.kind = EventKind::Off;
        e.flow_id = ue;
        script.events.push_back(e);
    };

    const std::int64_t base = profiles.front().start;
    for (const auto& p : profiles) {
        const double t = canonical_time(opts.warmup_s + static_cast<double>(p.start - base));
        std::map<int, Running> desired;
        for (const auto& [cls, flow] : p.per_class) {
            if (flow.n_active <= 0) continue;
            const auto it = class_ues.find(cls);
            const std::size_t available = it == class_ues.end() ? 0 : it->second.size();
            if (static_cast<std::size_t>(flow.n_active) > available)
                throw Error("emit_script: window " + std::to_string(p.window_index) + " needs " +
                            std::to_string(flow.n_active) + " " + profile::to_string(cls) + " UEs but only " +
                            std::to_string(available) + " endpoints are mapped");
            double scale = 1.0;
            if (auto s = opts.rate_scale.find(cls); s != opts.rate_scale.end()) scale = s->second;
            const double rate = canonical_rate(flow.per_ue_rate_msgs_s * scale);
            if (!(rate > 0)) continue;
            for (int k = 0; k < flow.n_active; ++k) desired[it->second[static_cast<std::size_t>(k)]] = Running{rate, flow.payload_bytes};
        }
        std::vector<int> offs;
        for (const auto& [ue, r] : running) {
            auto d = desired.find(ue);
            if (d == desired.end() || !(d->second == r)) offs.push_back(ue);
        }
        for (int ue : offs) {
            off_event(t, ue);
            running.erase(ue);
        }
        for (const auto& [ue, r] : desired) {
            if (running.count(ue)) continue;
            on_event(t, ue, r);
            running[ue] = r;
        }
    }
    if (opts.close_at_end) {
        const auto& last = profiles.back();
        const double t_end = canonical_time(opts.warmup_s + static_cast<double>(last.start - base) + last.W);
        for (const auto& [ue, r] : running) off_event(t_end, ue);
    }
    return script;
}

namespace {

std::string format_pattern(const Pattern& p) {
    if (const auto* pp = std::get_if<Periodic>(&p))
        return "PERIODIC [" + text::format_decimal(pp->rate_msgs_s, 2) + " " + std::to_string(pp->payload_bytes) + "]";
    if (const auto* po = std::get_if<Poisson>(&p))
        return "POISSON [" + text::format_decimal(po->rate_msgs_s, 2) + " " + std::to_string(po->payload_bytes) + "]";
    return "BURST [" + std::get<Burst>(p).spec + "]";
}

}  // namespace

std::string serialize(const TrafficScript& script) {
    std::string out;
    for (std::size_t i = 0; i < script.events.size(); ++i) {
        const auto& e = script.events[i];
        if (i > 0 && e.time_s != script.events[i - 1].time_s) out += "\n";
        out += text::format_trimmed(e.time_s, 3);
        if (e.kind == EventKind::Off) {
            out += " OFF " + std::to_string(e.flow_id) + "\n";
            continue;
        }
        out += " ON " + std::to_string(e.flow_id) + " UDP DST " + e.dst_ip.str() + "/" + std::to_string(e.dst_port);
        if (e.pattern) out += " " + format_pattern(*e.pattern);
        out += "\n";
    }
    return out;
}

namespace {

// Splits the bracketed parameter list that follows a pattern keyword,
// honoring nested brackets (BURST carries an inner pattern).
std::string bracket_contents(std::string_view rest, std::size_t line, std::string_view* after) {
    rest = text::trim(rest);
    if (rest.empty() || rest.front() != '[') throw ParseError(line, "expected '[' after pattern name");
    int depth = 0;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        if (rest[i] == '[') ++depth;
        else if (rest[i] == ']' && --depth == 0) {
            *after = rest.substr(i + 1);
            return std::string(text::trim(rest.substr(1, i - 1)));
        }
    }
    throw ParseError(line, "unterminated '['");
}

std::pair<double, int> rate_and_size(const std::string& params, std::size_t line, const char* name) {
    const auto toks = text::split_ws(params);
    if (toks.size() != 2) throw ParseError(line, std::string(name) + " expects [<rate> <size>]");
    const auto rate = text::parse_double(toks[0]);
    const auto size = text::parse_int(toks[1]);
    if (!rate || !(*rate >= 0)) throw ParseError(line, "invalid rate '" + toks[0] + "'");
    if (!size || *size <= 0 || *size > 65507) throw ParseError(line, "invalid message size '" + toks[1] + "'");
    return {*rate, static_cast<int>(*size)};
}

}  // namespace

TrafficScript parse_script(std::string_view content) {
    TrafficScript script;
    std::set<int> active;
    double last_time = 0;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        std::size_t nl = content.find('\n', pos);
        if (nl == std::string_view::npos) nl = content.size();
        std::string_view line = content.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = text::trim(line);
        if (line.empty()) continue;

        const auto toks = text::split_ws(line);
        if (toks.size() < 3) throw ParseError(line_no, "expected '<time> ON|OFF <flow_id> ...'");
        const auto t = text::parse_double(toks[0]);
        if (!t || !(*t >= 0)) throw ParseError(line_no, "invalid event time '" + toks[0] + "'");
        if (*t < last_time) throw ParseError(line_no, "event time decreases");
        last_time = *t;
        const auto directive = toks[1];
        if (directive != "ON" && directive != "OFF") throw ParseError(line_no, "unsupported directive '" + directive + "'");
        const auto id = text::parse_int(toks[2]);
        if (!id || *id < 1 || *id > 0x7fffffff) throw ParseError(line_no, "invalid flow id '" + toks[2] + "'");

        FlowEvent e;
        e.time_s = *t;
        e.flow_id = static_cast<int>(*id);
        if (directive == "OFF") {
            if (toks.size() != 3) throw ParseError(line_no, "unexpected tokens after OFF");
            if (!active.erase(e.flow_id)) throw ParseError(line_no, "flow " + toks[2] + " is not active");
            e.kind = EventKind::Off;
            script.events.push_back(e);
            continue;
        }

        e.kind = EventKind::On;
        if (toks.size() < 7) throw ParseError(line_no, "ON expects '<proto> DST <ip>/<port> <pattern> [...]'");
        if (toks[3] != "UDP") throw ParseError(line_no, "unsupported protocol '" + toks[3] + "'");
        if (toks[4] != "DST") throw ParseError(line_no, "expected DST, got '" + toks[4] + "'");
        const auto slash = toks[5].find('/');
        if (slash == std::string::npos) throw ParseError(line_no, "destination must be <ip>/<port>");
        const auto ip = Ipv4::parse(std::string_view(toks[5]).substr(0, slash));
        const auto port = text::parse_int(std::string_view(toks[5]).substr(slash + 1));
        if (!ip) throw ParseError(line_no, "invalid IPv4 address in '" + toks[5] + "'");
        if (!port || *port < 1 || *port > 65535) throw ParseError(line_no, "invalid port in '" + toks[5] + "'");
        e.dst_ip = *ip;
        e.dst_port = static_cast<std::uint16_t>(*port);

        // Everything after the destination token is the pattern.
        const auto dst_pos = line.find(toks[5]);
        std::string_view rest = text::trim(line.substr(dst_pos + toks[5].size()));
        const auto sp = rest.find_first_of(" \t[");
        const std::string kind(rest.substr(0, sp));
        std::string_view after;
        const std::string params = bracket_contents(sp == std::string_view::npos ? "" : rest.substr(sp), line_no, &after);
        if (!text::trim(after).empty())
            throw ParseError(line_no, "unsupported option '" + std::string(text::trim(after)) + "'");
        if (kind == "PERIODIC") {
            auto [r, s] = rate_and_size(params, line_no, "PERIODIC");
            e.pattern = Periodic{r, s};
        } else if (kind == "POISSON") {
            auto [r, s] = rate_and_size(params, line_no, "POISSON");
            e.pattern = Poisson{r, s};
        } else if (kind == "BURST") {
            e.pattern = Burst{params};
        } else {
            throw ParseError(line_no, "unsupported pattern '" + kind + "'");
        }
        if (!active.insert(e.flow_id).second) throw ParseError(line_no, "flow " + toks[2] + " is already active");
        script.events.push_back(e);
    }
    return script;
}

void check_script(const TrafficScript& script) {
    std::set<int> active;
    double last = 0;
    for (std::size_t i = 0; i < script.events.size(); ++i) {
        const auto& e = script.events[i];
        if (e.time_s < 0 || e.time_s < last) throw Error("event " + std::to_string(i) + ": time decreases");
        last = e.time_s;
        if (e.kind == EventKind::On) {
            if (!e.pattern) throw Error("event " + std::to_string(i) + ": ON without a pattern");
            if (!active.insert(e.flow_id).second)
                throw Error("event " + std::to_string(i) + ": flow " + std::to_string(e.flow_id) + " already active");
        } else if (!active.erase(e.flow_id)) {
            throw Error("event " + std::to_string(i) + ": flow " + std::to_string(e.flow_id) + " is not active");
        }
    }
}

double scheduled_load_mbps(const TrafficScript& script, double t0, double t1) {
    if (!(t1 > t0)) throw Error("scheduled_load_mbps: empty interval");
    const double end = script.end_time();
    std::map<int, std::pair<double, double>> open;  // flow -> (start, bits per second)
    double bits = 0;
    auto close = [&](double start, double bps, double stop) {
        const double a = std::max(start, t0);
        const double b = std::min(stop, t1);
        if (b > a) bits += bps * (b - a);
    };
    for (const auto& e : script.events) {
        if (e.kind == EventKind::On) {
            double bps = 0;
            if (const auto* p = std::get_if<Periodic>(&*e.pattern)) bps = p->rate_msgs_s * p->payload_bytes * 8.0;
            else if (const auto* q = std::get_if<Poisson>(&*e.pattern)) bps = q->rate_msgs_s * q->payload_bytes * 8.0;
            open[e.flow_id] = {e.time_s, bps};
        } else if (auto it = open.find(e.flow_id); it != open.end()) {
            close(it->second.first, it->second.second, e.time_s);
            open.erase(it);
        }
    }
    for (const auto& [id, o] : open) close(o.first, o.second, std::max(end, t1));
    return bits / (t1 - t0) / 1e6;
}

}  // namespace tracetwin::flowmap

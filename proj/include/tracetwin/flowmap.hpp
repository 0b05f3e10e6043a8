#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tracetwin/profile.hpp"

namespace tracetwin::flowmap {

struct Ipv4 {
    std::uint32_t addr = 0;  // host byte order

    static std::optional<Ipv4> parse(std::string_view s);
    std::string str() const;
    Ipv4 offset(std::uint32_t k) const { return Ipv4{addr + k}; }
    bool operator==(const Ipv4&) const = default;
    auto operator<=>(const Ipv4&) const = default;
};

struct Periodic {
    double rate_msgs_s = 0;
    int payload_bytes = 0;
    bool operator==(const Periodic&) const = default;
};

struct Poisson {
    double rate_msgs_s = 0;
    int payload_bytes = 0;
    bool operator==(const Poisson&) const = default;
};

/// Burst parameters are kept verbatim (the text between the outer brackets).
struct Burst {
    std::string spec;
    bool operator==(const Burst&) const = default;
};

using Pattern = std::variant<Periodic, Poisson, Burst>;

enum class EventKind { On, Off };
enum class Protocol { UDP };

struct FlowEvent {
    double time_s = 0;
    EventKind kind = EventKind::On;
    int flow_id = 0;
    Protocol protocol = Protocol::UDP;
    Ipv4 dst_ip{};
    std::uint16_t dst_port = 0;
    std::optional<Pattern> pattern;  // set for On only

    bool operator==(const FlowEvent&) const = default;
};

struct TrafficScript {
    std::vector<FlowEvent> events;

    double end_time() const { return events.empty() ? 0.0 : events.back().time_s; }
    bool operator==(const TrafficScript&) const = default;
};

struct Endpoint {
    std::string imsi;
    Ipv4 ip{};
    std::uint16_t port = 5000;
    profile::ServiceClass cls = profile::ServiceClass::eMBB;
};

/// UE id (also the flow id) -> endpoint.
using EndpointMap = std::map<int, Endpoint>;

/// UEs numbered from 1 in class order; consecutive addresses from `first_ip`
/// and IMSIs counting up from `first_imsi`. The defaults give
/// UE 1 -> 172.16.0.3 / 1010123456002 ... UE 8 -> 172.16.0.10 / 1010123456009.
EndpointMap default_endpoints(std::span<const profile::ClassSpec> classes, Ipv4 first_ip = *Ipv4::parse("172.16.0.3"),
                              std::uint16_t port = 5000, std::uint64_t first_imsi = 1010123456002ULL);
EndpointMap default_endpoints();

struct EmitOptions {
    /// Script time of the first window.
    double warmup_s = 70.0;
    /// Multiplier applied to per-UE rates of a class before formatting.
    std::map<profile::ServiceClass, double> rate_scale;
    /// Emit OFF for every running flow at the end of the last window.
    bool close_at_end = true;
};

/// Builds an ON/OFF script from per-class window profiles. Active UEs are
/// filled lowest id first; flows whose rate is unchanged across a window
/// boundary keep running. Throws Error when an active UE has no endpoint.
TrafficScript emit_script(std::span<const profile::WindowProfile> profiles, const EndpointMap& endpoints,
                          const EmitOptions& opts = {});

/// Canonical text form: one event per line, a blank line between event times.
std::string serialize(const TrafficScript& script);

/// Throws ParseError (with line number) on malformed or unsupported input.
TrafficScript parse_script(std::string_view text);

/// Throws Error if times decrease or a flow is switched on twice without an
/// OFF in between.
void check_script(const TrafficScript& script);

/// Mean offered load (Mbps) scheduled by the script over [t0, t1).
/// Periodic and Poisson patterns contribute rate * size; Burst is ignored.
double scheduled_load_mbps(const TrafficScript& script, double t0, double t1);

/// Rounds a rate to the precision the script format carries.
double canonical_rate(double rate);

}  // namespace tracetwin::flowmap

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tracetwin/ingest.hpp"

namespace tracetwin::profile {

enum class ServiceClass { eMBB, URLLC };
enum class RatePolicy { share_of_aggregate, fixed };

std::string to_string(ServiceClass c);
ServiceClass parse_service_class(std::string_view s);

struct ClassSpec {
    ServiceClass name = ServiceClass::eMBB;
    int population = 0;
    int payload_bytes = 1250;
    RatePolicy rate_policy = RatePolicy::share_of_aggregate;
    double fixed_rate_msgs_s = 0.0;
};

/// 4 eMBB UEs at 1250 B absorbing the residual load, 4 URLLC UEs at a fixed
/// 10 msgs/s of 125 B.
std::vector<ClassSpec> default_classes();

struct ClassFlow {
    int n_active = 0;
    double per_ue_rate_msgs_s = 0.0;
    int payload_bytes = 0;

    double load_mbps() const { return n_active * per_ue_rate_msgs_s * payload_bytes * 8.0 / 1e6; }
};

struct WindowProfile {
    std::size_t window_index = 0;
    std::int64_t start = 0;  // seconds since trace epoch
    int W = 60;
    int cluster = 0;
    double agg_rate_mbps = 0.0;
    double avg_ues = 0.0;
    std::map<ServiceClass, ClassFlow> per_class;
    /// Aggregate load that could not be mapped onto any flow (Mbps).
    double unserved_mbps = 0.0;
};

/// ceil(T/W) windows; the last one may be partial. Throws Error on misaligned input.
std::vector<WindowProfile> window_aggregate(const ingest::CellSeries& series, std::span<const int> labels, int W);

/// Fills per_class. Fixed-policy classes are served first; share-policy
/// classes split what remains. With several share classes the first one gets
/// `split` of the remainder and the others divide the rest by population.
std::vector<WindowProfile> derive_class_flows(std::span<const WindowProfile> profiles,
                                              std::span<const ClassSpec> classes, double split = 1.0);

/// Rounds half up, the rule used to turn fractional UE counts into active UEs.
int round_half_up(double v);

void write_profiles(std::ostream& out, std::span<const WindowProfile> profiles);
std::vector<WindowProfile> read_profiles(std::string_view content);

}  // namespace tracetwin::profile

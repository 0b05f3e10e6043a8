#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "tracetwin/common.hpp"
#include "tracetwin/flowmap.hpp"

using namespace tracetwin;
using namespace tracetwin::flowmap;
using profile::ServiceClass;

namespace {

// Reference three-window script for 4 eMBB + 4 URLLC UEs, W = 60, warm-up 70 s.
const char* const reference_head =
    "70 ON 1 UDP DST 172.16.0.3/5000 PERIODIC [560.39 1250]\n"
    "70 ON 2 UDP DST 172.16.0.4/5000 PERIODIC [560.39 1250]\n"
    "70 ON 3 UDP DST 172.16.0.5/5000 PERIODIC [560.39 1250]\n"
    "70 ON 5 UDP DST 172.16.0.7/5000 PERIODIC [10 125]\n"
    "70 ON 6 UDP DST 172.16.0.8/5000 PERIODIC [10 125]\n"
    "70 ON 7 UDP DST 172.16.0.9/5000 PERIODIC [10 125]\n"
    "\n"
    "130 OFF 1\n"
    "130 OFF 2\n"
    "130 OFF 3\n"
    "130 ON 1 UDP DST 172.16.0.3/5000 PERIODIC [512.05 1250]\n"
    "130 ON 2 UDP DST 172.16.0.4/5000 PERIODIC [512.05 1250]\n"
    "130 ON 3 UDP DST 172.16.0.5/5000 PERIODIC [512.05 1250]\n"
    "130 ON 4 UDP DST 172.16.0.6/5000 PERIODIC [512.05 1250]\n"
    "130 ON 8 UDP DST 172.16.0.10/5000 PERIODIC [10 125]\n"
    "\n"
    "190 OFF 1\n"
    "190 OFF 2\n"
    "190 OFF 3\n"
    "190 OFF 4\n"
    "190 OFF 8\n"
    "190 ON 1 UDP DST 172.16.0.3/5000 PERIODIC [555.73 1250]\n"
    "190 ON 2 UDP DST 172.16.0.4/5000 PERIODIC [555.73 1250]\n"
    "190 ON 3 UDP DST 172.16.0.5/5000 PERIODIC [555.73 1250]\n";

std::vector<profile::WindowProfile> reference_profiles() {
    const double embb[3] = {5.6039, 5.1205, 5.5573};
    const double ues[3] = {6, 8, 6};
    std::vector<profile::WindowProfile> w(3);
    for (int i = 0; i < 3; ++i) {
        w[static_cast<std::size_t>(i)].window_index = static_cast<std::size_t>(i);
        w[static_cast<std::size_t>(i)].start = 60 * i;
        w[static_cast<std::size_t>(i)].avg_ues = ues[i];
        const int n = static_cast<int>(ues[i] / 2);
        w[static_cast<std::size_t>(i)].agg_rate_mbps = n * embb[i] + n * 0.01;
    }
    return profile::derive_class_flows(w, profile::default_classes());
}

}  // namespace

TEST_CASE("reference three-window script is reproduced byte for byte") {
    const auto script = emit_script(reference_profiles(), default_endpoints());
    const std::string text = serialize(script);
    const std::string head = reference_head;
    REQUIRE(text.size() >= head.size());
    CHECK(text.substr(0, head.size()) == head);
    // The running flows are closed at the end of the last window.
    CHECK(text.find("250 OFF 1\n") != std::string::npos);
    CHECK(parse_script(text) == script);
}

TEST_CASE("default endpoints") {
    const auto eps = default_endpoints();
    REQUIRE(eps.size() == 8);
    CHECK(eps.at(1).ip.str() == "172.16.0.3");
    CHECK(eps.at(1).imsi == "1010123456002");
    CHECK(eps.at(4).cls == ServiceClass::eMBB);
    CHECK(eps.at(5).cls == ServiceClass::URLLC);
    CHECK(eps.at(8).ip.str() == "172.16.0.10");
    CHECK(eps.at(8).imsi == "1010123456009");
}

TEST_CASE("emit errors and scaling") {
    auto p = reference_profiles();
    EndpointMap few = default_endpoints();
    few.erase(4);
    CHECK_THROWS_AS(emit_script(p, few), Error);

    EmitOptions opts;
    opts.rate_scale[ServiceClass::eMBB] = 0.5;
    opts.close_at_end = false;
    const auto s = emit_script(p, default_endpoints(), opts);
    CHECK(std::get<Periodic>(*s.events.front().pattern).rate_msgs_s == doctest::Approx(280.2));
    CHECK(s.events.back().kind == EventKind::On);
    opts.warmup_s = -1;
    CHECK_THROWS_AS(emit_script(p, default_endpoints(), opts), Error);
}

TEST_CASE("scheduled load follows the script") {
    const auto s = emit_script(reference_profiles(), default_endpoints());
    CHECK(scheduled_load_mbps(s, 70, 130) == doctest::Approx(3 * 5.6039 + 0.03).epsilon(1e-9));
    CHECK(scheduled_load_mbps(s, 130, 190) == doctest::Approx(4 * 5.1205 + 0.04).epsilon(1e-9));
    CHECK(scheduled_load_mbps(s, 0, 70) == 0.0);
    CHECK(scheduled_load_mbps(s, 250, 300) == 0.0);
}

TEST_CASE("parser reports the offending line") {
    struct Case {
        const char* text;
        std::size_t line;
    };
    const Case cases[] = {
        {"1 ON 1 UDP DST 10.0.0.1/5000 PERIODIC [1 100]\n0.5 OFF 1\n", 2},
        {"1 ON 1 TCP DST 10.0.0.1/5000 PERIODIC [1 100]\n", 1},
        {"\n1 ON 1 UDP DST 10.0.0.1/5000 JITTER [1 100]\n", 2},
        {"1 ON 1 UDP DST 10.0.0.300/5000 PERIODIC [1 100]\n", 1},
        {"1 ON 1 UDP DST 10.0.0.1/70000 PERIODIC [1 100]\n", 1},
        {"1 ON 1 UDP DST 10.0.0.1/5000 PERIODIC [1]\n", 1},
        {"1 ON 1 UDP DST 10.0.0.1/5000 PERIODIC [1 100\n", 1},
        {"1 ON 1 UDP DST 10.0.0.1/5000 PERIODIC [1 100]\n2 ON 1 UDP DST 10.0.0.1/5000 PERIODIC [1 100]\n", 2},
        {"# header\n3 OFF 4\n", 2},
        {"3 MOD 4\n", 1},
        {"x ON 1\n", 1},
    };
    for (const auto& c : cases) {
        INFO(c.text);
        try {
            parse_script(c.text);
            FAIL("accepted");
        } catch (const ParseError& e) {
            CHECK(e.line() == c.line);
        }
    }
}

TEST_CASE("parser accepts comments, Poisson and Burst patterns") {
    const auto s = parse_script(
        "# config_hash=abc\n"
        "0 ON 1 UDP DST 10.0.0.1/5000 POISSON [12.5 200]\n"
        "0 ON 2 UDP DST 10.0.0.2/5001 BURST [REGULAR 10.0 PERIODIC [10 1024] FIXED 5.0]\n"
        "\n"
        "4 OFF 1\n");
    REQUIRE(s.events.size() == 3);
    CHECK(std::get<Poisson>(*s.events[0].pattern) == Poisson{12.5, 200});
    CHECK(std::get<Burst>(*s.events[1].pattern).spec == "REGULAR 10.0 PERIODIC [10 1024] FIXED 5.0");
    CHECK(s.events[1].dst_port == 5001);
    CHECK(parse_script(serialize(s)) == s);
}

TEST_CASE("serialize and parse are inverse on random scripts") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        TrafficScript s;
        std::set<int> active;
        double t = 0;
        const int events = 1 + static_cast<int>(rng() % 30);
        for (int k = 0; k < events; ++k) {
            if (rng() % 3 == 0) t = std::round((t + static_cast<double>(rng() % 100000) / 1000.0) * 1000.0) / 1000.0;
            const int id = 1 + static_cast<int>(rng() % 6);
            FlowEvent e;
            e.time_s = t;
            e.flow_id = id;
            if (active.count(id)) {
                e.kind = EventKind::Off;
                active.erase(id);
            } else {
                e.kind = EventKind::On;
                e.dst_ip = Ipv4{static_cast<std::uint32_t>(rng())};
                e.dst_port = static_cast<std::uint16_t>(1 + rng() % 65535);
                const double rate = canonical_rate(static_cast<double>(rng() % 200000) / 100.0);
                const int size = 24 + static_cast<int>(rng() % 1400);
                if (rng() % 2) e.pattern = Periodic{rate, size};
                else e.pattern = Poisson{rate, size};
                active.insert(id);
            }
            s.events.push_back(e);
        }
        check_script(s);
        const auto text = serialize(s);
        INFO(text);
        CHECK(parse_script(text) == s);
        CHECK(serialize(parse_script(text)) == text);
    }
}

TEST_CASE("check_script rejects inconsistent event lists") {
    TrafficScript s;
    FlowEvent on;
    on.time_s = 1;
    on.flow_id = 1;
    on.pattern = Periodic{1, 100};
    s.events = {on, on};
    CHECK_THROWS_AS(check_script(s), Error);
    FlowEvent off;
    off.kind = EventKind::Off;
    off.flow_id = 2;
    off.time_s = 2;
    s.events = {on, off};
    CHECK_THROWS_AS(check_script(s), Error);
}

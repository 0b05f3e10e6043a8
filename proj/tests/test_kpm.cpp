#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "tracetwin/common.hpp"
#include "tracetwin/kpm.hpp"

using namespace tracetwin;
using namespace tracetwin::kpm;
using replay::PacketLog;
using replay::PacketRecord;

namespace {

PacketRecord pkt(double rx, double tx, std::uint32_t size, std::uint32_t flow = 1, std::uint32_t seq = 0) {
    return PacketRecord{rx, tx, flow, seq, size, "", ""};
}

}  // namespace

TEST_CASE("latency in milliseconds, negatives kept and counted") {
    PacketLog log;
    log.rows = {pkt(1.010000, 1.0, 100), pkt(2.0, 2.0, 100), pkt(3.0, 3.002, 100)};
    const auto l = latency_series(log);
    REQUIRE(l.ms.size() == 3);
    CHECK(l.ms[0] == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(l.ms[1] == 0.0);
    CHECK(l.ms[2] == doctest::Approx(-2.0).epsilon(1e-9));
    CHECK(l.negative == 1);
}

TEST_CASE("windowed throughput") {
    PacketLog four;
    for (int i = 0; i < 4; ++i) four.rows.push_back(pkt(10.0 + 0.05 * i, 10.0, 1250));
    const auto s = windowed_throughput(four, 0.25, 10.0, 10.25);
    REQUIRE(s.mbps.size() == 1);
    CHECK(s.mbps[0] == doctest::Approx(0.16));

    PacketLog uniform;
    for (int i = 0; i < 140; ++i) uniform.rows.push_back(pkt(100.0 + i / 140.0, 100.0, 1250));
    const auto u = windowed_throughput(uniform, 0.25, 100.0, 101.0);
    REQUIRE(u.mbps.size() == 4);
    for (double v : u.mbps) CHECK(v == doctest::Approx(1.4));

    CHECK(windowed_throughput(PacketLog{}, 0.25).mbps.empty());
    const auto zeros = windowed_throughput(PacketLog{}, 0.25, 0.0, 1.0);
    CHECK(zeros.mbps == std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(windowed_throughput(four, 0), Error);
}

TEST_CASE("throughput conserves bytes") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> t(0, 7.3);
    PacketLog log;
    double bits = 0;
    for (int i = 0; i < 500; ++i) {
        const auto size = static_cast<std::uint32_t>(24 + rng() % 1400);
        log.rows.push_back(pkt(50 + t(rng), 0, size));
        bits += size * 8.0;
    }
    const auto s = windowed_throughput(log, 0.25);
    double sum = 0;
    for (double v : s.mbps) sum += v * 0.25;
    CHECK(std::abs(sum - bits / 1e6) < 1e-9);
}

TEST_CASE("loss per flow from sequence numbers") {
    PacketLog log;
    log.rows = {pkt(1, 0, 10, 1, 0), pkt(1, 0, 10, 1, 3), pkt(1, 0, 10, 2, 0)};
    const auto l = loss_per_flow(log);
    CHECK(l.at(1).expected == 4);
    CHECK(l.at(1).lost() == 2);
    CHECK(l.at(2).lost() == 0);
}

TEST_CASE("PRB ratio skips frames without demand") {
    std::vector<KpmFrame> f(3);
    f[0].sum_granted_prbs = 100, f[0].sum_requested_prbs = 100;
    f[1].sum_granted_prbs = 50, f[1].sum_requested_prbs = 100;
    f[2].sum_granted_prbs = 7, f[2].sum_requested_prbs = 0;
    CHECK(prb_ratio(f) == std::vector<double>{1.0, 0.5});
}

TEST_CASE("CQI occupancy") {
    const std::vector<int> all10(20, 10);
    auto r = cqi_occupancy(all10);
    CHECK(r.percent[10] == 100.0);
    CHECK_FALSE(r.empty);
    const std::vector<int> split{8, 12, 8, 12};
    r = cqi_occupancy(split);
    CHECK(r.percent[8] == 50.0);
    CHECK(r.percent[12] == 50.0);
    r = cqi_occupancy(std::vector<int>{});
    CHECK(r.empty);
    for (double p : r.percent) CHECK(p == 0.0);

    std::mt19937_64 rng(4);
    std::vector<KpmFrame> frames;
    for (int i = 0; i < 333; ++i) {
        KpmFrame k;
        k.imsi = i % 3 == 0 ? "a" : "b";
        k.dl_cqi = i % 7 == 0 ? -1 : static_cast<int>(rng() % 16);
        frames.push_back(k);
    }
    const auto rows = cqi_occupancy(frames);
    REQUIRE(rows.size() == 2);
    for (const auto& [imsi, row] : rows) {
        double sum = 0;
        for (double p : row.percent) sum += p;
        CHECK(std::abs(sum - 100.0) < 1e-9);
    }
}

TEST_CASE("latency requirement satisfaction") {
    const auto reqs = default_requirements();
    REQUIRE(reqs.size() == 7);
    CHECK(reqs[0].bound_ms == 5);
    CHECK(reqs[6].bound_ms == 140);
    const std::vector<double> ones(10, 1.0);
    for (double p : requirement_satisfaction(ones, reqs)) CHECK(p == 1.0);
    const std::vector<LatencyRequirement> five{{"x", 5}};
    CHECK(requirement_satisfaction(std::vector<double>{4, 6, 8}, five)[0] == doctest::Approx(1.0 / 3));
    CHECK_THROWS_AS(requirement_satisfaction(std::vector<double>{}, reqs), Error);

    std::mt19937_64 rng(8);
    std::exponential_distribution<double> e(0.1);
    std::vector<double> lat(300);
    for (auto& v : lat) v = e(rng);
    const auto p = requirement_satisfaction(lat, reqs);
    for (std::size_t i = 1; i < p.size(); ++i) CHECK(p[i] >= p[i - 1]);
}

TEST_CASE("ECDF matches the counting definition") {
    auto e = ecdf(std::vector<double>{1, 1, 2});
    CHECK(e.x == std::vector<double>{1, 2});
    CHECK(e.p[0] == doctest::Approx(2.0 / 3));
    CHECK(e.p[1] == 1.0);
    e = ecdf(std::vector<double>{4.5});
    CHECK(e.x == std::vector<double>{4.5});
    CHECK(e.p == std::vector<double>{1.0});
    CHECK_THROWS_AS(ecdf(std::vector<double>{}), Error);

    std::mt19937_64 rng(6);
    std::vector<double> v(50);
    for (auto& x : v) x = static_cast<double>(rng() % 20);
    e = ecdf(v);
    for (double x : v) {
        const auto k = static_cast<std::size_t>(std::lower_bound(e.x.begin(), e.x.end(), x) - e.x.begin());
        const auto count = std::count_if(v.begin(), v.end(), [&](double y) { return y <= x; });
        CHECK(e.p[k] == static_cast<double>(count) / 50.0);
    }
}

TEST_CASE("slicing table and scheduler ids") {
    const auto& t = slicing_table();
    REQUIRE(t.size() == 5);
    for (const auto& s : t) CHECK(s.embb_prbs + s.urllc_prbs == 50);
    CHECK(find_slicing("slicing_1").urllc_prbs == 41);
    CHECK(find_slicing("slicing_4").urllc_prbs == 11);
    CHECK_THROWS_AS(find_slicing("slicing_9"), Error);
    CHECK(static_cast<int>(Scheduler::round_robin) == 0);
    CHECK(static_cast<int>(Scheduler::proportional_fair) == 2);
}

TEST_CASE("frame reader maps display names and keeps unknown columns") {
    const auto frames = read_frames(
        "timestamp,slice_id,dl_buffer [bytes],tx_brate downlink [Mbps],dl_cqi,sum_requested_prbs,sum_granted_prbs,ul_snr\n"
        "0.25,1,1200,2.5,11,40,30,17.5\n"
        "0.5,1,,2.0,,0,0,18\n",
        "1010123456005");
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].imsi == "1010123456005");
    CHECK(frames[0].slice_id == 1);
    CHECK(frames[0].dl_buffer_bytes == 1200);
    CHECK(frames[0].tx_brate_dl_mbps == 2.5);
    CHECK(frames[0].dl_cqi == 11);
    CHECK(frames[0].extras.at("ul_snr") == "17.5");
    CHECK(std::isnan(frames[1].dl_buffer_bytes));
    CHECK(std::isnan(frames[0].dl_mcs));
    CHECK(frames[1].dl_cqi == -1);
    CHECK(frames_for_slice(frames, 0).empty());
    CHECK_THROWS_AS(read_frames("timestamp,dl_cqi\n0,20\n"), ParseError);

    const auto dir = std::filesystem::temp_directory_path() / "tracetwin_kpm_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "1010123456007_metrics.csv";
    std::ofstream(path) << "timestamp,dl_cqi\n0.25,9\n";
    const auto fromfile = read_frames_file(path.string());
    REQUIRE(fromfile.size() == 1);
    CHECK(fromfile[0].imsi == "1010123456007");
    std::filesystem::remove_all(dir);
}

TEST_CASE("MAC throughput is at least App throughput when retransmissions are injected") {
    // Synthetic scenario: every App packet is sent once at the MAC layer, and
    // a known share of them again as HARQ retransmissions.
    std::mt19937_64 rng(12);
    PacketLog app;
    std::vector<double> mac_bytes(8, 0.0);
    for (int i = 0; i < 400; ++i) {
        const double t = 20.0 + i * 0.005;
        app.rows.push_back(pkt(t, t - 0.004, 1250));
        const auto w = static_cast<std::size_t>(std::floor((t - 20.0) / 0.25));
        mac_bytes[w] += 1250 * (rng() % 10 == 0 ? 2 : 1);
    }
    std::vector<KpmFrame> frames(8);
    for (std::size_t w = 0; w < 8; ++w) frames[w].tx_brate_dl_mbps = mac_bytes[w] * 8 / 0.25 / 1e6;
    const auto thr = windowed_throughput(app, 0.25, 20.0, 22.0);
    REQUIRE(thr.mbps.size() == frames.size());
    for (std::size_t w = 0; w < 8; ++w) CHECK(frames[w].tx_brate_dl_mbps >= thr.mbps[w] - 1e-12);
}

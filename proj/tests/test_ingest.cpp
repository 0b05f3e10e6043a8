#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "tracetwin/common.hpp"
#include "tracetwin/ingest.hpp"

using namespace tracetwin;
using namespace tracetwin::ingest;

namespace {

const char* kTrace =
    "timestamp,sfn,subframe,rnti,direction,mcs,tbs,prb\n"
    "1000,100,0,17,dl,20,1000000,10\n"
    "1500,150,0,18,dl,20,500000,5\n"
    "1700,170,0,18,ul,20,999,5\n"
    "3200,320,0,17,dl,20,250000,25\n";

}  // namespace

TEST_CASE("positional mapping detects the header row") {
    const auto r = parse_trace_text(kTrace, ColumnMapping::identity());
    CHECK(r.rows_read == 4);
    CHECK(r.rows_skipped == 0);
    REQUIRE(r.records.size() == 4);
    CHECK(r.records[2].direction == Direction::uplink);
    CHECK(r.records[0].tbs_bits == 1000000);
}

TEST_CASE("name mapping tolerates reordered columns and bytes") {
    const char* text =
        "RNTI;TBS;Timestamp;SFN;Subframe;Direction;MCS;PRB\n"
        "5;100;40;4;0;downlink;3;2\n";
    ColumnMapping m = ColumnMapping::by_name();
    m.delimiter = ';';
    m.tbs_unit = TbsUnit::bytes;
    const auto r = parse_trace_text(text, m);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].rnti == 5);
    CHECK(r.records[0].tbs_bits == 800);
    CHECK(r.records[0].timestamp_ms == 40);
}

TEST_CASE("out-of-range rows are skipped and counted") {
    const char* text =
        "0,0,0,1,dl,0,8,1\n"
        "1,1024,0,1,dl,0,8,1\n"   // sfn
        "2,0,10,1,dl,0,8,1\n"     // subframe
        "3,0,0,0,dl,0,8,1\n"      // rnti
        "4,0,0,1,dl,32,8,1\n"     // mcs
        "5,0,0,1,dl,0,0,1\n"      // tbs
        "6,0,0,1,dl,0,8,101\n"    // prb
        "7,0,0,1,sideways,0,8,1\n"
        "8,0,0,1,dl\n";
    const auto r = parse_trace_text(text, ColumnMapping::identity());
    CHECK(r.records.size() == 1);
    CHECK(r.rows_skipped == 8);
    CHECK(r.skip_reasons.size() == 8);
}

TEST_CASE("a mapping wider than the file is an error") {
    ColumnMapping m;
    m.prb = std::size_t{12};
    CHECK_THROWS_AS(parse_trace_text("1,2,3,4,dl,5,6,7\n", m), Error);
    CHECK_THROWS_AS(parse_trace_text("a,b\n1,2\n", ColumnMapping::by_name()), Error);
}

TEST_CASE("records come back sorted by timestamp") {
    const auto r = parse_trace_text("30,0,0,1,dl,0,8,1\n10,0,0,2,dl,0,8,1\n20,0,0,3,dl,0,8,1\n", ColumnMapping::identity());
    REQUIRE(r.records.size() == 3);
    CHECK(r.records[0].rnti == 2);
    CHECK(r.records[2].rnti == 1);
}

TEST_CASE("1 s aggregation fills gaps and filters by direction") {
    const auto r = parse_trace_text(kTrace, ColumnMapping::identity());
    AggregateOptions o;
    o.rolling_width = 1;
    o.prb_budget = 50;
    const auto s = aggregate_1s(r.records, o);
    CHECK(s.t0 == 1);
    REQUIRE(s.size() == 3);
    CHECK(s.load_mbps[0] == doctest::Approx(1.5));
    CHECK(s.load_mbps[1] == 0.0);
    CHECK(s.load_mbps[2] == doctest::Approx(0.25));
    CHECK(s.active_ues[0] == 2.0);
    CHECK(s.active_ues[1] == 0.0);
    CHECK(s.prb_util[0] == doctest::Approx(15.0 / 50000.0));
}

TEST_CASE("rolling average shrinks at the edges") {
    const std::vector<double> v{1, 2, 3, 4, 5};
    const auto r = rolling_average(v, 3);
    CHECK(r[0] == doctest::Approx(1.5));
    CHECK(r[2] == doctest::Approx(3.0));
    CHECK(r[4] == doctest::Approx(4.5));
    const auto e = rolling_average(v, 4);  // one left, two right
    CHECK(e[1] == doctest::Approx((1 + 2 + 3 + 4) / 4.0));
    CHECK(rolling_average(v, 1) == v);
}

TEST_CASE("rolling average preserves the mean of a periodic series away from the edges") {
    std::vector<double> v;
    for (int i = 0; i < 200; ++i) v.push_back(static_cast<double>(i % 5));
    const auto r = rolling_average(v, 5);
    for (std::size_t i = 2; i + 2 < v.size(); ++i) CHECK(r[i] == doctest::Approx(2.0));
}

TEST_CASE("series round trip and gap detection") {
    CellSeries s;
    s.t0 = 100;
    s.load_mbps = {1.25, 2.5};
    s.prb_util = {0.1, 0.2};
    s.active_ues = {3, 4};
    std::ostringstream out;
    write_series(out, s);
    const auto back = read_series(out.str());
    CHECK(back.t0 == 100);
    CHECK(back.load_mbps == s.load_mbps);
    CHECK(back.active_ues == s.active_ues);
    CHECK_THROWS_AS(read_series("t,load_mbps,prb_util,active_ues\n1,0,0,0\n3,0,0,0\n"), ParseError);
}

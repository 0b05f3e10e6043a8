// Acceptance checks: one PASS, FAIL or SKIP line per criterion. Exit status is
// nonzero when any criterion fails; skipped criteria do not fail the run.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "support.hpp"
#include "tracetwin/common.hpp"
#include "tracetwin/flowmap.hpp"
#include "tracetwin/kpm.hpp"
#include "tracetwin/pipeline.hpp"
#include "tracetwin/replay.hpp"
#include "tracetwin/ticc.hpp"
#include "tracetwin/validate.hpp"

namespace tt = tracetwin;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
    Verdict verdict = Verdict::fail;
    std::string detail;
};

Outcome pass(std::string d) { return {Verdict::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Verdict::fail, std::move(d)}; }
Outcome skip(std::string d) { return {Verdict::skip, std::move(d)}; }

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// ---- 1 ---------------------------------------------------------------------

Outcome ks_oracle() {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    double worst = 0;
    for (int k = 0; k < 200; ++k) {
        const std::size_t n = 1 + rng() % 50, m = 1 + rng() % 50;
        std::vector<double> a(n), b(m);
        const bool ties = k % 2 == 0;
        for (auto& v : a) v = ties ? static_cast<double>(rng() % 8) : n01(rng);
        for (auto& v : b) v = ties ? static_cast<double>(rng() % 8) : n01(rng) + 0.3;
        worst = std::max(worst, std::abs(tt::validate::ks_distance(a, b) - support::brute_force_ks(a, b)));
    }
    const std::string d = "max |fast - brute force| = " + fmt(worst) + " over 200 pairs";
    return worst <= 1e-12 ? pass(d) : fail(d);
}

// ---- 2 ---------------------------------------------------------------------

Outcome dp_oracle() {
    std::mt19937_64 rng(2);
    int mismatches = 0;
    std::set<std::pair<int, int>> shapes;
    for (int k = 0; k < 100; ++k) {
        // Sweep every (T, C) with T <= 12 and C <= 3, then random shapes.
        const int T = k < 36 ? 1 + k % 12 : 1 + static_cast<int>(rng() % 12);
        const int C = k < 36 ? 1 + k / 12 : 1 + static_cast<int>(rng() % 3);
        shapes.insert({T, C});
        tt::ticc::Matrix costs(T, C);
        // Multiples of 1/1024 keep every partial sum exact.
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) costs(t, c) = static_cast<double>(rng() % 10240) / 1024.0;
        const double beta = static_cast<double>(rng() % 8192) / 1024.0;
        const auto labels = tt::ticc::assign_costs(costs, beta);
        if (tt::ticc::labeling_cost(costs, labels, beta) != support::brute_force_min_cost(costs, beta)) ++mismatches;
    }
    const std::string d = std::to_string(mismatches) + " mismatches over 100 matrices, " +
                          std::to_string(shapes.size()) + " distinct (T,C) shapes";
    return mismatches == 0 ? pass(d) : fail(d);
}

// ---- 3 ---------------------------------------------------------------------

Outcome ticc_recovery() {
    const auto data = support::three_regimes(1000, 3);
    tt::ticc::TiccConfig cfg;
    cfg.num_clusters = 3;
    cfg.seed = 1;
    const auto res = tt::ticc::fit(data.samples, cfg);
    const double acc = support::matched_accuracy(res.labels.labels, data.truth, 3);
    bool monotone = true;
    for (std::size_t i = 1; i < res.objective.size(); ++i) monotone = monotone && res.objective[i] <= res.objective[i - 1];
    const std::string d = "accuracy " + fmt(acc) + ", " + std::to_string(res.objective.size()) + " iterations, objective " +
                          (monotone ? "non-increasing" : "INCREASED");
    return acc >= 0.95 && monotone ? pass(d) : fail(d);
}

// ---- 4 ---------------------------------------------------------------------

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

std::string random_script_text(std::mt19937_64& rng) {
    std::ostringstream out;
    std::set<int> active;
    double t = 0;
    const int events = 1 + static_cast<int>(rng() % 40);
    for (int k = 0; k < events; ++k) {
        if (k > 0 && rng() % 3 == 0) {
            t += static_cast<double>(1 + rng() % 99999) / 1000.0;
            out << "\n";
        }
        const int id = 1 + static_cast<int>(rng() % 8);
        out << tt::text::format_trimmed(t, 3);
        if (active.erase(id)) {
            out << " OFF " << id << "\n";
            continue;
        }
        active.insert(id);
        const tt::flowmap::Ipv4 ip{static_cast<std::uint32_t>(rng())};
        out << " ON " << id << " UDP DST " << ip.str() << "/" << 1 + rng() % 65535 << " "
            << (rng() % 2 ? "PERIODIC" : "POISSON") << " ["
            << tt::text::format_decimal(static_cast<double>(rng() % 100000) / 100.0, 2) << " " << 24 + rng() % 1400
            << "]\n";
    }
    return out.str();
}

Outcome script_fidelity() {
    const double embb[3] = {5.6039, 5.1205, 5.5573};
    const double ues[3] = {6, 8, 6};
    std::vector<tt::profile::WindowProfile> w(3);
    for (std::size_t i = 0; i < 3; ++i) {
        w[i].window_index = i;
        w[i].start = 60 * static_cast<std::int64_t>(i);
        w[i].avg_ues = ues[i];
        const double n = ues[i] / 2;
        w[i].agg_rate_mbps = n * embb[i] + n * 0.01;
    }
    const auto profiles = tt::profile::derive_class_flows(w, tt::profile::default_classes());
    tt::flowmap::EmitOptions opts;
    opts.warmup_s = 70;
    const auto text = tt::flowmap::serialize(tt::flowmap::emit_script(profiles, tt::flowmap::default_endpoints(), opts));
    const std::string head = reference_head;
    const bool head_ok = text.compare(0, head.size(), head) == 0;

    std::mt19937_64 rng(4);
    int bad = 0;
    for (int k = 0; k < 50; ++k) {
        const auto s = random_script_text(rng);
        if (tt::flowmap::serialize(tt::flowmap::parse_script(s)) != s) ++bad;
    }
    const std::string d = std::string("reference 24 lines ") + (head_ok ? "match" : "DIFFER") + ", " +
                          std::to_string(50 - bad) + "/50 fuzzed scripts round-trip";
    return head_ok && bad == 0 ? pass(d) : fail(d);
}

// ---- 5 ---------------------------------------------------------------------

Outcome loopback_replay() {
    const auto script = tt::flowmap::parse_script("0 ON 1 UDP DST 127.0.0.1/5000 PERIODIC [100 1250]\n10 OFF 1\n");
    tt::replay::Receiver rx(tt::replay::SocketAddress{"127.0.0.1", 0});
    tt::replay::PacketLog log;
    std::jthread receiver([&](std::stop_token st) { log = rx.run(10.6, st); });
    tt::replay::SendOptions o;
    o.dst_override = tt::replay::SocketAddress{"127.0.0.1", rx.port()};
    const auto rep = tt::replay::send(script, o);
    receiver.join();

    const auto n = log.rows.size();
    const auto thr = tt::kpm::windowed_throughput(log, 0.25, rep.start_unix, rep.start_unix + 10.0);
    double mean = 0;
    for (double v : thr.mbps) mean += v;
    mean /= static_cast<double>(std::max<std::size_t>(1, thr.mbps.size()));
    const double p99 = rep.flows.count(1) ? rep.flows.at(1).interval_dev_p99_ms : 1e9;
    const bool count_ok = n >= 950 && n <= 1050;
    const bool thr_ok = std::abs(mean - 1.0) <= 0.05;
    const bool timing_ok = p99 <= 2.0;
    const std::string d = std::to_string(n) + " received, " + std::to_string(log.malformed) + " malformed, " +
                          fmt(mean) + " Mbps mean over " + std::to_string(thr.mbps.size()) +
                          " windows, p99 inter-send deviation " + fmt(p99, 3) + " ms" +
                          (timing_ok ? "" : " (over the 2 ms bound)");
    return count_ok && log.malformed == 0 && thr_ok && timing_ok ? pass(d) : fail(d);
}

// ---- 6 ---------------------------------------------------------------------

Outcome kpm_arithmetic() {
    std::mt19937_64 rng(6);
    tt::replay::PacketLog log;
    std::vector<double> planted;
    double bits = 0;
    for (int i = 0; i < 2000; ++i) {
        // Dyadic timestamps and latencies make rx - tx exact in binary.
        const double tx = 1000.0 + static_cast<double>(i) / 256.0;
        const double lat_s = static_cast<double>(rng() % 100) / 1024.0;
        const auto size = static_cast<std::uint32_t>(24 + rng() % 1400);
        log.rows.push_back({tx + lat_s, tx, 1, static_cast<std::uint32_t>(i), size, "", ""});
        planted.push_back(lat_s * 1000.0);
        bits += size * 8.0;
    }
    const auto lat = tt::kpm::latency_series(log);
    const bool lat_ok = lat.ms == planted;
    const auto thr = tt::kpm::windowed_throughput(log, 0.25);
    double sum = 0;
    for (double v : thr.mbps) sum += v * 0.25;
    const double err = std::abs(sum - bits / 1e6);

    std::vector<tt::kpm::KpmFrame> frames;
    for (int i = 0; i < 997; ++i) {
        tt::kpm::KpmFrame f;
        f.imsi = "i" + std::to_string(i % 5);
        f.dl_cqi = static_cast<int>(rng() % 16);
        frames.push_back(f);
    }
    double worst_row = 0;
    for (const auto& [imsi, row] : tt::kpm::cqi_occupancy(frames)) {
        double s = 0;
        for (double p : row.percent) s += p;
        worst_row = std::max(worst_row, std::abs(s - 100.0));
    }
    const std::string d = std::string("latency series ") + (lat_ok ? "exact" : "DIFFERS") + ", throughput byte error " +
                          fmt(err) + " Mb, worst CQI row |sum - 100| " + fmt(worst_row);
    return lat_ok && err <= 1e-9 && worst_row <= 1e-9 ? pass(d) : fail(d);
}

// ---- 7 ---------------------------------------------------------------------

Outcome end_to_end() {
    const fs::path conf = fs::path(TRACETWIN_SOURCE_DIR) / "data" / "synthetic.conf";
    const fs::path work = fs::temp_directory_path() / "tracetwin_acceptance_e2e";
    fs::remove_all(work);
    auto c = tt::pipeline::Config::load(conf);
    c.set("paths.workdir", work.string());
    const auto cfg = tt::pipeline::PipelineConfig::from(c);
    std::ostringstream log;
    const auto res = tt::pipeline::stage_twin(cfg, log);
    std::string ks;
    for (const auto& r : res.history)
        if (r.round == res.rounds) ks += " " + r.metric + "=" + fmt(r.ks_distance);
    fs::remove_all(work);
    const std::string d = std::string(res.converged ? "converged" : "NOT converged") + " in " +
                          std::to_string(res.rounds) + " round(s), KS" + ks;
    return res.converged && res.rounds <= 3 ? pass(d) : fail(d);
}

// ---- 8 ---------------------------------------------------------------------

// Expected layout: $TRACETWIN_DATASET_DIR/<slicing_K>/ holding URLLC packet
// logs (*mgen*.csv) and per-UE metrics files (*_metrics.csv).
Outcome dataset_replication() {
    const char* dir = std::getenv("TRACETWIN_DATASET_DIR");
    if (!dir || !*dir) return skip("TRACETWIN_DATASET_DIR not set; public dataset not available");
    struct Cell {
        const char* slicing;
        double bound_ms;
        double expected;
    };
    const Cell cells[] = {{"slicing_1", 7, 0.957}, {"slicing_2", 10, 0.971}, {"slicing_4", 10, 0.93}};
    std::string d;
    bool ok = true;
    for (const auto& cell : cells) {
        const fs::path root = fs::path(dir) / cell.slicing;
        if (!fs::exists(root)) return fail(std::string("missing ") + root.string());
        tt::replay::PacketLog all;
        std::vector<tt::kpm::KpmFrame> frames;
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            const auto name = e.path().filename().string();
            if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
            if (name.find("mgen") != std::string::npos) {
                auto l = tt::replay::read_packet_log_file(e.path().string());
                all.rows.insert(all.rows.end(), l.rows.begin(), l.rows.end());
            } else if (name.ends_with("_metrics.csv")) {
                auto f = tt::kpm::read_frames_file(e.path().string());
                frames.insert(frames.end(), f.begin(), f.end());
            }
        }
        if (all.rows.empty()) return fail(std::string("no packet logs under ") + root.string());
        const std::vector<tt::kpm::LatencyRequirement> req{{"cell", cell.bound_ms}};
        const double p = tt::kpm::requirement_satisfaction(tt::kpm::latency_series(all).ms, req)[0];
        ok = ok && std::abs(p - cell.expected) <= 0.02;
        d += std::string(cell.slicing) + "@" + fmt(cell.bound_ms) + "ms=" + fmt(p, 3) + " ";
        for (const auto& [imsi, row] : tt::kpm::cqi_occupancy(tt::kpm::frames_for_slice(frames, 1))) {
            if (row.empty) continue;
            const auto mode = std::max_element(row.percent.begin(), row.percent.end()) - row.percent.begin();
            if (mode < 8 || mode > 12) {
                ok = false;
                d += "modal CQI " + std::to_string(mode) + " for " + imsi + " ";
            }
        }
    }
    return ok ? pass(d) : fail(d);
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;  // 0 = no runtime bound
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {1, "KS oracle equivalence", 5, ks_oracle},
        {2, "DP labeling matches exhaustive search", 30, dp_oracle},
        {3, "TICC synthetic regime recovery", 60, ticc_recovery},
        {4, "script fidelity and round trip", 0, script_fidelity},
        {5, "loopback replay", 0, loopback_replay},
        {6, "KPM arithmetic", 0, kpm_arithmetic},
        {7, "end-to-end twin loop", 300, end_to_end},
        {8, "dataset replication (optional)", 0, dataset_replication},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = fail(std::string("error: ") + e.what());
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && s > c.budget_s && o.verdict == Verdict::pass)
            o = fail(o.detail + "; runtime over the " + fmt(c.budget_s) + " s budget");
        const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::skip ? "SKIP" : "FAIL";
        std::cout << "[" << tag << "] " << c.id << " " << c.name << ": " << o.detail << " (" << fmt(s, 3) << " s)"
                  << std::endl;
        failed += o.verdict == Verdict::fail;
    }
    std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all required criteria passed"))
              << std::endl;
    return failed ? 1 : 0;
}

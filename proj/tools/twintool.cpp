// twintool: run the trace twinning pipeline stage by stage or end to end.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "tracetwin/common.hpp"
#include "tracetwin/kpm.hpp"
#include "tracetwin/pipeline.hpp"
#include "tracetwin/replay.hpp"

namespace tt = tracetwin;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

// Turns SIGINT/SIGTERM into a stop request.
class SignalStop {
public:
    SignalStop() {
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        watcher_ = std::jthread([this](std::stop_token st) {
            while (!st.stop_requested()) {
                if (g_interrupted) {
                    source_.request_stop();
                    return;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            }
        });
    }
    std::stop_token token() const { return source_.get_token(); }

private:
    std::stop_source source_;
    std::jthread watcher_;
};

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw tt::Error("cannot write '" + path + "'");
    return f;
}

void slicing_header(std::ostream& out, const std::string& slicing) {
    if (slicing.empty()) return;
    const auto& s = tt::kpm::find_slicing(slicing);
    out << "# slicing=" << s.name << " embb_prbs=" << s.embb_prbs << " urllc_prbs=" << s.urllc_prbs << "\n";
}

std::vector<tt::kpm::KpmFrame> read_frames(const std::vector<std::string>& files, int slice) {
    std::vector<tt::kpm::KpmFrame> frames;
    for (const auto& f : files) {
        auto v = tt::kpm::read_frames_file(f);
        frames.insert(frames.end(), v.begin(), v.end());
    }
    if (slice >= 0) frames = tt::kpm::frames_for_slice(frames, slice);
    return frames;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Twin cellular traffic traces: ingest, cluster, profile, emit, replay, analyse, validate."};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::pair<tt::pipeline::Stage, CLI::App*>> stage_cmds;
    for (const char* name : {"ingest", "cluster", "profile", "emit", "replay-send", "replay-recv", "validate", "twin"}) {
        auto* sub = app.add_subcommand(name, std::string("run the ") + name + " stage");
        sub->add_option("--config", config_path, "pipeline configuration file")->required();
        sub->add_option("--override,-o", overrides, "key=value overriding the config file");
        stage_cmds.emplace_back(tt::pipeline::parse_stage(name), sub);
    }
    double ks_threshold = -1;
    for (auto& [stage, sub] : stage_cmds)
        if (stage == tt::pipeline::Stage::validate || stage == tt::pipeline::Stage::twin)
            sub->add_option("--ks-threshold", ks_threshold, "KS distance below which twin and real match");

    // replay send|recv without a config file.
    auto* replay = app.add_subcommand("replay", "send or receive a traffic script directly");
    replay->require_subcommand(1);
    std::string script_path, send_bind = "0.0.0.0:0", dst, report_path;
    double speedup = 1.0;
    auto* rsend = replay->add_subcommand("send", "replay a script over UDP");
    rsend->add_option("--script", script_path)->required();
    rsend->add_option("--bind", send_bind);
    rsend->add_option("--dst", dst, "send every flow here instead of the script destinations");
    rsend->add_option("--speedup", speedup);
    rsend->add_option("--report", report_path);
    std::string recv_bind, recv_out;
    double recv_duration = 0;
    auto* rrecv = replay->add_subcommand("recv", "log received datagrams");
    rrecv->add_option("--bind", recv_bind)->required();
    rrecv->add_option("--out", recv_out)->required();
    rrecv->add_option("--duration", recv_duration, "seconds; 0 runs until interrupted");

    // kpm: config-driven stage, or one analysis on explicit files.
    auto* kpm = app.add_subcommand("kpm", "analyse packet logs and protocol-stack metrics");
    kpm->add_option("--config", config_path);
    kpm->add_option("--override,-o", overrides);
    std::vector<std::string> kin;
    std::string kout, slicing;
    double window = 0.25;
    int slice = -1;
    bool as_ecdf = false;
    auto kpm_cmd = [&](const char* name, const char* help) {
        auto* s = kpm->add_subcommand(name, help);
        s->add_option("--in", kin)->required();
        s->add_option("--out", kout)->required();
        s->add_option("--slicing", slicing, "slicing_1 ... slicing_5, recorded in the output");
        s->add_flag("--ecdf", as_ecdf, "write the empirical CDF instead of raw values");
        return s;
    };
    auto* k_lat = kpm_cmd("latency", "per-packet latency in ms");
    auto* k_thr = kpm_cmd("throughput", "App-layer throughput per window");
    k_thr->add_option("--window", window, "window length in seconds");
    auto* k_prb = kpm_cmd("prb-ratio", "granted / requested PRBs per frame");
    k_prb->add_option("--slice", slice, "0 = eMBB, 1 = URLLC");
    auto* k_cqi = kpm_cmd("cqi", "CQI occupancy per UE");
    k_cqi->add_option("--slice", slice);
    auto* k_sat = kpm_cmd("satisfy", "probability of meeting the URLLC latency requirements");

    tt::pipeline::SynthTraceOptions synth;
    std::string synth_out;
    auto* syn = app.add_subcommand("synth-trace", "write a synthetic DCI trace");
    syn->add_option("--out", synth_out)->required();
    syn->add_option("--levels", synth.levels_mbps, "load level per phase in Mbps")->delimiter(',');
    syn->add_option("--windows-per-level", synth.windows_per_level);
    syn->add_option("--window", synth.W);
    syn->add_option("--noise", synth.noise);
    syn->add_option("--window-jitter", synth.window_jitter);
    syn->add_option("--rntis", synth.rntis);
    syn->add_option("--seed", synth.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    SignalStop stop;
    try {
        auto load = [&] {
            auto c = tt::pipeline::Config::load(config_path);
            for (const auto& o : overrides) c.assign(o);
            if (ks_threshold > 0) c.set("validate.threshold", std::to_string(ks_threshold));
            return tt::pipeline::PipelineConfig::from(c);
        };
        for (auto& [stage, sub] : stage_cmds)
            if (sub->parsed()) return tt::pipeline::run_stage(stage, load(), std::cerr, stop.token());

        if (rsend->parsed()) {
            const auto script = tt::flowmap::parse_script(tt::read_file(script_path));
            tt::replay::SendOptions opts;
            opts.bind = tt::replay::SocketAddress::parse(send_bind);
            if (!dst.empty()) opts.dst_override = tt::replay::SocketAddress::parse(dst);
            opts.speedup = speedup;
            const auto rep = tt::replay::send(script, opts, stop.token());
            for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
            std::cerr << "sent " << rep.total_sent() << " datagrams in " << rep.duration_s << " s\n";
            if (!report_path.empty()) {
                auto f = open_out(report_path);
                tt::pipeline::write_send_report(f, rep);
            } else {
                tt::pipeline::write_send_report(std::cout, rep);
            }
            return 0;
        }
        if (rrecv->parsed()) {
            const auto log =
                tt::replay::receive(tt::replay::SocketAddress::parse(recv_bind), recv_duration, recv_out, stop.token());
            std::cerr << "received " << log.rows.size() << " datagrams, " << log.malformed << " malformed\n";
            return 0;
        }
        if (kpm->parsed()) {
            if (kpm->get_subcommands().empty()) {
                if (config_path.empty()) throw tt::Error("kpm: give --config or an analysis subcommand");
                return tt::pipeline::run_stage(tt::pipeline::Stage::kpm, load(), std::cerr, stop.token());
            }
            auto out = open_out(kout);
            slicing_header(out, slicing);
            auto packets = [&] {
                tt::replay::PacketLog all;
                for (const auto& f : kin) {
                    auto l = tt::replay::read_packet_log_file(f);
                    all.rows.insert(all.rows.end(), l.rows.begin(), l.rows.end());
                }
                return all;
            };
            auto values = [&](const char* name, const std::vector<double>& v) {
                if (as_ecdf) tt::kpm::write_ecdf(out, tt::kpm::ecdf(v));
                else tt::kpm::write_values(out, name, v);
            };
            if (k_lat->parsed()) {
                const auto lat = tt::kpm::latency_series(packets());
                if (lat.negative) std::cerr << "warning: " << lat.negative << " negative latencies (clock skew)\n";
                values("latency_ms", lat.ms);
            } else if (k_thr->parsed()) {
                const auto s = tt::kpm::windowed_throughput(packets(), window);
                if (as_ecdf) tt::kpm::write_ecdf(out, tt::kpm::ecdf(s.mbps));
                else tt::kpm::write_throughput(out, s);
            } else if (k_prb->parsed()) {
                values("prb_ratio", tt::kpm::prb_ratio(read_frames(kin, slice)));
            } else if (k_cqi->parsed()) {
                tt::kpm::write_cqi(out, tt::kpm::cqi_occupancy(read_frames(kin, slice)));
            } else if (k_sat->parsed()) {
                const auto reqs = tt::kpm::default_requirements();
                const auto lat = tt::kpm::latency_series(packets());
                tt::kpm::write_satisfaction(out, reqs, tt::kpm::requirement_satisfaction(lat.ms, reqs));
            }
            return 0;
        }
        if (syn->parsed()) {
            auto f = open_out(synth_out);
            f << tt::pipeline::synth_trace(synth);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

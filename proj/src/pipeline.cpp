#include "tracetwin/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "tracetwin/common.hpp"
#include "tracetwin/kpm.hpp"

namespace tracetwin::pipeline {

namespace fs = std::filesystem;

// ---- configuration --------------------------------------------------------

Config Config::parse(std::string_view content) {
    Config c;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        auto nl = content.find('\n', pos);
        if (nl == std::string_view::npos) nl = content.size();
        std::string_view line = content.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = text::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = std::string(text::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
        std::string key(text::trim(line.substr(0, eq)));
        if (key.empty()) throw ParseError(line_no, "empty key");
        if (!section.empty()) key = section + "." + key;
        c.values_[key] = std::string(text::trim(line.substr(eq + 1)));
    }
    return c;
}

Config Config::load(const fs::path& path) {
    if (!fs::exists(path)) throw Error("config file '" + path.string() + "' does not exist");
    Config c = parse(read_file(path.string()));
    c.base_dir = path.parent_path();
    return c;
}

void Config::assign(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw Error("override '" + std::string(assignment) + "' is not key=value");
    const std::string key(text::trim(assignment.substr(0, eq)));
    if (key.empty()) throw Error("override '" + std::string(assignment) + "' has an empty key");
    values_[key] = std::string(text::trim(assignment.substr(eq + 1)));
}

std::optional<std::string> Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& def) const { return get(key).value_or(def); }

double Config::get_double(const std::string& key, double def) const {
    auto v = get(key);
    if (!v) return def;
    auto d = text::parse_double(*v);
    if (!d) throw Error("config '" + key + "': not a number: '" + *v + "'");
    return *d;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t def) const {
    auto v = get(key);
    if (!v) return def;
    auto d = text::parse_int(*v);
    if (!d) throw Error("config '" + key + "': not an integer: '" + *v + "'");
    return *d;
}

bool Config::get_bool(const std::string& key, bool def) const {
    auto v = get(key);
    if (!v) return def;
    const auto s = text::to_lower(*v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error("config '" + key + "': not a boolean: '" + *v + "'");
}

std::string Config::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string Config::hash() const { return sha256_hex(serialize()); }

namespace {

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    for (auto& f : text::split_fields(s, ',')) {
        auto t = std::string(text::trim(f));
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

ingest::ColumnRef column_ref(const std::string& v) {
    if (auto i = text::parse_int(v); i && *i >= 0) return static_cast<std::size_t>(*i);
    return v;
}

}  // namespace

PipelineConfig PipelineConfig::from(const Config& c) {
    PipelineConfig p;
    auto path = [&](const std::string& v) {
        fs::path q(v);
        return q.is_relative() && !c.base_dir.empty() ? c.base_dir / q : q;
    };
    if (auto t = c.get("paths.trace"); t && !t->empty()) p.trace = path(*t);
    p.workdir = path(c.get_or("paths.workdir", "work"));
    p.database = c.get("paths.database") ? path(*c.get("paths.database")) : p.workdir / "database";

    const auto scheme = text::to_lower(c.get_or("ingest.columns", "positional"));
    if (scheme == "names") p.mapping = ingest::ColumnMapping::by_name();
    else if (scheme != "positional") throw Error("ingest.columns must be 'positional' or 'names'");
    const std::pair<const char*, ingest::ColumnRef*> fields[] = {
        {"timestamp", &p.mapping.timestamp}, {"sfn", &p.mapping.sfn}, {"subframe", &p.mapping.subframe},
        {"rnti", &p.mapping.rnti},           {"direction", &p.mapping.direction}, {"mcs", &p.mapping.mcs},
        {"tbs", &p.mapping.tbs},             {"prb", &p.mapping.prb}};
    for (auto [name, ref] : fields)
        if (auto v = c.get(std::string("ingest.col.") + name)) *ref = column_ref(*v);
    const auto delim = c.get_or("ingest.delimiter", ",");
    if (delim == "tab" || delim == "\\t") p.mapping.delimiter = '\t';
    else if (delim.size() == 1) p.mapping.delimiter = delim[0];
    else throw Error("ingest.delimiter must be a single character or 'tab'");
    const auto unit = text::to_lower(c.get_or("ingest.tbs_unit", "bits"));
    if (unit == "bytes") p.mapping.tbs_unit = ingest::TbsUnit::bytes;
    else if (unit != "bits") throw Error("ingest.tbs_unit must be 'bits' or 'bytes'");
    p.mapping.prb_budget = static_cast<int>(c.get_int("ingest.max_prb", p.mapping.prb_budget));
    p.aggregate.prb_budget = static_cast<int>(c.get_int("ingest.prb_budget", p.aggregate.prb_budget));
    p.aggregate.rolling_width = static_cast<int>(c.get_int("ingest.rolling_width", p.aggregate.rolling_width));
    p.aggregate.subframes_per_second =
        static_cast<int>(c.get_int("ingest.subframes_per_second", p.aggregate.subframes_per_second));
    const auto dir = text::to_lower(c.get_or("ingest.direction", "dl"));
    if (dir == "ul" || dir == "uplink") p.aggregate.direction = ingest::Direction::uplink;
    else if (dir != "dl" && dir != "downlink") throw Error("ingest.direction must be 'dl' or 'ul'");

    p.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
    p.ticc.num_clusters = static_cast<int>(c.get_int("ticc.clusters", p.ticc.num_clusters));
    p.ticc.window = static_cast<int>(c.get_int("ticc.window", p.ticc.window));
    p.ticc.lambda = c.get_double("ticc.lambda", p.ticc.lambda);
    p.ticc.beta = c.get_double("ticc.beta", p.ticc.beta);
    p.ticc.max_iters = static_cast<int>(c.get_int("ticc.max_iters", p.ticc.max_iters));
    p.ticc.tol = c.get_double("ticc.tol", p.ticc.tol);
    p.ticc.seed = p.seed;
    p.ticc.validate();
    p.variates = c.get("ticc.variates") ? split_list(*c.get("ticc.variates")) : ticc::default_variates();

    p.W = static_cast<int>(c.get_int("profile.W", p.W));
    if (p.W < 1) throw Error("profile.W must be >= 1");
    p.split = c.get_double("profile.split", p.split);

    p.classes = profile::default_classes();
    for (auto& cls : p.classes) {
        const std::string prefix = "classes." + text::to_lower(profile::to_string(cls.name)) + ".";
        cls.population = static_cast<int>(c.get_int(prefix + "population", cls.population));
        cls.payload_bytes = static_cast<int>(c.get_int(prefix + "payload", cls.payload_bytes));
        if (auto pol = c.get(prefix + "policy")) {
            const auto v = text::to_lower(*pol);
            if (v == "fixed") cls.rate_policy = profile::RatePolicy::fixed;
            else if (v == "share") cls.rate_policy = profile::RatePolicy::share_of_aggregate;
            else throw Error(prefix + "policy must be 'fixed' or 'share'");
        }
        cls.fixed_rate_msgs_s = c.get_double(prefix + "rate", cls.fixed_rate_msgs_s);
    }
    const auto first_ip = c.get_or("flowmap.first_ip", "172.16.0.3");
    const auto ip = flowmap::Ipv4::parse(first_ip);
    if (!ip) throw Error("flowmap.first_ip is not an IPv4 address: '" + first_ip + "'");
    p.endpoints = flowmap::default_endpoints(p.classes, *ip, static_cast<std::uint16_t>(c.get_int("flowmap.port", 5000)),
                                             static_cast<std::uint64_t>(c.get_int("flowmap.first_imsi", 1010123456002LL)));
    p.emit.warmup_s = c.get_double("flowmap.warmup", p.emit.warmup_s);
    p.emit.close_at_end = c.get_bool("flowmap.close_at_end", p.emit.close_at_end);
    for (const auto& cls : p.classes) {
        const std::string key = "flowmap.scale." + text::to_lower(profile::to_string(cls.name));
        if (c.get(key)) p.emit.rate_scale[cls.name] = c.get_double(key, 1.0);
    }

    p.send_bind = replay::SocketAddress::parse(c.get_or("replay.bind", "0.0.0.0:0"));
    p.recv_bind = replay::SocketAddress::parse(c.get_or("replay.recv_bind", "127.0.0.1:0"));
    p.loopback = c.get_bool("replay.loopback", p.loopback);
    if (auto d = c.get("replay.dst"); d && !d->empty()) p.dst_override = replay::SocketAddress::parse(*d);
    p.speedup = c.get_double("replay.speedup", p.speedup);
    if (!(p.speedup > 0)) throw Error("replay.speedup must be > 0");
    p.drain_s = c.get_double("replay.drain", p.drain_s);
    p.recv_duration_s = c.get_double("replay.duration", p.recv_duration_s);

    p.threshold = c.get_double("validate.threshold", p.threshold);
    if (!(p.threshold > 0 && p.threshold <= 1)) throw Error("validate.threshold must be in (0,1]");
    p.max_rounds = static_cast<int>(c.get_int("validate.max_rounds", p.max_rounds));
    if (p.max_rounds < 1) throw Error("validate.max_rounds must be >= 1");
    p.metrics = split_list(c.get_or("validate.metrics", "window_load,active_flows"));
    for (const auto& m : p.metrics)
        if (!metric_registry().contains(m)) throw Error("validate.metrics: unknown metric '" + m + "'");

    p.hash = c.hash();
    return p;
}

Stage parse_stage(std::string_view s) {
    static const std::pair<const char*, Stage> names[] = {
        {"ingest", Stage::ingest},           {"cluster", Stage::cluster},         {"profile", Stage::profile},
        {"emit", Stage::emit},               {"replay-send", Stage::replay_send}, {"replay-recv", Stage::replay_recv},
        {"kpm", Stage::kpm},                 {"validate", Stage::validate},       {"twin", Stage::twin}};
    for (auto [n, st] : names)
        if (s == n) return st;
    throw Error("unknown stage '" + std::string(s) + "'");
}

std::string to_string(Stage s) {
    switch (s) {
        case Stage::ingest: return "ingest";
        case Stage::cluster: return "cluster";
        case Stage::profile: return "profile";
        case Stage::emit: return "emit";
        case Stage::replay_send: return "replay-send";
        case Stage::replay_recv: return "replay-recv";
        case Stage::kpm: return "kpm";
        case Stage::validate: return "validate";
        case Stage::twin: return "twin";
    }
    return "?";
}

// ---- artifacts ------------------------------------------------------------

namespace {

fs::path artifact_path(const PipelineConfig& cfg, const char* name) { return cfg.workdir / name; }

std::string require(const PipelineConfig& cfg, const char* name, const char* producer) {
    const auto p = artifact_path(cfg, name);
    if (!fs::exists(p))
        throw Error("missing prerequisite '" + p.string() + "' (produced by the " + producer + " stage)");
    return read_file(p.string());
}

template <class F>
void write_artifact(const PipelineConfig& cfg, const fs::path& path, F&& body) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << "# config_hash=" << cfg.hash << "\n";
    body(f);
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace

void write_send_report(std::ostream& out, const replay::SendReport& r) {
    out << "start_unix=" << text::format_trimmed(r.start_unix, 6) << '\n'
        << "speedup=" << text::format_trimmed(r.speedup, 12) << '\n'
        << "duration_s=" << text::format_trimmed(r.duration_s, 6) << '\n'
        << "total_sent=" << r.total_sent() << '\n';
    for (const auto& [id, f] : r.flows) {
        const std::string k = "flow." + std::to_string(id) + ".";
        out << k << "sent=" << f.sent << '\n'
            << k << "send_errors=" << f.send_errors << '\n'
            << k << "active_seconds=" << text::format_trimmed(f.active_seconds, 6) << '\n'
            << k << "achieved_rate=" << text::format_trimmed(f.achieved_rate, 6) << '\n'
            << k << "interval_dev_p99_ms=" << text::format_trimmed(f.interval_dev_p99_ms, 6) << '\n'
            << k << "interval_dev_max_ms=" << text::format_trimmed(f.interval_dev_max_ms, 6) << '\n';
    }
    for (const auto& w : r.warnings) out << "warning=" << w << '\n';
}

replay::SendReport read_send_report(std::string_view content) {
    // Plain key=value lines; warnings repeat their key and may contain '#'.
    replay::SendReport r;
    std::size_t line_no = 0;
    for (std::size_t pos = 0; pos < content.size();) {
        auto nl = content.find('\n', pos);
        if (nl == std::string_view::npos) nl = content.size();
        const auto line = text::trim(content.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
        const std::string k(line.substr(0, eq));
        const std::string v(line.substr(eq + 1));
        if (k == "warning") {
            r.warnings.push_back(v);
            continue;
        }
        const auto num = text::parse_double(v);
        if (!num) throw ParseError(line_no, "bad number for '" + k + "'");
        const double d = *num;
        if (k == "start_unix") r.start_unix = d;
        else if (k == "speedup") r.speedup = d;
        else if (k == "duration_s") r.duration_s = d;
        if (!k.starts_with("flow.")) continue;
        const auto dot = k.find('.', 5);
        if (dot == std::string::npos) continue;
        const auto id = text::parse_int(std::string_view(k).substr(5, dot - 5));
        if (!id) continue;
        auto& f = r.flows[static_cast<int>(*id)];
        const auto field = k.substr(dot + 1);
        if (field == "sent") f.sent = static_cast<std::uint64_t>(d);
        else if (field == "send_errors") f.send_errors = static_cast<std::uint64_t>(d);
        else if (field == "active_seconds") f.active_seconds = d;
        else if (field == "achieved_rate") f.achieved_rate = d;
        else if (field == "interval_dev_p99_ms") f.interval_dev_p99_ms = d;
        else if (field == "interval_dev_max_ms") f.interval_dev_max_ms = d;
    }
    return r;
}

// ---- metrics --------------------------------------------------------------

namespace {

// Wall-clock bounds of every window of the replayed script.
std::vector<std::pair<double, double>> twin_windows(const TwinSide& t) {
    std::vector<std::pair<double, double>> out;
    const double base = static_cast<double>(t.profiles.front().start);
    const double s = t.report->speedup;
    for (const auto& p : t.profiles) {
        const double a = t.warmup_s + static_cast<double>(p.start) - base;
        out.emplace_back(t.report->start_unix + a / s, t.report->start_unix + (a + p.W) / s);
    }
    return out;
}

std::optional<std::size_t> window_of(const std::vector<std::pair<double, double>>& bounds, double x) {
    auto it = std::upper_bound(bounds.begin(), bounds.end(), x, [](double v, const auto& b) { return v < b.first; });
    if (it == bounds.begin()) return std::nullopt;
    --it;
    if (x >= it->second) return std::nullopt;
    return static_cast<std::size_t>(it - bounds.begin());
}

struct Sent {
    double tx;
    std::uint32_t seq;
    std::uint32_t size;
};

// Mean bit rate of one flow over a window of D seconds. Counting packets
// would be off by up to one packet per flow (the schedule's phase against
// the window edge), which at short wall-clock windows is comparable to the
// spread between windows. Instead the message rate is read from the median
// inter-send gap (robust to a late wakeup followed by catch-up sends), the
// delivered fraction from the sequence numbers, and the flow counts as
// active for the whole window when its packets cover it to within one gap.
double flow_bits_per_s(std::vector<Sent>& pkts, double D) {
    if (pkts.empty()) return 0.0;
    double bytes = 0;
    for (const auto& p : pkts) bytes += p.size;
    if (pkts.size() < 2) return bytes * 8.0 / D;
    std::sort(pkts.begin(), pkts.end(), [](const Sent& a, const Sent& b) { return a.tx < b.tx; });
    std::vector<double> gaps;
    for (std::size_t i = 1; i < pkts.size(); ++i) gaps.push_back(pkts[i].tx - pkts[i - 1].tx);
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
    const double gap = gaps[gaps.size() / 2];
    if (!(gap > 0)) return bytes * 8.0 / D;
    std::uint32_t lo = pkts.front().seq, hi = pkts.front().seq;
    for (const auto& p : pkts) {
        lo = std::min(lo, p.seq);
        hi = std::max(hi, p.seq);
    }
    const double sent = static_cast<double>(hi - lo) + 1.0;
    const double delivered = std::min(1.0, static_cast<double>(pkts.size()) / sent);
    const double rate = 1.0 / gap;
    const double coverage = sent + 1.0 >= rate * D ? 1.0 : sent / (rate * D);
    return rate * (bytes / static_cast<double>(pkts.size())) * 8.0 * delivered * coverage;
}

}  // namespace

std::map<std::string, MetricDef>& metric_registry() {
    static std::map<std::string, MetricDef> reg = {
        {"window_load",
         {[](const RealSide& r) {
              std::vector<double> v;
              for (const auto& p : r.profiles) v.push_back(p.agg_rate_mbps);
              return v;
          },
          [](const TwinSide& t) {
              std::vector<std::map<std::uint32_t, std::vector<Sent>>> per_window(t.profiles.size());
              const auto bounds = twin_windows(t);
              for (const auto& row : t.log->rows)
                  if (auto k = window_of(bounds, row.tx_time))
                      per_window[*k][row.flow].push_back(Sent{row.tx_time, row.seq, row.size});
              std::vector<double> v;
              for (std::size_t k = 0; k < per_window.size(); ++k) {
                  const double D = bounds[k].second - bounds[k].first;
                  double bits_per_s = 0;
                  for (auto& [flow, pkts] : per_window[k]) bits_per_s += flow_bits_per_s(pkts, D);
                  v.push_back(bits_per_s / 1e6);
              }
              return v;
          }}},
        {"active_flows",
         {[](const RealSide& r) {
              std::vector<double> v;
              for (const auto& p : r.profiles) v.push_back(profile::round_half_up(p.avg_ues));
              return v;
          },
          [](const TwinSide& t) {
              std::vector<std::set<std::uint32_t>> flows(t.profiles.size());
              const auto bounds = twin_windows(t);
              for (const auto& row : t.log->rows)
                  if (auto k = window_of(bounds, row.tx_time)) flows[*k].insert(row.flow);
              std::vector<double> v;
              for (const auto& f : flows) v.push_back(static_cast<double>(f.size()));
              return v;
          }}},
    };
    return reg;
}

validate::MetricSet real_metrics(const RealSide& real, std::span<const std::string> names) {
    validate::MetricSet out;
    for (const auto& n : names) {
        auto it = metric_registry().find(n);
        if (it == metric_registry().end()) throw Error("unknown metric '" + n + "'");
        out[n] = it->second.real(real);
    }
    return out;
}

validate::MetricSet twin_metrics(const TwinSide& twin, std::span<const std::string> names) {
    if (!twin.log || !twin.report) throw Error("twin metrics need a packet log and a send report");
    validate::MetricSet out;
    for (const auto& n : names) {
        auto it = metric_registry().find(n);
        if (it == metric_registry().end()) throw Error("unknown metric '" + n + "'");
        out[n] = twin.profiles.empty() ? std::vector<double>{} : it->second.twin(twin);
    }
    return out;
}

// ---- replay ---------------------------------------------------------------

LoopbackRun replay_loopback(const flowmap::TrafficScript& script, const PipelineConfig& cfg, std::stop_token stop,
                            const std::optional<fs::path>& packet_file) {
    replay::Receiver rx(cfg.recv_bind);
    replay::SendOptions opts;
    opts.bind = cfg.send_bind;
    opts.speedup = cfg.speedup;
    opts.seed = cfg.seed;
    if (cfg.loopback) {
        const auto host = rx.host() == "0.0.0.0" ? std::string("127.0.0.1") : rx.host();
        opts.dst_override = replay::SocketAddress{host, rx.port()};
    } else {
        opts.dst_override = cfg.dst_override;
    }

    std::ofstream file;
    if (packet_file) {
        fs::create_directories(packet_file->parent_path());
        file.open(*packet_file, std::ios::binary);
        if (!file) throw Error("cannot write '" + packet_file->string() + "'");
        file << "# config_hash=" << cfg.hash << "\n";
        replay::write_packet_log_header(file);
    }
    LoopbackRun run;
    {
        std::jthread receiver([&](std::stop_token st) { run.log = rx.run(0, st, packet_file ? &file : nullptr); });
        std::stop_callback forward(stop, [&] { receiver.request_stop(); });
        try {
            run.report = replay::send(script, opts, stop);
        } catch (...) {
            receiver.request_stop();
            throw;
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg.drain_s));
        receiver.request_stop();
    }
    return run;
}

// ---- stages ---------------------------------------------------------------

ingest::CellSeries stage_ingest(const PipelineConfig& cfg, std::ostream& log) {
    if (cfg.trace.empty()) throw Error("paths.trace is not set");
    if (!fs::exists(cfg.trace)) throw Error("trace file '" + cfg.trace.string() + "' does not exist");
    const auto parsed = ingest::parse_trace(cfg.trace.string(), cfg.mapping);
    log << "ingest: " << parsed.rows_read << " rows, " << parsed.records.size() << " records, " << parsed.rows_skipped
        << " skipped\n";
    for (std::size_t i = 0; i < parsed.skip_reasons.size() && i < 5; ++i) log << "  skipped: " << parsed.skip_reasons[i] << "\n";
    if (parsed.records.empty()) throw Error("trace '" + cfg.trace.string() + "' has no valid records");
    auto series = ingest::aggregate_1s(parsed.records, cfg.aggregate);
    write_artifact(cfg, artifact_path(cfg, artifact::series), [&](std::ostream& o) { ingest::write_series(o, series); });
    log << "ingest: " << series.size() << " s of series -> " << artifact_path(cfg, artifact::series).string() << "\n";
    return series;
}

ticc::FitResult stage_cluster(const PipelineConfig& cfg, std::ostream& log) {
    const auto series = ingest::read_series(require(cfg, artifact::series, "ingest"));
    auto fit = ticc::fit(series, cfg.ticc, cfg.variates);
    for (const auto& w : fit.warnings) log << "cluster: warning: " << w << "\n";
    log << "cluster: " << fit.iterations << " iterations, " << (fit.converged ? "converged" : "NOT converged")
        << ", objective " << (fit.objective.empty() ? 0.0 : fit.objective.back()) << "\n";
    write_artifact(cfg, artifact_path(cfg, artifact::model), [&](std::ostream& o) { ticc::save_model(o, fit.model); });
    write_artifact(cfg, artifact_path(cfg, artifact::labels),
                   [&](std::ostream& o) { ticc::write_labels(o, series.t0, fit.labels); });
    return fit;
}

std::vector<profile::WindowProfile> stage_profile(const PipelineConfig& cfg, std::ostream& log) {
    const auto series = ingest::read_series(require(cfg, artifact::series, "ingest"));
    const auto labels = ticc::read_labels(require(cfg, artifact::labels, "cluster"));
    const auto windows = profile::window_aggregate(series, labels, cfg.W);
    auto profiles = profile::derive_class_flows(windows, cfg.classes, cfg.split);
    for (const auto& p : profiles)
        if (p.unserved_mbps != 0)
            log << "profile: window " << p.window_index << ": " << p.unserved_mbps << " Mbps not mapped to any flow\n";
    write_artifact(cfg, artifact_path(cfg, artifact::profiles),
                   [&](std::ostream& o) { profile::write_profiles(o, profiles); });
    log << "profile: " << profiles.size() << " windows of " << cfg.W << " s\n";
    return profiles;
}

flowmap::TrafficScript stage_emit(const PipelineConfig& cfg, std::ostream& log) {
    const auto profiles = profile::read_profiles(require(cfg, artifact::profiles, "profile"));
    auto script = flowmap::emit_script(profiles, cfg.endpoints, cfg.emit);
    write_artifact(cfg, artifact_path(cfg, artifact::script), [&](std::ostream& o) { o << flowmap::serialize(script); });
    log << "emit: " << script.events.size() << " events, ends at " << script.end_time() << " s\n";
    return script;
}

replay::SendReport stage_replay_send(const PipelineConfig& cfg, std::ostream& log, std::stop_token stop) {
    const auto script = flowmap::parse_script(require(cfg, artifact::script, "emit"));
    replay::SendOptions opts;
    opts.bind = cfg.send_bind;
    opts.dst_override = cfg.dst_override;
    opts.speedup = cfg.speedup;
    opts.seed = cfg.seed;
    auto report = replay::send(script, opts, stop);
    for (const auto& w : report.warnings) log << "replay-send: warning: " << w << "\n";
    write_artifact(cfg, artifact_path(cfg, artifact::send_report), [&](std::ostream& o) { write_send_report(o, report); });
    log << "replay-send: " << report.total_sent() << " datagrams in " << report.duration_s << " s\n";
    return report;
}

replay::PacketLog stage_replay_recv(const PipelineConfig& cfg, std::ostream& log, std::stop_token stop) {
    replay::Receiver rx(cfg.recv_bind);
    log << "replay-recv: listening on " << rx.host() << ":" << rx.port() << "\n";
    replay::PacketLog out;
    write_artifact(cfg, artifact_path(cfg, artifact::packets), [&](std::ostream& o) {
        replay::write_packet_log_header(o);
        out = rx.run(cfg.recv_duration_s, stop, &o);
    });
    log << "replay-recv: " << out.rows.size() << " datagrams, " << out.malformed << " malformed\n";
    return out;
}

void stage_kpm(const PipelineConfig& cfg, std::ostream& log) {
    const auto packets = replay::read_packet_log(require(cfg, artifact::packets, "replay-recv"));
    const auto lat = kpm::latency_series(packets);
    if (lat.negative > 0) log << "kpm: warning: " << lat.negative << " packets with negative latency (clock skew)\n";
    write_artifact(cfg, artifact_path(cfg, artifact::latency),
                   [&](std::ostream& o) { kpm::write_values(o, "latency_ms", lat.ms); });
    write_artifact(cfg, artifact_path(cfg, artifact::throughput),
                   [&](std::ostream& o) { kpm::write_throughput(o, kpm::windowed_throughput(packets)); });
    if (!lat.ms.empty()) {
        const auto reqs = kpm::default_requirements();
        const auto p = kpm::requirement_satisfaction(lat.ms, reqs);
        write_artifact(cfg, artifact_path(cfg, artifact::satisfaction),
                       [&](std::ostream& o) { kpm::write_satisfaction(o, reqs, p); });
    }
    log << "kpm: " << packets.rows.size() << " packets analysed\n";
}

std::vector<validate::ValidationReport> stage_validate(const PipelineConfig& cfg, std::ostream& log) {
    const auto profiles = profile::read_profiles(require(cfg, artifact::profiles, "profile"));
    const auto packets = replay::read_packet_log(require(cfg, artifact::packets, "replay-recv"));
    const auto report = read_send_report(require(cfg, artifact::send_report, "replay-send"));
    const auto real = real_metrics(RealSide{nullptr, profiles}, cfg.metrics);
    const auto twin = twin_metrics(TwinSide{&packets, &report, profiles, cfg.emit.warmup_s}, cfg.metrics);
    std::vector<validate::ValidationReport> reports;
    bool pass = true;
    for (const auto& m : cfg.metrics) {
        reports.push_back(validate::compare(m, real.at(m), twin.at(m), cfg.threshold));
        pass = pass && reports.back().pass;
        log << "validate: " << m << " ks=" << reports.back().ks_distance << (reports.back().pass ? " pass" : " FAIL")
            << "\n";
    }
    write_artifact(cfg, artifact_path(cfg, artifact::validation),
                   [&](std::ostream& o) { validate::write_report(o, reports, pass); });
    return reports;
}

validate::LoopResult stage_twin(const PipelineConfig& cfg, std::ostream& log, std::stop_token stop) {
    const auto series = stage_ingest(cfg, log);
    stage_cluster(cfg, log);
    const auto profiles = stage_profile(cfg, log);
    const auto real = real_metrics(RealSide{&series, profiles}, cfg.metrics);

    auto build = [&](const flowmap::EmitOptions& opts) { return flowmap::emit_script(profiles, cfg.endpoints, opts); };
    auto run = [&](const flowmap::TrafficScript& script, int round) {
        write_artifact(cfg, artifact_path(cfg, artifact::script), [&](std::ostream& o) { o << flowmap::serialize(script); });
        log << "twin: round " << round << ": replaying " << script.events.size() << " events at speedup " << cfg.speedup
            << "\n";
        const auto r = replay_loopback(script, cfg, stop, artifact_path(cfg, artifact::packets));
        write_artifact(cfg, artifact_path(cfg, artifact::send_report), [&](std::ostream& o) { write_send_report(o, r.report); });
        log << "twin: round " << round << ": sent " << r.report.total_sent() << ", received " << r.log.rows.size()
            << ", malformed " << r.log.malformed << "\n";
        return twin_metrics(TwinSide{&r.log, &r.report, profiles, cfg.emit.warmup_s}, cfg.metrics);
    };
    validate::LoopConfig loop;
    loop.threshold = cfg.threshold;
    loop.max_rounds = cfg.max_rounds;
    loop.metrics = cfg.metrics;
    loop.database_dir = cfg.database;
    loop.config_hash = cfg.hash;
    auto result = validate::validate_and_loop(real, build, cfg.emit, run, validate::mean_ratio_tuner(), loop);
    for (const auto& r : result.history)
        log << "twin: round " << r.round << " " << r.metric << " ks=" << r.ks_distance << (r.pass ? " pass" : " FAIL") << "\n";
    write_artifact(cfg, artifact_path(cfg, artifact::validation),
                   [&](std::ostream& o) { validate::write_report(o, result.history, result.converged); });
    if (result.saved_script) log << "twin: accepted script stored as " << result.saved_script->string() << "\n";
    else log << "twin: not converged after " << result.rounds << " rounds\n";
    return result;
}

int run_stage(Stage stage, const PipelineConfig& cfg, std::ostream& log, std::stop_token stop) {
    try {
        switch (stage) {
            case Stage::ingest: stage_ingest(cfg, log); return 0;
            case Stage::cluster: return stage_cluster(cfg, log).converged ? 0 : 1;
            case Stage::profile: stage_profile(cfg, log); return 0;
            case Stage::emit: stage_emit(cfg, log); return 0;
            case Stage::replay_send: stage_replay_send(cfg, log, stop); return 0;
            case Stage::replay_recv: stage_replay_recv(cfg, log, stop); return 0;
            case Stage::kpm: stage_kpm(cfg, log); return 0;
            case Stage::validate: {
                const auto reports = stage_validate(cfg, log);
                return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass; }) ? 0 : 1;
            }
            case Stage::twin: return stage_twin(cfg, log, stop).converged ? 0 : 1;
        }
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

// ---- synthetic trace ------------------------------------------------------

std::string synth_trace(const SynthTraceOptions& o) {
    if (o.levels_mbps.empty() || o.windows_per_level < 1 || o.W < 1) throw Error("synth_trace: empty layout");
    if (o.rntis < 1 || o.allocations_per_second < o.rntis)
        throw Error("synth_trace: need at least one allocation per RNTI per second");
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::ostringstream out;
    out << "timestamp,sfn,subframe,rnti,direction,mcs,tbs,prb\n";
    const int per_level = o.windows_per_level * o.W;
    const int seconds = per_level * static_cast<int>(o.levels_mbps.size());
    const int aps = o.allocations_per_second;
    double window_factor = 1.0;
    for (int s = 0; s < seconds; ++s) {
        if (s % o.W == 0) window_factor = 1.0 + o.window_jitter * jitter(rng);
        const double level = o.levels_mbps[static_cast<std::size_t>(s / per_level)] * window_factor;
        const double bits = level * 1e6 * std::max(0.1, 1.0 + o.noise * noise(rng));
        const auto tbs = std::max<std::int64_t>(1, std::llround(bits / aps));
        const int prb = std::clamp(static_cast<int>(std::ceil(static_cast<double>(tbs) / 1200.0)), 1, 100);
        for (int k = 0; k < aps; ++k) {
            const std::int64_t ms = static_cast<std::int64_t>(s) * 1000 + k * (1000 / aps);
            out << ms << ',' << (ms / 10) % 1024 << ',' << ms % 10 << ',' << 100 + (k % o.rntis) << ",dl,20," << tbs
                << ',' << prb << '\n';
        }
    }
    return out.str();
}

}  // namespace tracetwin::pipeline

#include "tracetwin/validate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include "tracetwin/common.hpp"

namespace tracetwin::validate {

Range joint_range(std::span<const double> a, std::span<const double> b) {
    if (a.empty() && b.empty()) throw Error("normalize: both samples are empty");
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (auto s : {a, b})
        for (double v : s) {
            r.min = std::min(r.min, v);
            r.max = std::max(r.max, v);
        }
    return r;
}

std::vector<double> normalize(std::span<const double> values, const Range& r) {
    std::vector<double> out(values.size(), 0.5);
    if (!(r.max > r.min)) return out;
    const double span = r.max - r.min;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - r.min) / span;
    return out;
}

double ks_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw Error("ks_distance: empty sample");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    // Integer differences i*m - j*n keep the running maximum exact; one
    // division at the end.
    const auto n = static_cast<long long>(x.size());
    const auto m = static_cast<long long>(y.size());
    long long i = 0, j = 0, best = 0;
    while (i < n && j < m) {
        const double v = std::min(x[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(j)]);
        while (i < n && x[static_cast<std::size_t>(i)] == v) ++i;
        while (j < m && y[static_cast<std::size_t>(j)] == v) ++j;
        best = std::max(best, std::llabs(i * m - j * n));
    }
    return static_cast<double>(best) / static_cast<double>(n * m);
}

ValidationReport compare(std::string metric, std::span<const double> real, std::span<const double> twin,
                         double threshold) {
    ValidationReport r;
    r.metric = std::move(metric);
    r.threshold = threshold;
    r.n_real = real.size();
    r.n_twin = twin.size();
    if (real.empty() || twin.empty()) {
        // Nothing to compare counts as maximally different.
        r.ks_distance = 1.0;
        r.pass = false;
        if (!real.empty() || !twin.empty()) r.normalization = joint_range(real, twin);
        return r;
    }
    r.normalization = joint_range(real, twin);
    const auto nr = normalize(real, r.normalization);
    const auto nt = normalize(twin, r.normalization);
    r.ks_distance = ks_distance(nr, nt);
    r.pass = r.ks_distance < threshold;
    return r;
}

RetunePolicy mean_ratio_tuner(std::string metric) {
    return [metric](const flowmap::EmitOptions& current, const MetricSet& real, const MetricSet& twin) {
        auto mean = [&](const MetricSet& s) {
            auto it = s.find(metric);
            if (it == s.end() || it->second.empty()) return std::numeric_limits<double>::quiet_NaN();
            return std::accumulate(it->second.begin(), it->second.end(), 0.0) / static_cast<double>(it->second.size());
        };
        const double r = mean(real);
        const double t = mean(twin);
        flowmap::EmitOptions next = current;
        if (!(t > 0) || !std::isfinite(r)) return next;
        auto& scale = next.rate_scale[profile::ServiceClass::eMBB];
        if (scale == 0) scale = 1.0;
        scale *= r / t;
        return next;
    };
}

LoopResult validate_and_loop(const MetricSet& real, const ScriptBuilder& build, flowmap::EmitOptions initial,
                             const ReplayFn& replay, const RetunePolicy& tuner, const LoopConfig& cfg) {
    if (!(cfg.threshold > 0 && cfg.threshold <= 1)) throw Error("validate: threshold must be in (0,1]");
    if (cfg.max_rounds < 1) throw Error("validate: max_rounds must be >= 1");
    std::vector<std::string> metrics = cfg.metrics;
    if (metrics.empty())
        for (const auto& [name, v] : real) metrics.push_back(name);
    for (const auto& m : metrics)
        if (!real.contains(m)) throw Error("validate: no real samples for metric '" + m + "'");

    LoopResult result;
    result.final_options = std::move(initial);
    for (int round = 1; round <= cfg.max_rounds; ++round) {
        result.rounds = round;
        result.final_script = build(result.final_options);
        const MetricSet twin = replay(result.final_script, round);
        bool all_pass = true;
        std::vector<ValidationReport> reports;
        for (const auto& m : metrics) {
            static const std::vector<double> none;
            auto it = twin.find(m);
            auto rep = compare(m, real.at(m), it == twin.end() ? none : it->second, cfg.threshold);
            rep.round = round;
            all_pass = all_pass && rep.pass;
            reports.push_back(rep);
        }
        result.history.insert(result.history.end(), reports.begin(), reports.end());
        if (all_pass) {
            result.converged = true;
            if (cfg.database_dir)
                result.saved_script = save_to_database(*cfg.database_dir, result.final_script, reports, cfg.config_hash);
            break;
        }
        if (round < cfg.max_rounds) result.final_options = tuner(result.final_options, real, twin);
    }
    return result;
}

std::filesystem::path save_to_database(const std::filesystem::path& dir, const flowmap::TrafficScript& script,
                                       std::span<const ValidationReport> reports, const std::string& config_hash) {
    using nlohmann::json;
    std::filesystem::create_directories(dir);
    const std::string body = flowmap::serialize(script);
    const std::string name = "script_" + sha256_hex(body).substr(0, 16) + ".mgen";
    const auto script_path = dir / name;
    {
        std::ofstream f(script_path, std::ios::binary);
        if (!config_hash.empty()) f << "# config_hash=" << config_hash << "\n";
        f << body;
        if (!f) throw Error("cannot write '" + script_path.string() + "'");
    }

    const auto manifest_path = dir / "manifest.json";
    json manifest = {{"scripts", json::array()}};
    if (std::filesystem::exists(manifest_path)) {
        try {
            manifest = json::parse(read_file(manifest_path.string()));
        } catch (const json::exception& e) {
            throw Error("corrupt manifest '" + manifest_path.string() + "': " + e.what());
        }
    }
    json entry = {{"script", name}, {"config_hash", config_hash}, {"metrics", json::array()}};
    for (const auto& r : reports) {
        entry["round"] = r.round;
        entry["metrics"].push_back({{"metric", r.metric},
                                    {"ks_distance", r.ks_distance},
                                    {"threshold", r.threshold},
                                    {"pass", r.pass},
                                    {"n_real", r.n_real},
                                    {"n_twin", r.n_twin}});
    }
    auto& list = manifest["scripts"];
    for (auto it = list.begin(); it != list.end();) {
        if (it->value("script", "") == name) it = list.erase(it);
        else ++it;
    }
    list.push_back(entry);
    std::ofstream f(manifest_path, std::ios::binary);
    f << manifest.dump(2) << "\n";
    if (!f) throw Error("cannot write '" + manifest_path.string() + "'");
    return script_path;
}

void write_report(std::ostream& out, std::span<const ValidationReport> history, bool converged) {
    int rounds = 0;
    for (const auto& r : history) {
        out << "round=" << r.round << '\n'
            << "metric=" << r.metric << '\n'
            << "ks_distance=" << text::format_trimmed(r.ks_distance, 12) << '\n'
            << "threshold=" << text::format_trimmed(r.threshold, 12) << '\n'
            << "pass=" << (r.pass ? "true" : "false") << '\n'
            << "n_real=" << r.n_real << '\n'
            << "n_twin=" << r.n_twin << '\n'
            << "norm_min=" << text::format_trimmed(r.normalization.min, 9) << '\n'
            << "norm_max=" << text::format_trimmed(r.normalization.max, 9) << "\n\n";
        rounds = std::max(rounds, r.round);
    }
    out << "rounds=" << rounds << '\n' << "converged=" << (converged ? "true" : "false") << '\n';
}

}  // namespace tracetwin::validate

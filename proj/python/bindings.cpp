// Python bindings for the core operations. Series cross as lists or 1-D/2-D
// numpy arrays; structured results come back as dicts.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tracetwin/common.hpp"
#include "tracetwin/flowmap.hpp"
#include "tracetwin/kpm.hpp"
#include "tracetwin/pipeline.hpp"
#include "tracetwin/replay.hpp"
#include "tracetwin/ticc.hpp"
#include "tracetwin/validate.hpp"

namespace py = pybind11;
namespace tt = tracetwin;

namespace {

py::dict report_dict(const tt::validate::ValidationReport& r) {
    py::dict d;
    d["metric"] = r.metric;
    d["round"] = r.round;
    d["ks_distance"] = r.ks_distance;
    d["threshold"] = r.threshold;
    d["pass"] = r.pass;
    d["n_real"] = r.n_real;
    d["n_twin"] = r.n_twin;
    d["norm_min"] = r.normalization.min;
    d["norm_max"] = r.normalization.max;
    return d;
}

py::dict event_dict(const tt::flowmap::FlowEvent& e) {
    py::dict d;
    d["time"] = e.time_s;
    d["kind"] = e.kind == tt::flowmap::EventKind::On ? "ON" : "OFF";
    d["flow"] = e.flow_id;
    if (e.kind == tt::flowmap::EventKind::On) {
        d["dst"] = e.dst_ip.str() + "/" + std::to_string(e.dst_port);
        if (const auto* p = std::get_if<tt::flowmap::Periodic>(&*e.pattern)) {
            d["pattern"] = "PERIODIC";
            d["rate"] = p->rate_msgs_s;
            d["size"] = p->payload_bytes;
        } else if (const auto* q = std::get_if<tt::flowmap::Poisson>(&*e.pattern)) {
            d["pattern"] = "POISSON";
            d["rate"] = q->rate_msgs_s;
            d["size"] = q->payload_bytes;
        } else {
            d["pattern"] = "BURST";
            d["spec"] = std::get<tt::flowmap::Burst>(*e.pattern).spec;
        }
    }
    return d;
}

tt::replay::PacketLog packet_log(const std::vector<double>& rx, const std::vector<double>& tx,
                                 const std::vector<std::uint32_t>& sizes) {
    if (rx.size() != tx.size() || (!sizes.empty() && sizes.size() != rx.size()))
        throw tt::Error("rx, tx and sizes must have the same length");
    tt::replay::PacketLog log;
    for (std::size_t i = 0; i < rx.size(); ++i)
        log.rows.push_back({rx[i], tx[i], 0, static_cast<std::uint32_t>(i), sizes.empty() ? 0 : sizes[i], "", ""});
    return log;
}

}  // namespace

PYBIND11_MODULE(tracetwin, m) {
    m.doc() = "Cellular traffic twinning: segmentation, script synthesis, replay analytics, validation.";
    // Translators run newest first, so the subclass is registered last.
    auto error = py::register_exception<tt::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<tt::ParseError>(m, "ParseError", error.ptr());

    // validate
    m.def("ks_distance", [](const std::vector<double>& a, const std::vector<double>& b) {
        return tt::validate::ks_distance(a, b);
    }, py::arg("a"), py::arg("b"), "Two-sample Kolmogorov-Smirnov distance.");
    m.def("normalize", [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = tt::validate::joint_range(a, b);
        return py::make_tuple(tt::validate::normalize(a, r), tt::validate::normalize(b, r));
    }, py::arg("a"), py::arg("b"), "Both samples scaled to [0,1] through their joint range.");
    m.def("compare", [](const std::string& metric, const std::vector<double>& real, const std::vector<double>& twin,
                        double threshold) { return report_dict(tt::validate::compare(metric, real, twin, threshold)); },
          py::arg("metric"), py::arg("real"), py::arg("twin"), py::arg("threshold") = 0.1);

    // ticc
    m.def("ticc_fit", [](const tt::ticc::Matrix& samples, int clusters, int window, double lam, double beta,
                         std::uint64_t seed, int max_iters) {
        tt::ticc::TiccConfig cfg;
        cfg.num_clusters = clusters;
        cfg.window = window;
        cfg.lambda = lam;
        cfg.beta = beta;
        cfg.seed = seed;
        cfg.max_iters = max_iters;
        tt::ticc::FitResult res;
        {
            py::gil_scoped_release release;
            res = tt::ticc::fit(samples, cfg);
        }
        py::dict d;
        d["labels"] = res.labels.labels;
        d["objective"] = res.objective;
        d["iterations"] = res.iterations;
        d["converged"] = res.converged;
        d["warnings"] = res.warnings;
        std::vector<tt::ticc::Matrix> thetas;
        for (const auto& c : res.model.clusters) thetas.push_back(c.theta);
        d["precisions"] = thetas;
        return d;
    }, py::arg("samples"), py::arg("clusters") = 3, py::arg("window") = 5, py::arg("lam") = 0.11,
       py::arg("beta") = 200.0, py::arg("seed") = 0, py::arg("max_iters") = 50,
       "Segments a T x n series; returns per-sample labels and the objective trace.");
    m.def("assign_costs", [](const tt::ticc::Matrix& costs, double beta) { return tt::ticc::assign_costs(costs, beta); },
          py::arg("costs"), py::arg("beta"), "Label path minimizing cost plus beta per switch.");

    // flowmap
    m.def("parse_script", [](const std::string& text) {
        py::list out;
        for (const auto& e : tt::flowmap::parse_script(text).events) out.append(event_dict(e));
        return out;
    }, py::arg("text"));
    m.def("canonical_script", [](const std::string& text) {
        return tt::flowmap::serialize(tt::flowmap::parse_script(text));
    }, py::arg("text"), "Parses and re-emits a script in canonical form.");
    m.def("scheduled_load_mbps", [](const std::string& text, double t0, double t1) {
        return tt::flowmap::scheduled_load_mbps(tt::flowmap::parse_script(text), t0, t1);
    }, py::arg("text"), py::arg("t0"), py::arg("t1"));

    // kpm
    m.def("latency_ms", [](const std::vector<double>& rx, const std::vector<double>& tx) {
        return tt::kpm::latency_series(packet_log(rx, tx, {})).ms;
    }, py::arg("rx"), py::arg("tx"));
    m.def("windowed_throughput", [](const std::vector<double>& rx, const std::vector<std::uint32_t>& sizes,
                                    double window, std::optional<double> t0, std::optional<double> t1) {
        const auto s = tt::kpm::windowed_throughput(packet_log(rx, rx, sizes), window, t0, t1);
        return py::make_tuple(s.t0, s.mbps);
    }, py::arg("rx"), py::arg("sizes"), py::arg("window") = 0.25, py::arg("t0") = py::none(),
       py::arg("t1") = py::none(), "Returns (t0, per-window Mbps).");
    m.def("ecdf", [](const std::vector<double>& v) {
        const auto e = tt::kpm::ecdf(v);
        return py::make_tuple(e.x, e.p);
    }, py::arg("values"));
    m.def("requirement_satisfaction", [](const std::vector<double>& lat, std::optional<std::vector<double>> bounds) {
        std::vector<tt::kpm::LatencyRequirement> reqs;
        if (bounds) for (double b : *bounds) reqs.push_back({"", b});
        else reqs = tt::kpm::default_requirements();
        py::dict d;
        const auto p = tt::kpm::requirement_satisfaction(lat, reqs);
        for (std::size_t i = 0; i < reqs.size(); ++i) d[py::float_(reqs[i].bound_ms)] = p[i];
        return d;
    }, py::arg("latencies_ms"), py::arg("bounds_ms") = py::none(), "bound_ms -> P(latency <= bound).");
    m.def("cqi_occupancy", [](const std::vector<int>& cqi) {
        const auto r = tt::kpm::cqi_occupancy(cqi);
        return std::vector<double>(r.percent.begin(), r.percent.end());
    }, py::arg("cqi"));
    m.def("slicing", [](const std::string& name) {
        const auto& s = tt::kpm::find_slicing(name);
        return py::make_tuple(s.embb_prbs, s.urllc_prbs);
    }, py::arg("name"), "(eMBB PRBs, URLLC PRBs) of slicing_1 ... slicing_5.");

    // pipeline
    m.def("config_hash", [](const std::string& text) { return tt::pipeline::Config::parse(text).hash(); },
          py::arg("text"));
    m.def("run_stage", [](const std::string& stage, const std::string& config, const std::vector<std::string>& overrides) {
        std::ostringstream log;
        int rc = 2;
        {
            py::gil_scoped_release release;
            try {
                auto c = tt::pipeline::Config::load(config);
                for (const auto& o : overrides) c.assign(o);
                rc = tt::pipeline::run_stage(tt::pipeline::parse_stage(stage), tt::pipeline::PipelineConfig::from(c), log);
            } catch (const std::exception& e) {
                log << "error: " << e.what() << "\n";
            }
        }
        return py::make_tuple(rc, log.str());
    }, py::arg("stage"), py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
       "Runs one pipeline stage; returns (exit status, log text).");
    m.def("synth_trace", [](std::vector<double> levels, int windows_per_level, int W, double noise, std::uint64_t seed) {
        tt::pipeline::SynthTraceOptions o;
        o.levels_mbps = std::move(levels);
        o.windows_per_level = windows_per_level;
        o.W = W;
        o.noise = noise;
        o.seed = seed;
        return tt::pipeline::synth_trace(o);
    }, py::arg("levels_mbps") = std::vector<double>{1.0, 2.0, 1.0}, py::arg("windows_per_level") = 10,
       py::arg("W") = 60, py::arg("noise") = 0.3, py::arg("seed") = 1, "Synthetic DCI trace as CSV text.");
}

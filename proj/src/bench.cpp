#include "fuseconv/bench.hpp"

#include <algorithm>
#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <json.hpp>
#include <thread>

#if defined(__linux__)
#include <pthread.h>
#include <sched.h>
#endif

namespace fuseconv {

namespace {

using Clock = std::chrono::steady_clock;
using Json = nlohmann::ordered_json;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string format(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

// CPUs this process may run on, in ascending order.
std::vector<int> allowed_cpus() {
    std::vector<int> cpus;
#if defined(__linux__)
    cpu_set_t set;
    CPU_ZERO(&set);
    if (sched_getaffinity(0, sizeof set, &set) == 0)
        for (int c = 0; c < CPU_SETSIZE; ++c)
            if (CPU_ISSET(c, &set)) cpus.push_back(c);
#endif
    if (cpus.empty())
        for (unsigned c = 0; c < std::max(1u, std::thread::hardware_concurrency()); ++c)
            cpus.push_back(static_cast<int>(c));
    return cpus;
}

bool pin_current_thread(const std::vector<int>& cores) {
#if defined(__linux__)
    cpu_set_t set;
    CPU_ZERO(&set);
    for (int c : cores) CPU_SET(c, &set);
    return pthread_setaffinity_np(pthread_self(), sizeof set, &set) == 0;
#else
    (void)cores;
    return false;
#endif
}

std::shared_ptr<const ModelWeights> weights_for(const RunConfig& cfg) {
    if (cfg.weights) return cfg.weights;
    return std::make_shared<const ModelWeights>(model_weights(cfg.model));
}

void check_run_config(const RunConfig& cfg) {
    if (cfg.instances < 1) throw ConfigError("instances must be at least 1");
    if (cfg.threads < 1) throw ConfigError("threads must be at least 1");
    if (cfg.reps < 1) throw ConfigError("repetitions must be at least 1");
    if (cfg.warmup < 0) throw ConfigError("warm-up count must not be negative");
    if (cfg.model.layers.empty()) throw ConfigError("no model");
}

Json stats_json(const LatencyStats& s) { return {{"median", s.median}, {"min", s.min}, {"max", s.max}}; }

LatencyStats stats_from(const Json& j) {
    return {j.at("median").get<double>(), j.at("min").get<double>(), j.at("max").get<double>()};
}

Json report_json(const BenchReport& r) {
    Json j;
    j["step"] = to_string(r.step);
    j["batch"] = r.batch;
    j["threads"] = r.threads;
    j["instances"] = r.instances;
    j["reps"] = r.reps;
    j["warmup"] = r.warmup;
    j["aggregate_images_per_s"] = r.aggregate_images_per_s;
    j["max_latency_s"] = r.max_latency_s;
    j["pinned"] = r.pinned;
    j["latency"] = stats_json(r.latency);
    j["timing"] = Json::parse(r.timing.to_json());
    Json inst = Json::array();
    for (const InstanceReport& i : r.per_instance)
        inst.push_back({{"index", i.index},
                        {"images_per_s", i.images_per_s},
                        {"pinned", i.pinned},
                        {"cores", i.cores},
                        {"latency", stats_json(i.latency)}});
    j["per_instance"] = inst;
    return j;
}

BenchReport report_from(const Json& j) {
    BenchReport r;
    r.step = parse_ladder_step(j.at("step").get<std::string>());
    r.batch = j.at("batch").get<std::size_t>();
    r.threads = j.at("threads").get<int>();
    r.instances = j.at("instances").get<int>();
    r.reps = j.at("reps").get<int>();
    r.warmup = j.at("warmup").get<int>();
    r.aggregate_images_per_s = j.at("aggregate_images_per_s").get<double>();
    r.max_latency_s = j.at("max_latency_s").get<double>();
    r.pinned = j.at("pinned").get<bool>();
    r.latency = stats_from(j.at("latency"));
    r.timing = LayerTimingReport::from_json(j.at("timing").dump());
    for (const auto& e : j.at("per_instance")) {
        InstanceReport i;
        i.index = e.at("index").get<std::size_t>();
        i.images_per_s = e.at("images_per_s").get<double>();
        i.pinned = e.at("pinned").get<bool>();
        i.cores = e.at("cores").get<std::vector<int>>();
        i.latency = stats_from(e.at("latency"));
        r.per_instance.push_back(std::move(i));
    }
    return r;
}

std::string csv(std::span<const BenchReport> reports) {
    std::string out = std::string(kBenchCsvHeader) + "\n";
    for (const BenchReport& r : reports) {
        const std::string prefix = to_string(r.step) + "," + std::to_string(r.batch) + "," +
                                   std::to_string(r.threads) + "," + std::to_string(r.instances) + ",";
        for (TimingKind k : kAllTimingKinds)
            out += prefix + to_string(k) + "," + format("%.9f", r.timing[k]) + "," +
                   format("%.2f", r.timing.percent(k)) + ",,\n";
        out += prefix + "total," + format("%.9f", r.timing.total_seconds) + ",," +
               format("%.3f", r.aggregate_images_per_s) + "," + format("%.9f", r.max_latency_s) + "\n";
    }
    return out;
}

std::string table(std::span<const BenchReport> reports) {
    std::string out;
    char line[256];
    for (const BenchReport& r : reports) {
        std::snprintf(line, sizeof line, "step %s  batch %zu  threads %d  instances %d  reps %d  warmup %d%s\n",
                      to_string(r.step).c_str(), r.batch, r.threads, r.instances, r.reps, r.warmup,
                      r.pinned ? "  pinned" : "");
        out += line;
        std::snprintf(line, sizeof line, "  %-10s %14s %8s\n", "kind", "seconds", "percent");
        out += line;
        for (TimingKind k : kAllTimingKinds) {
            std::snprintf(line, sizeof line, "  %-10s %14.6f %7.2f%%\n", to_string(k).c_str(), r.timing[k],
                          r.timing.percent(k));
            out += line;
        }
        std::snprintf(line, sizeof line,
                      "  latency median %.6f s  min %.6f s  max %.6f s\n"
                      "  throughput %.3f images/s  max instance latency %.6f s\n",
                      r.latency.median, r.latency.min, r.latency.max, r.aggregate_images_per_s, r.max_latency_s);
        out += line;
        if (r.per_instance.size() > 1)
            for (const InstanceReport& i : r.per_instance) {
                std::snprintf(line, sizeof line, "    instance %zu  %.3f images/s  median %.6f s%s\n", i.index,
                              i.images_per_s, i.latency.median, i.pinned ? "  pinned" : "");
                out += line;
            }
        out += "\n";
    }
    return out;
}

double rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return INFINITY;
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max(scale, static_cast<double>(std::fabs(a[i])));
        diff = std::max(diff, static_cast<double>(std::fabs(a[i] - b[i])));
    }
    return scale > 0.0 ? diff / scale : diff;
}

// The conv `id`, its input as a model input, and whatever plan_fusion lets
// it absorb.
ModelSpec conv_submodel(const ModelSpec& planned, const LayerSpec& conv) {
    ModelSpec sub;
    LayerSpec in;
    in.id = conv.inputs[0];
    in.kind = LayerKind::Input;
    in.shape = planned.at(conv.inputs[0]).shape;
    sub.layers.push_back(in);
    sub.layers.push_back(conv);
    for (const std::string& id : conv.absorbed) sub.layers.push_back(planned.at(id));
    return clear_fusion(sub);
}

// Median forward time of two engines, alternating runs so both see the same
// machine state.
std::pair<double, double> median_forward_seconds(Engine& a, Engine& b, const Tensor& x, int warmup, int reps) {
    for (int i = 0; i < warmup; ++i) {
        a.forward(x);
        b.forward(x);
    }
    std::vector<double> sa, sb;
    for (int i = 0; i < reps; ++i) {
        auto t0 = Clock::now();
        a.forward(x);
        sa.push_back(seconds_since(t0));
        t0 = Clock::now();
        b.forward(x);
        sb.push_back(seconds_since(t0));
    }
    return {median_of(std::move(sa)), median_of(std::move(sb))};
}

}  // namespace

std::string to_string(LadderStep s) {
    switch (s) {
    case LadderStep::Baseline: return "baseline";
    case LadderStep::ConvOpt: return "conv-opt";
    case LadderStep::CacheOpt: return "cache-opt";
    case LadderStep::Fuse: return "fuse";
    }
    return "?";
}

LadderStep parse_ladder_step(const std::string& text) {
    for (LadderStep s : kAllLadderSteps)
        if (to_string(s) == text) return s;
    throw ConfigError("unknown ladder step '" + text + "' (expected baseline, conv-opt, cache-opt or fuse)");
}

std::string to_string(ReportFormat f) {
    switch (f) {
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Json: return "json";
    case ReportFormat::Table: return "table";
    }
    return "?";
}

ReportFormat parse_report_format(const std::string& text) {
    for (ReportFormat f : {ReportFormat::Csv, ReportFormat::Json, ReportFormat::Table})
        if (to_string(f) == text) return f;
    throw ConfigError("unknown report format '" + text + "' (expected csv, json or table)");
}

EngineConfig engine_config(const RunConfig& cfg, LadderStep step) {
    EngineConfig e;
    e.threads = cfg.threads;
    e.isa = cfg.isa;
    e.layer_timing = cfg.layer_timing;
    e.param_table = cfg.param_table;
    e.overrides = cfg.overrides;
    e.params = cfg.params;
    e.variant = cfg.variant;
    e.algorithm = step == LadderStep::Baseline ? std::optional(ConvAlgorithm::Im2colGemm) : std::nullopt;
    e.dynamic_params = step == LadderStep::CacheOpt || step == LadderStep::Fuse;
    e.fusion = step == LadderStep::Fuse;
    return e;
}

LatencyStats latency_stats(std::span<const double> samples) {
    if (samples.empty()) throw ContractError("latency statistics need at least one sample");
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    return {median_of({samples.begin(), samples.end()}), *lo, *hi};
}

void BenchReport::finalize() {
    aggregate_images_per_s = 0.0;
    max_latency_s = 0.0;
    pinned = !per_instance.empty();
    for (const InstanceReport& i : per_instance) {
        aggregate_images_per_s += i.images_per_s;
        max_latency_s = std::max(max_latency_s, i.latency.median);
        pinned = pinned && i.pinned;
    }
}

BenchReport run_multi_instance(const RunConfig& cfg, LadderStep step) {
    check_run_config(cfg);
    const std::size_t batch = cfg.batch ? cfg.batch : cfg.model.batch;
    const auto weights = weights_for(cfg);
    const EngineConfig ecfg = engine_config(cfg, step);
    const auto n = static_cast<std::size_t>(cfg.instances);

    std::vector<std::unique_ptr<Engine>> engines;
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < n; ++i) {
        engines.push_back(std::make_unique<Engine>(cfg.model, weights, batch, ecfg));
        inputs.push_back(make_tensor(engines.back()->input_shape(), Layout::NHWC, Fill::random(cfg.input_seed + i)));
    }

    const std::vector<int> cpus = allowed_cpus();
    struct Result {
        std::vector<double> latency;
        std::vector<LayerTimingReport> timing;
        bool pinned = false;
        std::vector<int> cores;
        std::vector<float> output;
        std::exception_ptr error;
    };
    std::vector<Result> results(n);
    std::barrier start(static_cast<std::ptrdiff_t>(n));

    auto body = [&](std::size_t i) {
        Result& res = results[i];
        if (cfg.pin) {
            for (int c = 0; c < cfg.threads; ++c)
                res.cores.push_back(cpus[(i * static_cast<std::size_t>(cfg.threads) + c) % cpus.size()]);
            res.pinned = pin_current_thread(res.cores);
        }
        start.arrive_and_wait();
        try {
            Engine& e = *engines[i];
            for (int w = 0; w < cfg.warmup; ++w) e.forward(inputs[i]);
            for (int r = 0; r < cfg.reps; ++r) {
                LayerTimingReport t;
                const auto t0 = Clock::now();
                const Tensor& y = e.forward(inputs[i], &t);
                res.latency.push_back(seconds_since(t0));
                res.timing.push_back(t);
                if (r == 0 && i == 0) res.output.assign(y.data().begin(), y.data().end());
            }
        } catch (...) {
            res.error = std::current_exception();
        }
    };
    // Instances always get their own thread so pinning never touches the
    // caller's affinity.
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n; ++i) threads.emplace_back(body, i);
    for (auto& t : threads) t.join();
    for (const Result& r : results)
        if (r.error) std::rethrow_exception(r.error);

    BenchReport rep;
    rep.step = step;
    rep.batch = batch;
    rep.threads = cfg.threads;
    rep.instances = cfg.instances;
    rep.reps = cfg.reps;
    rep.warmup = cfg.warmup;
    std::vector<double> all;
    std::array<std::vector<double>, kTimingKinds> per_kind;
    for (std::size_t i = 0; i < n; ++i) {
        InstanceReport ir;
        ir.index = i;
        ir.latency = latency_stats(results[i].latency);
        ir.images_per_s = static_cast<double>(batch) / ir.latency.median;
        ir.pinned = results[i].pinned;
        ir.cores = results[i].cores;
        rep.per_instance.push_back(ir);
        all.insert(all.end(), results[i].latency.begin(), results[i].latency.end());
        for (const LayerTimingReport& t : results[i].timing)
            for (std::size_t k = 0; k < kTimingKinds; ++k) per_kind[k].push_back(t.seconds[k]);
    }
    rep.latency = latency_stats(all);
    for (std::size_t k = 0; k < kTimingKinds; ++k) rep.timing.seconds[k] = median_of(per_kind[k]);
    rep.timing.total_seconds = rep.latency.median;
    rep.timing.batch = batch;
    rep.output = std::move(results[0].output);
    rep.finalize();
    return rep;
}

std::vector<BenchReport> run_ladder(const RunConfig& cfg) {
    check_run_config(cfg);
    if (cfg.steps.empty()) throw ConfigError("ladder has no steps");
    RunConfig c = cfg;
    c.weights = weights_for(cfg);
    // Surface configuration errors before any timing.
    const std::size_t batch = c.batch ? c.batch : c.model.batch;
    for (LadderStep s : c.steps) Engine(c.model, c.weights, batch, engine_config(c, s));
    std::vector<BenchReport> out;
    for (LadderStep s : c.steps) out.push_back(run_multi_instance(c, s));
    return out;
}

std::vector<BenchReport> run_batch_sweep(const RunConfig& cfg, std::span<const std::size_t> batches,
                                         LadderStep step) {
    check_run_config(cfg);
    if (batches.empty()) throw ConfigError("batch sweep has no batch sizes");
    RunConfig c = cfg;
    c.weights = weights_for(cfg);
    for (std::size_t t : batches) {
        if (t == 0) throw ConfigError("batch sizes must be positive");
        Engine(c.model, c.weights, t, engine_config(c, step));
    }
    std::vector<BenchReport> out;
    for (std::size_t t : batches) {
        c.batch = t;
        out.push_back(run_multi_instance(c, step));
    }
    return out;
}

double ladder_divergence(std::span<const BenchReport> reports) {
    double worst = 0.0;
    for (std::size_t i = 1; i < reports.size(); ++i)
        worst = std::max(worst, rel_diff(reports[0].output, reports[i].output));
    return worst;
}

std::vector<std::string> check_config(const RunConfig& cfg) {
    std::vector<std::string> w;
    const std::size_t cores = allowed_cpus().size();
    if (static_cast<std::size_t>(cfg.instances) * static_cast<std::size_t>(cfg.threads) > cores)
        w.push_back("instances x threads = " + std::to_string(cfg.instances * cfg.threads) + " exceeds the " +
                    std::to_string(cores) + " available cores; instances share cores");
    return w;
}

std::vector<std::string> check_instances(const BenchReport& r) {
    std::vector<std::string> w;
    if (r.per_instance.size() < 2) return w;
    double lo = INFINITY, hi = 0.0;
    for (const InstanceReport& i : r.per_instance) {
        lo = std::min(lo, i.images_per_s);
        hi = std::max(hi, i.images_per_s);
    }
    if (lo < 0.85 * hi)
        w.push_back("instance throughput spread: slowest " + format("%.3f", lo) + " vs fastest " +
                    format("%.3f", hi) + " images/s (more than 15% apart)");
    return w;
}

std::vector<std::string> check_sweep(std::span<const BenchReport> reports) {
    std::vector<std::string> w;
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (reports[i].batch > reports[i - 1].batch && reports[i].latency.median < reports[i - 1].latency.median)
            w.push_back("latency not monotone in batch: t=" + std::to_string(reports[i].batch) + " took " +
                        format("%.6f", reports[i].latency.median) + " s, t=" + std::to_string(reports[i - 1].batch) +
                        " took " + format("%.6f", reports[i - 1].latency.median) + " s");
    const BenchReport *one = nullptr, *sixteen = nullptr;
    for (const BenchReport& r : reports) {
        if (r.batch == 1) one = &r;
        if (r.batch == 16) sixteen = &r;
    }
    if (one && sixteen && sixteen->aggregate_images_per_s < one->aggregate_images_per_s)
        w.push_back("throughput at t=16 (" + format("%.3f", sixteen->aggregate_images_per_s) +
                    " images/s) is below t=1 (" + format("%.3f", one->aggregate_images_per_s) + " images/s)");
    return w;
}

std::string emit_report(std::span<const BenchReport> reports, ReportFormat format) {
    switch (format) {
    case ReportFormat::Csv: return csv(reports);
    case ReportFormat::Json: {
        Json j = Json::array();
        for (const BenchReport& r : reports) j.push_back(report_json(r));
        return j.dump(2) + "\n";
    }
    case ReportFormat::Table: return table(reports);
    }
    return {};
}

std::vector<BenchReport> parse_reports_json(const std::string& text) {
    std::vector<BenchReport> out;
    try {
        const Json j = Json::parse(text);
        if (!j.is_array()) throw ParseError(0, "bench report JSON must be an array");
        for (const auto& e : j) out.push_back(report_from(e));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("bench report JSON: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(0, std::string("bench report JSON: ") + e.what());
    }
    return out;
}

std::vector<LayerComparison> fusion_study(const ModelSpec& m, const ModelWeights& w, const StudyOptions& opt) {
    const std::size_t batch = opt.batch ? opt.batch : m.batch;
    const ModelSpec planned = plan_fusion(m);
    auto weights = std::make_shared<const ModelWeights>(w);
    std::vector<LayerComparison> out;
    for (const LayerSpec& l : planned.layers) {
        if (l.kind != LayerKind::Conv || l.fused == EpilogueKind::None) continue;
        const ModelSpec sub = conv_submodel(planned, l);
        EngineConfig cfg;
        cfg.threads = opt.threads;
        cfg.isa = opt.isa;
        cfg.layer_timing = false;
        cfg.fusion = false;
        Engine staged(sub, weights, batch, cfg);
        cfg.fusion = true;
        Engine fused(sub, weights, batch, cfg);
        const Tensor x = make_tensor(staged.input_shape(), Layout::NHWC, Fill::random(1));
        LayerComparison c;
        c.id = l.id;
        c.geometry = fused.conv_plans().front().geometry;
        const auto [base, cand] = median_forward_seconds(staged, fused, x, opt.warmup, opt.reps);
        c.baseline_seconds = base;
        c.candidate_seconds = cand;
        out.push_back(c);
    }
    return out;
}

std::vector<LayerComparison> cache_param_study(const ModelSpec& m, const StudyOptions& opt) {
    const std::size_t batch = opt.batch ? opt.batch : m.batch;
    const CacheHierarchy& hw = CacheHierarchy::host();
    AutotuneOptions a;
    a.warmup = opt.warmup;
    a.reps = opt.reps;
    a.threads = opt.threads;
    a.isa = opt.isa;
    std::vector<LayerComparison> out;
    for (const LayerSpec& l : m.layers) {
        if (l.kind != LayerKind::Conv) continue;
        Shape in = m.at(l.inputs[0]).shape;
        in.t = batch;
        const ConvGeometry g = conv_output_geometry(l.conv, in);
        const CacheSelection fixed{reference_params(hw), LoopVariant::A2B1};
        const CacheSelection chosen = select_cache_params(g.m, g.n, g.k, hw);
        const double flop = 2.0 * static_cast<double>(g.m) * static_cast<double>(g.n) * static_cast<double>(g.k);
        auto seconds = [&](const CacheSelection& s) {
            const CandidateResult r = measure_gemm(g.m, g.n, g.k, s, hw, a);
            if (!r.valid) throw ConfigError("layer '" + l.id + "': " + r.error);
            return flop / (r.median_gflops * 1e9);
        };
        LayerComparison c;
        c.id = l.id;
        c.geometry = g;
        c.baseline_seconds = seconds(fixed);
        c.candidate_seconds = seconds(chosen);
        out.push_back(c);
    }
    return out;
}

}  // namespace fuseconv

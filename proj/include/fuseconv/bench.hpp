#pragma once

// Benchmark harness: the optimization ladder, batch sweeps and concurrent
// multi-instance runs, plus report serialization.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuseconv/engine.hpp"

namespace fuseconv {

/// Cumulative engine configurations, each adding one optimization.
///   baseline: full im2col for every conv, reference blocking, no fusion
///   conv-opt: per-layer algorithm choice
///   cache-opt: + per-shape blocking and loop variant
///   fuse:     + batchnorm/relu epilogue fusion
enum class LadderStep { Baseline, ConvOpt, CacheOpt, Fuse };
inline constexpr std::array<LadderStep, 4> kAllLadderSteps = {LadderStep::Baseline, LadderStep::ConvOpt,
                                                              LadderStep::CacheOpt, LadderStep::Fuse};

std::string to_string(LadderStep s);
/// Throws ConfigError for unknown names.
LadderStep parse_ladder_step(const std::string& text);

enum class ReportFormat { Csv, Json, Table };
std::string to_string(ReportFormat f);
ReportFormat parse_report_format(const std::string& text);

struct RunConfig {
    ModelSpec model;
    /// nullptr: model_weights(model).
    std::shared_ptr<const ModelWeights> weights;
    /// 0: the model's @batch.
    std::size_t batch = 0;
    int threads = 1;
    int instances = 1;
    std::vector<LadderStep> steps{kAllLadderSteps.begin(), kAllLadderSteps.end()};
    /// Applied on top of every step.
    std::map<std::string, ConvAlgorithm> overrides;
    std::optional<GemmCacheParams> params;
    std::optional<LoopVariant> variant;
    const ParamTable* param_table = nullptr;
    simd::Isa isa = simd::best_isa();
    int reps = 5;
    int warmup = 1;
    bool layer_timing = true;
    /// Pin instance i to cores [i*threads, (i+1)*threads) when possible.
    bool pin = true;
    std::uint64_t input_seed = 1;
};

EngineConfig engine_config(const RunConfig& cfg, LadderStep step);

struct LatencyStats {
    double median = 0.0, min = 0.0, max = 0.0;
};
/// Throws ContractError on an empty sample.
LatencyStats latency_stats(std::span<const double> samples);

struct InstanceReport {
    std::size_t index = 0;
    /// Batch latency over the timed repetitions.
    LatencyStats latency;
    /// batch / median latency.
    double images_per_s = 0.0;
    bool pinned = false;
    std::vector<int> cores;
};

struct BenchReport {
    LadderStep step = LadderStep::Fuse;
    std::size_t batch = 0;
    int threads = 1;
    int instances = 1;
    int reps = 0;
    int warmup = 0;
    /// Per-kind medians over every timed run; total_seconds is the median
    /// batch latency.
    LayerTimingReport timing;
    /// Batch latency over every timed run of every instance.
    LatencyStats latency;
    std::vector<InstanceReport> per_instance;
    /// Sum of per-instance throughput.
    double aggregate_images_per_s = 0.0;
    /// Largest per-instance median latency.
    double max_latency_s = 0.0;
    /// Every instance was pinned.
    bool pinned = false;
    /// Final tensor of instance 0 on its first run; not serialized.
    std::vector<float> output;

    /// Recomputes aggregate_images_per_s, max_latency_s and pinned from
    /// per_instance.
    void finalize();
};

/// One timed configuration with cfg.instances concurrent engines on disjoint
/// inputs. All engines are built before any timing starts; a construction
/// failure throws without running anything.
BenchReport run_multi_instance(const RunConfig& cfg, LadderStep step);
/// One report per cfg.steps entry, identical inputs across steps.
std::vector<BenchReport> run_ladder(const RunConfig& cfg);
/// One report per batch size.
std::vector<BenchReport> run_batch_sweep(const RunConfig& cfg, std::span<const std::size_t> batches, LadderStep step);

/// Largest relative difference (max abs diff / max abs value) between the
/// first report's output and every other's.
double ladder_divergence(std::span<const BenchReport> reports);

/// Soft checks; each entry is a human-readable warning.
std::vector<std::string> check_config(const RunConfig& cfg);
/// Per-instance throughput within 15% of the fastest.
std::vector<std::string> check_instances(const BenchReport& r);
/// Median latency non-decreasing in batch; throughput at t=16 not below t=1.
std::vector<std::string> check_sweep(std::span<const BenchReport> reports);

/// Column order of the CSV form.
inline constexpr const char* kBenchCsvHeader =
    "step,batch,threads,instances,kind,seconds,percent,images_per_s,max_latency_s";

/// CSV has one row per timing kind and a "total" row per report.
std::string emit_report(std::span<const BenchReport> reports, ReportFormat format);
/// Parses the JSON form; throws ParseError.
std::vector<BenchReport> parse_reports_json(const std::string& text);

/// Per-layer timing of one conv under two configurations.
struct LayerComparison {
    std::string id;
    ConvGeometry geometry;
    double baseline_seconds = 0.0;
    double candidate_seconds = 0.0;
    double speedup() const { return candidate_seconds > 0.0 ? baseline_seconds / candidate_seconds : 0.0; }
};

struct StudyOptions {
    std::size_t batch = 0;
    int threads = 1;
    simd::Isa isa = simd::best_isa();
    int reps = 5;
    int warmup = 1;
};

/// For every conv that plan_fusion fuses: conv followed by standalone
/// batchnorm/relu passes (baseline) vs the fused epilogue (candidate).
std::vector<LayerComparison> fusion_study(const ModelSpec& m, const ModelWeights& w, const StudyOptions& opt);
/// For every conv's GEMM shape: reference blocking with A2B1 (baseline) vs
/// select_cache_params (candidate).
std::vector<LayerComparison> cache_param_study(const ModelSpec& m, const StudyOptions& opt);

}  // namespace fuseconv

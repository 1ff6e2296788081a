#pragma once

// Layer graphs, the text model format, fusion planning and weights.
//
// Model files are line oriented. Blank lines and '#' comments are ignored;
// directives start with '@'; every other line is one layer:
//
//   @batch 8                 default batch size
//   @seed 42                 seed for random weights
//   @weights resnet.bin      weight blob (manifest in resnet.bin.manifest)
//
//   input  input     h=64 w=64 c=3
//   conv1  conv      in=input k=3 s=1 p=1 out=16 [algo=convgemm] [params=mc,nc,kc,mr,nr] [variant=b2a1]
//   bn1    batchnorm in=conv1 [eps=1e-5]
//   relu1  relu      in=bn1
//   pool1  pool      in=relu1 mode=max k=3 s=2 p=1     (or mode=avg global=1)
//   add1   add       in=a,b
//   fc     dense     in=pool2 out=10
//
// k/s/p set both spatial axes; kh/kw, sh/sw, ph/pw set one. Layers may only
// reference layers defined above them, so every model is a DAG in
// topological order. There is exactly one input layer and one output (the
// only layer nobody consumes).

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fuseconv/convolution.hpp"
#include "fuseconv/gemm.hpp"
#include "fuseconv/layers.hpp"
#include "fuseconv/tensor.hpp"

namespace fuseconv {

enum class LayerKind { Input, Conv, BatchNorm, Relu, Pool, Add, Dense };

std::string to_string(LayerKind k);
std::optional<LayerKind> parse_layer_kind(const std::string& text);

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::Input;
    std::vector<std::string> inputs;
    std::size_t line = 0;

    ConvDescriptor conv{};                 // conv
    std::optional<ConvAlgorithm> algorithm;  // conv
    std::optional<GemmCacheParams> params;   // conv
    std::optional<LoopVariant> variant;      // conv
    float eps = kDefaultBatchNormEps;        // batchnorm
    PoolDescriptor pool{};                   // pool
    std::size_t units = 0;                   // dense

    /// Per-image output shape (t = 1), filled in by the parser.
    Shape shape{};

    /// Set on a conv that absorbs its successors into the GEMM epilogue.
    EpilogueKind fused = EpilogueKind::None;
    /// Layers executed inside this conv, in order.
    std::vector<std::string> absorbed;
    /// Set on an absorbed batchnorm/relu: the conv that runs it.
    std::string fused_into;
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::size_t batch = 1;
    std::uint64_t seed = 1;
    /// Weight blob path as written in the file (resolved by load_model).
    std::string weights_path;

    /// Index of layer `id`, or npos.
    std::size_t find(const std::string& id) const;
    const LayerSpec& at(const std::string& id) const;
    const LayerSpec& input() const { return layers.front(); }
    const LayerSpec& output() const { return layers.back(); }
    /// Number of layers reading each layer's output, by index.
    std::vector<std::size_t> consumer_counts() const;
};

/// Throws ParseError (with the line number) for unknown kinds or keys,
/// undefined or duplicate ids, cycles and shape mismatches.
ModelSpec parse_model(const std::string& text);
/// Reads a model file; a relative @weights path is resolved against the
/// file's directory.
ModelSpec load_model(const std::string& path);

/// Marks conv->batchnorm->relu, conv->batchnorm and conv->relu chains whose
/// intermediate results have a single consumer as fused. Any previous
/// annotation is discarded first, so the result is idempotent.
ModelSpec plan_fusion(const ModelSpec& m);
/// Removes every fusion annotation.
ModelSpec clear_fusion(const ModelSpec& m);

struct FusionSummary {
    std::size_t convs = 0, fused_convs = 0;
    std::size_t batchnorms = 0, fused_batchnorms = 0;
    std::size_t relus = 0, fused_relus = 0;
};
FusionSummary summarize_fusion(const ModelSpec& m);

/// Number of floats of trainable data per layer: conv filters
/// (cout*kh*kw*cin), batchnorm gamma|beta|mean|var (4*c), dense weights and
/// bias (out*in + out).
std::size_t weight_count(const ModelSpec& m, const LayerSpec& layer);

/// Layer id -> parameters, laid out as described for weight_count.
struct ModelWeights {
    std::map<std::string, std::vector<float>> tensors;

    const std::vector<float>& at(const std::string& id) const;
    /// Throws ContractError when a layer's entry is missing or has the wrong size.
    void check(const ModelSpec& m) const;
};

/// Seeded uniform [-0.1, 0.1] weights. Batchnorm uses the same stream as
/// perturbations around identity: gamma = 1 + u, beta = u, mean = u,
/// var = 1 + u.
ModelWeights random_weights(const ModelSpec& m, std::uint64_t seed);

/// Raw little-endian float32 blob plus "<blob>.manifest" with one
/// "id offset length" line per layer (in floats).
void save_weights(const ModelSpec& m, const ModelWeights& w, const std::string& blob_path);
ModelWeights load_weights(const ModelSpec& m, const std::string& blob_path);
/// load_weights when the model names a blob, random_weights otherwise.
ModelWeights model_weights(const ModelSpec& m);

/// Timing buckets of the per-layer cost report.
enum class TimingKind { Conv2D, BatchNorm, ReLU, Pooling, Add, Dense };
inline constexpr std::size_t kTimingKinds = 6;
inline constexpr std::array<TimingKind, kTimingKinds> kAllTimingKinds = {
    TimingKind::Conv2D, TimingKind::BatchNorm, TimingKind::ReLU,
    TimingKind::Pooling, TimingKind::Add, TimingKind::Dense};

std::string to_string(TimingKind k);
std::optional<TimingKind> parse_timing_kind(const std::string& text);
TimingKind timing_kind(LayerKind k);

/// Wall time per layer kind for one forward pass. Fused batchnorm/relu work
/// is charged to Conv2D.
struct LayerTimingReport {
    std::array<double, kTimingKinds> seconds{};
    /// Wall time of the whole pass, including untimed glue.
    double total_seconds = 0.0;
    std::size_t batch = 0;

    double& operator[](TimingKind k) { return seconds[static_cast<std::size_t>(k)]; }
    double operator[](TimingKind k) const { return seconds[static_cast<std::size_t>(k)]; }
    double kind_sum() const;
    /// Share of kind_sum(), in percent.
    double percent(TimingKind k) const;
    double images_per_second() const;

    /// kind,seconds,percent with a header row.
    std::string to_csv() const;
    std::string to_json() const;
    static LayerTimingReport from_json(const std::string& text);
};

}  // namespace fuseconv

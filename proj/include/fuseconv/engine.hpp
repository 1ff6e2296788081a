#pragma once

// Forward-pass executor. An Engine is built once per (model, batch): it
// resolves each convolution's algorithm and blocking, folds batchnorm
// coefficients, and allocates every intermediate tensor up front. Buffers are
// shared between layers whose lifetimes do not overlap; elementwise layers
// run in place when their input dies with them.
//
// forward() is single-flight per Engine. Independent Engines share nothing
// mutable and may run concurrently.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fuseconv/cache_params.hpp"
#include "fuseconv/model.hpp"

namespace fuseconv {

struct EngineConfig {
    int threads = 1;
    simd::Isa isa = simd::best_isa();
    /// Fold batchnorm/relu into convolution epilogues where plan_fusion allows.
    bool fusion = true;
    /// Algorithm for every conv; unset means the model file's choice, then
    /// choose_algorithm.
    std::optional<ConvAlgorithm> algorithm;
    /// Per-layer algorithm overrides; win over everything else.
    std::map<std::string, ConvAlgorithm> overrides;
    /// true: select_cache_params per conv; false: reference_params with A2B1.
    bool dynamic_params = true;
    /// Blocking for every GEMM; wins over the model file and the selection.
    std::optional<GemmCacheParams> params;
    std::optional<LoopVariant> variant;
    /// Per-shape overrides consulted by the dynamic selection.
    const ParamTable* param_table = nullptr;
    const CacheHierarchy* hw = nullptr;
    /// Time each layer; off gives a pure end-to-end measurement.
    bool layer_timing = true;
};

/// What the engine decided for one convolution.
struct ConvPlan {
    std::string id;
    ConvAlgorithm algorithm = ConvAlgorithm::ConvGemm;
    CacheSelection selection;
    EpilogueKind epilogue = EpilogueKind::None;
    ConvGeometry geometry;
};

class Engine {
public:
    /// Throws ConfigError for unknown override ids or blocking that does not
    /// fit the cache hierarchy, ContractError for missing weights.
    Engine(const ModelSpec& model, std::shared_ptr<const ModelWeights> weights, std::size_t batch,
           EngineConfig cfg = {});
    ~Engine();
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Runs the model on x (shape (batch, h, w, c) of the input layer). The
    /// result stays valid until the next forward call.
    const Tensor& forward(const Tensor& x, LayerTimingReport* report = nullptr);

    Shape input_shape() const;
    Shape output_shape() const;
    std::size_t batch() const noexcept { return batch_; }
    /// The model as executed (with fusion annotations when enabled).
    const ModelSpec& plan() const noexcept { return model_; }
    const std::vector<ConvPlan>& conv_plans() const noexcept { return conv_plans_; }
    const EngineConfig& config() const noexcept { return cfg_; }
    /// Bytes held in intermediate tensors and the im2col workspace.
    std::size_t activation_bytes() const;

private:
    struct Step;

    ModelSpec model_;
    std::shared_ptr<const ModelWeights> weights_;
    std::size_t batch_;
    EngineConfig cfg_;
    std::vector<ConvPlan> conv_plans_;
    std::vector<Step> steps_;
    std::vector<Tensor> buffers_;
    std::vector<float> workspace_;
    int output_buffer_ = -1;
};

}  // namespace fuseconv

#include "fuseconv/engine.hpp"

#include <algorithm>
#include <chrono>
#include <set>

namespace fuseconv {

namespace {

using Clock = std::chrono::steady_clock;

Shape batched(Shape s, std::size_t batch) {
    s.t = batch;
    return s;
}

FoldedBatchNorm fold_from_weights(const std::vector<float>& w, std::size_t c, float eps) {
    BatchNormParams p;
    p.gamma.assign(w.begin(), w.begin() + c);
    p.beta.assign(w.begin() + c, w.begin() + 2 * c);
    p.mean.assign(w.begin() + 2 * c, w.begin() + 3 * c);
    p.var.assign(w.begin() + 3 * c, w.begin() + 4 * c);
    p.eps = eps;
    return fold_batchnorm(p);
}

bool is_elementwise(LayerKind k) { return k == LayerKind::BatchNorm || k == LayerKind::Relu || k == LayerKind::Add; }

}  // namespace

struct Engine::Step {
    std::size_t layer = 0;
    LayerKind kind = LayerKind::Input;
    TimingKind timing = TimingKind::Conv2D;
    std::vector<int> in;  // buffer indices; -1 is the caller's input tensor
    int out = -1;

    // conv
    ConvDescriptor conv{};
    ConvAlgorithm algorithm = ConvAlgorithm::ConvGemm;
    ConvOptions conv_options{};
    Tensor filters;
    EpilogueKind epilogue = EpilogueKind::None;
    FoldedBatchNorm epilogue_bn;

    // batchnorm
    FoldedBatchNorm bn;
    // pool
    PoolDescriptor pool{};
    // dense
    const std::vector<float>* dense_params = nullptr;
    std::size_t dense_weights = 0;
    DenseOptions dense_options{};
};

Engine::~Engine() = default;

Engine::Engine(const ModelSpec& model, std::shared_ptr<const ModelWeights> weights, std::size_t batch,
               EngineConfig cfg)
    : model_(cfg.fusion ? plan_fusion(model) : clear_fusion(model)),
      weights_(std::move(weights)),
      batch_(batch),
      cfg_(std::move(cfg)) {
    if (batch_ == 0) throw ConfigError("batch size must be positive");
    if (cfg_.threads < 1) throw ConfigError("thread count must be at least 1");
    if (!weights_) throw ContractError("engine needs weights");
    weights_->check(model_);
    simd::kernels(cfg_.isa);

    for (const auto& [id, algo] : cfg_.overrides) {
        const std::size_t i = model_.find(id);
        if (i == std::string::npos) throw ConfigError("override names unknown layer '" + id + "'");
        if (model_.layers[i].kind != LayerKind::Conv)
            throw ConfigError("override names layer '" + id + "', which is a " + to_string(model_.layers[i].kind) +
                              ", not a conv");
    }

    const CacheHierarchy& hw = cfg_.hw ? *cfg_.hw : CacheHierarchy::host();
    auto resolve_blocking = [&](const LayerSpec& l, std::size_t m, std::size_t n, std::size_t k) {
        CacheSelection sel = cfg_.dynamic_params ? select_cache_params(m, n, k, hw, cfg_.param_table)
                                                 : CacheSelection{reference_params(hw), LoopVariant::A2B1};
        if (l.params) sel.params = *l.params;
        if (l.variant) sel.variant = *l.variant;
        if (cfg_.params) sel.params = *cfg_.params;
        if (cfg_.variant) sel.variant = *cfg_.variant;
        try {
            validate_params(sel.params, sel.variant, m, n, k, hw);
        } catch (const ConfigError& e) {
            throw ConfigError("layer '" + l.id + "': " + e.what());
        }
        return sel;
    };

    // Value produced by each layer: the layer itself, or the conv that
    // absorbed it.
    std::vector<std::size_t> producer(model_.layers.size());
    for (std::size_t i = 0; i < model_.layers.size(); ++i) {
        const LayerSpec& l = model_.layers[i];
        producer[i] = l.fused_into.empty() ? i : model_.find(l.fused_into);
    }

    std::size_t workspace_floats = 0;
    for (std::size_t i = 1; i < model_.layers.size(); ++i) {
        const LayerSpec& l = model_.layers[i];
        if (!l.fused_into.empty()) continue;
        Step s;
        s.layer = i;
        s.kind = l.kind;
        s.timing = timing_kind(l.kind);
        const Shape in = batched(model_.at(l.inputs[0]).shape, batch_);

        switch (l.kind) {
        case LayerKind::Conv: {
            s.conv = l.conv;
            const ConvGeometry g = conv_output_geometry(l.conv, in);
            ConvPlan plan;
            plan.id = l.id;
            plan.geometry = g;
            if (auto it = cfg_.overrides.find(l.id); it != cfg_.overrides.end()) {
                plan.algorithm = it->second;
            } else if (cfg_.algorithm) {
                plan.algorithm = *cfg_.algorithm;
            } else {
                plan.algorithm = l.algorithm ? *l.algorithm : choose_algorithm(l.conv, in);
            }
            plan.selection = resolve_blocking(l, g.m, g.n, g.k);
            plan.epilogue = l.fused;
            s.algorithm = plan.algorithm;
            s.conv_options.params = plan.selection.params;
            s.conv_options.variant = plan.selection.variant;
            s.conv_options.threads = cfg_.threads;
            s.conv_options.isa = cfg_.isa;
            s.conv_options.hw = &hw;
            s.filters = Tensor({l.conv.cout, l.conv.kh, l.conv.kw, l.conv.cin});
            const auto& w = weights_->at(l.id);
            std::copy(w.begin(), w.end(), s.filters.data().begin());
            s.epilogue = l.fused;
            if (l.fused == EpilogueKind::BatchNorm || l.fused == EpilogueKind::BatchNormRelu) {
                const LayerSpec& bn = model_.at(l.absorbed.front());
                s.epilogue_bn = fold_from_weights(weights_->at(bn.id), bn.shape.c, bn.eps);
            }
            if (plan.algorithm == ConvAlgorithm::Im2colGemm &&
                !(l.conv.kh == 1 && l.conv.kw == 1 && l.conv.sh == 1 && l.conv.sw == 1 && l.conv.ph == 0 &&
                  l.conv.pw == 0))
                workspace_floats = std::max(workspace_floats, g.k * g.n);
            conv_plans_.push_back(plan);
            break;
        }
        case LayerKind::BatchNorm:
            s.bn = fold_from_weights(weights_->at(l.id), l.shape.c, l.eps);
            break;
        case LayerKind::Pool:
            s.pool = l.pool;
            break;
        case LayerKind::Dense: {
            s.dense_params = &weights_->at(l.id);
            s.dense_weights = s.dense_params->size() - l.units;
            const std::size_t k = s.dense_weights / l.units;
            s.dense_options.threads = cfg_.threads;
            s.dense_options.isa = cfg_.isa;
            s.dense_options.hw = &hw;
            s.dense_options.selection = resolve_blocking(l, l.units, batch_, k);
            break;
        }
        default:
            break;
        }
        steps_.push_back(std::move(s));
    }

    // Liveness: last step reading each value.
    std::vector<std::size_t> last_use(model_.layers.size(), 0);
    for (std::size_t si = 0; si < steps_.size(); ++si)
        for (const auto& id : model_.layers[steps_[si].layer].inputs)
            last_use[producer[model_.find(id)]] = si;
    const std::size_t output_value = producer[model_.layers.size() - 1];
    last_use[output_value] = steps_.size();

    std::vector<int> buffer_of(model_.layers.size(), -1);
    std::multimap<std::size_t, int> free_buffers;  // element count -> buffer
    std::vector<Shape> buffer_shape;
    auto acquire = [&](const Shape& shape) {
        for (auto it = free_buffers.lower_bound(shape.count()); it != free_buffers.end() && it->first == shape.count();
             ++it)
            if (buffer_shape[static_cast<std::size_t>(it->second)] == shape) {
                const int b = it->second;
                free_buffers.erase(it);
                return b;
            }
        buffer_shape.push_back(shape);
        return static_cast<int>(buffer_shape.size() - 1);
    };

    for (std::size_t si = 0; si < steps_.size(); ++si) {
        Step& s = steps_[si];
        const LayerSpec& l = model_.layers[s.layer];
        std::set<std::size_t> inputs;
        for (const auto& id : l.inputs) {
            const std::size_t v = producer[model_.find(id)];
            inputs.insert(v);
            s.in.push_back(v == 0 ? -1 : buffer_of[v]);
        }
        const Shape out_shape = batched(l.shape, batch_);
        int out = -1, reused = -1;
        if (is_elementwise(l.kind))
            for (std::size_t v : inputs)
                if (v != 0 && last_use[v] == si && buffer_shape[static_cast<std::size_t>(buffer_of[v])] == out_shape) {
                    out = reused = buffer_of[v];
                    break;
                }
        if (out < 0) out = acquire(out_shape);
        s.out = out;
        buffer_of[s.layer] = out;
        for (std::size_t v : inputs)
            if (v != 0 && last_use[v] == si && buffer_of[v] != reused)
                free_buffers.emplace(buffer_shape[static_cast<std::size_t>(buffer_of[v])].count(), buffer_of[v]);
    }
    output_buffer_ = buffer_of[output_value];

    buffers_.reserve(buffer_shape.size());
    for (const Shape& sh : buffer_shape) buffers_.emplace_back(sh);
    workspace_.resize(workspace_floats);
}

Shape Engine::input_shape() const { return batched(model_.input().shape, batch_); }
Shape Engine::output_shape() const { return batched(model_.output().shape, batch_); }

std::size_t Engine::activation_bytes() const {
    std::size_t bytes = workspace_.size() * sizeof(float);
    for (const auto& b : buffers_) bytes += b.size() * sizeof(float);
    return bytes;
}

const Tensor& Engine::forward(const Tensor& x, LayerTimingReport* report) {
    if (x.layout() != Layout::NHWC || x.shape() != input_shape())
        throw ContractError("engine input must be NHWC " + to_string(input_shape()) + ", got " + to_string(x.shape()));
    const bool timed = report && cfg_.layer_timing;
    if (report) *report = LayerTimingReport{};
    const LayerOptions lopt{cfg_.threads, cfg_.isa};
    auto buf = [&](int b) -> const Tensor& { return b < 0 ? x : buffers_[static_cast<std::size_t>(b)]; };

    const auto start = Clock::now();
    for (Step& s : steps_) {
        const auto t0 = timed ? Clock::now() : Clock::time_point{};
        Tensor& y = buffers_[static_cast<std::size_t>(s.out)];
        switch (s.kind) {
        case LayerKind::Conv: {
            ConvOptions o = s.conv_options;
            switch (s.epilogue) {
            case EpilogueKind::None: break;
            case EpilogueKind::Relu: o.epilogue = Epilogue::relu(); break;
            case EpilogueKind::BatchNorm: o.epilogue = Epilogue::batchnorm(s.epilogue_bn.scale, s.epilogue_bn.shift); break;
            case EpilogueKind::BatchNormRelu:
                o.epilogue = Epilogue::batchnorm_relu(s.epilogue_bn.scale, s.epilogue_bn.shift);
                break;
            }
            if (s.algorithm == ConvAlgorithm::Im2colGemm)
                conv_im2col_gemm_into(buf(s.in[0]), s.filters, s.conv, o, workspace_, y);
            else
                conv_gemm_into(buf(s.in[0]), s.filters, s.conv, o, y);
            break;
        }
        case LayerKind::BatchNorm: batchnorm_inference_into(buf(s.in[0]), s.bn, y, lopt); break;
        case LayerKind::Relu: relu_into(buf(s.in[0]), y, lopt); break;
        case LayerKind::Pool: pool_into(buf(s.in[0]), s.pool, y, lopt); break;
        case LayerKind::Add: residual_add_into(buf(s.in[0]), buf(s.in[1]), y, lopt); break;
        case LayerKind::Dense: {
            const std::span<const float> p(*s.dense_params);
            dense_into(buf(s.in[0]), p.first(s.dense_weights), p.subspan(s.dense_weights), y, s.dense_options);
            break;
        }
        case LayerKind::Input: break;
        }
        if (timed) (*report)[s.timing] += std::chrono::duration<double>(Clock::now() - t0).count();
    }
    if (report) {
        report->total_seconds = std::chrono::duration<double>(Clock::now() - start).count();
        report->batch = batch_;
    }
    return buffers_[static_cast<std::size_t>(output_buffer_)];
}

}  // namespace fuseconv

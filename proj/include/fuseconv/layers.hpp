#pragma once

// Non-convolution operators on NHWC tensors. The *_into forms write into a
// caller-owned output and may alias it with an input where noted.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuseconv/gemm.hpp"
#include "fuseconv/tensor.hpp"

namespace fuseconv {

struct LayerOptions {
    int threads = 1;
    simd::Isa isa = simd::best_isa();
};

inline constexpr float kDefaultBatchNormEps = 1e-5f;

struct BatchNormParams {
    std::vector<float> gamma, beta, mean, var;
    float eps = kDefaultBatchNormEps;

    std::size_t channels() const noexcept { return gamma.size(); }
    /// Throws ContractError on ragged arrays, ParameterError when var + eps <= 0.
    void validate() const;
};

/// y = scale * x + shift per channel.
struct FoldedBatchNorm {
    std::vector<float> scale, shift;
    std::size_t channels() const noexcept { return scale.size(); }
};

/// scale = gamma / sqrt(var + eps), shift = beta - scale * mean.
FoldedBatchNorm fold_batchnorm(const BatchNormParams& p);

/// y may alias x.
void batchnorm_inference_into(const Tensor& x, const FoldedBatchNorm& f, Tensor& y, const LayerOptions& opt = {});
Tensor batchnorm_inference(const Tensor& x, const FoldedBatchNorm& f, const LayerOptions& opt = {});

/// y = x > 0 ? x : 0. y may alias x.
void relu_into(const Tensor& x, Tensor& y, const LayerOptions& opt = {});
Tensor relu(const Tensor& x, const LayerOptions& opt = {});

enum class PoolMode { Max, Avg };

struct PoolDescriptor {
    PoolMode mode = PoolMode::Max;
    std::size_t kh = 2, kw = 2;
    std::size_t sh = 2, sw = 2;
    std::size_t ph = 0, pw = 0;
    /// Window covers the whole spatial extent; kh/kw/strides/padding ignored.
    bool global = false;

    static PoolDescriptor global_pool(PoolMode mode) {
        PoolDescriptor d;
        d.mode = mode;
        d.global = true;
        return d;
    }
    /// Concrete window for an input shape.
    PoolDescriptor resolve(const Shape& input) const;
};

std::string to_string(PoolMode m);
PoolMode parse_pool_mode(const std::string& text);

/// Throws GeometryError when the window does not fit or padding >= window.
Shape pool_output_shape(const Shape& input, const PoolDescriptor& d);

/// Max pooling ignores padded positions; average pooling divides by the
/// number of valid positions in each window. Reads only x[0, in.count()).
void pool_into(std::span<const float> x, const Shape& in, const PoolDescriptor& d, std::span<float> y,
               const LayerOptions& opt = {});
void pool_into(const Tensor& x, const PoolDescriptor& d, Tensor& y, const LayerOptions& opt = {});
Tensor pool(const Tensor& x, const PoolDescriptor& d, const LayerOptions& opt = {});

/// y may alias a or b.
void residual_add_into(const Tensor& a, const Tensor& b, Tensor& y, const LayerOptions& opt = {});
Tensor residual_add(const Tensor& a, const Tensor& b, const LayerOptions& opt = {});

/// Fully connected layer on x flattened to (t, h*w*c). w is (out, in)
/// row-major, bias has `out` entries; the result has shape (t, 1, 1, out).
struct DenseOptions {
    int threads = 1;
    simd::Isa isa = simd::best_isa();
    /// Blocking; when unset the runtime selection for the shape is used.
    std::optional<CacheSelection> selection;
    const CacheHierarchy* hw = nullptr;
};
void dense_into(const Tensor& x, std::span<const float> w, std::span<const float> bias, Tensor& y,
                const DenseOptions& opt = {});
Tensor dense(const Tensor& x, std::span<const float> w, std::span<const float> bias, const DenseOptions& opt = {});

/// Softmax over the channel dimension of every (b, y, x) position.
void softmax_into(const Tensor& x, Tensor& y, const LayerOptions& opt = {});
Tensor softmax(const Tensor& x, const LayerOptions& opt = {});

}  // namespace fuseconv

#include "fuseconv/layers.hpp"

#include <omp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "fuseconv/cache_params.hpp"
#include "gemm_driver.hpp"

namespace fuseconv {

namespace {

void require_nhwc(const Tensor& t, const char* what) {
    if (t.layout() != Layout::NHWC) throw ContractError(std::string(what) + " must be NHWC");
}

void require_shape(const Tensor& y, const Shape& s, const char* what) {
    require_nhwc(y, what);
    if (y.shape() != s) throw ContractError(std::string(what) + " has shape " + to_string(y.shape()) + ", expected " +
                                            to_string(s));
}

/// Runs body(begin, end) over [0, count) split into one contiguous chunk per
/// thread.
template <typename Body>
void parallel_chunks(std::size_t count, int threads, Body&& body) {
    const int nt = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(count, 1))));
    if (nt == 1) {
        body(std::size_t{0}, count);
        return;
    }
#pragma omp parallel num_threads(nt)
    {
        const auto [b, e] = detail::split_range(count, static_cast<std::size_t>(omp_get_num_threads()),
                                                static_cast<std::size_t>(omp_get_thread_num()));
        if (b < e) body(b, e);
    }
}

}  // namespace

void BatchNormParams::validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || mean.size() != c || var.size() != c)
        throw ContractError("batchnorm arrays must all have " + std::to_string(c) + " entries");
    for (std::size_t i = 0; i < c; ++i)
        if (!(static_cast<double>(var[i]) + eps > 0.0))
            throw ParameterError("batchnorm channel " + std::to_string(i) + ": var + eps = " +
                                 std::to_string(var[i] + eps) + " is not positive");
}

FoldedBatchNorm fold_batchnorm(const BatchNormParams& p) {
    p.validate();
    FoldedBatchNorm f;
    f.scale.resize(p.channels());
    f.shift.resize(p.channels());
    for (std::size_t i = 0; i < p.channels(); ++i) {
        // Folded once at load time, so do it in double and round once.
        const double scale = static_cast<double>(p.gamma[i]) / std::sqrt(static_cast<double>(p.var[i]) + p.eps);
        f.scale[i] = static_cast<float>(scale);
        f.shift[i] = static_cast<float>(p.beta[i] - scale * p.mean[i]);
    }
    return f;
}

void batchnorm_inference_into(const Tensor& x, const FoldedBatchNorm& f, Tensor& y, const LayerOptions& opt) {
    require_nhwc(x, "batchnorm input");
    require_shape(y, x.shape(), "batchnorm output");
    const std::size_t c = x.shape().c;
    if (f.channels() != c || f.shift.size() != c)
        throw ContractError("batchnorm has " + std::to_string(f.channels()) + " channels, input has " +
                            std::to_string(c));
    const auto& kt = simd::kernels(opt.isa);
    const float* src = x.data().data();
    float* dst = y.data().data();
    parallel_chunks(x.size() / c, opt.threads, [&](std::size_t b, std::size_t e) {
        kt.affine_channels(src + b * c, dst + b * c, e - b, c, f.scale.data(), f.shift.data());
    });
}

Tensor batchnorm_inference(const Tensor& x, const FoldedBatchNorm& f, const LayerOptions& opt) {
    Tensor y(x.shape());
    batchnorm_inference_into(x, f, y, opt);
    return y;
}

void relu_into(const Tensor& x, Tensor& y, const LayerOptions& opt) {
    require_nhwc(x, "relu input");
    require_shape(y, x.shape(), "relu output");
    const auto& kt = simd::kernels(opt.isa);
    const float* src = x.data().data();
    float* dst = y.data().data();
    parallel_chunks(x.size(), opt.threads, [&](std::size_t b, std::size_t e) { kt.relu(src + b, dst + b, e - b); });
}

Tensor relu(const Tensor& x, const LayerOptions& opt) {
    Tensor y(x.shape());
    relu_into(x, y, opt);
    return y;
}

std::string to_string(PoolMode m) { return m == PoolMode::Max ? "max" : "avg"; }

PoolMode parse_pool_mode(const std::string& text) {
    std::string s = text;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (s == "max") return PoolMode::Max;
    if (s == "avg" || s == "average" || s == "mean") return PoolMode::Avg;
    throw ConfigError("unknown pooling mode '" + text + "' (expected max or avg)");
}

PoolDescriptor PoolDescriptor::resolve(const Shape& input) const {
    if (!global) return *this;
    PoolDescriptor d = *this;
    d.global = false;
    d.kh = input.h;
    d.kw = input.w;
    d.sh = d.sw = 1;
    d.ph = d.pw = 0;
    return d;
}

Shape pool_output_shape(const Shape& input, const PoolDescriptor& desc) {
    input.count();
    const PoolDescriptor d = desc.resolve(input);
    if (d.kh == 0 || d.kw == 0 || d.sh == 0 || d.sw == 0) throw GeometryError("pool window and stride must be positive");
    if (d.ph >= d.kh || d.pw >= d.kw) throw GeometryError("pool padding must be smaller than the window");
    const std::size_t ho = window_output_extent(input.h, d.kh, d.sh, d.ph);
    const std::size_t wo = window_output_extent(input.w, d.kw, d.sw, d.pw);
    if (ho == 0 || wo == 0)
        throw GeometryError("pool window " + std::to_string(d.kh) + "x" + std::to_string(d.kw) + " does not fit input " +
                            to_string(input));
    return {input.t, ho, wo, input.c};
}

void pool_into(std::span<const float> x, const Shape& in, const PoolDescriptor& desc, std::span<float> y,
               const LayerOptions& opt) {
    const Shape out = pool_output_shape(in, desc);
    if (x.size() < in.count()) throw ContractError("pool input buffer smaller than its shape");
    if (y.size() < out.count()) throw ContractError("pool output buffer smaller than its shape");
    const PoolDescriptor d = desc.resolve(in);
    const std::size_t c = in.c;
    const bool is_max = d.mode == PoolMode::Max;
    const float* src = x.data();
    float* dst = y.data();

    parallel_chunks(out.t * out.h, opt.threads, [&](std::size_t rb, std::size_t re) {
        for (std::size_t row = rb; row < re; ++row) {
            const std::size_t b = row / out.h, oy = row % out.h;
            const long y0 = static_cast<long>(oy * d.sh) - static_cast<long>(d.ph);
            const std::size_t ylo = static_cast<std::size_t>(std::max(0L, y0));
            const std::size_t yhi = static_cast<std::size_t>(std::min(static_cast<long>(in.h), y0 + static_cast<long>(d.kh)));
            for (std::size_t ox = 0; ox < out.w; ++ox) {
                const long x0 = static_cast<long>(ox * d.sw) - static_cast<long>(d.pw);
                const std::size_t xlo = static_cast<std::size_t>(std::max(0L, x0));
                const std::size_t xhi =
                    static_cast<std::size_t>(std::min(static_cast<long>(in.w), x0 + static_cast<long>(d.kw)));
                float* o = dst + ((b * out.h + oy) * out.w + ox) * c;
                const float init = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
                std::fill(o, o + c, init);
                for (std::size_t iy = ylo; iy < yhi; ++iy)
                    for (std::size_t ix = xlo; ix < xhi; ++ix) {
                        const float* v = src + ((b * in.h + iy) * in.w + ix) * c;
                        if (is_max) {
                            for (std::size_t ch = 0; ch < c; ++ch) o[ch] = v[ch] > o[ch] ? v[ch] : o[ch];
                        } else {
                            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += v[ch];
                        }
                    }
                if (!is_max) {
                    const float inv = 1.0f / static_cast<float>((yhi - ylo) * (xhi - xlo));
                    for (std::size_t ch = 0; ch < c; ++ch) o[ch] *= inv;
                }
            }
        }
    });
}

void pool_into(const Tensor& x, const PoolDescriptor& d, Tensor& y, const LayerOptions& opt) {
    require_nhwc(x, "pool input");
    require_shape(y, pool_output_shape(x.shape(), d), "pool output");
    pool_into(x.data(), x.shape(), d, y.data(), opt);
}

Tensor pool(const Tensor& x, const PoolDescriptor& d, const LayerOptions& opt) {
    Tensor y(pool_output_shape(x.shape(), d));
    pool_into(x, d, y, opt);
    return y;
}

void residual_add_into(const Tensor& a, const Tensor& b, Tensor& y, const LayerOptions& opt) {
    require_nhwc(a, "add input");
    require_nhwc(b, "add input");
    if (a.shape() != b.shape())
        throw ContractError("residual add of " + to_string(a.shape()) + " and " + to_string(b.shape()));
    require_shape(y, a.shape(), "add output");
    const auto& kt = simd::kernels(opt.isa);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* dst = y.data().data();
    parallel_chunks(a.size(), opt.threads,
                    [&](std::size_t lo, std::size_t hi) { kt.add(pa + lo, pb + lo, dst + lo, hi - lo); });
}

Tensor residual_add(const Tensor& a, const Tensor& b, const LayerOptions& opt) {
    Tensor y(a.shape());
    residual_add_into(a, b, y, opt);
    return y;
}

void dense_into(const Tensor& x, std::span<const float> w, std::span<const float> bias, Tensor& y,
                const DenseOptions& opt) {
    require_nhwc(x, "dense input");
    const std::size_t t = x.shape().t, in = x.size() / t, out = bias.size();
    if (out == 0) throw ContractError("dense layer needs at least one output feature");
    if (w.size() != out * in)
        throw ContractError("dense weights have " + std::to_string(w.size()) + " entries, expected " +
                            std::to_string(out) + "x" + std::to_string(in));
    require_shape(y, Shape{t, 1, 1, out}, "dense output");

    // Y^T (out x t) = W (out x in) * X^T (in x t), accumulated onto the bias.
    float* dst = y.data().data();
    for (std::size_t b = 0; b < t; ++b) std::copy(bias.begin(), bias.end(), dst + b * out);
    const CacheHierarchy& hw = opt.hw ? *opt.hw : CacheHierarchy::host();
    GemmOptions g;
    const CacheSelection sel = opt.selection ? *opt.selection : select_cache_params(out, t, in, hw);
    g.params = sel.params;
    g.variant = sel.variant;
    g.threads = opt.threads;
    g.isa = opt.isa;
    g.hw = &hw;
    gemm(ConstMatrixView::row_major(w, out, in), ConstMatrixView::col_major(x.data(), in, t),
         MutMatrixView(y.data(), 0, out, t, 1, out), g);
}

Tensor dense(const Tensor& x, std::span<const float> w, std::span<const float> bias, const DenseOptions& opt) {
    Tensor y({x.shape().t, 1, 1, bias.size()});
    dense_into(x, w, bias, y, opt);
    return y;
}

void softmax_into(const Tensor& x, Tensor& y, const LayerOptions& opt) {
    require_nhwc(x, "softmax input");
    require_shape(y, x.shape(), "softmax output");
    const std::size_t c = x.shape().c;
    const float* src = x.data().data();
    float* dst = y.data().data();
    parallel_chunks(x.size() / c, opt.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t px = b; px < e; ++px) {
            const float* v = src + px * c;
            float* o = dst + px * c;
            const float mx = *std::max_element(v, v + c);
            float sum = 0.0f;
            for (std::size_t ch = 0; ch < c; ++ch) {
                o[ch] = std::exp(v[ch] - mx);
                sum += o[ch];
            }
            const float inv = 1.0f / sum;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] *= inv;
        }
    });
}

Tensor softmax(const Tensor& x, const LayerOptions& opt) {
    Tensor y(x.shape());
    softmax_into(x, y, opt);
    return y;
}

}  // namespace fuseconv

#include "fuseconv/convolution.hpp"

#include <omp.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <new>

#include "gemm_driver.hpp"

namespace fuseconv {

namespace {

bool is_pointwise(const ConvDescriptor& d) {
    return d.kh == 1 && d.kw == 1 && d.sh == 1 && d.sw == 1 && d.ph == 0 && d.pw == 0;
}

/// Output column q split into its batch image and top-left input corner.
struct ColumnOrigin {
    std::int64_t image;  // offset of image b in x
    std::int64_t y0;     // oh*sh - ph
    std::int64_t x0;     // ow*sw - pw
};

ColumnOrigin column_origin(std::size_t q, const ConvGeometry& g, const ConvDescriptor& d, const Shape& in) {
    const std::size_t ow = q % g.wo;
    const std::size_t oh = (q / g.wo) % g.ho;
    const std::size_t b = q / (g.wo * g.ho);
    return {static_cast<std::int64_t>(b * in.h * in.w * in.c),
            static_cast<std::int64_t>(oh * d.sh) - static_cast<std::int64_t>(d.ph),
            static_cast<std::int64_t>(ow * d.sw) - static_cast<std::int64_t>(d.pw)};
}

/// Copies column `q` of B rows [p0, p0 + count) to dst[0], dst[stride], ...
/// Runs of consecutive input channels are contiguous in x.
void gather_column(const float* x, const Shape& in, const ConvDescriptor& d, const ColumnOrigin& o, std::size_t p0,
                   std::size_t count, float* dst, std::size_t stride) {
    std::size_t p = p0;
    const std::size_t end = p0 + count;
    while (p < end) {
        const std::size_t ci = p % d.cin;
        const std::size_t rs = p / d.cin;
        const std::size_t run = std::min(d.cin - ci, end - p);
        const std::int64_t iy = o.y0 + static_cast<std::int64_t>(rs / d.kw);
        const std::int64_t ix = o.x0 + static_cast<std::int64_t>(rs % d.kw);
        if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(in.h) || ix >= static_cast<std::int64_t>(in.w)) {
            for (std::size_t i = 0; i < run; ++i) dst[i * stride] = 0.0f;
        } else {
            const float* src = x + o.image + (iy * static_cast<std::int64_t>(in.w) + ix) * in.c + ci;
            if (stride == 1) {
                std::memcpy(dst, src, run * sizeof(float));
            } else {
                for (std::size_t i = 0; i < run; ++i) dst[i * stride] = src[i];
            }
        }
        dst += run * stride;
        p += run;
    }
}

/// B operand of convGEMM: packs blocks of the virtual im2col matrix.
class Im2colBSource {
public:
    Im2colBSource(const Tensor& x, const ConvDescriptor& d, const ConvGeometry& g) : x_(x), d_(d), g_(g) {}

    class Packer {
    public:
        explicit Packer(const Im2colBSource& src) : src_(&src) {}

        void prepare_columns(std::size_t, std::size_t) {}

        /// Column origins are recomputed per micro-panel on the stack, so
        /// packing needs no memory beyond the packed block itself.
        std::size_t pack(std::size_t pc, std::size_t kcur, std::size_t jc, std::size_t ncur, std::size_t panel_begin,
                         std::size_t panel_end, float* dst) const {
            constexpr std::size_t nr = simd::kNr;
            const float* x = src_->x_.data().data();
            const Shape& in = src_->x_.shape();
            std::size_t written = 0;
            for (std::size_t q = panel_begin; q < panel_end; ++q) {
                float* out = dst + q * nr * kcur;
                const std::size_t cols = std::min(nr, ncur - q * nr);
                for (std::size_t l = 0; l < cols; ++l) {
                    const ColumnOrigin o = column_origin(jc + q * nr + l, src_->g_, src_->d_, in);
                    gather_column(x, in, src_->d_, o, pc, kcur, out + l, nr);
                }
                for (std::size_t l = cols; l < nr; ++l)
                    for (std::size_t p = 0; p < kcur; ++p) out[p * nr + l] = 0.0f;
                written += cols * kcur;
            }
            return written;
        }

    private:
        const Im2colBSource* src_;
    };

    Packer make_packer() const { return Packer(*this); }
    std::size_t scratch_bytes(std::size_t) const { return 0; }

private:
    const Tensor& x_;
    ConvDescriptor d_;
    ConvGeometry g_;
};

void check_operands(const Tensor& x, const Tensor& w, const ConvDescriptor& d) {
    if (x.layout() != Layout::NHWC) throw ContractError("convolution input must be NHWC");
    const Shape& ws = w.shape();
    if (ws.t != d.cout || ws.h != d.kh || ws.w != d.kw || ws.c != d.cin)
        throw GeometryError("filter tensor " + to_string(ws) + " does not match descriptor (cout, kh, kw, cin) = (" +
                            std::to_string(d.cout) + ", " + std::to_string(d.kh) + ", " + std::to_string(d.kw) +
                            ", " + std::to_string(d.cin) + ")");
}

GemmOptions gemm_options(const ConvOptions& opt) {
    GemmOptions g;
    g.params = opt.params;
    g.variant = opt.variant;
    g.epilogue = opt.epilogue;
    g.threads = opt.threads;
    g.isa = opt.isa;
    g.accumulate = false;
    g.hw = opt.hw;
    g.stats = opt.stats;
    return g;
}

void check_output(const Tensor& y, const Shape& expect) {
    if (y.shape() != expect || y.layout() != Layout::NHWC)
        throw ContractError("output tensor " + to_string(y.shape()) + " should be NHWC " + to_string(expect));
}

ConstMatrixView filter_matrix(const Tensor& w, const ConvGeometry& g) {
    return ConstMatrixView::row_major(w.data(), g.m, g.k);
}

MutMatrixView output_matrix(Tensor& y, const ConvGeometry& g) {
    return MutMatrixView(y.data(), 0, g.m, g.n, 1, g.m);
}

}  // namespace

std::string to_string(ConvAlgorithm a) { return a == ConvAlgorithm::Im2colGemm ? "im2col" : "convgemm"; }

ConvAlgorithm parse_algorithm(const std::string& text) {
    std::string s = text;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (s == "im2col" || s == "im2colgemm" || s == "im2col_gemm") return ConvAlgorithm::Im2colGemm;
    if (s == "convgemm" || s == "conv_gemm") return ConvAlgorithm::ConvGemm;
    throw ConfigError("unknown convolution algorithm '" + text + "' (expected im2col or convgemm)");
}

Im2colMapping::Im2colMapping(const Shape& input, const ConvDescriptor& d)
    : in_(input), d_(d), geom_(conv_output_geometry(d, input)) {}

std::int64_t Im2colMapping::source(std::size_t p, std::size_t q) const noexcept {
    const ColumnOrigin o = column_origin(q, geom_, d_, in_);
    const std::size_t ci = p % d_.cin, rs = p / d_.cin;
    const std::int64_t iy = o.y0 + static_cast<std::int64_t>(rs / d_.kw);
    const std::int64_t ix = o.x0 + static_cast<std::int64_t>(rs % d_.kw);
    if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(in_.h) || ix >= static_cast<std::int64_t>(in_.w))
        return -1;
    return o.image + (iy * static_cast<std::int64_t>(in_.w) + ix) * static_cast<std::int64_t>(in_.c) +
           static_cast<std::int64_t>(ci);
}

std::size_t im2col_bytes(const ConvDescriptor& d, const Shape& input) {
    const ConvGeometry g = conv_output_geometry(d, input);
    if (g.n != 0 && g.k > kUnlimitedBytes / sizeof(float) / g.n) return kUnlimitedBytes;
    return g.k * g.n * sizeof(float);
}

void im2col_into(const Tensor& x, const ConvDescriptor& d, std::span<float> out, int threads) {
    if (x.layout() != Layout::NHWC) throw ContractError("im2col input must be NHWC");
    const ConvGeometry g = conv_output_geometry(d, x.shape());
    if (out.size() < g.k * g.n) throw ContractError("im2col output buffer too small");
    const float* src = x.data().data();
    const Shape& in = x.shape();
    const auto n = static_cast<std::int64_t>(g.n);
#pragma omp parallel for num_threads(std::max(threads, 1)) schedule(static)
    for (std::int64_t q = 0; q < n; ++q) {
        const auto col = static_cast<std::size_t>(q);
        gather_column(src, in, d, column_origin(col, g, d, in), 0, g.k, out.data() + col * g.k, 1);
    }
}

Im2colMatrix im2col(const Tensor& x, const ConvDescriptor& d, int threads, std::size_t budget_bytes) {
    const ConvGeometry g = conv_output_geometry(d, x.shape());
    const std::size_t bytes = im2col_bytes(d, x.shape());
    if (bytes > budget_bytes) throw AllocationError("im2col matrix exceeds the memory budget", bytes);
    std::vector<float> data;
    try {
        data.resize(g.k * g.n);
    } catch (const std::bad_alloc&) {
        throw AllocationError("cannot allocate im2col matrix", bytes);
    } catch (const std::length_error&) {
        throw AllocationError("cannot allocate im2col matrix", bytes);
    }
    im2col_into(x, d, data, threads);
    return Im2colMatrix(g.k, g.n, std::move(data));
}

Shape conv_output_shape(const Tensor& x, const Tensor& w, const ConvDescriptor& d) {
    check_operands(x, w, d);
    const ConvGeometry g = conv_output_geometry(d, x.shape());
    return {x.shape().t, g.ho, g.wo, d.cout};
}

void conv_im2col_gemm_into(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt,
                           std::vector<float>& workspace, Tensor& y) {
    check_output(y, conv_output_shape(x, w, d));
    const ConvGeometry g = conv_output_geometry(d, x.shape());
    ConstMatrixView b;
    if (is_pointwise(d)) {
        b = ConstMatrixView::col_major(x.data(), g.k, g.n);
    } else {
        const std::size_t bytes = im2col_bytes(d, x.shape());
        if (bytes > opt.im2col_budget_bytes) throw AllocationError("im2col matrix exceeds the memory budget", bytes);
        if (workspace.size() < g.k * g.n) {
            try {
                workspace.resize(g.k * g.n);
            } catch (const std::bad_alloc&) {
                throw AllocationError("cannot allocate im2col matrix", bytes);
            }
        }
        if (opt.stats) opt.stats->aux_bytes += bytes;
        im2col_into(x, d, workspace, opt.threads);
        b = ConstMatrixView::col_major(std::span<const float>(workspace).first(g.k * g.n), g.k, g.n);
    }
    gemm(filter_matrix(w, g), b, output_matrix(y, g), gemm_options(opt));
}

void conv_gemm_into(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt, Tensor& y) {
    check_output(y, conv_output_shape(x, w, d));
    const ConvGeometry g = conv_output_geometry(d, x.shape());
    const GemmOptions go = gemm_options(opt);
    if (go.threads < 1) throw ConfigError("thread count must be at least 1");
    validate_params(go.params, go.variant, g.m, g.n, g.k, go.hw ? *go.hw : CacheHierarchy::host());
    go.epilogue.validate(g.m);
    detail::run_gemm(filter_matrix(w, g), Im2colBSource(x, d, g), g.k, g.n, output_matrix(y, g), go);
}

Tensor conv_im2col_gemm(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt) {
    Tensor y(conv_output_shape(x, w, d));
    std::vector<float> workspace;
    conv_im2col_gemm_into(x, w, d, opt, workspace, y);
    return y;
}

Tensor conv_gemm(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt) {
    Tensor y(conv_output_shape(x, w, d));
    conv_gemm_into(x, w, d, opt, y);
    return y;
}

Tensor convolve(ConvAlgorithm algo, const Tensor& x, const Tensor& w, const ConvDescriptor& d,
                const ConvOptions& opt) {
    return algo == ConvAlgorithm::Im2colGemm ? conv_im2col_gemm(x, w, d, opt) : conv_gemm(x, w, d, opt);
}

ConvAlgorithm choose_algorithm(const ConvDescriptor& d, const Shape& input) {
    conv_output_geometry(d, input);
    return d.kh * d.kw == 1 && d.cout <= kIm2colMaxCout ? ConvAlgorithm::Im2colGemm : ConvAlgorithm::ConvGemm;
}

}  // namespace fuseconv

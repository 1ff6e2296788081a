#include "fuseconv/gemm.hpp"

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <sstream>

#include "gemm_driver.hpp"

namespace fuseconv {

CacheHierarchy CacheHierarchy::carmel() { return CacheHierarchy{}; }

const CacheHierarchy& CacheHierarchy::host() {
    static const CacheHierarchy hw = [] {
        CacheHierarchy h = carmel();
        auto query = [](int name) -> long {
#ifdef _SC_LEVEL1_DCACHE_SIZE
            return sysconf(name);
#else
            (void)name;
            return 0;
#endif
        };
#ifdef _SC_LEVEL1_DCACHE_SIZE
        if (long v = query(_SC_LEVEL1_DCACHE_SIZE); v > 0) h.l1_bytes = static_cast<std::size_t>(v);
        if (long v = query(_SC_LEVEL1_DCACHE_ASSOC); v > 0) h.l1_assoc = static_cast<unsigned>(v);
        if (long v = query(_SC_LEVEL1_DCACHE_LINESIZE); v > 0) h.line_bytes = static_cast<std::size_t>(v);
        if (long v = query(_SC_LEVEL2_CACHE_SIZE); v > 0) h.l2_bytes = static_cast<std::size_t>(v);
        if (long v = query(_SC_LEVEL2_CACHE_ASSOC); v > 0) h.l2_assoc = static_cast<unsigned>(v);
        h.l3_bytes = 0;
        h.l3_assoc = 0;
        if (long v = query(_SC_LEVEL3_CACHE_SIZE); v > 0 && static_cast<std::size_t>(v) > h.l2_bytes) {
            h.l3_bytes = static_cast<std::size_t>(v);
            if (long a = query(_SC_LEVEL3_CACHE_ASSOC); a > 0) h.l3_assoc = static_cast<unsigned>(a);
        }
#endif
        if (h.l2_bytes <= h.l1_bytes) h.l2_bytes = carmel().l2_bytes;
        return h;
    }();
    return hw;
}

void CacheHierarchy::validate() const {
    if (l1_bytes == 0 || l2_bytes == 0) throw ConfigError("cache hierarchy needs non-zero L1 and L2 sizes");
    if (l2_bytes <= l1_bytes) throw ConfigError("cache sizes must increase from L1 to L2");
    if (l3_bytes != 0 && l3_bytes <= l2_bytes) throw ConfigError("cache sizes must increase from L2 to L3");
}

std::string to_string(const GemmCacheParams& p) {
    std::ostringstream os;
    os << p.mc << ',' << p.nc << ',' << p.kc << ',' << p.mr << ',' << p.nr;
    return os.str();
}

GemmCacheParams parse_params(const std::string& text) {
    std::vector<std::size_t> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const unsigned long long x = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            v.push_back(static_cast<std::size_t>(x));
        } catch (const std::exception&) {
            throw ConfigError("cache parameters '" + text + "': '" + item + "' is not a non-negative integer");
        }
    }
    if (v.size() != 5) throw ConfigError("cache parameters '" + text + "' must be mc,nc,kc,mr,nr");
    return {v[0], v[1], v[2], v[3], v[4]};
}

std::string to_string(LoopVariant v) { return v == LoopVariant::A2B1 ? "a2b1" : "b2a1"; }

LoopVariant parse_variant(const std::string& text) {
    std::string s = text;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (s == "a2b1") return LoopVariant::A2B1;
    if (s == "b2a1") return LoopVariant::B2A1;
    throw ConfigError("unknown loop variant '" + text + "' (expected a2b1 or b2a1)");
}

void Epilogue::validate(std::size_t m) const {
    if (!uses_coefficients()) return;
    if (scale.size() != m || shift.size() != m)
        throw ContractError("batchnorm epilogue has " + std::to_string(scale.size()) + "/" +
                            std::to_string(shift.size()) + " coefficients for " + std::to_string(m) + " rows");
}

PackedBuffer::PackedBuffer(Side side, std::size_t panel, std::size_t rows, std::size_t cols)
    : side_(side), panel_(panel), rows_(rows), cols_(cols) {
    if (panel == 0) throw ConfigError("packing panel width must be positive");
    data_.assign(panels() * panel_ * (side_ == Side::A ? cols_ : rows_), 0.0f);
}

std::size_t PackedBuffer::panels() const noexcept {
    const std::size_t extent = side_ == Side::A ? rows_ : cols_;
    return detail::ceil_div(extent, panel_);
}

std::size_t PackedBuffer::offset(std::size_t i, std::size_t j) const noexcept {
    if (side_ == Side::A) return (i / panel_) * panel_ * cols_ + j * panel_ + i % panel_;
    return (j / panel_) * panel_ * rows_ + i * panel_ + j % panel_;
}

PackedBuffer pack_a(ConstMatrixView src, std::size_t mr) {
    PackedBuffer out(PackedBuffer::Side::A, mr, src.rows(), src.cols());
    float* dst = out.data().data();
    for (std::size_t q = 0; q < out.panels(); ++q)
        for (std::size_t p = 0; p < src.cols(); ++p)
            for (std::size_t l = 0; l < mr; ++l) {
                const std::size_t i = q * mr + l;
                *dst++ = i < src.rows() ? src(i, p) : 0.0f;
            }
    return out;
}

PackedBuffer pack_b(ConstMatrixView src, std::size_t nr) {
    PackedBuffer out(PackedBuffer::Side::B, nr, src.rows(), src.cols());
    float* dst = out.data().data();
    for (std::size_t q = 0; q < out.panels(); ++q)
        for (std::size_t p = 0; p < src.rows(); ++p)
            for (std::size_t l = 0; l < nr; ++l) {
                const std::size_t j = q * nr + l;
                *dst++ = j < src.cols() ? src(p, j) : 0.0f;
            }
    return out;
}

void validate_params(const GemmCacheParams& p, LoopVariant variant, std::size_t m, std::size_t n, std::size_t k,
                     const CacheHierarchy& hw) {
    if (p.mr != simd::kMr || p.nr != simd::kNr)
        throw ConfigError("register block " + std::to_string(p.mr) + "x" + std::to_string(p.nr) +
                          " unsupported; the micro-kernel is 8x8");
    if (p.mc == 0 || p.nc == 0 || p.kc == 0) throw ConfigError("cache parameters must be positive: " + to_string(p));
    if (p.mc % p.mr != 0) throw ConfigError("mc=" + std::to_string(p.mc) + " is not a multiple of mr");
    if (p.nc % p.nr != 0) throw ConfigError("nc=" + std::to_string(p.nc) + " is not a multiple of nr");

    const auto eff = detail::effective_blocking(p, m, n, k);
    const std::size_t panel_bytes = eff.kc * std::max(p.mr, p.nr) * sizeof(float);
    if (panel_bytes > hw.l1_bytes)
        throw ConfigError("kc=" + std::to_string(eff.kc) + " micro-panels (" + std::to_string(panel_bytes) +
                          " bytes) exceed L1 (" + std::to_string(hw.l1_bytes) + " bytes)");
    const std::size_t l2_block =
        (variant == LoopVariant::A2B1 ? eff.mc * eff.kc : eff.kc * eff.nc) * sizeof(float);
    if (l2_block > hw.l2_bytes)
        throw ConfigError(std::string(variant == LoopVariant::A2B1 ? "Ac" : "Bc") + " block of " +
                          std::to_string(l2_block) + " bytes exceeds L2 (" + std::to_string(hw.l2_bytes) +
                          " bytes) with params " + to_string(p));
}

std::size_t packing_buffer_bytes(const GemmCacheParams& p, LoopVariant variant, std::size_t m, std::size_t n,
                                 std::size_t k, int threads) {
    const auto eff = detail::effective_blocking(p, m, n, k);
    const std::size_t t = static_cast<std::size_t>(std::max(threads, 1));
    const std::size_t a = eff.mc * eff.kc, b = eff.kc * eff.nc;
    return (variant == LoopVariant::A2B1 ? b + t * a : a + t * b) * sizeof(float);
}

namespace detail {

void apply_epilogue_only(MutMatrixView c, const Epilogue& ep, bool accumulate) {
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j) {
            float v = accumulate ? c(i, j) : 0.0f;
            switch (ep.kind) {
            case EpilogueKind::None:
                break;
            case EpilogueKind::Relu:
                v = v > 0.0f ? v : 0.0f;
                break;
            case EpilogueKind::BatchNorm:
                v = ep.scale[i] * v + ep.shift[i];
                break;
            case EpilogueKind::BatchNormRelu:
                v = ep.scale[i] * v + ep.shift[i];
                v = v > 0.0f ? v : 0.0f;
                break;
            }
            c(i, j) = v;
        }
}

}  // namespace detail

void gemm(ConstMatrixView a, ConstMatrixView b, MutMatrixView c, const GemmOptions& opt) {
    if (a.cols() != b.rows() || a.rows() != c.rows() || b.cols() != c.cols())
        throw ContractError("gemm dimensions do not conform: A " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", B " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + ", C " + std::to_string(c.rows()) + "x" +
                            std::to_string(c.cols()));
    if (opt.threads < 1) throw ConfigError("gemm needs at least one thread");
    validate_params(opt.params, opt.variant, a.rows(), b.cols(), a.cols(), opt.hw ? *opt.hw : CacheHierarchy::host());
    opt.epilogue.validate(c.rows());
    detail::run_gemm(a, detail::MatrixBSource(b), a.cols(), b.cols(), c, opt);
}

void microkernel(std::span<const float> ar, std::span<const float> br, MutMatrixView cr, std::size_t kc,
                 bool accumulate, const Epilogue& ep, bool apply_epilogue, std::size_t row0, simd::Isa isa) {
    if (cr.rows() > simd::kMr || cr.cols() > simd::kNr)
        throw ContractError("micro-tile larger than 8x8");
    if (ar.size() < kc * simd::kMr || br.size() < kc * simd::kNr)
        throw ContractError("packed micro-panels shorter than kc");
    simd::TileEpilogue te;
    if (apply_epilogue && ep.kind != EpilogueKind::None) {
        te.kind = ep.kind;
        if (ep.uses_coefficients()) {
            if (ep.scale.size() < row0 + cr.rows() || ep.shift.size() < row0 + cr.rows())
                throw ContractError("epilogue coefficients do not cover the micro-tile rows");
            te.scale = ep.scale.data() + row0;
            te.shift = ep.shift.data() + row0;
        }
    }
    if (cr.rows() == 0 || cr.cols() == 0) return;
    simd::kernels(isa).gemm_8x8(kc, ar.data(), br.data(), cr.data(), cr.row_stride(), cr.col_stride(), cr.rows(),
                                cr.cols(), accumulate, te);
}

}  // namespace fuseconv

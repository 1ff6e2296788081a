#pragma once

// Test-only reference implementations. Deliberately naive and independent of
// the library's packing, blocking and kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "fuseconv/tensor.hpp"

namespace oracle {

/// Distance in units in the last place between two finite floats.
inline std::int64_t ulp_distance(float a, float b) {
    if (a == b) return 0;
    if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<std::int64_t>::max();
    auto ordered = [](float f) {
        std::int32_t i;
        std::memcpy(&i, &f, sizeof i);
        return i < 0 ? static_cast<std::int64_t>(std::numeric_limits<std::int32_t>::min()) - i
                     : static_cast<std::int64_t>(i);
    };
    const std::int64_t d = ordered(a) - ordered(b);
    return d < 0 ? -d : d;
}

inline std::int64_t max_ulp(std::span<const float> a, std::span<const float> b) {
    std::int64_t worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, ulp_distance(a[i], b[i]));
    return worst;
}

/// ||a - b||_F / ||b||_F (0 when both are zero).
inline double rel_frobenius(std::span<const float> a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        num += d * d;
        den += b[i] * b[i];
    }
    if (den == 0.0) return std::sqrt(num);
    return std::sqrt(num / den);
}

inline double rel_frobenius(std::span<const float> a, std::span<const float> b) {
    std::vector<double> bd(b.begin(), b.end());
    return rel_frobenius(a, std::span<const double>(bd));
}

/// Triple loop in double precision. A row-major m x k, B row-major k x n,
/// result row-major m x n.
inline std::vector<double> matmul(std::span<const float> a, std::span<const float> b, std::size_t m, std::size_t n,
                                  std::size_t k) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

/// Number of sliding-window positions along one axis, by enumeration.
inline std::size_t count_windows(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad) {
    std::size_t count = 0;
    for (long start = -static_cast<long>(pad); start + static_cast<long>(window) <= static_cast<long>(in + pad);
         start += static_cast<long>(stride))
        ++count;
    return count;
}

/// Seven-loop direct convolution in double. x NHWC (t,h,w,cin), w
/// (cout,kh,kw,cin); result NHWC (t,ho,wo,cout).
inline std::vector<double> direct_conv(const fuseconv::Tensor& x, std::span<const float> w,
                                       const fuseconv::ConvDescriptor& d, std::size_t& ho, std::size_t& wo) {
    const auto& s = x.shape();
    ho = count_windows(s.h, d.kh, d.sh, d.ph);
    wo = count_windows(s.w, d.kw, d.sw, d.pw);
    std::vector<double> out(s.t * ho * wo * d.cout, 0.0);
    for (std::size_t b = 0; b < s.t; ++b)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox)
                for (std::size_t co = 0; co < d.cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < d.kh; ++r)
                        for (std::size_t q = 0; q < d.kw; ++q) {
                            const long iy = static_cast<long>(oy * d.sh + r) - static_cast<long>(d.ph);
                            const long ix = static_cast<long>(ox * d.sw + q) - static_cast<long>(d.pw);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w))
                                continue;
                            for (std::size_t ci = 0; ci < d.cin; ++ci)
                                acc += static_cast<double>(x.at(b, iy, ix, ci)) *
                                       w[((co * d.kh + r) * d.kw + q) * d.cin + ci];
                        }
                    out[((b * ho + oy) * wo + ox) * d.cout + co] = acc;
                }
    return out;
}

/// Integer-valued random data in [-range, range]; products and sums stay
/// exact in single precision for the sizes used in tests.
inline void fill_integers(std::span<float> out, std::uint64_t seed, int range) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> dist(-range, range);
    for (float& v : out) v = static_cast<float>(dist(gen));
}

}  // namespace oracle

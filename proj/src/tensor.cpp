#include "fuseconv/tensor.hpp"

#include <algorithm>
#include <limits>
#include <random>

namespace fuseconv {

std::string to_string(Layout layout) { return layout == Layout::NHWC ? "NHWC" : "NCHW"; }

std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.t) + "," + std::to_string(s.h) + "," + std::to_string(s.w) + "," +
           std::to_string(s.c) + ")";
}

std::size_t Shape::count() const {
    constexpr std::size_t max = std::numeric_limits<std::size_t>::max() / sizeof(float);
    std::size_t n = 1;
    for (std::size_t e : {t, h, w, c}) {
        if (e == 0) throw GeometryError("zero extent in shape " + to_string(*this));
        if (n > max / e) throw GeometryError("shape " + to_string(*this) + " overflows the element count");
        n *= e;
    }
    return n;
}

void fill_uniform(std::span<float> out, std::uint64_t seed, float lo, float hi) {
    std::mt19937_64 gen(seed);
    const float width = hi - lo;
    for (float& v : out) {
        // 24 random mantissa bits -> [0, 1)
        const float u = static_cast<float>(gen() >> 40) * 0x1.0p-24f;
        v = lo + width * u;
    }
}

Tensor::Tensor(Shape shape, Layout layout) : shape_(shape), layout_(layout), data_(shape.count(), 0.0f) {}

Tensor make_tensor(Shape shape, Layout layout, Fill fill) {
    Tensor t(shape, layout);
    auto data = t.data();
    switch (fill.kind) {
    case Fill::Kind::Zeros:
        break;
    case Fill::Kind::Constant:
        std::fill(data.begin(), data.end(), fill.value);
        break;
    case Fill::Kind::Sequence:
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i);
        break;
    case Fill::Kind::Random:
        fill_uniform(data, fill.seed, -1.0f, 1.0f);
        break;
    }
    return t;
}

Tensor convert_layout(const Tensor& t, Layout target) {
    if (t.empty()) throw GeometryError("convert_layout on an empty tensor");
    Tensor out(t.shape(), target);
    if (t.layout() == target) {
        std::copy(t.data().begin(), t.data().end(), out.data().begin());
        return out;
    }
    const Shape& s = t.shape();
    for (std::size_t b = 0; b < s.t; ++b)
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t x = 0; x < s.w; ++x)
                for (std::size_t ch = 0; ch < s.c; ++ch) out.at(b, y, x, ch) = t.at(b, y, x, ch);
    return out;
}

std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad) {
    if (stride == 0 || window == 0) return 0;
    const std::size_t padded = in + 2 * pad;
    if (padded < window) return 0;
    return (padded - window) / stride + 1;
}

ConvGeometry conv_output_geometry(const ConvDescriptor& d, const Shape& input) {
    if (d.kh == 0 || d.kw == 0 || d.sh == 0 || d.sw == 0 || d.cin == 0 || d.cout == 0)
        throw GeometryError("convolution descriptor has a zero kernel, stride or channel count");
    input.count();
    if (input.c != d.cin)
        throw GeometryError("input has " + std::to_string(input.c) + " channels, convolution expects " +
                            std::to_string(d.cin));
    ConvGeometry g;
    g.ho = window_output_extent(input.h, d.kh, d.sh, d.ph);
    g.wo = window_output_extent(input.w, d.kw, d.sw, d.pw);
    if (g.ho == 0 || g.wo == 0)
        throw GeometryError("convolution " + std::to_string(d.kh) + "x" + std::to_string(d.kw) + " stride " +
                            std::to_string(d.sh) + " pad " + std::to_string(d.ph) + " on input " +
                            to_string(input) + " has a non-positive output extent");
    g.m = d.cout;
    g.k = d.cin * d.kh * d.kw;
    g.n = input.t * g.ho * g.wo;
    return g;
}

}  // namespace fuseconv

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fuseconv/error.hpp"

namespace fuseconv {

enum class Layout { NHWC, NCHW };

std::string to_string(Layout layout);

/// Extents of a 4-D activation or filter tensor. For filters the fields are
/// read as (cout, kh, kw, cin).
struct Shape {
    std::size_t t = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;

    /// Element count; throws GeometryError on a zero extent or overflow.
    std::size_t count() const;
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Fill policy for make_tensor.
struct Fill {
    enum class Kind { Zeros, Constant, Sequence, Random };
    Kind kind = Kind::Zeros;
    float value = 0.0f;
    std::uint64_t seed = 0;

    static Fill zeros() { return {}; }
    static Fill constant(float v) { return {Kind::Constant, v, 0}; }
    static Fill sequence() { return {Kind::Sequence, 0.0f, 0}; }
    /// Uniform in [-1, 1), deterministic in the seed.
    static Fill random(std::uint64_t seed) { return {Kind::Random, 0.0f, seed}; }
};

/// Fills `out` with values uniform in [lo, hi) drawn from a seeded mt19937_64.
/// The float conversion is done by hand so the stream is identical across
/// standard library implementations.
void fill_uniform(std::span<float> out, std::uint64_t seed, float lo, float hi);

/// Dense single-precision 4-D tensor with an explicit layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Layout layout = Layout::NHWC);

    const Shape& shape() const noexcept { return shape_; }
    Layout layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() & noexcept { return data_; }
    std::span<const float> data() const& noexcept { return data_; }
    /// A view into a temporary would dangle.
    std::span<const float> data() const&& = delete;

    /// Linear offset of logical element (b, y, x, ch) under the tensor's layout.
    std::size_t index(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
        if (layout_ == Layout::NHWC) return ((b * shape_.h + y) * shape_.w + x) * shape_.c + ch;
        return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }
    float& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) noexcept {
        return data_[index(b, y, x, ch)];
    }
    float at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
        return data_[index(b, y, x, ch)];
    }

private:
    Shape shape_{};
    Layout layout_ = Layout::NHWC;
    std::vector<float> data_;
};

Tensor make_tensor(Shape shape, Layout layout, Fill fill);

/// Returns a copy of `t` stored in `target` layout. Identity copy when the
/// layouts already agree.
Tensor convert_layout(const Tensor& t, Layout target);

/// Strided 2-D window over a buffer the view does not own.
template <typename T>
class MatrixView {
public:
    MatrixView() = default;

    MatrixView(std::span<T> buffer, std::size_t offset, std::size_t rows, std::size_t cols,
               std::size_t row_stride, std::size_t col_stride)
        : data_(buffer.data() + offset), rows_(rows), cols_(cols), rs_(row_stride), cs_(col_stride) {
        if (rows == 0 || cols == 0) return;
        const std::size_t last = offset + (rows - 1) * row_stride + (cols - 1) * col_stride;
        if (offset > buffer.size() || last >= buffer.size())
            throw ContractError("matrix view of " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " exceeds its buffer of " + std::to_string(buffer.size()) + " elements");
    }

    static MatrixView row_major(std::span<T> buffer, std::size_t rows, std::size_t cols) {
        return MatrixView(buffer, 0, rows, cols, cols, 1);
    }
    static MatrixView col_major(std::span<T> buffer, std::size_t rows, std::size_t cols) {
        return MatrixView(buffer, 0, rows, cols, 1, rows);
    }

    T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * rs_ + j * cs_]; }

    T* data() const noexcept { return data_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t row_stride() const noexcept { return rs_; }
    std::size_t col_stride() const noexcept { return cs_; }

    /// Sub-block starting at (i0, j0); the caller keeps it inside the parent.
    MatrixView block(std::size_t i0, std::size_t j0, std::size_t rows, std::size_t cols) const noexcept {
        MatrixView v;
        v.data_ = data_ + i0 * rs_ + j0 * cs_;
        v.rows_ = rows;
        v.cols_ = cols;
        v.rs_ = rs_;
        v.cs_ = cs_;
        return v;
    }

    operator MatrixView<const T>() const noexcept
        requires(!std::is_const_v<T>)
    {
        return MatrixView<const T>::from_raw(data_, rows_, cols_, rs_, cs_);
    }

    static MatrixView from_raw(T* data, std::size_t rows, std::size_t cols, std::size_t rs,
                               std::size_t cs) noexcept {
        MatrixView v;
        v.data_ = data;
        v.rows_ = rows;
        v.cols_ = cols;
        v.rs_ = rs;
        v.cs_ = cs;
        return v;
    }

private:
    T* data_ = nullptr;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t rs_ = 0;
    std::size_t cs_ = 0;
};

using ConstMatrixView = MatrixView<const float>;
using MutMatrixView = MatrixView<float>;

/// Convolution geometry. Filters are stored (cout, kh, kw, cin); dilation is 1.
struct ConvDescriptor {
    std::size_t kh = 1, kw = 1;
    std::size_t sh = 1, sw = 1;
    std::size_t ph = 0, pw = 0;
    std::size_t cin = 1;
    std::size_t cout = 1;
};

/// Output extents and the GEMM problem of the lowered convolution:
/// m = cout, k = cin*kh*kw, n = t*ho*wo.
struct ConvGeometry {
    std::size_t ho = 0, wo = 0;
    std::size_t m = 0, n = 0, k = 0;
};

/// One spatial axis: floor((in + 2*pad - window) / stride) + 1, or 0 when the
/// window does not fit.
std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad);

ConvGeometry conv_output_geometry(const ConvDescriptor& d, const Shape& input);

}  // namespace fuseconv

#pragma once

// Cache-blocked GEMM, C (+)= A * B, organised as five loops around an 8x8
// register micro-kernel with packed copies of A and B.
//
//   A2B1 (default):            B2A1 (swapped cache targets):
//     jc  step nc                ic  step mc
//      pc step kc  pack Bc        pc step kc  pack Ac
//       ic step mc pack Ac         jc step nc pack Bc
//        jr step nr                 ir step mr
//         ir step mr                 jr step nr
//          micro-kernel               micro-kernel
//
// A2B1 keeps Ac resident in L2 and streams Br micro-panels through L1; B2A1
// keeps Bc in L2 and an Ar micro-panel in L1, which suits the short-and-wide
// products of early convolution layers.

#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fuseconv/kernels.hpp"
#include "fuseconv/tensor.hpp"

namespace fuseconv {

using simd::EpilogueKind;

/// Data cache sizes in bytes (l3_bytes == 0 when there is no L3).
struct CacheHierarchy {
    std::size_t l1_bytes = 64 * 1024;
    std::size_t l2_bytes = 2 * 1024 * 1024;
    std::size_t l3_bytes = 0;
    std::size_t line_bytes = 64;
    unsigned l1_assoc = 4;
    unsigned l2_assoc = 16;
    unsigned l3_assoc = 0;

    /// NVIDIA Carmel: 64 KiB L1D, 2 MiB L2, no L3.
    static CacheHierarchy carmel();
    /// Queried from the OS, falling back to carmel() for missing levels.
    static const CacheHierarchy& host();

    /// Throws ConfigError unless sizes strictly increase across present levels.
    void validate() const;
    bool operator==(const CacheHierarchy&) const = default;
};

struct GemmCacheParams {
    std::size_t mc = 560;
    std::size_t nc = 3072;
    std::size_t kc = 368;
    std::size_t mr = simd::kMr;
    std::size_t nr = simd::kNr;

    bool operator==(const GemmCacheParams&) const = default;
};

std::string to_string(const GemmCacheParams& p);
/// Parses "mc,nc,kc,mr,nr".
GemmCacheParams parse_params(const std::string& text);

enum class LoopVariant { A2B1, B2A1 };

std::string to_string(LoopVariant v);
/// Accepts "a2b1"/"b2a1" in either case.
LoopVariant parse_variant(const std::string& text);

struct CacheSelection {
    GemmCacheParams params;
    LoopVariant variant = LoopVariant::A2B1;
    bool operator==(const CacheSelection&) const = default;
};

/// Post-operation fused into the last kc block of the GEMM. Row i of C uses
/// scale[i]/shift[i]; for a lowered convolution a row is an output channel.
struct Epilogue {
    EpilogueKind kind = EpilogueKind::None;
    std::span<const float> scale;
    std::span<const float> shift;

    static Epilogue none() { return {}; }
    static Epilogue relu() { return {EpilogueKind::Relu, {}, {}}; }
    static Epilogue batchnorm(std::span<const float> scale, std::span<const float> shift) {
        return {EpilogueKind::BatchNorm, scale, shift};
    }
    static Epilogue batchnorm_relu(std::span<const float> scale, std::span<const float> shift) {
        return {EpilogueKind::BatchNormRelu, scale, shift};
    }

    bool uses_coefficients() const {
        return kind == EpilogueKind::BatchNorm || kind == EpilogueKind::BatchNormRelu;
    }
    /// Throws ContractError when batchnorm coefficients do not cover m rows.
    void validate(std::size_t m) const;
};

/// Packed operand block. A blocks are cut into micro-panels of `panel` rows
/// stored column by column; B blocks into micro-panels of `panel` columns
/// stored row by row. Ragged edge panels are zero padded.
class PackedBuffer {
public:
    enum class Side { A, B };

    PackedBuffer(Side side, std::size_t panel, std::size_t rows, std::size_t cols);

    Side side() const noexcept { return side_; }
    std::size_t panel() const noexcept { return panel_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t panels() const noexcept;
    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    /// Offset of logical element (i, j) inside data().
    std::size_t offset(std::size_t i, std::size_t j) const noexcept;

private:
    Side side_;
    std::size_t panel_;
    std::size_t rows_;
    std::size_t cols_;
    std::vector<float> data_;
};

PackedBuffer pack_a(ConstMatrixView src, std::size_t mr);
PackedBuffer pack_b(ConstMatrixView src, std::size_t nr);

/// Counters filled in by gemm / convolution when GemmOptions::stats is set.
struct GemmStats {
    std::atomic<std::size_t> pack_allocations{0};
    std::atomic<std::size_t> pack_bytes{0};
    /// Index tables and other non-packing scratch.
    std::atomic<std::size_t> aux_bytes{0};
    /// Elements of B materialised by packing (gathered from the source).
    std::atomic<std::size_t> packed_b_elements{0};
    /// Output elements that had the epilogue applied.
    std::atomic<std::size_t> epilogue_elements{0};
    /// Micro-kernel calls made with the epilogue enabled.
    std::atomic<std::size_t> epilogue_tiles{0};

    std::size_t total_aux_bytes() const { return pack_bytes + aux_bytes; }
};

struct GemmOptions {
    GemmCacheParams params{};
    LoopVariant variant = LoopVariant::A2B1;
    Epilogue epilogue{};
    int threads = 1;
    simd::Isa isa = simd::best_isa();
    /// false: C = A*B instead of C += A*B.
    bool accumulate = true;
    /// Cache budgets used to validate params; nullptr means the host.
    const CacheHierarchy* hw = nullptr;
    GemmStats* stats = nullptr;
};

/// Throws ConfigError when the blocking cannot be used for an m x n x k
/// product: register block other than 8x8, mc/nc not multiples of mr/nr, or
/// packed panels/blocks that overflow their target cache level.
void validate_params(const GemmCacheParams& p, LoopVariant variant, std::size_t m, std::size_t n, std::size_t k,
                     const CacheHierarchy& hw);

/// Bytes of packing buffers one gemm call allocates.
std::size_t packing_buffer_bytes(const GemmCacheParams& p, LoopVariant variant, std::size_t m, std::size_t n,
                                 std::size_t k, int threads);

/// C (+)= A * B with the epilogue applied exactly once per element of C.
/// Results are bitwise independent of `threads`, the ISA and the loop
/// variant; they depend on params only through kc.
void gemm(ConstMatrixView a, ConstMatrixView b, MutMatrixView c, const GemmOptions& opt);

/// One micro-kernel call on packed panels: cr (+)= ar * br over kc, then the
/// epilogue when apply_epilogue is set. `row0` is the GEMM row of cr(0, 0),
/// used to index epilogue coefficients.
void microkernel(std::span<const float> ar, std::span<const float> br, MutMatrixView cr, std::size_t kc,
                 bool accumulate, const Epilogue& ep, bool apply_epilogue, std::size_t row0 = 0,
                 simd::Isa isa = simd::best_isa());

}  // namespace fuseconv

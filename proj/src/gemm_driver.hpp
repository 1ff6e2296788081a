#pragma once

// Loop nest shared by gemm() and the convolution routines. The B operand is
// abstracted as a source that packs kc x nc blocks, so convGEMM can gather
// straight from the input tensor instead of a materialised im2col matrix.
//
// A BSource provides
//   Packer make_packer() const;
//   std::size_t scratch_bytes(std::size_t nc) const;   // per packer
// and a Packer provides
//   void prepare_columns(std::size_t jc, std::size_t ncur);
//   std::size_t pack(std::size_t pc, std::size_t kcur, std::size_t jc, std::size_t ncur,
//                    std::size_t panel_begin, std::size_t panel_end, float* dst) const;
// where pack writes micro-panels [panel_begin, panel_end) of the block in the
// PackedBuffer B layout and returns the number of logical elements written.

#include <omp.h>

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "aligned_buffer.hpp"
#include "fuseconv/gemm.hpp"

namespace fuseconv::detail {

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }
inline std::size_t round_up(std::size_t a, std::size_t b) { return ceil_div(a, b) * b; }

/// Contiguous share [begin, end) of `count` items for worker `tid` of `nt`.
inline std::pair<std::size_t, std::size_t> split_range(std::size_t count, std::size_t nt, std::size_t tid) {
    const std::size_t base = count / nt, extra = count % nt;
    const std::size_t begin = tid * base + std::min(tid, extra);
    return {begin, begin + base + (tid < extra ? 1 : 0)};
}

/// Packs micro-panels [panel_begin, panel_end) of the mcur x kcur block of A at
/// (i0, p0).
inline void pack_a_panels(ConstMatrixView a, std::size_t i0, std::size_t p0, std::size_t mcur, std::size_t kcur,
                          std::size_t panel_begin, std::size_t panel_end, float* dst) {
    constexpr std::size_t mr = simd::kMr;
    for (std::size_t q = panel_begin; q < panel_end; ++q) {
        float* out = dst + q * mr * kcur;
        const std::size_t rows = std::min(mr, mcur - q * mr);
        const std::size_t ibase = i0 + q * mr;
        for (std::size_t p = 0; p < kcur; ++p) {
            std::size_t l = 0;
            for (; l < rows; ++l) out[l] = a(ibase + l, p0 + p);
            for (; l < mr; ++l) out[l] = 0.0f;
            out += mr;
        }
    }
}

/// B operand held in memory as a strided matrix.
class MatrixBSource {
public:
    explicit MatrixBSource(ConstMatrixView b) : b_(b) {}

    class Packer {
    public:
        explicit Packer(ConstMatrixView b) : b_(b) {}
        void prepare_columns(std::size_t, std::size_t) {}
        std::size_t pack(std::size_t pc, std::size_t kcur, std::size_t jc, std::size_t ncur, std::size_t panel_begin,
                         std::size_t panel_end, float* dst) const {
            constexpr std::size_t nr = simd::kNr;
            std::size_t written = 0;
            for (std::size_t q = panel_begin; q < panel_end; ++q) {
                float* out = dst + q * nr * kcur;
                const std::size_t cols = std::min(nr, ncur - q * nr);
                const std::size_t jbase = jc + q * nr;
                for (std::size_t p = 0; p < kcur; ++p) {
                    std::size_t l = 0;
                    for (; l < cols; ++l) out[l] = b_(pc + p, jbase + l);
                    for (; l < nr; ++l) out[l] = 0.0f;
                    out += nr;
                }
                written += cols * kcur;
            }
            return written;
        }

    private:
        ConstMatrixView b_;
    };

    Packer make_packer() const { return Packer(b_); }
    std::size_t scratch_bytes(std::size_t) const { return 0; }

private:
    ConstMatrixView b_;
};

struct EffectiveBlocking {
    std::size_t mc, nc, kc;
};

inline EffectiveBlocking effective_blocking(const GemmCacheParams& p, std::size_t m, std::size_t n, std::size_t k) {
    return {std::min(p.mc, round_up(std::max<std::size_t>(m, 1), p.mr)),
            std::min(p.nc, round_up(std::max<std::size_t>(n, 1), p.nr)), std::min(p.kc, std::max<std::size_t>(k, 1))};
}

/// Applies the epilogue directly to C; used when k == 0.
void apply_epilogue_only(MutMatrixView c, const Epilogue& ep, bool accumulate);

template <typename BSource>
void run_gemm(ConstMatrixView a, const BSource& bsrc, std::size_t k, std::size_t n, MutMatrixView c,
              const GemmOptions& opt) {
    const std::size_t m = a.rows();
    if (m == 0 || n == 0) return;
    if (k == 0) {
        apply_epilogue_only(c, opt.epilogue, opt.accumulate);
        return;
    }

    constexpr std::size_t mr = simd::kMr, nr = simd::kNr;
    const simd::KernelTable& kt = simd::kernels(opt.isa);
    const auto [mc, nc, kc] = effective_blocking(opt.params, m, n, k);
    const std::size_t threads = static_cast<std::size_t>(std::max(opt.threads, 1));
    const bool a2b1 = opt.variant == LoopVariant::A2B1;

    // The block shared by all threads is packed cooperatively; the other
    // operand gets one private buffer per thread. Nothing is allocated inside
    // the loops.
    AlignedBuffer shared(a2b1 ? kc * nc : mc * kc);
    std::vector<AlignedBuffer> priv;
    priv.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) priv.emplace_back(a2b1 ? mc * kc : kc * nc);

    std::vector<typename BSource::Packer> packers;
    packers.reserve(a2b1 ? 1 : threads);
    for (std::size_t t = 0; t < (a2b1 ? 1 : threads); ++t) packers.push_back(bsrc.make_packer());

    if (opt.stats) {
        opt.stats->pack_allocations += 1 + threads;
        opt.stats->pack_bytes += shared.bytes() + threads * priv.front().bytes();
        opt.stats->aux_bytes += packers.size() * bsrc.scratch_bytes(nc);
    }

    const Epilogue& ep = opt.epilogue;
    GemmStats* stats = opt.stats;

    auto tile_epilogue = [&](bool last, std::size_t row) {
        simd::TileEpilogue te;
        if (!last || ep.kind == EpilogueKind::None) return te;
        te.kind = ep.kind;
        if (ep.uses_coefficients()) {
            te.scale = ep.scale.data() + row;
            te.shift = ep.shift.data() + row;
        }
        return te;
    };

#pragma omp parallel num_threads(static_cast<int>(threads))
    {
        const std::size_t nt = static_cast<std::size_t>(omp_get_num_threads());
        const std::size_t tid = static_cast<std::size_t>(omp_get_thread_num());
        std::size_t gathered = 0, ep_elems = 0, ep_tiles = 0;

        if (a2b1) {
            // Threads own disjoint row ranges of C (the ic loop); Bc is shared.
            const auto [p0, p1] = split_range(ceil_div(m, mr), nt, tid);
            const std::size_t r0 = p0 * mr, r1 = std::min(m, p1 * mr);
            float* bc = shared.data();
            float* ac = priv[tid].data();
            auto& packer = packers.front();

            for (std::size_t jc = 0; jc < n; jc += nc) {
                const std::size_t ncur = std::min(nc, n - jc);
#pragma omp single
                packer.prepare_columns(jc, ncur);

                for (std::size_t pc = 0; pc < k; pc += kc) {
                    const std::size_t kcur = std::min(kc, k - pc);
                    const bool last = pc + kcur == k;
                    const bool acc = opt.accumulate || pc > 0;

                    const auto [q0, q1] = split_range(ceil_div(ncur, nr), nt, tid);
                    gathered += packer.pack(pc, kcur, jc, ncur, q0, q1, bc);
#pragma omp barrier

                    for (std::size_t ic = r0; ic < r1; ic += mc) {
                        const std::size_t mcur = std::min(mc, r1 - ic);
                        pack_a_panels(a, ic, pc, mcur, kcur, 0, ceil_div(mcur, mr), ac);
                        for (std::size_t jr = 0; jr < ncur; jr += nr) {
                            const float* br = bc + jr * kcur;
                            const std::size_t nr_eff = std::min(nr, ncur - jr);
                            for (std::size_t ir = 0; ir < mcur; ir += mr) {
                                const std::size_t mr_eff = std::min(mr, mcur - ir);
                                kt.gemm_8x8(kcur, ac + ir * kcur, br, &c(ic + ir, jc + jr), c.row_stride(),
                                            c.col_stride(), mr_eff, nr_eff, acc, tile_epilogue(last, ic + ir));
                                if (last && ep.kind != EpilogueKind::None) {
                                    ep_elems += mr_eff * nr_eff;
                                    ++ep_tiles;
                                }
                            }
                        }
                    }
#pragma omp barrier
                }
            }
        } else {
            // Threads own disjoint column ranges of C (the jc loop); Ac is shared.
            const auto [p0, p1] = split_range(ceil_div(n, nr), nt, tid);
            const std::size_t c0 = p0 * nr, c1 = std::min(n, p1 * nr);
            float* ac = shared.data();
            float* bc = priv[tid].data();
            auto& packer = packers[tid];

            for (std::size_t ic = 0; ic < m; ic += mc) {
                const std::size_t mcur = std::min(mc, m - ic);
                for (std::size_t pc = 0; pc < k; pc += kc) {
                    const std::size_t kcur = std::min(kc, k - pc);
                    const bool last = pc + kcur == k;
                    const bool acc = opt.accumulate || pc > 0;

                    const auto [q0, q1] = split_range(ceil_div(mcur, mr), nt, tid);
                    pack_a_panels(a, ic, pc, mcur, kcur, q0, q1, ac);
#pragma omp barrier

                    for (std::size_t jc = c0; jc < c1; jc += nc) {
                        const std::size_t ncur = std::min(nc, c1 - jc);
                        packer.prepare_columns(jc, ncur);
                        gathered += packer.pack(pc, kcur, jc, ncur, 0, ceil_div(ncur, nr), bc);
                        for (std::size_t ir = 0; ir < mcur; ir += mr) {
                            const float* ar = ac + ir * kcur;
                            const std::size_t mr_eff = std::min(mr, mcur - ir);
                            const simd::TileEpilogue te = tile_epilogue(last, ic + ir);
                            for (std::size_t jr = 0; jr < ncur; jr += nr) {
                                const std::size_t nr_eff = std::min(nr, ncur - jr);
                                kt.gemm_8x8(kcur, ar, bc + jr * kcur, &c(ic + ir, jc + jr), c.row_stride(),
                                            c.col_stride(), mr_eff, nr_eff, acc, te);
                                if (last && ep.kind != EpilogueKind::None) {
                                    ep_elems += mr_eff * nr_eff;
                                    ++ep_tiles;
                                }
                            }
                        }
                    }
#pragma omp barrier
                }
            }
        }

        if (stats) {
            stats->packed_b_elements += gathered;
            stats->epilogue_elements += ep_elems;
            stats->epilogue_tiles += ep_tiles;
        }
    }
}

}  // namespace fuseconv::detail

#include <doctest.h>

#include <random>

#include "fuseconv/cache_params.hpp"
#include "fuseconv/gemm.hpp"
#include "oracles.hpp"

using namespace fuseconv;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
    std::vector<float> v(n);
    fill_uniform(v, seed, -1.0f, 1.0f);
    return v;
}

/// Test-only inverse of packing: logical rows x cols block, row-major.
std::vector<float> unpack(const PackedBuffer& p) {
    std::vector<float> out(p.rows() * p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j) out[i * p.cols() + j] = p.data()[p.offset(i, j)];
    return out;
}

GemmOptions small_blocks(LoopVariant v, int threads) {
    GemmOptions o;
    o.params = {16, 24, 20, 8, 8};
    o.variant = v;
    o.threads = threads;
    return o;
}

std::vector<float> run_gemm(const std::vector<float>& a, const std::vector<float>& b, std::size_t m, std::size_t n,
                            std::size_t k, const GemmOptions& o) {
    std::vector<float> c(m * n, 0.0f);
    gemm(ConstMatrixView::row_major(a, m, k), ConstMatrixView::row_major(b, k, n), MutMatrixView::row_major(c, m, n),
         o);
    return c;
}

}  // namespace

TEST_CASE("pack_a layout") {
    const std::vector<float> eye{1, 0, 0, 1};
    const PackedBuffer p = pack_a(ConstMatrixView::row_major(eye, 2, 2), 2);
    CHECK(std::vector<float>(p.data().begin(), p.data().end()) == std::vector<float>{1, 0, 0, 1});

    const std::vector<float> src{1, 2, 3, 4, 5, 6};  // 3x2
    const PackedBuffer q = pack_a(ConstMatrixView::row_major(src, 3, 2), 2);
    CHECK(q.panels() == 2);
    // index oracle: panel i/mr, then column p, then lane i%mr
    std::vector<float> expect(8, 0.0f);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t pcol = 0; pcol < 2; ++pcol) expect[(i / 2) * 2 * 2 + pcol * 2 + i % 2] = src[i * 2 + pcol];
    CHECK(expect == std::vector<float>{1, 3, 2, 4, 5, 0, 6, 0});
    CHECK(std::vector<float>(q.data().begin(), q.data().end()) == expect);

    const auto big = random_vec(560 * 16, 3);
    CHECK(pack_a(ConstMatrixView::row_major(big, 560, 16), 8).panels() == 70);
}

TEST_CASE("pack_b layout") {
    const std::vector<float> eye{1, 0, 0, 1};
    const PackedBuffer p = pack_b(ConstMatrixView::row_major(eye, 2, 2), 2);
    CHECK(std::vector<float>(p.data().begin(), p.data().end()) == std::vector<float>{1, 0, 0, 1});

    const std::vector<float> src{1, 2, 3, 4, 5, 6};  // 2x3
    const PackedBuffer q = pack_b(ConstMatrixView::row_major(src, 2, 3), 2);
    CHECK(q.panels() == 2);
    std::vector<float> expect(8, 0.0f);
    for (std::size_t pr = 0; pr < 2; ++pr)
        for (std::size_t j = 0; j < 3; ++j) expect[(j / 2) * 2 * 2 + pr * 2 + j % 2] = src[pr * 3 + j];
    CHECK(expect == std::vector<float>{1, 2, 4, 5, 3, 0, 6, 0});
    CHECK(std::vector<float>(q.data().begin(), q.data().end()) == expect);
}

TEST_CASE("packing: unpack identity and unit-stride consumption on ragged blocks") {
    std::mt19937 gen(17);
    std::uniform_int_distribution<std::size_t> dim(1, 40);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t r = dim(gen), c = dim(gen);
        const auto src = random_vec(r * c, trial);
        const ConstMatrixView v = ConstMatrixView::row_major(src, r, c);
        const PackedBuffer a = pack_a(v, 8), b = pack_b(v, 8);
        CHECK(unpack(a) == src);
        CHECK(unpack(b) == src);

        // The micro-kernel walks a B micro-panel (p, lane) and an A micro-panel
        // (p, lane); both must be consecutive addresses.
        for (std::size_t q = 0; q < b.panels(); ++q) {
            std::size_t expected = q * 8 * r;
            for (std::size_t p = 0; p < r; ++p)
                for (std::size_t l = 0; l < 8; ++l) {
                    const std::size_t j = q * 8 + l;
                    if (j < c) REQUIRE(b.offset(p, j) == expected);
                    ++expected;
                }
        }
        for (std::size_t q = 0; q < a.panels(); ++q) {
            std::size_t expected = q * 8 * c;
            for (std::size_t p = 0; p < c; ++p)
                for (std::size_t l = 0; l < 8; ++l) {
                    const std::size_t i = q * 8 + l;
                    if (i < r) REQUIRE(a.offset(i, p) == expected);
                    ++expected;
                }
        }
        // padding lanes are zero
        const std::size_t padded = a.panels() * 8 - r;
        if (padded) CHECK(a.data()[(a.panels() - 1) * 8 * c + 7] == 0.0f);
    }
}

TEST_CASE("gemm with identity A copies B") {
    const std::size_t n = 7;
    std::vector<float> eye(25, 0.0f);
    for (int i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0f;
    const auto b = random_vec(5 * n, 1);
    for (auto v : {LoopVariant::A2B1, LoopVariant::B2A1}) {
        const auto c = run_gemm(eye, b, 5, n, 5, small_blocks(v, 2));
        CHECK(c == b);
    }
}

TEST_CASE("gemm on 97^3 matches the oracle") {
    const std::size_t s = 97;
    const auto a = random_vec(s * s, 1), b = random_vec(s * s, 2);
    const auto ref = oracle::matmul(a, b, s, s, s);
    for (auto v : {LoopVariant::A2B1, LoopVariant::B2A1}) {
        GemmOptions o;
        o.variant = v;
        CHECK(oracle::rel_frobenius(run_gemm(a, b, s, s, s, o), ref) <= 1e-4);
        CHECK(oracle::rel_frobenius(run_gemm(a, b, s, s, s, small_blocks(v, 3)), ref) <= 1e-4);
    }
}

TEST_CASE("loop variants agree bitwise on a short, wide product") {
    const std::size_t m = 64, k = 64, n = 8192;
    const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
    GemmOptions o = {};
    o.params = select_cache_params(m, n, k, CacheHierarchy::host()).params;
    o.variant = LoopVariant::A2B1;
    const auto c1 = run_gemm(a, b, m, n, k, o);
    o.variant = LoopVariant::B2A1;
    const auto c2 = run_gemm(a, b, m, n, k, o);
    CHECK(oracle::max_ulp(c1, c2) == 0);
}

TEST_CASE("gemm matches the oracle on random shapes, both variants") {
    std::mt19937 gen(2024);
    const std::size_t edge[] = {1, 7, 8, 9, 13, 31, 97};
    std::uniform_int_distribution<std::size_t> dim(1, 120), pick(0, 6);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t m = trial % 3 ? dim(gen) : edge[pick(gen)];
        const std::size_t n = trial % 5 ? dim(gen) : edge[pick(gen)];
        const std::size_t k = trial % 7 ? dim(gen) : edge[pick(gen)];
        const auto a = random_vec(m * k, trial), b = random_vec(k * n, trial + 500);
        const auto ref = oracle::matmul(a, b, m, n, k);
        for (auto v : {LoopVariant::A2B1, LoopVariant::B2A1}) {
            CAPTURE(m);
            CAPTURE(n);
            CAPTURE(k);
            CHECK(oracle::rel_frobenius(run_gemm(a, b, m, n, k, small_blocks(v, 1 + trial % 3)), ref) <= 1e-4);
        }
    }
}

TEST_CASE("gemm is bitwise independent of thread count") {
    const std::size_t m = 83, n = 121, k = 75;
    const auto a = random_vec(m * k, 4), b = random_vec(k * n, 5);
    for (auto v : {LoopVariant::A2B1, LoopVariant::B2A1}) {
        const auto ref = run_gemm(a, b, m, n, k, small_blocks(v, 1));
        for (int t : {2, 4, 8}) CHECK(oracle::max_ulp(run_gemm(a, b, m, n, k, small_blocks(v, t)), ref) == 0);
    }
}

TEST_CASE("gemm accumulates into C and can overwrite") {
    const std::size_t m = 10, n = 12, k = 9;
    const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2), c0 = random_vec(m * n, 3);
    const auto prod = oracle::matmul(a, b, m, n, k);
    std::vector<float> c = c0;
    gemm(ConstMatrixView::row_major(a, m, k), ConstMatrixView::row_major(b, k, n), MutMatrixView::row_major(c, m, n),
         small_blocks(LoopVariant::A2B1, 2));
    std::vector<double> expect(m * n);
    for (std::size_t i = 0; i < m * n; ++i) expect[i] = prod[i] + c0[i];
    CHECK(oracle::rel_frobenius(c, expect) <= 1e-5);

    GemmOptions o = small_blocks(LoopVariant::B2A1, 2);
    o.accumulate = false;
    c = c0;
    gemm(ConstMatrixView::row_major(a, m, k), ConstMatrixView::row_major(b, k, n), MutMatrixView::row_major(c, m, n),
         o);
    CHECK(oracle::rel_frobenius(c, prod) <= 1e-5);
}

TEST_CASE("epilogue is applied exactly once per output element") {
    const std::size_t m = 21, n = 37, k = 70;  // kc = 20 -> four k blocks
    const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
    const std::vector<float> scale(m, 2.0f), shift(m, 1.0f);
    const auto prod = oracle::matmul(a, b, m, n, k);
    for (auto v : {LoopVariant::A2B1, LoopVariant::B2A1}) {
        for (int t : {1, 3}) {
            GemmStats stats;
            GemmOptions o = small_blocks(v, t);
            o.accumulate = false;
            o.epilogue = Epilogue::batchnorm_relu(scale, shift);
            o.stats = &stats;
            const auto c = run_gemm(a, b, m, n, k, o);
            CHECK(stats.epilogue_elements == m * n);
            std::vector<double> expect(m * n);
            for (std::size_t i = 0; i < m * n; ++i) expect[i] = std::max(0.0, 2.0 * prod[i] + 1.0);
            CHECK(oracle::rel_frobenius(c, expect) <= 1e-5);
        }
    }
}

TEST_CASE("epilogue with k == 0") {
    std::vector<float> a, b, c{-1.0f, 3.0f};
    GemmOptions o;
    o.epilogue = Epilogue::relu();
    gemm(ConstMatrixView::from_raw(nullptr, 1, 0, 0, 1), ConstMatrixView::from_raw(nullptr, 0, 2, 2, 1),
         MutMatrixView::row_major(c, 1, 2), o);
    CHECK(c == std::vector<float>{0.0f, 3.0f});
}

TEST_CASE("packing buffers are allocated once per call") {
    for (auto v : {LoopVariant::A2B1, LoopVariant::B2A1}) {
        for (int t : {1, 2, 4}) {
            for (std::size_t s : {9u, 64u, 150u}) {
                const auto a = random_vec(s * s, 1), b = random_vec(s * s, 2);
                GemmStats stats;
                GemmOptions o = small_blocks(v, t);
                o.stats = &stats;
                run_gemm(a, b, s, s, s, o);
                CHECK(stats.pack_allocations == static_cast<std::size_t>(1 + t));
                CHECK(stats.pack_bytes <= packing_buffer_bytes(o.params, v, s, s, s, t));
            }
        }
    }
}

TEST_CASE("gemm contract and configuration errors") {
    std::vector<float> a(6), b(6), c(4);
    GemmOptions o;
    CHECK_THROWS_AS(gemm(ConstMatrixView::row_major(a, 2, 3), ConstMatrixView::row_major(b, 2, 3),
                         MutMatrixView::row_major(c, 2, 2), o),
                    ContractError);
    const auto A = ConstMatrixView::row_major(a, 2, 3);
    const auto B = ConstMatrixView::row_major(b, 3, 2);
    const auto C = MutMatrixView::row_major(c, 2, 2);
    o.params = {12, 24, 8, 8, 8};
    CHECK_THROWS_AS(gemm(A, B, C, o), ConfigError);
    o.params = {16, 24, 8, 4, 8};
    CHECK_THROWS_AS(gemm(A, B, C, o), ConfigError);
    o.params = {16, 20, 8, 8, 8};
    CHECK_THROWS_AS(gemm(A, B, C, o), ConfigError);
    o.params = {16, 24, 8, 8, 8};
    o.threads = 0;
    CHECK_THROWS_AS(gemm(A, B, C, o), ConfigError);
    o.threads = 1;
    const std::vector<float> coeff(3, 1.0f);
    o.epilogue = Epilogue::batchnorm(coeff, coeff);
    CHECK_THROWS_AS(gemm(A, B, C, o), ContractError);

    // Blocking that overflows the caches of a small hierarchy.
    CacheHierarchy tiny{4096, 16384, 0, 64, 4, 4, 0};
    const auto big = random_vec(64 * 256, 1);
    std::vector<float> out(64 * 64);
    GemmOptions g;
    g.hw = &tiny;
    g.params = {64, 64, 256, 8, 8};
    CHECK_THROWS_AS(gemm(ConstMatrixView::row_major(big, 64, 256), ConstMatrixView::row_major(big, 256, 64),
                         MutMatrixView::row_major(out, 64, 64), g),
                    ConfigError);
    g.params = {16, 64, 64, 8, 8};
    CHECK_NOTHROW(gemm(ConstMatrixView::row_major(big, 64, 256), ConstMatrixView::row_major(big, 256, 64),
                       MutMatrixView::row_major(out, 64, 64), g));
}

TEST_CASE("parse helpers") {
    CHECK(parse_params("560,3072,368,8,8") == GemmCacheParams{560, 3072, 368, 8, 8});
    CHECK_THROWS_AS(parse_params("560,3072,368"), ConfigError);
    CHECK_THROWS_AS(parse_params("a,b,c,d,e"), ConfigError);
    CHECK(parse_variant("B2A1") == LoopVariant::B2A1);
    CHECK_THROWS_AS(parse_variant("c3"), ConfigError);
    CHECK_THROWS_AS((CacheHierarchy{65536, 65536, 0}.validate()), ConfigError);
}

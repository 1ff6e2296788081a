#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "fuseconv/gemm.hpp"

namespace fuseconv {

/// Blocking tuned for large square products on `hw`:
///   kc: the Ar and Br micro-panels together take ~36% of L1,
///   mc: Ac takes ~40% of L2 (rounded down to a multiple of 2*mr),
///   nc: Bc takes ~25% of L3 capped at 4096, or 3072 without an L3.
/// On the Carmel hierarchy this gives (mc, nc, kc) = (560, 3072, 368).
GemmCacheParams reference_params(const CacheHierarchy& hw);

/// Per-shape overrides produced by autotune. Text form, one record per line:
///
///   # m n k mc nc kc mr nr variant
///   64 140000 64 64 3264 64 8 8 b2a1
///
/// Fields are whitespace separated; '#' starts a comment. Keys are exact
/// (m, n, k) shapes.
class ParamTable {
public:
    void set(std::size_t m, std::size_t n, std::size_t k, const CacheSelection& sel);
    std::optional<CacheSelection> lookup(std::size_t m, std::size_t n, std::size_t k) const;
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    std::string serialize() const;
    /// Throws ParseError with the offending line number.
    static ParamTable parse(const std::string& text);
    static ParamTable load(const std::string& path);
    void save(const std::string& path) const;

private:
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, CacheSelection> entries_;
};

/// Products with m <= this and n >= kB2A1Aspect * m run the B2A1 variant.
inline constexpr std::size_t kB2A1MaxM = 256;
inline constexpr std::size_t kB2A1Aspect = 64;

/// Runtime choice of blocking and loop variant for one product shape. Pure
/// in its inputs; a table entry for the exact shape wins when given.
///  - mc never exceeds m rounded up to mr, kc never exceeds k;
///  - when kc shrinks (small k), mc grows so Ac still fills ~40% of L2;
///  - short-and-wide products (see kB2A1MaxM) switch to B2A1 and size nc so
///    Bc fills ~40% of L2.
CacheSelection select_cache_params(std::size_t m, std::size_t n, std::size_t k, const CacheHierarchy& hw,
                                   const ParamTable* overrides = nullptr);

struct AutotuneOptions {
    int warmup = 1;
    int reps = 3;
    int threads = 1;
    simd::Isa isa = simd::best_isa();
    std::uint64_t seed = 1;
};

struct CandidateResult {
    CacheSelection selection;
    bool valid = false;
    std::string error;
    double median_gflops = 0.0;
    std::vector<double> samples;
};

struct AutotuneResult {
    CacheSelection best;
    double gflops = 0.0;
    std::vector<CandidateResult> candidates;
};

/// Median GFLOPS of gemm on random m x n x k operands laid out as a lowered
/// convolution (A row-major, B and C column-major), after warm-up runs.
CandidateResult measure_gemm(std::size_t m, std::size_t n, std::size_t k, const CacheSelection& sel,
                             const CacheHierarchy& hw, const AutotuneOptions& opt);

/// Times every candidate and returns the one with the highest median rate.
/// Candidates whose blocking does not fit `hw` are reported invalid and
/// skipped; throws ConfigError if the grid is empty or nothing is valid.
AutotuneResult autotune(std::size_t m, std::size_t n, std::size_t k, const CacheHierarchy& hw,
                        std::span<const CacheSelection> grid, const AutotuneOptions& opt = {});

/// The heuristic choice, the reference blocking, and kc/mc/nc scaled around
/// them for both loop variants.
std::vector<CacheSelection> default_candidate_grid(std::size_t m, std::size_t n, std::size_t k,
                                                   const CacheHierarchy& hw);

}  // namespace fuseconv
